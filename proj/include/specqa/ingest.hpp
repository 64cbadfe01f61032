#pragma once

// Structural parsing of HTML and layout-marked text into a Document made of
// headings, paragraphs, list items and atomic tables.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "specqa/error.hpp"
#include "specqa/text.hpp"

namespace specqa::ingest {

enum class Format { html, marked_text };
enum class BlockKind { heading, paragraph, table, list_item };

constexpr std::string_view to_string(Format f) noexcept {
    return f == Format::html ? "html" : "marked_text";
}

constexpr std::string_view to_string(BlockKind k) noexcept {
    switch (k) {
        case BlockKind::heading: return "heading";
        case BlockKind::paragraph: return "paragraph";
        case BlockKind::table: return "table";
        case BlockKind::list_item: return "list_item";
    }
    return "paragraph";
}

inline std::optional<Format> parse_format(std::string_view s) {
    if (s == "html") return Format::html;
    if (s == "marked_text") return Format::marked_text;
    return std::nullopt;
}

inline std::optional<BlockKind> parse_block_kind(std::string_view s) {
    if (s == "heading") return BlockKind::heading;
    if (s == "paragraph") return BlockKind::paragraph;
    if (s == "table") return BlockKind::table;
    if (s == "list_item") return BlockKind::list_item;
    return std::nullopt;
}

using Metadata = std::map<std::string, std::string>;

struct Block {
    std::size_t block_index = 0;
    BlockKind kind = BlockKind::paragraph;
    int level = 0;  // 1..6 for headings, 0 otherwise
    std::string text;
    std::vector<std::string> heading_path;

    bool operator==(const Block&) const = default;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::string source_uri;
    Format format = Format::marked_text;
    std::vector<Block> blocks;
    Metadata metadata;

    bool operator==(const Document&) const = default;
};

/// Cell delimiter inside serialized tables; a literal "|" in a cell is
/// written as "\|".
inline constexpr char kCellDelimiter = '|';
inline constexpr char kRowDelimiter = '\n';

inline std::string escape_cell(std::string_view cell) {
    std::string out;
    out.reserve(cell.size());
    for (std::size_t i = 0; i < cell.size(); ++i) {
        if (cell[i] == '|' && (i == 0 || cell[i - 1] != '\\')) out.push_back('\\');
        out.push_back(cell[i]);
    }
    return out;
}

namespace detail {

/// Accumulates blocks in order and maintains the heading stack that yields
/// each block's heading_path.
class DocumentBuilder {
public:
    void add(BlockKind kind, std::string text, int level = 0) {
        if (kind != BlockKind::table) text = text::collapse_whitespace(text);
        if (text.empty()) return;
        Block b;
        b.block_index = blocks_.size();
        b.kind = kind;
        if (kind == BlockKind::heading) {
            while (!stack_.empty() && stack_.back().first >= level) stack_.pop_back();
            b.level = level;
        }
        for (const auto& [lvl, t] : stack_) b.heading_path.push_back(t);
        b.text = std::move(text);
        if (kind == BlockKind::heading) stack_.emplace_back(level, b.text);
        blocks_.push_back(std::move(b));
    }

    std::vector<Block> take() { return std::move(blocks_); }
    bool empty() const noexcept { return blocks_.empty(); }
    const std::vector<Block>& blocks() const noexcept { return blocks_; }

private:
    std::vector<Block> blocks_;
    std::vector<std::pair<int, std::string>> stack_;
};

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x110000) {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string decode_entities(std::string_view s) {
    static const std::map<std::string_view, std::uint32_t> named = {
        {"amp", '&'},      {"lt", '<'},      {"gt", '>'},       {"quot", '"'},
        {"apos", '\''},    {"nbsp", ' '},    {"ndash", 0x2013}, {"mdash", 0x2014},
        {"hellip", 0x2026}, {"copy", 0xA9},  {"reg", 0xAE},     {"deg", 0xB0},
        {"plusmn", 0xB1},  {"times", 0xD7},  {"micro", 0xB5},   {"le", 0x2264},
        {"ge", 0x2265},    {"rsquo", 0x2019}, {"lsquo", 0x2018}, {"rdquo", 0x201D},
        {"ldquo", 0x201C},
    };
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '&') {
            out.push_back(s[i]);
            continue;
        }
        auto semi = s.find(';', i + 1);
        if (semi == std::string_view::npos || semi - i > 10) {
            out.push_back('&');
            continue;
        }
        auto name = s.substr(i + 1, semi - i - 1);
        std::optional<std::uint32_t> cp;
        if (!name.empty() && name[0] == '#') {
            std::uint32_t v = 0;
            bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
            auto digits = name.substr(hex ? 2 : 1);
            bool ok = !digits.empty();
            for (char c : digits) {
                int d = -1;
                if (c >= '0' && c <= '9') d = c - '0';
                else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
                else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
                if (d < 0 || v > 0x10FFFF) { ok = false; break; }
                v = v * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
            }
            if (ok) cp = v;
        } else if (auto it = named.find(name); it != named.end()) {
            cp = it->second;
        }
        if (!cp) {
            out.push_back('&');
            continue;
        }
        append_utf8(out, *cp);
        i = semi;
    }
    return out;
}

struct Tag {
    std::string name;  // lowercase
    bool closing = false;
    bool self_closing = false;
    std::size_t end = 0;  // index one past '>'
};

/// Parses the tag starting at `pos` (which holds '<'). Returns nullopt when
/// the '<' does not start a tag and should be read as text.
inline std::optional<Tag> read_tag(std::string_view s, std::size_t pos) {
    std::size_t i = pos + 1;
    Tag tag;
    if (i < s.size() && s[i] == '/') {
        tag.closing = true;
        ++i;
    }
    std::size_t name_begin = i;
    while (i < s.size() && (text::is_alnum(s[i]) || s[i] == '-' || s[i] == ':')) ++i;
    if (i == name_begin || !((s[name_begin] >= 'a' && s[name_begin] <= 'z') ||
                             (s[name_begin] >= 'A' && s[name_begin] <= 'Z'))) {
        return std::nullopt;
    }
    tag.name = text::lowercase(s.substr(name_begin, i - name_begin));
    char quote = 0;
    while (i < s.size()) {
        char c = s[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '>') {
            tag.self_closing = i > pos && s[i - 1] == '/';
            tag.end = i + 1;
            return tag;
        }
        ++i;
    }
    // Unterminated tag: swallow the rest of the input.
    tag.end = s.size();
    return tag;
}

inline std::size_t find_ci(std::string_view hay, std::string_view needle, std::size_t from) {
    if (needle.empty()) return from;
    for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (text::to_lower(hay[i + j]) != needle[j]) { match = false; break; }
        }
        if (match) return i;
    }
    return std::string_view::npos;
}

inline int heading_level(std::string_view name) {
    if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6') return name[1] - '0';
    return 0;
}

inline bool is_block_container(std::string_view name) {
    static constexpr std::array<std::string_view, 26> names = {
        "p",      "li",     "div",     "section", "article",    "blockquote", "pre",
        "ul",     "ol",     "main",    "header",  "footer",     "aside",      "body",
        "html",   "dl",     "dt",      "dd",      "figure",     "figcaption", "form",
        "address", "center", "details", "summary", "fieldset",
    };
    if (heading_level(name)) return true;
    for (auto n : names) {
        if (n == name) return true;
    }
    return false;
}

inline bool is_skipped_container(std::string_view name) {
    return name == "nav" || name == "noscript" || name == "template";
}

inline bool is_raw_text(std::string_view name) {
    return name == "script" || name == "style" || name == "title" || name == "textarea";
}

class HtmlBlockParser {
public:
    explicit HtmlBlockParser(std::string_view src) : src_(src) {}

    void run() {
        std::size_t i = 0;
        std::size_t text_begin = 0;
        auto emit_text = [&](std::size_t end) {
            if (end > text_begin) on_text(src_.substr(text_begin, end - text_begin));
        };
        while (i < src_.size()) {
            if (src_[i] != '<') {
                ++i;
                continue;
            }
            if (src_.compare(i, 4, "<!--") == 0) {
                emit_text(i);
                auto e = src_.find("-->", i + 4);
                i = e == std::string_view::npos ? src_.size() : e + 3;
                text_begin = i;
                continue;
            }
            if (i + 1 < src_.size() && (src_[i + 1] == '!' || src_[i + 1] == '?')) {
                emit_text(i);
                auto e = src_.find('>', i);
                i = e == std::string_view::npos ? src_.size() : e + 1;
                text_begin = i;
                continue;
            }
            auto tag = read_tag(src_, i);
            if (!tag) {
                ++i;
                continue;
            }
            emit_text(i);
            i = tag->end;
            if (!tag->closing && is_raw_text(tag->name)) {
                std::string close = "</" + tag->name;
                auto e = find_ci(src_, close, i);
                auto content_end = e == std::string_view::npos ? src_.size() : e;
                if (tag->name == "title" && title_.empty()) {
                    title_ = text::collapse_whitespace(decode_entities(src_.substr(i, content_end - i)));
                } else if (tag->name == "textarea") {
                    on_text(src_.substr(i, content_end - i));
                }
                if (e == std::string_view::npos) {
                    i = src_.size();
                } else {
                    auto gt = src_.find('>', e);
                    i = gt == std::string_view::npos ? src_.size() : gt + 1;
                }
            } else {
                on_tag(*tag);
            }
            text_begin = i;
        }
        emit_text(src_.size());
        flush();
        finish_table();
    }

    DocumentBuilder& builder() { return builder_; }
    const std::string& title() const { return title_; }

private:
    struct TableState {
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> row;
        std::string cell;
        bool in_cell = false;
    };

    void on_text(std::string_view raw) {
        if (skip_depth_ > 0) return;
        auto decoded = decode_entities(raw);
        if (table_depth_ > 0) {
            if (table_.in_cell) table_.cell += decoded;
            return;
        }
        buffer_ += decoded;
    }

    void on_tag(const Tag& tag) {
        const auto& name = tag.name;
        if (is_skipped_container(name)) {
            if (tag.self_closing) return;
            if (!tag.closing) {
                if (skip_depth_ == 0) flush();
                ++skip_depth_;
            } else if (skip_depth_ > 0) {
                --skip_depth_;
            }
            return;
        }
        if (skip_depth_ > 0) return;

        if (name == "table") {
            if (!tag.closing) {
                if (table_depth_ == 0) {
                    flush();
                    table_ = {};
                }
                ++table_depth_;
            } else if (table_depth_ > 0) {
                if (--table_depth_ == 0) finish_table();
            }
            return;
        }
        if (table_depth_ > 0) {
            on_table_tag(tag);
            return;
        }

        if (name == "br") {
            buffer_.push_back(' ');
            return;
        }
        if (name == "hr") {
            flush();
            return;
        }
        if (!is_block_container(name)) return;

        flush();
        if (tag.closing) {
            for (std::size_t k = open_.size(); k-- > 0;) {
                if (open_[k] == name) {
                    open_.resize(k);
                    break;
                }
            }
            return;
        }
        if (tag.self_closing) return;
        // Implicit closes: a new block ends an open <p> or heading (headings hold
        // inline content only); a new <li> ends the previous one.
        while (!open_.empty() && (open_.back() == "p" || heading_level(open_.back()))) open_.pop_back();
        if (name == "li" && !open_.empty() && open_.back() == "li") open_.pop_back();
        open_.push_back(name);
    }

    void on_table_tag(const Tag& tag) {
        if (table_depth_ > 1) {
            if (table_.in_cell) table_.cell.push_back(' ');
            return;
        }
        const auto& name = tag.name;
        if (name == "tr") {
            end_cell();
            end_row();
        } else if (name == "td" || name == "th" || name == "caption") {
            end_cell();
            if (name == "caption") end_row();
            if (!tag.closing) {
                table_.in_cell = true;
            } else if (name == "caption") {
                end_row();
            }
        } else if (table_.in_cell) {
            table_.cell.push_back(' ');
        }
    }

    void end_cell() {
        if (!table_.in_cell) return;
        table_.row.push_back(escape_cell(text::collapse_whitespace(table_.cell)));
        table_.cell.clear();
        table_.in_cell = false;
    }

    void end_row() {
        if (!table_.row.empty()) table_.rows.push_back(std::move(table_.row));
        table_.row.clear();
    }

    void finish_table() {
        if (table_depth_ == 0 && table_.rows.empty() && table_.row.empty() && !table_.in_cell) return;
        end_cell();
        end_row();
        bool any = false;
        std::string serialized;
        for (std::size_t r = 0; r < table_.rows.size(); ++r) {
            if (r) serialized.push_back(kRowDelimiter);
            for (std::size_t c = 0; c < table_.rows[r].size(); ++c) {
                if (c) serialized.push_back(kCellDelimiter);
                serialized += table_.rows[r][c];
                any = any || !table_.rows[r][c].empty();
            }
        }
        if (any) builder_.add(BlockKind::table, std::move(serialized));
        table_ = {};
        table_depth_ = 0;
    }

    void flush() {
        if (buffer_.empty()) return;
        int level = 0;
        BlockKind kind = BlockKind::paragraph;
        for (std::size_t k = open_.size(); k-- > 0;) {
            if (int l = heading_level(open_[k])) {
                kind = BlockKind::heading;
                level = l;
                break;
            }
            if (open_[k] == "li") {
                kind = BlockKind::list_item;
                break;
            }
        }
        builder_.add(kind, std::move(buffer_), level);
        buffer_.clear();
    }

    std::string_view src_;
    DocumentBuilder builder_;
    std::vector<std::string> open_;
    std::string buffer_;
    std::string title_;
    TableState table_;
    int table_depth_ = 0;
    int skip_depth_ = 0;
};

inline bool has_unescaped_pipe(std::string_view line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '|' && (i == 0 || line[i - 1] != '\\')) return true;
    }
    return false;
}

/// Splits a marked-text table row into trimmed cells, keeping "\|" escapes.
/// One leading and one trailing delimiter are treated as row fences.
inline std::vector<std::string> split_row(std::string_view line) {
    auto trimmed = text::trim(line);
    std::string_view row = trimmed;
    if (!row.empty() && row.front() == '|') row.remove_prefix(1);
    if (!row.empty() && row.back() == '|' && (row.size() < 2 || row[row.size() - 2] != '\\')) {
        row.remove_suffix(1);
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= row.size(); ++i) {
        if (i == row.size() || (row[i] == '|' && (i == 0 || row[i - 1] != '\\'))) {
            cells.push_back(text::trim(row.substr(start, i - start)));
            start = i + 1;
        }
    }
    return cells;
}

inline void finalize(Document& doc, const std::string& doc_id, const Metadata& metadata) {
    if (doc.blocks.empty()) throw Error(ErrorCode::NoContent, "no blocks extracted from " + doc_id);
    doc.doc_id = doc_id;
    doc.metadata = metadata;
    doc.metadata.try_emplace("subject", "");
    if (auto it = metadata.find("source_uri"); it != metadata.end()) doc.source_uri = it->second;
    if (auto it = metadata.find("title"); it != metadata.end() && !it->second.empty()) doc.title = it->second;
    if (doc.title.empty()) {
        for (const auto& b : doc.blocks) {
            if (b.kind == BlockKind::heading) {
                doc.title = b.text;
                break;
            }
        }
    }
    if (doc.title.empty()) doc.title = doc_id;
}

inline void require_doc_id(const std::string& doc_id) {
    if (doc_id.empty()) throw Error(ErrorCode::InvalidArgument, "doc_id must be non-empty");
}

}  // namespace detail

/// html iff the content (after whitespace and a UTF-8 BOM) starts with '<' and
/// contains a recognized tag, or the filename hint ends in .html/.htm.
inline Format detect_format(std::string_view raw, std::optional<std::string_view> hint = std::nullopt) {
    if (raw.empty()) throw Error(ErrorCode::EmptyInput, "document bytes are empty");
    if (hint && (text::ends_with_ci(*hint, ".html") || text::ends_with_ci(*hint, ".htm"))) return Format::html;
    std::string_view s = raw;
    if (s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
    std::size_t i = 0;
    while (i < s.size() && text::is_space(s[i])) ++i;
    if (i >= s.size() || s[i] != '<') return Format::marked_text;
    static constexpr std::array<std::string_view, 21> known = {
        "html", "head", "body", "p", "div", "table", "tr", "td", "ul", "ol", "li",
        "span", "br", "section", "article", "title", "meta", "a", "script", "style", "nav",
    };
    for (std::size_t p = s.find('<', i); p != std::string_view::npos; p = s.find('<', p + 1)) {
        if (detail::find_ci(s.substr(p, 10), "<!doctype", 0) == 0) return Format::html;
        auto tag = detail::read_tag(s, p);
        if (!tag) continue;
        if (detail::heading_level(tag->name)) return Format::html;
        for (auto k : known) {
            if (tag->name == k) return Format::html;
        }
    }
    return Format::marked_text;
}

/// Lenient HTML parsing: unclosed tags are tolerated; script, style, nav,
/// noscript and template content is dropped.
inline Document parse_html(std::string_view raw, const std::string& doc_id, const Metadata& metadata = {}) {
    detail::require_doc_id(doc_id);
    detail::HtmlBlockParser parser(raw);
    parser.run();
    Document doc;
    doc.format = Format::html;
    doc.title = parser.title();
    doc.blocks = parser.builder().take();
    detail::finalize(doc, doc_id, metadata);
    return doc;
}

/// Marked-text convention: a heading is a line of 1-6 '#' followed by a space;
/// a table row is a line with at least one unescaped '|'; consecutive rows form
/// one table; other non-blank lines merge into a paragraph until a blank line.
inline Document parse_marked_text(std::string_view raw, const std::string& doc_id, const Metadata& metadata = {}) {
    detail::require_doc_id(doc_id);
    detail::DocumentBuilder builder;
    std::vector<std::string> paragraph;
    std::vector<std::string> rows;

    auto flush_paragraph = [&] {
        if (!paragraph.empty()) builder.add(BlockKind::paragraph, text::join(paragraph, " "));
        paragraph.clear();
    };
    auto flush_table = [&] {
        bool any = false;
        for (const auto& r : rows) any = any || !r.empty();
        if (!rows.empty() && any) builder.add(BlockKind::table, text::join(rows, "\n"));
        rows.clear();
    };

    std::string_view s = raw;
    if (s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto nl = s.find('\n', pos);
        auto line = s.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = nl == std::string_view::npos ? s.size() + 1 : nl + 1;

        auto trimmed = text::trim(line);
        if (trimmed.empty()) {
            flush_paragraph();
            flush_table();
            continue;
        }
        std::size_t hashes = 0;
        while (hashes < line.size() && line[hashes] == '#') ++hashes;
        if (hashes >= 1 && hashes <= 6 && hashes < line.size() && line[hashes] == ' ') {
            flush_paragraph();
            flush_table();
            builder.add(BlockKind::heading, std::string(line.substr(hashes + 1)), static_cast<int>(hashes));
            continue;
        }
        if (detail::has_unescaped_pipe(line)) {
            flush_paragraph();
            rows.push_back(text::join(detail::split_row(line), "|"));
            continue;
        }
        flush_table();
        paragraph.push_back(trimmed);
    }
    flush_paragraph();
    flush_table();

    Document doc;
    doc.format = Format::marked_text;
    doc.blocks = builder.take();
    detail::finalize(doc, doc_id, metadata);
    return doc;
}

inline Document parse_document(std::string_view raw, const std::string& doc_id, const Metadata& metadata = {},
                               std::optional<std::string_view> hint = std::nullopt) {
    return detect_format(raw, hint) == Format::html ? parse_html(raw, doc_id, metadata)
                                                    : parse_marked_text(raw, doc_id, metadata);
}

}  // namespace specqa::ingest
