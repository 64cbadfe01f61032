#pragma once

// Rules as code for HAAT-tiered EIRP limits: schema-checked parsing of the
// station-group rule document, deterministic limit evaluation, knowledge
// graph and ontology projections, boundary test generation and an LLM
// extraction loop with schema-guided repair.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "specqa/error.hpp"
#include "specqa/ingest.hpp"
#include "specqa/ragqa.hpp"
#include "specqa/text.hpp"

namespace specqa::rulecode {

using ojson = nlohmann::ordered_json;

enum class StationKind { base_wide, base_narrow, mobile };
enum class BandwidthRule { absolute, per_mhz };
enum class StationType { base, mobile };
enum class LimitBasis { total, per_mhz };

constexpr std::string_view to_string(StationKind k) noexcept {
    switch (k) {
        case StationKind::base_wide: return "base_wide";
        case StationKind::base_narrow: return "base_narrow";
        case StationKind::mobile: return "mobile";
    }
    return "mobile";
}
constexpr std::string_view to_string(BandwidthRule r) noexcept { return r == BandwidthRule::absolute ? "absolute" : "per_mhz"; }
constexpr std::string_view to_string(StationType t) noexcept { return t == StationType::base ? "base" : "mobile"; }
constexpr std::string_view to_string(LimitBasis b) noexcept { return b == LimitBasis::total ? "total" : "per_mhz"; }

inline std::optional<StationKind> parse_station_kind(std::string_view s) {
    if (s == "base_wide") return StationKind::base_wide;
    if (s == "base_narrow") return StationKind::base_narrow;
    if (s == "mobile") return StationKind::mobile;
    return std::nullopt;
}

inline std::optional<StationType> parse_station_type(std::string_view s) {
    if (s == "base") return StationType::base;
    if (s == "mobile") return StationType::mobile;
    return std::nullopt;
}

struct HaatTier {
    double haat_max_m = 0.0;
    double limit_watts = 0.0;
    bool operator==(const HaatTier&) const = default;
};

struct StationClass {
    std::string name;
    StationKind kind = StationKind::mobile;
    BandwidthRule bandwidth_rule = BandwidthRule::absolute;
    std::optional<double> flat_limit_watts;
    std::optional<HaatTier> default_tier;
    std::optional<double> urban_limit_watts;
    std::vector<HaatTier> haat_tiers;

    bool operator==(const StationClass&) const = default;
};

struct RuleSet {
    std::string ruleset_id;
    std::string band_name;
    std::vector<StationClass> station_classes;
    std::string source_doc;
    // Base stations at or below this occupied bandwidth use the narrow class.
    double bandwidth_threshold_mhz = 1.0;

    bool operator==(const RuleSet&) const = default;
};

struct StationQuery {
    StationType station = StationType::base;
    double occupied_bandwidth_mhz = 1.0;
    double haat_m = 0.0;
    bool urban = false;

    bool operator==(const StationQuery&) const = default;
};

struct PowerLimit {
    double value_watts = 0.0;
    LimitBasis basis = LimitBasis::total;
    std::vector<std::string> applied_rule_path;

    bool operator==(const PowerLimit&) const = default;
};

/// Shortest decimal that round-trips.
inline std::string format_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

inline std::string format_watts(double v, LimitBasis basis) {
    return format_number(v) + (basis == LimitBasis::per_mhz ? " W/MHz" : " W");
}

inline std::string slugify(std::string_view s) {
    std::string out;
    for (auto span : text::token_spans(s)) {
        if (!out.empty()) out.push_back('-');
        out += text::lowercase(s.substr(span.begin, span.end - span.begin));
    }
    return out.empty() ? "ruleset" : out;
}

namespace detail {

/// Lowercase, with every non-alphanumeric run folded to '_' ("Max eirp" == "Max_eirp").
inline std::string normalize_key(std::string_view s) {
    std::string out;
    for (auto span : text::token_spans(s)) {
        if (!out.empty()) out.push_back('_');
        out += text::lowercase(s.substr(span.begin, span.end - span.begin));
    }
    return out;
}

inline std::string child_path(const std::string& parent, std::string_view key) {
    std::string out = parent + "/";
    for (char c : key) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out.push_back(c);
    }
    return out;
}

[[noreturn]] inline void schema_error(const std::string& path, const std::string& msg) {
    throw Error(ErrorCode::SchemaViolation, msg + " at " + (path.empty() ? "/" : path), path.empty() ? "/" : path);
}

inline std::optional<StationKind> infer_kind(std::string_view class_name) {
    auto k = normalize_key(class_name);
    auto has = [&](std::string_view w) {
        // word match on '_' boundaries, plus glued forms like "1mhz"
        return ("_" + k + "_").find("_" + std::string(w) + "_") != std::string::npos;
    };
    if (has("mobile") || has("mobiles")) return StationKind::mobile;
    if (has("base")) {
        if (has("more") || has("greater") || has("above") || has("wide") || has("wideband")) return StationKind::base_wide;
        if (has("less") || has("equal") || has("below") || has("narrow") || has("narrowband"))
            return StationKind::base_narrow;
    }
    return std::nullopt;
}

inline std::optional<double> bandwidth_in_name(std::string_view class_name) {
    static const std::regex re(R"(([0-9]+(?:\.[0-9]+)?)\s*_?\s*mhz)", std::regex::icase);
    std::string s(class_name);
    std::smatch m;
    if (std::regex_search(s, m, re)) return std::stod(m[1].str());
    return std::nullopt;
}

inline std::optional<double> haat_key(std::string_view key) {
    static const std::regex re(R"(haat_up_to_([0-9]+)(?:_([0-9]+))?_?m)");
    std::string k = normalize_key(key);
    std::smatch m;
    if (!std::regex_match(k, m, re)) return std::nullopt;
    std::string num = m[1].str();
    if (m[2].matched) num += "." + m[2].str();
    return std::stod(num);
}

struct ParsedValue {
    double watts;
    bool per_mhz;
};

/// "<number> <unit>[ per MHz]"; watts, kilowatts and milliwatts accepted.
inline ParsedValue parse_power(const ojson& v, const std::string& path) {
    if (v.is_number()) {
        double w = v.get<double>();
        if (!(w > 0.0) || !std::isfinite(w)) schema_error(path, "power limit must be positive");
        return {w, false};
    }
    if (!v.is_string()) schema_error(path, "power limit must be a string like \"2 watts\"");
    static const std::regex re(
        R"(^\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([A-Za-z]+)\s*(?:(?:per|/)\s*([A-Za-z]+))?\s*$)");
    auto s = v.get<std::string>();
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw Error(ErrorCode::UnitError, "unparseable power value \"" + s + "\" at " + path, path);
    double value = std::stod(m[1].str());
    auto unit = text::lowercase(m[2].str());
    double scale = 0.0;
    if (unit == "w" || unit == "watt" || unit == "watts") scale = 1.0;
    else if (unit == "kw" || unit == "kilowatt" || unit == "kilowatts") scale = 1000.0;
    else if (unit == "mw" || unit == "milliwatt" || unit == "milliwatts") scale = 1e-3;
    else throw Error(ErrorCode::UnitError, "unsupported power unit \"" + m[2].str() + "\" at " + path, path);
    bool per_mhz = false;
    if (m[3].matched) {
        if (text::lowercase(m[3].str()) != "mhz")
            throw Error(ErrorCode::UnitError, "unsupported bandwidth unit \"" + m[3].str() + "\" at " + path, path);
        per_mhz = true;
    }
    double w = value * scale;
    if (!(w > 0.0) || !std::isfinite(w)) schema_error(path, "power limit must be positive");
    return {w, per_mhz};
}

inline double class_value(const ojson& v, const std::string& path, BandwidthRule rule) {
    auto pv = parse_power(v, path);
    if (pv.per_mhz && rule == BandwidthRule::absolute)
        throw Error(ErrorCode::UnitError, "per-MHz value inside an absolute limit block at " + path, path);
    return pv.watts;
}

inline void parse_tiered(const ojson& obj, const std::string& path, StationClass& cls) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        auto p = child_path(path, it.key());
        auto key = normalize_key(it.key());
        if (auto haat = haat_key(it.key())) {
            if (cls.default_tier) schema_error(p, "more than one default HAAT tier");
            cls.default_tier = HaatTier{*haat, class_value(it.value(), p, cls.bandwidth_rule)};
        } else if (key == "urban_areas" || key == "urban") {
            cls.urban_limit_watts = class_value(it.value(), p, cls.bandwidth_rule);
        } else if (key == "height_restrictions") {
            if (!it.value().is_array()) schema_error(p, "Height_Restrictions must be an array");
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                const auto& entry = it.value()[i];
                auto ep = p + "/" + std::to_string(i);
                if (!entry.is_object() || entry.size() != 1)
                    schema_error(ep, "each height restriction must be an object with one HAAT_up_to_<N>m key");
                auto haat = haat_key(entry.begin().key());
                if (!haat) schema_error(child_path(ep, entry.begin().key()), "expected a HAAT_up_to_<N>m key");
                cls.haat_tiers.push_back({*haat, class_value(entry.begin().value(), child_path(ep, entry.begin().key()),
                                                             cls.bandwidth_rule)});
            }
        } else {
            schema_error(p, "unknown key \"" + it.key() + "\"");
        }
    }
    if (!cls.default_tier) schema_error(path, "missing default HAAT_up_to_<N>m limit");
}

inline void check_tiers(const StationClass& cls, const std::string& path) {
    auto fail = [&](const std::string& msg) { throw Error(ErrorCode::TierOrderError, msg + " at " + path, path); };
    double prev_haat = cls.default_tier->haat_max_m;
    double prev_limit = cls.default_tier->limit_watts;
    for (std::size_t i = 0; i < cls.haat_tiers.size(); ++i) {
        const auto& t = cls.haat_tiers[i];
        if (!(t.haat_max_m > prev_haat))
            fail("HAAT tier " + std::to_string(i) + " (" + format_number(t.haat_max_m) +
                 " m) does not exceed the previous bound of " + format_number(prev_haat) + " m");
        if (t.limit_watts > prev_limit)
            fail("HAAT tier " + std::to_string(i) + " raises the limit to " + format_number(t.limit_watts) + " W");
        prev_haat = t.haat_max_m;
        prev_limit = t.limit_watts;
    }
}

}  // namespace detail

/// Validates structural invariants of an in-memory RuleSet.
inline void validate(const RuleSet& rules) {
    if (rules.station_classes.empty()) detail::schema_error("/", "rule set needs at least one station class");
    std::set<std::string> names;
    for (const auto& c : rules.station_classes) {
        std::string path = "/" + rules.band_name + "/" + c.name;
        if (!names.insert(c.name).second) detail::schema_error(path, "duplicate station class name");
        if (c.kind == StationKind::mobile) {
            if (!c.flat_limit_watts || !c.haat_tiers.empty() || c.default_tier)
                detail::schema_error(path, "mobile classes carry exactly one flat limit");
        } else {
            if (!c.default_tier || c.flat_limit_watts) detail::schema_error(path, "base classes need a default HAAT tier");
            detail::check_tiers(c, path);
        }
    }
    if (!(rules.bandwidth_threshold_mhz > 0.0)) detail::schema_error("/", "bandwidth threshold must be positive");
}

/// Parses the station-group rule document: one top-level band object whose
/// members are station classes, each holding "Max_eirp" (absolute) or
/// "Max_eirp_per_MHz" as a flat value or a HAAT-tiered object.
inline RuleSet parse_ruleset(std::string_view document, std::string ruleset_id = {}, std::string source_doc = {}) {
    ojson root;
    try {
        root = ojson::parse(document);
    } catch (const ojson::parse_error& e) {
        detail::schema_error("/", std::string("not valid JSON (") + e.what() + ")");
    }
    if (!root.is_object() || root.size() != 1) detail::schema_error("/", "expected one top-level band object");
    RuleSet rules;
    rules.band_name = root.begin().key();
    rules.ruleset_id = ruleset_id.empty() ? slugify(rules.band_name) : std::move(ruleset_id);
    rules.source_doc = std::move(source_doc);
    const auto& band = root.begin().value();
    auto band_path = detail::child_path("", rules.band_name);
    if (!band.is_object() || band.empty()) detail::schema_error(band_path, "band must map station classes to limits");

    std::optional<double> threshold;
    for (auto it = band.begin(); it != band.end(); ++it) {
        auto path = detail::child_path(band_path, it.key());
        if (!it.value().is_object()) detail::schema_error(path, "station class must be an object");
        StationClass cls;
        cls.name = it.key();
        std::optional<StationKind> kind;
        const ojson* limits = nullptr;
        std::string limits_path;
        for (auto f = it.value().begin(); f != it.value().end(); ++f) {
            auto key = detail::normalize_key(f.key());
            auto fp = detail::child_path(path, f.key());
            if (key == "kind" || key == "station_kind") {
                if (!f.value().is_string() || !(kind = parse_station_kind(f.value().get<std::string>())))
                    detail::schema_error(fp, "kind must be base_wide, base_narrow or mobile");
            } else if (key == "max_eirp" || key == "max_eirp_per_mhz") {
                if (limits) detail::schema_error(fp, "more than one EIRP limit block");
                cls.bandwidth_rule = key == "max_eirp" ? BandwidthRule::absolute : BandwidthRule::per_mhz;
                limits = &f.value();
                limits_path = fp;
            } else {
                detail::schema_error(fp, "unknown key \"" + f.key() + "\"");
            }
        }
        if (!kind) kind = detail::infer_kind(cls.name);
        if (!kind) detail::schema_error(path, "cannot tell the station kind from the class name; add \"kind\"");
        cls.kind = *kind;
        if (!limits) detail::schema_error(path, "missing Max_eirp or Max_eirp_per_MHz");
        if (cls.kind == StationKind::mobile) {
            if (limits->is_object()) detail::schema_error(limits_path, "mobile limits are a single value");
            cls.flat_limit_watts = detail::class_value(*limits, limits_path, cls.bandwidth_rule);
        } else {
            if (!limits->is_object()) detail::schema_error(limits_path, "base station limits must be HAAT-tiered");
            detail::parse_tiered(*limits, limits_path, cls);
            detail::check_tiers(cls, limits_path);
            if (auto bw = detail::bandwidth_in_name(cls.name)) {
                if (threshold && *threshold != *bw)
                    detail::schema_error(path, "base classes disagree on the bandwidth threshold");
                threshold = *bw;
            }
        }
        for (const auto& other : rules.station_classes) {
            if (other.kind == cls.kind)
                detail::schema_error(path, "station kind " + std::string(to_string(cls.kind)) + " appears twice");
        }
        rules.station_classes.push_back(std::move(cls));
    }
    if (threshold) rules.bandwidth_threshold_mhz = *threshold;
    validate(rules);
    return rules;
}

/// Inverse of parse_ruleset in the same document shape.
inline ojson to_document(const RuleSet& rules) {
    ojson band = ojson::object();
    for (const auto& c : rules.station_classes) {
        bool per_mhz = c.bandwidth_rule == BandwidthRule::per_mhz;
        auto value = [&](double w) { return format_number(w) + (per_mhz ? " watts per MHz" : " watts"); };
        ojson cls = ojson::object();
        if (detail::infer_kind(c.name) != c.kind) cls["kind"] = std::string(to_string(c.kind));
        std::string key = per_mhz ? "Max_eirp_per_MHz" : "Max_eirp";
        if (c.kind == StationKind::mobile) {
            cls[key] = value(*c.flat_limit_watts);
        } else {
            ojson limits = ojson::object();
            limits["HAAT_up_to_" + format_number(c.default_tier->haat_max_m) + "m"] = value(c.default_tier->limit_watts);
            if (c.urban_limit_watts) limits["Urban_Areas"] = value(*c.urban_limit_watts);
            ojson tiers = ojson::array();
            for (const auto& t : c.haat_tiers)
                tiers.push_back({{"HAAT_up_to_" + format_number(t.haat_max_m) + "m", value(t.limit_watts)}});
            limits["Height_Restrictions"] = tiers;
            cls[key] = limits;
        }
        band[c.name] = cls;
    }
    ojson root = ojson::object();
    root[rules.band_name] = band;
    return root;
}

inline std::string serialize_ruleset(const RuleSet& rules) { return to_document(rules).dump(2); }

inline const StationClass* find_class(const RuleSet& rules, StationKind kind) {
    for (const auto& c : rules.station_classes) {
        if (c.kind == kind) return &c;
    }
    return nullptr;
}

/// Mobile stations get the flat limit. Base stations pick the narrow class at
/// or below the bandwidth threshold, else the wide class; the tier is the
/// default one up to its bound (inclusive), else the first height restriction
/// whose bound covers the HAAT; urban stations take min(tier, urban).
inline PowerLimit evaluate_limit(const RuleSet& rules, const StationQuery& q) {
    if (!(q.occupied_bandwidth_mhz > 0.0) || !std::isfinite(q.occupied_bandwidth_mhz))
        throw Error(ErrorCode::InvalidQuery, "occupied bandwidth must be a positive number of MHz");
    if (!(q.haat_m >= 0.0) || !std::isfinite(q.haat_m))
        throw Error(ErrorCode::InvalidQuery, "HAAT must be a non-negative number of metres");

    StationKind kind = q.station == StationType::mobile ? StationKind::mobile
                       : q.occupied_bandwidth_mhz <= rules.bandwidth_threshold_mhz ? StationKind::base_narrow
                                                                                    : StationKind::base_wide;
    const StationClass* cls = find_class(rules, kind);
    if (!cls) throw Error(ErrorCode::NoMatchingClass, "rule set has no " + std::string(to_string(kind)) + " class");

    PowerLimit out;
    out.basis = cls->bandwidth_rule == BandwidthRule::per_mhz ? LimitBasis::per_mhz : LimitBasis::total;
    out.applied_rule_path.push_back(cls->name);
    if (kind == StationKind::mobile) {
        out.value_watts = *cls->flat_limit_watts;
        out.applied_rule_path.push_back("flat limit: " + format_watts(out.value_watts, out.basis));
        return out;
    }
    if (kind == StationKind::base_narrow) {
        out.applied_rule_path.push_back("bandwidth " + format_number(q.occupied_bandwidth_mhz) + " MHz <= " +
                                        format_number(rules.bandwidth_threshold_mhz) + " MHz");
    } else {
        out.applied_rule_path.push_back("bandwidth " + format_number(q.occupied_bandwidth_mhz) + " MHz > " +
                                        format_number(rules.bandwidth_threshold_mhz) + " MHz");
    }
    const HaatTier* tier = nullptr;
    std::string tier_label;
    if (q.haat_m <= cls->default_tier->haat_max_m) {
        tier = &*cls->default_tier;
        tier_label = "default tier";
    } else {
        for (std::size_t i = 0; i < cls->haat_tiers.size(); ++i) {
            if (q.haat_m <= cls->haat_tiers[i].haat_max_m) {
                tier = &cls->haat_tiers[i];
                tier_label = "height restriction " + std::to_string(i);
                break;
            }
        }
    }
    if (!tier) {
        double last = cls->haat_tiers.empty() ? cls->default_tier->haat_max_m : cls->haat_tiers.back().haat_max_m;
        throw Error(ErrorCode::HaatOutOfDomain, "HAAT " + format_number(q.haat_m) + " m exceeds the last tier bound of " +
                                                    format_number(last) + " m in " + cls->name);
    }
    out.value_watts = tier->limit_watts;
    out.applied_rule_path.push_back(tier_label + ": HAAT <= " + format_number(tier->haat_max_m) +
                                    " m (inclusive) -> " + format_watts(tier->limit_watts, out.basis));
    if (q.urban && cls->urban_limit_watts) {
        out.applied_rule_path.push_back("Urban_Areas -> " + format_watts(*cls->urban_limit_watts, out.basis));
        out.value_watts = std::min(tier->limit_watts, *cls->urban_limit_watts);
        out.applied_rule_path.push_back("urban applies min(" + format_watts(tier->limit_watts, out.basis) + ", " +
                                        format_watts(*cls->urban_limit_watts, out.basis) + ") = " +
                                        format_watts(out.value_watts, out.basis));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Knowledge graph

enum class NodeKind { band, station_class, constraint, limit };

constexpr std::string_view to_string(NodeKind k) noexcept {
    switch (k) {
        case NodeKind::band: return "band";
        case NodeKind::station_class: return "station_class";
        case NodeKind::constraint: return "constraint";
        case NodeKind::limit: return "limit";
    }
    return "limit";
}

struct GraphNode {
    std::string id;
    std::string label;
    NodeKind kind;
};

struct GraphEdge {
    std::string from;
    std::string to;
    std::string relation;  // has_class | has_constraint | limits_to
};

struct RuleGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    std::size_t count(NodeKind k) const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const auto& n) { return n.kind == k; }));
    }
};

/// band -has_class-> class -has_constraint-> constraint -limits_to-> limit,
/// one constraint per flat limit, default tier, urban limit and height restriction.
inline RuleGraph build_knowledge_graph(const RuleSet& rules) {
    RuleGraph g;
    g.nodes.push_back({"band", rules.band_name, NodeKind::band});
    for (std::size_t i = 0; i < rules.station_classes.size(); ++i) {
        const auto& c = rules.station_classes[i];
        auto cid = "class/" + std::to_string(i);
        g.nodes.push_back({cid, c.name, NodeKind::station_class});
        g.edges.push_back({"band", cid, "has_class"});
        LimitBasis basis = c.bandwidth_rule == BandwidthRule::per_mhz ? LimitBasis::per_mhz : LimitBasis::total;
        std::size_t j = 0;
        auto constraint = [&](const std::string& label, double watts) {
            auto kid = "constraint/" + std::to_string(i) + "/" + std::to_string(j);
            auto lid = "limit/" + std::to_string(i) + "/" + std::to_string(j);
            ++j;
            g.nodes.push_back({kid, label, NodeKind::constraint});
            g.nodes.push_back({lid, "EIRP " + format_watts(watts, basis), NodeKind::limit});
            g.edges.push_back({cid, kid, "has_constraint"});
            g.edges.push_back({kid, lid, "limits_to"});
        };
        if (c.flat_limit_watts) constraint("any HAAT", *c.flat_limit_watts);
        if (c.default_tier) constraint("HAAT <= " + format_number(c.default_tier->haat_max_m) + " m", c.default_tier->limit_watts);
        if (c.urban_limit_watts) constraint("urban areas", *c.urban_limit_watts);
        for (const auto& t : c.haat_tiers) constraint("HAAT <= " + format_number(t.haat_max_m) + " m", t.limit_watts);
    }
    return g;
}

namespace detail {
inline std::string dot_quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out + "\"";
}
}  // namespace detail

inline std::string to_dot(const RuleGraph& g) {
    std::ostringstream os;
    os << "digraph rules {\n  rankdir=LR;\n";
    for (const auto& n : g.nodes) {
        std::string_view shape = n.kind == NodeKind::band            ? "doubleoctagon"
                                 : n.kind == NodeKind::station_class ? "box"
                                 : n.kind == NodeKind::constraint    ? "ellipse"
                                                                     : "note";
        os << "  " << detail::dot_quote(n.id) << " [label=" << detail::dot_quote(n.label) << ", kind="
           << detail::dot_quote(to_string(n.kind)) << ", shape=" << shape << "];\n";
    }
    for (const auto& e : g.edges) {
        os << "  " << detail::dot_quote(e.from) << " -> " << detail::dot_quote(e.to)
           << " [label=" << detail::dot_quote(e.relation) << "];\n";
    }
    os << "}\n";
    return os.str();
}

inline nlohmann::json to_json(const RuleGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) nodes.push_back({{"id", n.id}, {"label", n.label}, {"kind", to_string(n.kind)}});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"relation", e.relation}});
    return {{"nodes", nodes}, {"edges", edges}};
}

// ---------------------------------------------------------------------------
// Ontology

struct Concept {
    std::string name;
    std::string parent;  // empty for roots
    std::string description;
};

struct Property {
    std::string name;
    std::string domain;
    std::string range;
};

struct Ontology {
    std::vector<Concept> concepts;
    std::vector<Property> properties;
    std::vector<std::string> constraints;

    bool has_concept(std::string_view name) const {
        return std::any_of(concepts.begin(), concepts.end(), [&](const auto& c) { return c.name == name; });
    }
};

inline Ontology emit_ontology(const RuleSet& rules) {
    Ontology o;
    bool any_base = false;
    bool any_mobile = false;
    bool any_urban = false;
    std::size_t mobiles = 0;
    for (const auto& c : rules.station_classes) {
        if (c.kind == StationKind::mobile) {
            any_mobile = true;
            ++mobiles;
        } else {
            any_base = true;
            any_urban = any_urban || c.urban_limit_watts.has_value();
        }
    }
    if (any_base) {
        o.concepts.push_back({"BaseStation", "", ""});
        if (any_urban) {
            o.concepts.push_back({"UrbanBaseStation", "BaseStation", ""});
            o.concepts.push_back({"NonUrbanBaseStation", "BaseStation", ""});
        }
    }
    if (any_mobile) o.concepts.push_back({"MobileStation", "", ""});
    o.concepts.push_back({"HAAT", "", "Height Above Average Terrain"});
    o.concepts.push_back({"EIRP", "", "Equivalent Isotropically Radiated Power"});
    o.concepts.push_back({"Bandwidth", "", ""});

    if (any_base) {
        o.properties.push_back({"hasEIRP", "BaseStation", "EIRP"});
        o.properties.push_back({"hasHAAT", "BaseStation", "HAAT"});
        o.properties.push_back({"hasBandwidth", "BaseStation", "Bandwidth"});
    }
    if (any_mobile) o.properties.push_back({"hasMaxEIRP", "MobileStation", "EIRP"});

    auto watts_text = [](double w, const StationClass& c) {
        return format_number(w) + (c.bandwidth_rule == BandwidthRule::per_mhz ? " watts per MHz" : " watts");
    };
    for (const auto& c : rules.station_classes) {
        if (c.kind == StationKind::mobile) {
            std::string who = mobiles > 1 ? "MobileStation (" + c.name + ")" : "MobileStation";
            o.constraints.push_back(who + " has a maximum EIRP of " + watts_text(*c.flat_limit_watts, c));
            continue;
        }
        std::string who = "BaseStation (" + c.name + ")";
        std::string cmp = c.kind == StationKind::base_narrow ? "at most " : "more than ";
        o.constraints.push_back(who + " applies to an occupied Bandwidth of " + cmp +
                                format_number(rules.bandwidth_threshold_mhz) + " MHz");
        o.constraints.push_back(who + " with HAAT up to " + format_number(c.default_tier->haat_max_m) +
                                " m has a maximum EIRP of " + watts_text(c.default_tier->limit_watts, c));
        for (const auto& t : c.haat_tiers) {
            o.constraints.push_back(who + " with HAAT up to " + format_number(t.haat_max_m) + " m has a maximum EIRP of " +
                                    watts_text(t.limit_watts, c));
        }
        if (c.urban_limit_watts) {
            o.constraints.push_back("UrbanBaseStation (" + c.name + ") has a maximum EIRP of " +
                                    watts_text(*c.urban_limit_watts, c));
        }
    }
    return o;
}

inline std::string render_ontology(const Ontology& o) {
    std::ostringstream os;
    os << "Concepts:\n";
    for (const auto& c : o.concepts) {
        os << (c.parent.empty() ? "- " : "  - ") << c.name;
        if (!c.description.empty()) os << " (" << c.description << ")";
        os << "\n";
    }
    os << "\nProperties:\n";
    for (const auto& p : o.properties) os << "- " << p.name << ": " << p.domain << " -> " << p.range << "\n";
    os << "\nRelationships:\n";
    for (const auto& c : o.concepts) {
        if (!c.parent.empty()) os << "- " << c.name << " IS-A " << c.parent << "\n";
    }
    os << "\nConstraints:\n";
    for (const auto& s : o.constraints) os << "- " << s << "\n";
    return os.str();
}

inline nlohmann::json to_json(const Ontology& o) {
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& c : o.concepts) {
        nlohmann::json j = {{"name", c.name}, {"description", c.description}};
        if (!c.parent.empty()) j["parent"] = c.parent;
        concepts.push_back(j);
    }
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : o.properties) props.push_back({{"name", p.name}, {"domain", p.domain}, {"range", p.range}});
    return {{"concepts", concepts}, {"properties", props}, {"constraints", o.constraints}};
}

// ---------------------------------------------------------------------------
// Rule test generation

struct RuleTestCase {
    StationQuery query;
    std::optional<PowerLimit> expected;  // nullopt: HaatOutOfDomain expected
    std::string label;
};

inline constexpr double kHaatEpsilon = 1e-3;
inline constexpr double kBandwidthEpsilon = 1e-3;

/// Boundary cases at, just below and just above every tier edge, urban and
/// non-urban where an urban limit exists, the bandwidth edge between base
/// classes, and one case per mobile class. Expected values come from
/// evaluate_limit itself.
inline std::vector<RuleTestCase> generate_rule_tests(const RuleSet& rules) {
    std::vector<RuleTestCase> out;
    for (const auto& c : rules.station_classes) {
        if (c.kind == StationKind::mobile) {
            StationQuery q{StationType::mobile, rules.bandwidth_threshold_mhz, 0.0, false};
            out.push_back({q, evaluate_limit(rules, q), c.name + ": flat limit"});
            continue;
        }
        double bw = c.kind == StationKind::base_narrow ? rules.bandwidth_threshold_mhz
                                                       : rules.bandwidth_threshold_mhz + kBandwidthEpsilon;
        std::vector<double> edges{c.default_tier->haat_max_m};
        for (const auto& t : c.haat_tiers) edges.push_back(t.haat_max_m);
        std::set<double> haats{0.0};
        for (double e : edges) {
            if (e - kHaatEpsilon >= 0.0) haats.insert(e - kHaatEpsilon);
            haats.insert(e);
            haats.insert(e + kHaatEpsilon);
        }
        std::vector<bool> urban_values{false};
        if (c.urban_limit_watts) urban_values.push_back(true);
        for (double h : haats) {
            for (bool urban : urban_values) {
                StationQuery q{StationType::base, bw, h, urban};
                RuleTestCase tc;
                tc.query = q;
                tc.label = c.name + ": HAAT " + format_number(h) + " m" + (urban ? ", urban" : "");
                try {
                    tc.expected = evaluate_limit(rules, q);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::HaatOutOfDomain) throw;
                }
                out.push_back(std::move(tc));
            }
        }
    }
    return out;
}

/// Replays cases against evaluate_limit; returns the labels that disagree.
inline std::vector<std::string> replay_rule_tests(const RuleSet& rules, const std::vector<RuleTestCase>& cases) {
    std::vector<std::string> failures;
    for (const auto& tc : cases) {
        try {
            auto got = evaluate_limit(rules, tc.query);
            if (!tc.expected || got.value_watts != tc.expected->value_watts || got.basis != tc.expected->basis)
                failures.push_back(tc.label);
        } catch (const Error& e) {
            if (tc.expected || e.code() != ErrorCode::HaatOutOfDomain) failures.push_back(tc.label);
        }
    }
    return failures;
}

// ---------------------------------------------------------------------------
// JSON views used by the service and CLI

inline nlohmann::json to_json(const StationQuery& q) {
    return {{"station", to_string(q.station)},
            {"occupied_bandwidth_mhz", q.occupied_bandwidth_mhz},
            {"haat_m", q.haat_m},
            {"urban", q.urban}};
}

inline nlohmann::json to_json(const PowerLimit& p) {
    return {{"value_watts", p.value_watts}, {"basis", to_string(p.basis)}, {"applied_rule_path", p.applied_rule_path}};
}

inline nlohmann::json to_json(const RuleTestCase& tc) {
    nlohmann::json j = {{"label", tc.label}, {"query", to_json(tc.query)}};
    if (tc.expected) j["expected"] = to_json(*tc.expected);
    else j["expected_error"] = std::string(specqa::to_string(ErrorCode::HaatOutOfDomain));
    return j;
}

/// Reads a StationQuery from {"station", "occupied_bandwidth_mhz", "haat_m", "urban"}.
inline StationQuery station_query_from_json(const nlohmann::json& j) {
    StationQuery q;
    try {
        auto station = j.at("station").get<std::string>();
        auto t = parse_station_type(station);
        if (!t) throw Error(ErrorCode::InvalidQuery, "station must be \"base\" or \"mobile\"");
        q.station = *t;
        q.occupied_bandwidth_mhz = j.value("occupied_bandwidth_mhz", 1.0);
        q.haat_m = j.value("haat_m", 0.0);
        q.urban = j.value("urban", false);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidQuery, std::string("bad station query: ") + e.what());
    }
    return q;
}

// ---------------------------------------------------------------------------
// LLM-assisted extraction

inline constexpr std::string_view kExtractionInstructions =
    "Extract the radiated power (EIRP) and antenna height (HAAT) limits from the regulatory document below. "
    "Return only a JSON object of this shape, with no commentary:\n"
    "{\"<band name>\": {\n"
    "  \"Base_Stations_Less_Equal_1MHz\": {\"Max_eirp\": {\"HAAT_up_to_<N>m\": \"<W> watts\", "
    "\"Urban_Areas\": \"<W> watts\", \"Height_Restrictions\": [{\"HAAT_up_to_<N>m\": \"<W> watts\"}]}},\n"
    "  \"Base_Stations_More_1MHz\": {\"Max_eirp_per_MHz\": {\"HAAT_up_to_<N>m\": \"<W> watts per MHz\", "
    "\"Urban_Areas\": \"<W> watts per MHz\", \"Height_Restrictions\": [{\"HAAT_up_to_<N>m\": \"<W> watts per MHz\"}]}},\n"
    "  \"Mobile_Stations\": {\"Max_eirp\": \"<W> watts\"}\n"
    "}}\n"
    "Height_Restrictions must increase in HAAT and must not increase in power. Omit classes the document does not cover.";

inline std::string document_text(const ingest::Document& doc) {
    std::string out = doc.title;
    for (const auto& b : doc.blocks) {
        out += "\n\n";
        if (b.kind == ingest::BlockKind::heading) out += std::string(static_cast<std::size_t>(b.level), '#') + " ";
        out += b.text;
    }
    return out;
}

/// Pulls the outermost JSON object out of a chat reply (code fences and prose tolerated).
inline std::string extract_json_object(std::string_view reply) {
    auto first = reply.find('{');
    auto last = reply.rfind('}');
    if (first == std::string_view::npos || last == std::string_view::npos || last < first) return std::string(reply);
    return std::string(reply.substr(first, last - first + 1));
}

/// Prompts for the rule document, validates the reply with parse_ruleset and
/// re-prompts with the violation appended, for at most 1 + max_repair_rounds
/// attempts.
inline RuleSet extract_rules_llm(const ragqa::LlmClient& llm, const ingest::Document& doc, std::size_t max_repair_rounds,
                                 std::size_t* rounds_used = nullptr) {
    if (doc.blocks.empty()) throw Error(ErrorCode::EmptyDocument, "document has no content: " + doc.doc_id);
    std::vector<ragqa::ChatMessage> messages{
        {"system", ""},
        {"user", std::string(kExtractionInstructions) + "\n\nDocument:\n" + document_text(doc)},
    };
    std::string last_error;
    std::string last_path;
    for (std::size_t round = 0; round <= max_repair_rounds; ++round) {
        auto reply = llm.complete(messages);
        try {
            auto rules = parse_ruleset(extract_json_object(reply), {}, doc.doc_id);
            if (rounds_used) *rounds_used = round + 1;
            return rules;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SchemaViolation && e.code() != ErrorCode::UnitError &&
                e.code() != ErrorCode::TierOrderError)
                throw;
            last_error = e.what();
            last_path = e.path();
            messages.push_back({"assistant", reply});
            messages.push_back({"user", "The previous reply failed validation: " + last_error +
                                            ". Return the corrected JSON object only."});
        }
    }
    if (rounds_used) *rounds_used = max_repair_rounds + 1;
    throw Error(ErrorCode::ExtractionFailed,
                "no valid rule set after " + std::to_string(max_repair_rounds + 1) + " attempts; last: " + last_error,
                last_path);
}

}  // namespace specqa::rulecode
