#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <toml.hpp>

#include "core_types.hpp"
#include "protocols.hpp"

namespace mixtraffic {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& msg)
        : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct VehicleSpec {
    VehicleKind kind = VehicleKind::intelligent;
    double x = 0.0;
    int lane = 0;
    double v = 0.0;
    // Vehicles sharing a group number start as one platoon, head first in roster order.
    std::optional<int> platoon;
    std::optional<double> cruise;
    std::optional<double> v_des;
    std::optional<int> target_lane;

    bool operator==(const VehicleSpec&) const = default;
};

struct EventSpec {
    double at = 0.0;
    int id = 0;
    double speed = 0.0;

    bool operator==(const EventSpec&) const = default;
};

struct GeneratorSpec {
    int count = 20;
    double iv_fraction = 0.5;
    // Fixed spacing and speed; unset means random legal gaps and random speeds.
    std::optional<double> spacing;
    std::optional<double> speed;

    bool operator==(const GeneratorSpec&) const = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    double duration = 60.0;
    std::int64_t seed = 1;
    int trace_stride = 10;
    TrafficMode mode = TrafficMode::multi_lane;

    Topology topology = Topology::straight;
    double length = 0.0;
    int lane_count = 1;
    int min_lane = 0;
    double lane_width = 3.5;

    double h = 0.01;
    double iv_a_min = -8.0;
    double hv_a_min = -6.0;
    double a_max = 4.0;
    double v_max = 42.0;
    double d_min = 2.0;
    double theta_min = -0.4;
    double theta_max = 0.4;

    int horizon = 20;
    double discount = 0.1;
    double platoon_spacing = 2.5;
    double split_gap = 8.0;
    double join_range = 50.0;
    bool auto_join = false;

    double hv_v_des = 15.0;
    double hv_gain = 2.0;
    double hv_headway = 0.6;
    double hv_lane_change_rate = 0.0;
    double hv_lane_change_duration = 4.0;
    double hv_lateral_gain = 1.5;

    double iv_cruise = 15.0;
    double iv_lane_change_rate = 0.0;

    bool gates_enabled = true;
    double hv_rule_scale = 1.0;

    std::optional<double> sensor_x;
    double window = 60.0;

    std::string trace_path = "trace.csv";
    std::string violations_path = "violations.csv";
    std::string summary_path = "summary.txt";

    std::optional<GeneratorSpec> generator;
    std::vector<VehicleSpec> vehicles;
    std::vector<EventSpec> events;

    bool operator==(const ScenarioConfig&) const = default;

    LimitSet limits(VehicleKind k) const {
        LimitSet l;
        l.a_min = k == VehicleKind::human ? hv_a_min : iv_a_min;
        l.a_max = a_max;
        l.v_max = v_max;
        l.theta_min = theta_min;
        l.theta_max = theta_max;
        l.h = h;
        l.d_min = d_min;
        return l;
    }
    LaneGeometry geometry() const { return {min_lane, lane_count, lane_width}; }
    std::int64_t slots() const { return std::llround(duration / h); }
};

namespace detail {

inline int line_of(const toml::node* n) {
    return n ? static_cast<int>(n->source().begin.line) : 0;
}

class Reader {
public:
    Reader(const toml::table& root, std::string source) : root_(root), source_(std::move(source)) {}

    [[noreturn]] void fail(const toml::node* at, const std::string& msg) const {
        throw ConfigError(source_, line_of(at), msg);
    }

    const toml::table* section(std::string_view name) const {
        const toml::node* n = root_.get(name);
        if (!n) return nullptr;
        if (!n->is_table()) fail(n, std::string("[") + std::string(name) + "] must be a table");
        return n->as_table();
    }

    template <class T>
    void get(const toml::table* t, std::string_view key, T& out) const {
        if (!t) return;
        const toml::node* n = t->get(key);
        if (!n) return;
        out = convert<T>(n, key);
    }

    template <class T>
    void get(const toml::table* t, std::string_view key, std::optional<T>& out) const {
        if (!t) return;
        const toml::node* n = t->get(key);
        if (!n) return;
        out = convert<T>(n, key);
    }

    void check_keys(const toml::table* t, std::string_view where, std::initializer_list<std::string_view> keys) const {
        if (!t) return;
        for (const auto& [k, v] : *t) {
            bool known = false;
            for (auto kk : keys) known = known || kk == k.str();
            if (!known) fail(&v, "unknown key '" + std::string(k.str()) + "' in " + std::string(where));
        }
    }

    template <class T>
    T convert(const toml::node* n, std::string_view key) const {
        if constexpr (std::is_same_v<T, double>) {
            if (auto d = n->value_exact<double>()) return *d;
            if (auto i = n->value_exact<std::int64_t>()) return static_cast<double>(*i);
            fail(n, "'" + std::string(key) + "' must be a number");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (auto b = n->value_exact<bool>()) return *b;
            fail(n, "'" + std::string(key) + "' must be true or false");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (auto s = n->value_exact<std::string>()) return *s;
            fail(n, "'" + std::string(key) + "' must be a string");
        } else {
            if (auto i = n->value_exact<std::int64_t>()) {
                if (*i < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
                    *i > static_cast<std::int64_t>(std::numeric_limits<T>::max()))
                    fail(n, "'" + std::string(key) + "' is out of range");
                return static_cast<T>(*i);
            }
            fail(n, "'" + std::string(key) + "' must be an integer");
        }
    }

    const std::string& source() const { return source_; }

private:
    const toml::table& root_;
    std::string source_;
};

inline VehicleKind parse_kind(const Reader& r, const toml::node* n, const std::string& s) {
    if (s == "IV") return VehicleKind::intelligent;
    if (s == "HV") return VehicleKind::human;
    r.fail(n, "kind must be \"IV\" or \"HV\"");
}

inline std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out + "\"";
}

}  // namespace detail

// Semantic checks; `where` maps a dotted key to its source line when available.
inline void validate(const ScenarioConfig& c, const std::string& source = "config",
                     const std::function<int(const std::string&)>& where = {}) {
    auto fail = [&](const std::string& key, const std::string& msg) {
        throw ConfigError(source, where ? where(key) : 0, msg);
    };
    try {
        c.limits(VehicleKind::intelligent).validate();
        c.limits(VehicleKind::human).validate();
    } catch (const std::invalid_argument& e) {
        fail("limits", e.what());
    }
    if (!(c.iv_a_min <= c.hv_a_min)) fail("limits.iv_a_min", "iv_a_min must not exceed hv_a_min");
    if (!(c.duration > 0.0)) fail("scenario.duration", "duration must be positive");
    if (std::abs(c.duration / c.h - std::round(c.duration / c.h)) > 1e-6)
        fail("scenario.duration", "duration must be a multiple of h");
    if (c.trace_stride < 1) fail("scenario.trace_stride", "trace_stride must be at least 1");
    if (c.seed < 0) fail("scenario.seed", "seed must be non-negative");
    if (c.lane_count < 1) fail("road.lane_count", "lane_count must be at least 1");
    if (!(c.lane_width > 0.0)) fail("road.lane_width", "lane_width must be positive");
    if (c.topology == Topology::ring && !(c.length > 0.0)) fail("road.length", "a ring needs a positive length");
    if (c.length < 0.0) fail("road.length", "length must be non-negative");
    if (c.horizon < 1 || c.horizon > 64) fail("planner.horizon", "horizon must be in [1, 64]");
    if (!(c.discount > 0.0)) fail("planner.discount", "discount must be positive");
    if (c.platoon_spacing < c.d_min - c.iv_a_min * c.h * c.h / 2.0 - 1e-12)
        fail("planner.platoon_spacing", "platoon_spacing is below d_min - a_min h^2/2");
    if (!(c.split_gap > c.platoon_spacing)) fail("planner.split_gap", "split_gap must exceed platoon_spacing");
    if (!(c.hv_headway >= 0.0)) fail("hv_model.headway", "headway must be non-negative");
    if (!(c.hv_gain > 0.0)) fail("hv_model.gain", "gain must be positive");
    if (!(c.hv_lane_change_duration > 0.0)) fail("hv_model.lane_change_duration", "must be positive");
    if (c.hv_lane_change_rate < 0.0 || c.iv_lane_change_rate < 0.0) fail("hv_model.lane_change_rate", "rates must be non-negative");
    if (!(c.hv_rule_scale > 0.0 && c.hv_rule_scale <= 1.0)) fail("diagnostics.hv_rule_scale", "hv_rule_scale must be in (0, 1]");
    if (!(c.window > 0.0)) fail("measure.window", "window must be positive");
    if (c.generator && !c.vehicles.empty()) fail("generator", "use either [generator] or [[vehicle]], not both");
    if (c.generator) {
        const auto& g = *c.generator;
        if (g.count < 0) fail("generator.count", "count must be non-negative");
        if (g.iv_fraction < 0.0 || g.iv_fraction > 1.0) fail("generator.iv_fraction", "iv_fraction must be in [0, 1]");
        if (g.spacing && !(*g.spacing > 0.0)) fail("generator.spacing", "spacing must be positive");
        if (g.speed && (*g.speed < 0.0 || *g.speed > c.v_max)) fail("generator.speed", "speed must be in [0, v_max]");
        if (g.spacing && c.topology == Topology::ring && *g.spacing * g.count > c.length + 1e-9)
            fail("generator.spacing", "vehicles do not fit on the ring");
    }
    const LaneGeometry geo = c.geometry();
    for (std::size_t i = 0; i < c.vehicles.size(); ++i) {
        const auto& v = c.vehicles[i];
        const std::string key = "vehicle." + std::to_string(i);
        if (!geo.valid_lane(v.lane)) fail(key + ".lane", "lane outside the road");
        if (v.v < 0.0 || v.v > c.v_max) fail(key + ".v", "speed must be in [0, v_max]");
        if (v.target_lane && (!geo.valid_lane(*v.target_lane) || std::abs(*v.target_lane - v.lane) > 1))
            fail(key + ".target_lane", "target_lane must be the current or an adjacent lane");
        if (v.platoon && v.kind != VehicleKind::intelligent) fail(key + ".platoon", "only IVs can be platoon members");
        if (v.platoon && v.target_lane && *v.target_lane != v.lane)
            fail(key + ".target_lane", "platoon members cannot change lanes");
        if (c.topology == Topology::ring && (v.x < 0.0 || v.x >= c.length)) fail(key + ".x", "x must lie in [0, length)");
    }
    for (std::size_t i = 0; i < c.events.size(); ++i) {
        const auto& e = c.events[i];
        const std::string key = "event." + std::to_string(i);
        if (e.id < 0 || static_cast<std::size_t>(e.id) >= c.vehicles.size()) fail(key + ".id", "event id is not a roster index");
        if (e.at < 0.0 || e.at > c.duration) fail(key + ".at", "event time outside the run");
        if (e.speed < 0.0 || e.speed > c.v_max) fail(key + ".speed", "speed must be in [0, v_max]");
    }
}

inline ScenarioConfig parse_config(std::string_view text, const std::string& source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ConfigError(source, static_cast<int>(e.source().begin.line), std::string(e.description()));
    }
    detail::Reader r(root, source);
    r.check_keys(&root, "file", {"scenario", "road", "limits", "planner", "hv_model", "iv", "diagnostics", "measure",
                                 "outputs", "generator", "vehicle", "event"});
    ScenarioConfig c;

    const toml::table* s = r.section("scenario");
    r.check_keys(s, "[scenario]", {"name", "duration", "seed", "trace_stride", "mode"});
    r.get(s, "name", c.name);
    r.get(s, "duration", c.duration);
    r.get(s, "seed", c.seed);
    r.get(s, "trace_stride", c.trace_stride);
    std::string mode = "multi_lane";
    r.get(s, "mode", mode);
    if (mode == "single_lane") c.mode = TrafficMode::single_lane;
    else if (mode != "multi_lane") r.fail(s->get("mode"), "mode must be \"single_lane\" or \"multi_lane\"");

    const toml::table* rd = r.section("road");
    r.check_keys(rd, "[road]", {"topology", "length", "lane_count", "min_lane", "lane_width"});
    std::string topo = "straight";
    r.get(rd, "topology", topo);
    if (topo == "ring") c.topology = Topology::ring;
    else if (topo != "straight") r.fail(rd->get("topology"), "topology must be \"straight\" or \"ring\"");
    r.get(rd, "length", c.length);
    r.get(rd, "lane_count", c.lane_count);
    r.get(rd, "min_lane", c.min_lane);
    r.get(rd, "lane_width", c.lane_width);

    const toml::table* l = r.section("limits");
    r.check_keys(l, "[limits]", {"h", "iv_a_min", "hv_a_min", "a_max", "v_max", "d_min", "theta_min", "theta_max"});
    r.get(l, "h", c.h);
    r.get(l, "iv_a_min", c.iv_a_min);
    r.get(l, "hv_a_min", c.hv_a_min);
    r.get(l, "a_max", c.a_max);
    r.get(l, "v_max", c.v_max);
    r.get(l, "d_min", c.d_min);
    r.get(l, "theta_min", c.theta_min);
    r.get(l, "theta_max", c.theta_max);

    const toml::table* p = r.section("planner");
    r.check_keys(p, "[planner]", {"horizon", "discount", "platoon_spacing", "split_gap", "join_range", "auto_join"});
    r.get(p, "horizon", c.horizon);
    r.get(p, "discount", c.discount);
    r.get(p, "platoon_spacing", c.platoon_spacing);
    r.get(p, "split_gap", c.split_gap);
    r.get(p, "join_range", c.join_range);
    r.get(p, "auto_join", c.auto_join);

    const toml::table* hm = r.section("hv_model");
    r.check_keys(hm, "[hv_model]", {"v_des", "gain", "headway", "lane_change_rate", "lane_change_duration", "lateral_gain"});
    r.get(hm, "v_des", c.hv_v_des);
    r.get(hm, "gain", c.hv_gain);
    r.get(hm, "headway", c.hv_headway);
    r.get(hm, "lane_change_rate", c.hv_lane_change_rate);
    r.get(hm, "lane_change_duration", c.hv_lane_change_duration);
    r.get(hm, "lateral_gain", c.hv_lateral_gain);

    const toml::table* iv = r.section("iv");
    r.check_keys(iv, "[iv]", {"cruise", "lane_change_rate"});
    r.get(iv, "cruise", c.iv_cruise);
    r.get(iv, "lane_change_rate", c.iv_lane_change_rate);

    const toml::table* dg = r.section("diagnostics");
    r.check_keys(dg, "[diagnostics]", {"gates_enabled", "hv_rule_scale"});
    r.get(dg, "gates_enabled", c.gates_enabled);
    r.get(dg, "hv_rule_scale", c.hv_rule_scale);

    const toml::table* m = r.section("measure");
    r.check_keys(m, "[measure]", {"sensor_x", "window"});
    r.get(m, "sensor_x", c.sensor_x);
    r.get(m, "window", c.window);

    const toml::table* o = r.section("outputs");
    r.check_keys(o, "[outputs]", {"trace", "violations", "summary"});
    r.get(o, "trace", c.trace_path);
    r.get(o, "violations", c.violations_path);
    r.get(o, "summary", c.summary_path);

    if (const toml::table* g = r.section("generator")) {
        r.check_keys(g, "[generator]", {"count", "iv_fraction", "spacing", "speed"});
        GeneratorSpec gs;
        r.get(g, "count", gs.count);
        r.get(g, "iv_fraction", gs.iv_fraction);
        r.get(g, "spacing", gs.spacing);
        r.get(g, "speed", gs.speed);
        c.generator = gs;
    }

    auto array_of_tables = [&](std::string_view key) -> const toml::array* {
        const toml::node* n = root.get(key);
        if (!n) return nullptr;
        if (!n->is_array_of_tables()) r.fail(n, "[[" + std::string(key) + "]] must be an array of tables");
        return n->as_array();
    };
    // Dotted keys to lines for semantic errors.
    std::vector<std::pair<std::string, int>> lines;
    auto note = [&](const std::string& prefix, const toml::table* t) {
        if (!t) return;
        lines.emplace_back(prefix, detail::line_of(t));
        for (const auto& [k, v] : *t) lines.emplace_back(prefix + "." + std::string(k.str()), detail::line_of(&v));
    };
    for (auto name : {"scenario", "road", "limits", "planner", "hv_model", "iv", "diagnostics", "measure", "outputs",
                      "generator"})
        note(name, r.section(name));

    if (const toml::array* vs = array_of_tables("vehicle")) {
        for (std::size_t i = 0; i < vs->size(); ++i) {
            const toml::table* t = (*vs)[i].as_table();
            r.check_keys(t, "[[vehicle]]", {"kind", "x", "lane", "v", "platoon", "cruise", "v_des", "target_lane"});
            VehicleSpec v;
            std::string kind = "IV";
            r.get(t, "kind", kind);
            v.kind = detail::parse_kind(r, t->get("kind") ? t->get("kind") : t, kind);
            if (!t->get("x")) r.fail(t, "[[vehicle]] needs x");
            r.get(t, "x", v.x);
            r.get(t, "lane", v.lane);
            r.get(t, "v", v.v);
            r.get(t, "platoon", v.platoon);
            r.get(t, "cruise", v.cruise);
            r.get(t, "v_des", v.v_des);
            r.get(t, "target_lane", v.target_lane);
            c.vehicles.push_back(v);
            note("vehicle." + std::to_string(i), t);
        }
    }
    if (const toml::array* es = array_of_tables("event")) {
        for (std::size_t i = 0; i < es->size(); ++i) {
            const toml::table* t = (*es)[i].as_table();
            r.check_keys(t, "[[event]]", {"at", "id", "speed"});
            EventSpec e;
            if (!t->get("at") || !t->get("id") || !t->get("speed")) r.fail(t, "[[event]] needs at, id and speed");
            r.get(t, "at", e.at);
            r.get(t, "id", e.id);
            r.get(t, "speed", e.speed);
            c.events.push_back(e);
            note("event." + std::to_string(i), t);
        }
    }

    validate(c, source, [&](const std::string& key) {
        int best = 0;
        std::size_t best_len = 0;
        for (const auto& [k, line] : lines)
            if ((key == k || key.rfind(k + ".", 0) == 0) && k.size() >= best_len) {
                best = line;
                best_len = k.size();
            }
        return best;
    });
    return c;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

inline std::string serialize(const ScenarioConfig& c) {
    using detail::fmt;
    using detail::quote;
    std::ostringstream o;
    o << "[scenario]\n"
      << "name = " << quote(c.name) << "\n"
      << "duration = " << fmt(c.duration) << "\n"
      << "seed = " << c.seed << "\n"
      << "trace_stride = " << c.trace_stride << "\n"
      << "mode = " << (c.mode == TrafficMode::single_lane ? "\"single_lane\"" : "\"multi_lane\"") << "\n\n";
    o << "[road]\n"
      << "topology = " << (c.topology == Topology::ring ? "\"ring\"" : "\"straight\"") << "\n"
      << "length = " << fmt(c.length) << "\n"
      << "lane_count = " << c.lane_count << "\n"
      << "min_lane = " << c.min_lane << "\n"
      << "lane_width = " << fmt(c.lane_width) << "\n\n";
    o << "[limits]\n"
      << "h = " << fmt(c.h) << "\n"
      << "iv_a_min = " << fmt(c.iv_a_min) << "\n"
      << "hv_a_min = " << fmt(c.hv_a_min) << "\n"
      << "a_max = " << fmt(c.a_max) << "\n"
      << "v_max = " << fmt(c.v_max) << "\n"
      << "d_min = " << fmt(c.d_min) << "\n"
      << "theta_min = " << fmt(c.theta_min) << "\n"
      << "theta_max = " << fmt(c.theta_max) << "\n\n";
    o << "[planner]\n"
      << "horizon = " << c.horizon << "\n"
      << "discount = " << fmt(c.discount) << "\n"
      << "platoon_spacing = " << fmt(c.platoon_spacing) << "\n"
      << "split_gap = " << fmt(c.split_gap) << "\n"
      << "join_range = " << fmt(c.join_range) << "\n"
      << "auto_join = " << (c.auto_join ? "true" : "false") << "\n\n";
    o << "[hv_model]\n"
      << "v_des = " << fmt(c.hv_v_des) << "\n"
      << "gain = " << fmt(c.hv_gain) << "\n"
      << "headway = " << fmt(c.hv_headway) << "\n"
      << "lane_change_rate = " << fmt(c.hv_lane_change_rate) << "\n"
      << "lane_change_duration = " << fmt(c.hv_lane_change_duration) << "\n"
      << "lateral_gain = " << fmt(c.hv_lateral_gain) << "\n\n";
    o << "[iv]\n"
      << "cruise = " << fmt(c.iv_cruise) << "\n"
      << "lane_change_rate = " << fmt(c.iv_lane_change_rate) << "\n\n";
    o << "[diagnostics]\n"
      << "gates_enabled = " << (c.gates_enabled ? "true" : "false") << "\n"
      << "hv_rule_scale = " << fmt(c.hv_rule_scale) << "\n\n";
    o << "[measure]\n";
    if (c.sensor_x) o << "sensor_x = " << fmt(*c.sensor_x) << "\n";
    o << "window = " << fmt(c.window) << "\n\n";
    o << "[outputs]\n"
      << "trace = " << quote(c.trace_path) << "\n"
      << "violations = " << quote(c.violations_path) << "\n"
      << "summary = " << quote(c.summary_path) << "\n";
    if (c.generator) {
        const auto& g = *c.generator;
        o << "\n[generator]\n"
          << "count = " << g.count << "\n"
          << "iv_fraction = " << fmt(g.iv_fraction) << "\n";
        if (g.spacing) o << "spacing = " << fmt(*g.spacing) << "\n";
        if (g.speed) o << "speed = " << fmt(*g.speed) << "\n";
    }
    for (const auto& v : c.vehicles) {
        o << "\n[[vehicle]]\n"
          << "kind = " << (v.kind == VehicleKind::human ? "\"HV\"" : "\"IV\"") << "\n"
          << "x = " << fmt(v.x) << "\n"
          << "lane = " << v.lane << "\n"
          << "v = " << fmt(v.v) << "\n";
        if (v.platoon) o << "platoon = " << *v.platoon << "\n";
        if (v.cruise) o << "cruise = " << fmt(*v.cruise) << "\n";
        if (v.v_des) o << "v_des = " << fmt(*v.v_des) << "\n";
        if (v.target_lane) o << "target_lane = " << *v.target_lane << "\n";
    }
    for (const auto& e : c.events)
        o << "\n[[event]]\n"
          << "at = " << fmt(e.at) << "\n"
          << "id = " << e.id << "\n"
          << "speed = " << fmt(e.speed) << "\n";
    return o.str();
}

}  // namespace mixtraffic
