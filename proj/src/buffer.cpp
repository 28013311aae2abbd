#include "ddrsi/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace ddrsi {

using nlohmann::json;

const char* to_string(Corner c) {
    switch (c) {
        case Corner::slow: return "slow";
        case Corner::typical: return "typical";
        case Corner::fast: return "fast";
    }
    return "?";
}

Corner corner_from_string(const std::string& s) {
    if (s == "slow") return Corner::slow;
    if (s == "typical") return Corner::typical;
    if (s == "fast") return Corner::fast;
    throw ConfigError("", "unknown corner '" + s + "' (expected slow|typical|fast)");
}

const PvtCorner& CornerScales::at(Corner c) const {
    switch (c) {
        case Corner::slow: return slow;
        case Corner::fast: return fast;
        default: return typical;
    }
}

double ViCurve::operator()(double volts) const {
    return value_and_slope(volts).first;
}

std::pair<double, double> ViCurve::value_and_slope(double volts) const {
    const auto n = v.size();
    if (n == 0) return {0.0, 0.0};
    if (n == 1 || volts <= v[0]) return {i[0], 0.0};
    if (volts >= v[n - 1]) return {i[n - 1], 0.0};
    // Bracketing segment via binary search on the voltage axis.
    const double* begin = v.data();
    const double* pos = std::upper_bound(begin, begin + n, volts);
    Eigen::Index hi = pos - begin;  // v[hi-1] <= volts < v[hi]
    Eigen::Index lo = hi - 1;
    double slope = (i[hi] - i[lo]) / (v[hi] - v[lo]);
    return {i[lo] + slope * (volts - v[lo]), slope};
}

double eval_vi(const ViCurve& curve, double volts) {
    return curve(volts);
}

std::pair<double, double> switching_weights(double t_since_edge, double ramp, EdgeDir direction) {
    double frac = ramp > 0 ? std::clamp(t_since_edge / ramp, 0.0, 1.0) : 1.0;
    double w_up = direction == EdgeDir::rising ? frac : 1.0 - frac;
    return {w_up, 1.0 - w_up};
}

double driver_current(const BufferModel& m, const PvtCorner& corner, double w_up, double w_dn, double v_pad) {
    const DriverCorner& c = m.corner(corner.tag);
    return corner.strength_scale * (w_up * c.pullup(v_pad) - w_dn * c.pulldown(v_pad));
}

std::pair<double, double> driver_current_and_slope(const BufferModel& m, const PvtCorner& corner, double w_up,
                                                   double w_dn, double v_pad) {
    const DriverCorner& c = m.corner(corner.tag);
    auto [iu, gu] = c.pullup.value_and_slope(v_pad);
    auto [id, gd] = c.pulldown.value_and_slope(v_pad);
    double s = corner.strength_scale;
    return {s * (w_up * iu - w_dn * id), s * (w_up * gu - w_dn * gd)};
}

double odt_current(const OdtModel& m, const PvtCorner& corner, double v_pad) {
    auto [g, j] = odt_norton(m, corner);
    return g * v_pad - j;
}

std::pair<double, double> odt_norton(const OdtModel& m, const PvtCorner& corner) {
    if (!m.has_termination) return {0.0, 0.0};
    double s = corner.r_scale * m.leg_scale(corner.tag);
    double ru = m.r_to_vddq * s;
    double rd = m.r_to_gnd * s;
    double vddq = m.vddq * corner.voltage_scale;
    // i(v) = (v - vddq)/ru + v/rd
    double g = 1.0 / ru + 1.0 / rd;
    double j = vddq / ru;
    return {g, j};
}

const BufferModel* BufferLibrary::find_model(const std::string& name) const {
    auto it = models.find(name);
    return it == models.end() ? nullptr : &it->second;
}

const OdtModel* BufferLibrary::find_odt(const std::string& name) const {
    auto it = odt_models.find(name);
    return it == odt_models.end() ? nullptr : &it->second;
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError(path, "unknown key '" + it.key() + "'");
    }
}

ViCurve parse_curve(const json& arr, const std::string& path) {
    if (!arr.is_array() || arr.empty()) throw ConfigError(path, "expected a nonempty array of [volts, amps] pairs");
    ViCurve c;
    c.v.resize(static_cast<Eigen::Index>(arr.size()));
    c.i.resize(static_cast<Eigen::Index>(arr.size()));
    for (size_t k = 0; k < arr.size(); ++k) {
        const json& p = arr[k];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw ConfigError(path + "[" + std::to_string(k) + "]", "expected [volts, amps]");
        c.v[static_cast<Eigen::Index>(k)] = p[0].get<double>();
        c.i[static_cast<Eigen::Index>(k)] = p[1].get<double>();
        if (k > 0 && c.v[static_cast<Eigen::Index>(k)] <= c.v[static_cast<Eigen::Index>(k - 1)])
            throw ConfigError(path + "[" + std::to_string(k) + "]", "voltages must be strictly increasing");
    }
    return c;
}

DriverCorner parse_driver_corner(const json& obj, const DriverCorner* base, const std::string& path) {
    // Key checks happen at the call sites: the model object carries extra
    // keys (name, vddq, corners) beyond the per-corner fields read here.
    if (base) check_keys(obj, {"pullup", "pulldown", "ramp_rise", "ramp_fall", "c_comp"}, path);
    DriverCorner c = base ? *base : DriverCorner{};
    if (obj.contains("pullup")) c.pullup = parse_curve(obj.at("pullup"), path + ".pullup");
    if (obj.contains("pulldown")) c.pulldown = parse_curve(obj.at("pulldown"), path + ".pulldown");
    if (obj.contains("ramp_rise")) c.ramp_rise = obj.at("ramp_rise").get<double>();
    if (obj.contains("ramp_fall")) c.ramp_fall = obj.at("ramp_fall").get<double>();
    if (obj.contains("c_comp")) c.c_comp = obj.at("c_comp").get<double>();
    return c;
}

void validate_driver_corner(const DriverCorner& c, const std::string& path) {
    if (c.pullup.empty() || c.pulldown.empty()) throw ConfigError(path, "pullup and pulldown curves are required");
    if (!(c.ramp_rise > 0) || !(c.ramp_fall > 0)) throw ConfigError(path, "ramps must be > 0");
    if (c.c_comp < 0) throw ConfigError(path, "c_comp must be >= 0");
    // A pulldown sinks current: require nonnegative current just above 0 V.
    double i_near = c.pulldown(1e-3);
    if (i_near < -1e-12) throw ConfigError(path + ".pulldown", "pulldown must sink (i >= 0) for v > 0 near the origin");
}

BufferModel parse_model(const json& obj, const std::string& path) {
    check_keys(obj, {"name", "vddq", "pullup", "pulldown", "ramp_rise", "ramp_fall", "c_comp", "corners"}, path);
    BufferModel m;
    if (!obj.contains("name")) throw ConfigError(path, "model requires a name");
    m.name = obj.at("name").get<std::string>();
    m.vddq = obj.value("vddq", 1.5);

    DriverCorner base = parse_driver_corner(obj, nullptr, path);
    for (int k = 0; k < 3; ++k) m.corners[static_cast<size_t>(k)] = base;
    if (obj.contains("corners")) {
        const json& cs = obj.at("corners");
        check_keys(cs, {"slow", "typical", "fast"}, path + ".corners");
        for (auto& [key, val] : cs.items()) {
            Corner c = corner_from_string(key);
            m.corners[static_cast<size_t>(static_cast<int>(c))] =
                parse_driver_corner(val, &base, path + ".corners." + key);
        }
    }
    for (int k = 0; k < 3; ++k)
        validate_driver_corner(m.corners[static_cast<size_t>(k)],
                               path + " (corner " + to_string(static_cast<Corner>(k)) + ")");
    return m;
}

OdtModel parse_odt(const json& obj, const std::string& path) {
    check_keys(obj, {"name", "vddq", "rtt_effective", "r_to_vddq", "r_to_gnd", "c_comp", "r_scale"}, path);
    OdtModel m;
    if (!obj.contains("name")) throw ConfigError(path, "odt model requires a name");
    m.name = obj.at("name").get<std::string>();
    m.vddq = obj.value("vddq", 1.5);
    m.c_comp = obj.value("c_comp", 0.0);
    if (m.c_comp < 0) throw ConfigError(path, "c_comp must be >= 0");

    bool has_rtt = obj.contains("rtt_effective") && !obj.at("rtt_effective").is_null();
    bool has_legs = obj.contains("r_to_vddq") || obj.contains("r_to_gnd");
    if (has_legs) {
        if (!obj.contains("r_to_vddq") || !obj.contains("r_to_gnd"))
            throw ConfigError(path, "both r_to_vddq and r_to_gnd are required when legs are explicit");
        m.has_termination = true;
        m.r_to_vddq = obj.at("r_to_vddq").get<double>();
        m.r_to_gnd = obj.at("r_to_gnd").get<double>();
        if (!(m.r_to_vddq > 0) || !(m.r_to_gnd > 0)) throw ConfigError(path, "termination legs must be > 0 ohms");
        double parallel = m.r_to_vddq * m.r_to_gnd / (m.r_to_vddq + m.r_to_gnd);
        if (has_rtt) {
            double rtt = obj.at("rtt_effective").get<double>();
            if (std::abs(parallel - rtt) > 1e-3 * rtt)
                throw ConfigError(path, "legs in parallel (" + std::to_string(parallel) +
                                            " ohm) do not match rtt_effective within 0.1%");
            m.rtt_effective = rtt;
        } else {
            m.rtt_effective = parallel;
        }
    } else if (has_rtt) {
        double rtt = obj.at("rtt_effective").get<double>();
        if (!(rtt > 0)) throw ConfigError(path, "rtt_effective must be > 0 ohms");
        m.has_termination = true;
        m.rtt_effective = rtt;
        m.r_to_vddq = 2.0 * rtt;
        m.r_to_gnd = 2.0 * rtt;
    }

    if (obj.contains("r_scale")) {
        const json& rs = obj.at("r_scale");
        check_keys(rs, {"slow", "typical", "fast"}, path + ".r_scale");
        for (auto& [key, val] : rs.items())
            m.r_scale[static_cast<size_t>(static_cast<int>(corner_from_string(key)))] = val.get<double>();
        if (m.r_scale[static_cast<int>(Corner::typical)] != 1.0)
            throw ConfigError(path + ".r_scale", "typical scale must be exactly 1.0");
    }
    return m;
}

}  // namespace

BufferLibrary load_buffer_library(const json& doc, const std::string& path_hint) {
    const std::string root = path_hint.empty() ? "buffers" : path_hint;
    if (!doc.is_object()) throw ConfigError(root, "expected a JSON object");
    check_keys(doc, {"models", "odt_models"}, root);
    BufferLibrary lib;
    if (doc.contains("models")) {
        const json& arr = doc.at("models");
        for (size_t k = 0; k < arr.size(); ++k) {
            BufferModel m = parse_model(arr[k], root + ".models[" + std::to_string(k) + "]");
            if (!lib.models.emplace(m.name, m).second)
                throw ConfigError(root + ".models", "duplicate model name '" + m.name + "'");
        }
    }
    if (doc.contains("odt_models")) {
        const json& arr = doc.at("odt_models");
        for (size_t k = 0; k < arr.size(); ++k) {
            OdtModel m = parse_odt(arr[k], root + ".odt_models[" + std::to_string(k) + "]");
            if (lib.models.count(m.name) || !lib.odt_models.emplace(m.name, m).second)
                throw ConfigError(root + ".odt_models", "duplicate model name '" + m.name + "'");
        }
    }
    return lib;
}

BufferLibrary load_buffer_library_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file.string(), "cannot open buffer library");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);  // allow comments
    } catch (const json::parse_error& e) {
        throw ConfigError(file.string(), std::string("JSON parse error: ") + e.what());
    }
    return load_buffer_library(doc, file.string());
}

}  // namespace ddrsi
