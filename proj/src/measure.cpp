#include "ddrsi/measure.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ddrsi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double>& v) {
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        double lo = *std::max_element(v.begin(), v.begin() + mid);
        m = 0.5 * (m + lo);
    }
    return m;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

}  // namespace

void Thresholds::validate(const std::string& path) const {
    auto bad = [&](const std::string& msg) { throw ConfigError(path, msg); };
    if (!(vddq > 0)) bad("vddq must be positive");
    if (!(vil_ac < vil_dc)) bad("vil_ac must be below vil_dc");
    if (!(vil_dc < vref)) bad("vil_dc must be below vref");
    if (!(vref < vih_dc)) bad("vref must be below vih_dc");
    if (!(vih_dc < vih_ac)) bad("vih_dc must be below vih_ac");
    if (!(vih_ac < vddq)) bad("vih_ac must be below vddq");
    if (!(vil_ac > 0)) bad("vil_ac must be above ground");
    if (!(overshoot_limit > 0) || !(undershoot_limit > 0)) bad("overshoot/undershoot limits must be positive");
}

std::vector<double> crossings(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double level, CrossDir dir) {
    std::vector<double> out;
    for (Eigen::Index k = 0; k + 1 < trace.size(); ++k) {
        const double a = trace[k];
        const double b = trace[k + 1];
        const bool rise = a < level && b >= level;
        const bool fall = a > level && b <= level;
        if (!rise && !fall) continue;
        if (dir == CrossDir::rising && !rise) continue;
        if (dir == CrossDir::falling && !fall) continue;
        const double t = (static_cast<double>(k) + (level - a) / (b - a)) * dt;
        if (!out.empty() && t - out.back() < 0.5 * dt) continue;
        out.push_back(t);
    }
    return out;
}

namespace {

// Pick the (t1, t2) crossing pair (t1 from c1, t2 the first entry of c2 after
// t1) closest to near_time; without a hint, the first pair.
std::pair<double, double> pick_pair(const std::vector<double>& c1, const std::vector<double>& c2,
                                    std::optional<double> near_time) {
    double best_t1 = kNan, best_t2 = kNan, best_d = kInf;
    for (double t1 : c1) {
        auto it = std::upper_bound(c2.begin(), c2.end(), t1);
        if (it == c2.end()) continue;
        const double t2 = *it;
        double d = 0;
        if (near_time) d = std::min(std::abs(t1 - *near_time), std::abs(t2 - *near_time));
        if (d < best_d) {
            best_d = d;
            best_t1 = t1;
            best_t2 = t2;
            if (!near_time) break;
        }
    }
    if (!std::isfinite(best_t1))
        throw MeasureError(MeasureError::Kind::no_qualifying_crossing, "no complete threshold-to-threshold edge found");
    return {best_t1, best_t2};
}

double tangent_slope(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double t1, double t2) {
    const auto k1 = static_cast<Eigen::Index>(std::floor(t1 / dt));
    const auto k2 = std::min<Eigen::Index>(trace.size() - 2, static_cast<Eigen::Index>(std::ceil(t2 / dt)));
    double worst = 0;
    for (Eigen::Index k = std::max<Eigen::Index>(0, k1); k <= k2; ++k)
        worst = std::max(worst, std::abs(trace[k + 1] - trace[k]) / dt);
    return worst;
}

SlewResult slew_between(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double lv1, double lv2, CrossDir dir,
                        EdgeDir edge, std::optional<double> near_time, SlewMethod method) {
    const auto c1 = crossings(trace, dt, lv1, dir);
    const auto c2 = crossings(trace, dt, lv2, dir);
    if (c1.empty() || c2.empty())
        throw MeasureError(MeasureError::Kind::ac_level_not_reached,
                           "signal never spans " + fmt("%.3f", lv1) + " V to " + fmt("%.3f", lv2) + " V");
    const auto [t1, t2] = pick_pair(c1, c2, near_time);
    SlewResult r;
    r.method = method;
    r.edge = edge;
    r.t_start = t1;
    r.t_end = t2;
    if (method == SlewMethod::nominal) {
        r.v_per_ns = std::abs(lv2 - lv1) / std::max(t2 - t1, dt * 1e-6) * 1e-9;
    } else {
        r.v_per_ns = tangent_slope(trace, dt, t1, t2) * 1e-9;
    }
    return r;
}

}  // namespace

SlewResult data_slew(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, const Thresholds& thr, SlewKind kind,
                     EdgeDir edge, std::optional<double> near_time, SlewMethod method) {
    double lv1 = 0, lv2 = 0;
    CrossDir dir = edge == EdgeDir::rising ? CrossDir::rising : CrossDir::falling;
    if (kind == SlewKind::setup) {
        lv1 = thr.vref;
        lv2 = edge == EdgeDir::rising ? thr.vih_ac : thr.vil_ac;
    } else {
        lv1 = edge == EdgeDir::rising ? thr.vil_dc : thr.vih_dc;
        lv2 = thr.vref;
    }
    return slew_between(trace, dt, lv1, lv2, dir, edge, near_time, method);
}

SlewResult diff_slew(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& n, double dt,
                     const Thresholds& thr, EdgeDir edge, std::optional<double> near_time, SlewMethod method) {
    if (p.size() != n.size())
        throw MeasureError(MeasureError::Kind::no_qualifying_crossing, "differential legs have mismatched lengths");
    const Eigen::VectorXd d = p - n;
    const double swing = thr.vih_ac - thr.vref;
    const double lv1 = edge == EdgeDir::rising ? -swing : swing;
    const double lv2 = -lv1;
    const CrossDir dir = edge == EdgeDir::rising ? CrossDir::rising : CrossDir::falling;
    return slew_between(d, dt, lv1, lv2, dir, edge, near_time, method);
}

SetupHold measure_setup_hold(const Eigen::Ref<const Eigen::VectorXd>& data, double dt, double t_strobe,
                             const Thresholds& thr) {
    const double t_end = static_cast<double>(data.size() - 1) * dt;
    if (t_strobe < 0 || t_strobe > t_end)
        throw MeasureError(MeasureError::Kind::edge_absent, "strobe time outside the recorded trace");
    const auto k = static_cast<Eigen::Index>(t_strobe / dt);
    const double frac = t_strobe / dt - static_cast<double>(k);
    const double v = k + 1 < data.size() ? data[k] + frac * (data[k + 1] - data[k]) : data[k];
    SetupHold sh;
    sh.data_high = v >= thr.vref;

    const double ac_level = sh.data_high ? thr.vih_ac : thr.vil_ac;
    const CrossDir ac_dir = sh.data_high ? CrossDir::rising : CrossDir::falling;
    double t_ac = -kInf;
    for (double t : crossings(data, dt, ac_level, ac_dir))
        if (t <= t_strobe) t_ac = t;
    if (!std::isfinite(t_ac))
        throw MeasureError(MeasureError::Kind::ac_level_not_reached,
                           std::string("data never reached the ") + (sh.data_high ? "high" : "low") +
                               " AC level before the strobe");
    sh.t_ds = t_strobe - t_ac;

    const double dc_level = sh.data_high ? thr.vih_dc : thr.vil_dc;
    const CrossDir dc_dir = sh.data_high ? CrossDir::falling : CrossDir::rising;
    double t_dc = t_end;  // data holds through the end of the record
    for (double t : crossings(data, dt, dc_level, dc_dir)) {
        if (t >= t_strobe) {
            t_dc = t;
            break;
        }
    }
    sh.t_dh = t_dc - t_strobe;
    return sh;
}

void DeratingTable::validate(const std::string& path) const {
    auto bad = [&](const std::string& msg) { throw ConfigError(path, msg); };
    if (dqs_axis.size() < 1 || dq_axis.size() < 1) bad("axes must be non-empty");
    for (Eigen::Index i = 0; i + 1 < dqs_axis.size(); ++i)
        if (!(dqs_axis[i] > dqs_axis[i + 1])) bad("dqs axis must be strictly descending");
    for (Eigen::Index i = 0; i + 1 < dq_axis.size(); ++i)
        if (!(dq_axis[i] > dq_axis[i + 1])) bad("dq axis must be strictly descending");
    if (static_cast<Eigen::Index>(cells.size()) != dqs_axis.size() * dq_axis.size())
        bad("cell count does not match axis dimensions");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t\r");
        const auto e = cur.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_num(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where, "expected a number, got '" + s + "'");
    }
}

}  // namespace

DeratingTable load_derating_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file.string(), "cannot open derating table");
    DeratingTable t;
    std::string line;
    std::vector<double> dqs, dq;
    std::vector<DeratingCell> cells;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = file.string() + ":" + std::to_string(lineno);
        auto f = split_csv_line(line);
        if (dqs.empty()) {
            if (f.empty() || f[0] != "dqs_slews") throw ConfigError(where, "first row must start with 'dqs_slews'");
            for (size_t i = 1; i < f.size(); ++i) dqs.push_back(parse_num(f[i], where));
            if (dqs.empty()) throw ConfigError(where, "no dqs slew columns");
            continue;
        }
        if (f.size() != dqs.size() + 1)
            throw ConfigError(where, "expected " + std::to_string(dqs.size() + 1) + " fields, got " +
                                         std::to_string(f.size()));
        dq.push_back(parse_num(f[0], where));
        for (size_t i = 1; i < f.size(); ++i) {
            DeratingCell c;
            if (f[i] == "NS") {
                c.supported = false;
            } else {
                const auto colon = f[i].find(':');
                if (colon == std::string::npos)
                    throw ConfigError(where, "cell '" + f[i] + "' must be 'setup:hold' in ps or NS");
                c.supported = true;
                c.dtds_ps = parse_num(f[i].substr(0, colon), where);
                c.dtdh_ps = parse_num(f[i].substr(colon + 1), where);
            }
            cells.push_back(c);
        }
    }
    if (dq.empty()) throw ConfigError(file.string(), "no data rows");
    t.dqs_axis = Eigen::Map<const Eigen::VectorXd>(dqs.data(), static_cast<Eigen::Index>(dqs.size()));
    t.dq_axis = Eigen::Map<const Eigen::VectorXd>(dq.data(), static_cast<Eigen::Index>(dq.size()));
    t.cells = std::move(cells);
    t.validate(file.string());
    return t;
}

void save_derating_csv(const DeratingTable& t, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file.string(), "cannot write derating table");
    out << "dqs_slews";
    for (Eigen::Index j = 0; j < t.dqs_axis.size(); ++j) out << "," << fmt("%g", t.dqs_axis[j]);
    out << "\n";
    for (Eigen::Index i = 0; i < t.dq_axis.size(); ++i) {
        out << fmt("%g", t.dq_axis[i]);
        for (Eigen::Index j = 0; j < t.dqs_axis.size(); ++j) {
            const auto c = t.cell(i, j);
            if (c.supported)
                out << "," << fmt("%g", c.dtds_ps) << ":" << fmt("%g", c.dtdh_ps);
            else
                out << ",NS";
        }
        out << "\n";
    }
}

namespace {

struct AxisPos {
    Eigen::Index lo = 0;   // index of the faster (larger) bracketing entry
    Eigen::Index hi = 0;   // index of the slower bracketing entry
    double frac = 0;       // 0 at lo, 1 at hi
    bool exact = false;
};

AxisPos locate(const Eigen::VectorXd& axis, double v, const char* name) {
    AxisPos p;
    const Eigen::Index n = axis.size();
    if (v >= axis[0]) {  // faster than the table covers: clamp to the fastest entry
        p.lo = p.hi = 0;
        p.exact = true;
        return p;
    }
    if (v < axis[n - 1] * (1 - 1e-9))
        throw MeasureError(MeasureError::Kind::derate_below_range,
                           std::string(name) + " slew " + fmt("%.3f", v) + " V/ns is below the slowest table entry (" +
                               fmt("%.3f", axis[n - 1]) + " V/ns)");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(v - axis[i]) <= 1e-9 * std::max(1.0, std::abs(axis[i]))) {
            p.lo = p.hi = i;
            p.exact = true;
            return p;
        }
    }
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        if (v < axis[i] && v > axis[i + 1]) {
            p.lo = i;
            p.hi = i + 1;
            p.frac = (axis[i] - v) / (axis[i] - axis[i + 1]);
            return p;
        }
    }
    p.lo = p.hi = n - 1;  // within tolerance of the slowest entry
    p.exact = true;
    return p;
}

DeratingCell supported_cell(const DeratingTable& t, Eigen::Index i, Eigen::Index j, double dq, double dqs) {
    const auto c = t.cell(i, j);
    if (!c.supported)
        throw MeasureError(MeasureError::Kind::derate_not_supported,
                           "slew combination dq=" + fmt("%.3f", dq) + " V/ns, dqs=" + fmt("%.3f", dqs) +
                               " V/ns falls in an unsupported region of the derating table");
    return c;
}

}  // namespace

std::pair<double, double> derate_lookup(const DeratingTable& t, double dq_v_ns, double dqs_v_ns, DerateMode mode) {
    auto pq = locate(t.dq_axis, dq_v_ns, "dq");
    auto ps = locate(t.dqs_axis, dqs_v_ns, "dqs");
    if (mode == DerateMode::nearest_cell) {
        const Eigen::Index i = pq.frac > 0.5 ? pq.hi : pq.lo;
        const Eigen::Index j = ps.frac > 0.5 ? ps.hi : ps.lo;
        const auto c = supported_cell(t, i, j, dq_v_ns, dqs_v_ns);
        return {c.dtds_ps * 1e-12, c.dtdh_ps * 1e-12};
    }
    // Bilinear over the (up to four) bracketing cells; every contributing cell
    // must be supported.
    double ds = 0, dh = 0;
    const double wq[2] = {1 - pq.frac, pq.frac};
    const double ws[2] = {1 - ps.frac, ps.frac};
    const Eigen::Index iq[2] = {pq.lo, pq.hi};
    const Eigen::Index is[2] = {ps.lo, ps.hi};
    for (int a = 0; a < 2; ++a) {
        if (wq[a] == 0 && !(pq.exact && a == 0)) continue;
        for (int b = 0; b < 2; ++b) {
            if (ws[b] == 0 && !(ps.exact && b == 0)) continue;
            if (pq.exact && a == 1) continue;
            if (ps.exact && b == 1) continue;
            const double w = (pq.exact ? 1.0 : wq[a]) * (ps.exact ? 1.0 : ws[b]);
            if (w == 0) continue;
            const auto c = supported_cell(t, iq[a], is[b], dq_v_ns, dqs_v_ns);
            ds += w * c.dtds_ps;
            dh += w * c.dtdh_ps;
        }
    }
    return {ds * 1e-12, dh * 1e-12};
}

MarginResult derated_margins(double t_ds, double t_dh, double dtds, double dtdh, const BaseTiming& base) {
    MarginResult m;
    m.t_ds = t_ds;
    m.t_dh = t_dh;
    m.dtds = dtds;
    m.dtdh = dtdh;
    m.setup_margin = t_ds - (base.base_tds + dtds);
    m.hold_margin = t_dh - (base.base_tdh + dtdh);
    m.pass = m.setup_margin >= 0 && m.hold_margin >= 0;
    return m;
}

namespace {

struct Interval {
    double s = 0, e = 0;
};

// In-band (transitioning) sub-interval of one linear sample step, in step-e
// fraction coordinates; empty when the segment stays pinned at a rail.
bool band_interval(double a, double b, double lo, double hi, double& f0, double& f1) {
    if (a == b) {
        if (a > lo && a < hi) {
            f0 = 0;
            f1 = 1;
            return true;
        }
        return false;
    }
    double fl = (lo - a) / (b - a);
    double fh = (hi - a) / (b - a);
    if (fl > fh) std::swap(fl, fh);
    f0 = std::max(0.0, fl);
    f1 = std::min(1.0, fh);
    return f1 > f0;
}

}  // namespace

EyeDiagram eye_diagram(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double ui, double fold_offset,
                       const Thresholds& thr, std::pair<double, double> valid_window, int warmup_ui, int time_bins,
                       int volt_bins) {
    if (ui <= 0 || dt <= 0) throw MeasureError(MeasureError::Kind::no_qualifying_crossing, "eye needs positive ui and dt");
    EyeDiagram e;
    e.ui = ui;
    e.fold_offset = fold_offset;
    e.valid_window_start = valid_window.first;
    e.valid_window_end = valid_window.second;

    const Eigen::Index n = trace.size();
    const auto k0 = std::min<Eigen::Index>(n > 2 ? n - 2 : 0, static_cast<Eigen::Index>(std::llround(warmup_ui * ui / dt)));
    if (n - k0 < 2) throw MeasureError(MeasureError::Kind::no_qualifying_crossing, "trace too short for an eye");
    e.v_min = trace.segment(k0, n - k0).minCoeff();
    e.v_max = trace.segment(k0, n - k0).maxCoeff();

    auto fold = [&](double t) {
        double tf = std::fmod(t - fold_offset, ui);
        return tf < 0 ? tf + ui : tf;
    };

    e.density = Eigen::MatrixXd::Zero(volt_bins, time_bins);
    const double vspan = std::max(e.v_max - e.v_min, 1e-12);
    constexpr int kSub = 4;
    for (Eigen::Index k = k0; k + 1 < n; ++k) {
        for (int s = 0; s < kSub; ++s) {
            const double f = (s + 0.5) / kSub;
            const double v = trace[k] + f * (trace[k + 1] - trace[k]);
            const int ci = std::min(time_bins - 1, static_cast<int>(fold((static_cast<double>(k) + f) * dt) / ui * time_bins));
            const int ri = std::clamp(static_cast<int>((v - e.v_min) / vspan * volt_bins), 0, volt_bins - 1);
            e.density(ri, ci) += 1.0;
        }
    }

    // Rails from the medians of the two settled populations; a trace that
    // never visits both sides of vref has no eye.
    std::vector<double> hi_s, lo_s;
    for (Eigen::Index k = k0; k < n; ++k) (trace[k] >= thr.vref ? hi_s : lo_s).push_back(trace[k]);
    if (hi_s.empty() || lo_s.empty()) {
        e.closed = true;
        e.center = 0.5 * ui;
        return e;
    }
    const double rail_hi = median_of(hi_s);
    const double rail_lo = median_of(lo_s);
    const double swing = rail_hi - rail_lo;
    if (swing < 1e-6) {
        e.closed = true;
        e.center = 0.5 * ui;
        return e;
    }
    // 10% guard off each rail: reflection staircases that have settled to
    // within a tenth of the swing count as valid level, not transition.
    const double guard = 0.10 * swing;
    const double lo_g = rail_lo + guard;
    const double hi_g = rail_hi - guard;

    // Transition intervals: times the trace sits strictly between the guard
    // bands, folded onto one UI.
    std::vector<Interval> raw;
    for (Eigen::Index k = k0; k + 1 < n; ++k) {
        double f0 = 0, f1 = 0;
        if (!band_interval(trace[k], trace[k + 1], lo_g, hi_g, f0, f1)) continue;
        const double s = (static_cast<double>(k) + f0) * dt;
        const double t = (static_cast<double>(k) + f1) * dt;
        if (!raw.empty() && s - raw.back().e <= 0.25 * dt)
            raw.back().e = t;
        else
            raw.push_back({s, t});
    }
    if (raw.empty()) {
        e.closed = true;  // no transitions at all: static level
        e.center = 0.5 * ui;
        return e;
    }

    std::vector<Interval> folded;
    for (const auto& iv : raw) {
        if (iv.e - iv.s >= ui) {
            e.closed = true;
            e.center = 0.5 * ui;
            return e;
        }
        const double s = fold(iv.s);
        const double len = iv.e - iv.s;
        if (s + len <= ui) {
            folded.push_back({s, s + len});
        } else {
            folded.push_back({s, ui});
            folded.push_back({0, s + len - ui});
        }
    }
    std::sort(folded.begin(), folded.end(), [](const Interval& a, const Interval& b) { return a.s < b.s; });
    std::vector<Interval> merged;
    for (const auto& iv : folded) {
        if (!merged.empty() && iv.s <= merged.back().e)
            merged.back().e = std::max(merged.back().e, iv.e);
        else
            merged.push_back(iv);
    }
    // Largest circular gap between covered intervals.
    double best_gap = -1, best_center = 0.5 * ui;
    for (size_t i = 0; i < merged.size(); ++i) {
        const double gap_start = merged[i].e;
        const double gap_end = i + 1 < merged.size() ? merged[i + 1].s : merged[0].s + ui;
        const double gap = gap_end - gap_start;
        if (gap > best_gap) {
            best_gap = gap;
            best_center = fold(gap_start + 0.5 * gap + fold_offset);
        }
    }
    if (merged.size() == 1 && merged[0].s <= 0 && merged[0].e >= ui) best_gap = 0;
    e.width = std::max(0.0, best_gap);
    e.center = best_center;
    e.closed = e.width <= 0;

    // Vertical opening at the eye center.
    double win = std::max(dt, ui / time_bins);
    double top = kInf, bot = -kInf;
    while (win <= 0.5 * ui) {
        top = kInf;
        bot = -kInf;
        for (Eigen::Index k = k0; k < n; ++k) {
            double d = std::abs(fold(static_cast<double>(k) * dt) - e.center);
            d = std::min(d, ui - d);
            if (d > win) continue;
            if (trace[k] >= thr.vref)
                top = std::min(top, trace[k]);
            else
                bot = std::max(bot, trace[k]);
        }
        if (std::isfinite(top) && std::isfinite(bot)) break;
        win *= 2;
    }
    e.height = std::isfinite(top) && std::isfinite(bot) ? std::max(0.0, top - bot) : 0.0;
    return e;
}

void save_eye_csv(const EyeDiagram& e, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file.string(), "cannot write eye csv");
    const int tb = static_cast<int>(e.density.cols());
    const int vb = static_cast<int>(e.density.rows());
    out << "v_center";
    for (int c = 0; c < tb; ++c) out << "," << fmt("%.9e", (c + 0.5) / tb * e.ui);
    out << "\n";
    const double vspan = std::max(e.v_max - e.v_min, 1e-12);
    for (int r = 0; r < vb; ++r) {
        out << fmt("%.9e", e.v_min + (r + 0.5) / vb * vspan);
        for (int c = 0; c < tb; ++c) out << "," << fmt("%g", e.density(r, c));
        out << "\n";
    }
}

void save_eye_svg(const EyeDiagram& e, const Thresholds& thr, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file.string(), "cannot write eye svg");
    const double W = 820, H = 500, ml = 70, mr = 20, mt = 40, mb = 50;
    const double pw = W - ml - mr, ph = H - mt - mb;
    const double vspan = std::max(e.v_max - e.v_min, 1e-12);
    auto X = [&](double t) { return ml + t / e.ui * pw; };
    auto Y = [&](double v) { return mt + (e.v_max - v) / vspan * ph; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
        << W << " " << H << "\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\"/>\n";

    const double dmax = e.density.size() ? e.density.maxCoeff() : 0;
    if (dmax > 0) {
        const int tb = static_cast<int>(e.density.cols());
        const int vb = static_cast<int>(e.density.rows());
        const double cw = pw / tb, ch = ph / vb;
        for (int r = 0; r < vb; ++r) {
            for (int c = 0; c < tb; ++c) {
                const double d = e.density(r, c);
                if (d <= 0) continue;
                const double o = 0.15 + 0.85 * std::log1p(d) / std::log1p(dmax);
                out << "<rect x=\"" << fmt("%.1f", ml + c * cw) << "\" y=\"" << fmt("%.1f", mt + (vb - 1 - r) * ch)
                    << "\" width=\"" << fmt("%.2f", cw) << "\" height=\"" << fmt("%.2f", ch)
                    << "\" fill=\"#1b4f9c\" fill-opacity=\"" << fmt("%.3f", o) << "\"/>\n";
            }
        }
    }

    if (e.valid_window_end > e.valid_window_start) {
        out << "<rect x=\"" << fmt("%.1f", X(e.valid_window_start)) << "\" y=\"" << mt << "\" width=\""
            << fmt("%.1f", X(e.valid_window_end) - X(e.valid_window_start)) << "\" height=\"" << ph
            << "\" fill=\"#2e8b57\" fill-opacity=\"0.15\" stroke=\"#2e8b57\" stroke-dasharray=\"6 3\"/>\n";
    }

    struct Line {
        double v;
        const char* color;
        const char* label;
    };
    const Line lines[] = {{thr.vih_ac, "#c0392b", "vih_ac"}, {thr.vih_dc, "#e67e22", "vih_dc"},
                          {thr.vref, "#7f8c8d", "vref"},     {thr.vil_dc, "#e67e22", "vil_dc"},
                          {thr.vil_ac, "#c0392b", "vil_ac"}};
    for (const auto& ln : lines) {
        if (ln.v < e.v_min || ln.v > e.v_max) continue;
        out << "<line x1=\"" << ml << "\" y1=\"" << fmt("%.1f", Y(ln.v)) << "\" x2=\"" << ml + pw << "\" y2=\""
            << fmt("%.1f", Y(ln.v)) << "\" stroke=\"" << ln.color << "\" stroke-dasharray=\"4 4\"/>\n";
        out << "<text x=\"" << ml + pw - 48 << "\" y=\"" << fmt("%.1f", Y(ln.v) - 3)
            << "\" font-family=\"monospace\" font-size=\"11\" fill=\"" << ln.color << "\">" << ln.label << "</text>\n";
    }

    out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"monospace\" font-size=\"13\">eye width "
        << fmt("%.1f", e.width * 1e12) << " ps, height " << fmt("%.1f", e.height * 1e3) << " mV"
        << (e.closed ? " (closed)" : "") << "</text>\n";
    out << "<text x=\"" << ml + pw / 2 - 30 << "\" y=\"" << H - 14
        << "\" font-family=\"monospace\" font-size=\"12\">time in UI (" << fmt("%.0f", e.ui * 1e12)
        << " ps)</text>\n";
    out << "<text x=\"12\" y=\"" << mt + ph / 2
        << "\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 12 " << mt + ph / 2 << ")\">volts</text>\n";
    out << "</svg>\n";
}

NoiseMetrics noise_metrics(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, const Thresholds& thr) {
    NoiseMetrics m;
    if (trace.size() == 0) return m;
    m.overshoot = std::max(0.0, trace.maxCoeff() - thr.vddq);
    m.undershoot = std::max(0.0, -trace.minCoeff());

    // Settled samples sit at least 4 samples away from every vref crossing.
    const auto cr = crossings(trace, dt, thr.vref, CrossDir::both);
    std::vector<char> excluded(static_cast<size_t>(trace.size()), 0);
    for (double t : cr) {
        const double kc = t / dt;
        const auto a = static_cast<Eigen::Index>(std::ceil(kc - 4 + 1e-9));
        const auto b = static_cast<Eigen::Index>(std::floor(kc + 4 - 1e-9));
        for (Eigen::Index j = std::max<Eigen::Index>(0, a); j <= std::min(trace.size() - 1, b); ++j)
            excluded[static_cast<size_t>(j)] = 1;
    }
    double hi_min = kInf, lo_max = -kInf;
    for (Eigen::Index k = 0; k < trace.size(); ++k) {
        if (excluded[static_cast<size_t>(k)]) continue;
        if (trace[k] >= thr.vref)
            hi_min = std::min(hi_min, trace[k]);
        else
            lo_max = std::max(lo_max, trace[k]);
    }
    m.ac_margin_high = std::isfinite(hi_min) ? hi_min - thr.vih_ac : kNan;
    m.dc_margin_high = std::isfinite(hi_min) ? hi_min - thr.vih_dc : kNan;
    m.ac_margin_low = std::isfinite(lo_max) ? thr.vil_ac - lo_max : kNan;
    m.dc_margin_low = std::isfinite(lo_max) ? thr.vil_dc - lo_max : kNan;
    return m;
}

LaneTimingReport measure_lane(const Eigen::Ref<const Eigen::VectorXd>& data,
                              const Eigen::Ref<const Eigen::VectorXd>& strobe_p,
                              const Eigen::Ref<const Eigen::VectorXd>& strobe_n, double dt, double ui,
                              const Thresholds& thr, const DeratingTable* table, const BaseTiming& base,
                              LatchEdges latch, SlewMethod method, int warmup_ui, DerateMode derate_mode) {
    const bool differential = strobe_n.size() > 0;
    Eigen::VectorXd diff;
    if (differential) {
        if (strobe_p.size() != strobe_n.size())
            throw MeasureError(MeasureError::Kind::edge_absent, "strobe legs have mismatched lengths");
        diff = strobe_p - strobe_n;
    }
    const double level = differential ? 0.0 : thr.vref;
    const Eigen::Ref<const Eigen::VectorXd> strobe_trace =
        differential ? Eigen::Ref<const Eigen::VectorXd>(diff) : strobe_p;

    std::vector<std::pair<double, EdgeDir>> strobes;
    if (latch == LatchEdges::rising || latch == LatchEdges::both)
        for (double t : crossings(strobe_trace, dt, level, CrossDir::rising)) strobes.emplace_back(t, EdgeDir::rising);
    if (latch == LatchEdges::falling || latch == LatchEdges::both)
        for (double t : crossings(strobe_trace, dt, level, CrossDir::falling)) strobes.emplace_back(t, EdgeDir::falling);
    std::sort(strobes.begin(), strobes.end());

    const double t_min = warmup_ui * ui;
    const double t_end = static_cast<double>(data.size() - 1) * dt;
    LaneTimingReport rep;
    rep.worst_setup_margin = kInf;
    rep.worst_hold_margin = kInf;
    double worst_dtds = 0, worst_dtdh = 0;
    double first_strobe = -1;
    bool any_derate_error = false;

    // The bit a strobe latches is only measurable once the data has actually
    // transitioned; strobes sampling the start-up steady state are skipped.
    const auto data_vref = crossings(data, dt, thr.vref, CrossDir::both);
    for (const auto& [t_s, sdir] : strobes) {
        // A latch event needs a full bit interval of trace after the strobe,
        // otherwise the hold measurement is truncated by the record boundary.
        if (t_s < t_min || t_s > t_end - ui) continue;
        bool has_prior_edge = false;
        for (double t : data_vref)
            if (t < t_s) {
                has_prior_edge = true;
                break;
            }
        if (!has_prior_edge) continue;

        LatchTiming ev;
        ev.t_strobe = t_s;
        ev.strobe_edge = sdir;
        ev.raw = measure_setup_hold(data, dt, t_s, thr);
        const EdgeDir data_edge = ev.raw.data_high ? EdgeDir::rising : EdgeDir::falling;
        ev.dq_slew = data_slew(data, dt, thr, SlewKind::setup, data_edge, t_s - ev.raw.t_ds, method);
        if (differential)
            ev.dqs_slew = diff_slew(strobe_p, strobe_n, dt, thr, sdir, t_s, method);
        else
            ev.dqs_slew = data_slew(strobe_p, dt, thr, SlewKind::setup, sdir, t_s, method);

        if (table) {
            try {
                const auto [dds, ddh] = derate_lookup(*table, ev.dq_slew.v_per_ns, ev.dqs_slew.v_per_ns, derate_mode);
                ev.margins = derated_margins(ev.raw.t_ds, ev.raw.t_dh, dds, ddh, base);
                ev.derated = true;
            } catch (const MeasureError& ex) {
                ev.derated = false;
                ev.derate_error = ex.what();
                ev.margins = derated_margins(ev.raw.t_ds, ev.raw.t_dh, 0, 0, base);
                any_derate_error = true;
            }
        } else {
            ev.derated = false;
            ev.margins = derated_margins(ev.raw.t_ds, ev.raw.t_dh, 0, 0, base);
        }
        if (first_strobe < 0) first_strobe = t_s;
        if (ev.margins.setup_margin < rep.worst_setup_margin) {
            rep.worst_setup_margin = ev.margins.setup_margin;
            worst_dtds = ev.margins.dtds;
        }
        if (ev.margins.hold_margin < rep.worst_hold_margin) {
            rep.worst_hold_margin = ev.margins.hold_margin;
            worst_dtdh = ev.margins.dtdh;
        }
        rep.events.push_back(std::move(ev));
    }
    if (rep.events.empty())
        throw MeasureError(MeasureError::Kind::edge_absent, "no measurable strobe edges after warm-up");

    rep.noise = noise_metrics(data, dt, thr);

    // Fold so the strobe lands mid-eye; the overlay box shows the derated
    // data-valid window around it.
    double fold_offset = std::fmod(first_strobe - 0.5 * ui, ui);
    if (fold_offset < 0) fold_offset += ui;
    const double win_start = 0.5 * ui - (base.base_tds + worst_dtds);
    const double win_end = 0.5 * ui + (base.base_tdh + worst_dtdh);
    rep.eye = eye_diagram(data, dt, ui, fold_offset, thr, {win_start, win_end}, warmup_ui);

    rep.pass = rep.worst_setup_margin >= 0 && rep.worst_hold_margin >= 0 && !any_derate_error &&
               rep.noise.overshoot <= thr.overshoot_limit && rep.noise.undershoot <= thr.undershoot_limit;
    return rep;
}

}  // namespace ddrsi
