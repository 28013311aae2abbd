#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ddrsi/buffer.hpp"
#include "ddrsi/common.hpp"

namespace ddrsi {

/// SSTL input levels for one bus class. Ordering invariant:
/// vil_ac < vil_dc < vref < vih_dc < vih_ac.
struct Thresholds {
    double vref = 0.75;
    double vih_ac = 0.925;
    double vih_dc = 0.85;
    double vil_ac = 0.575;
    double vil_dc = 0.65;
    double overshoot_limit = 0.4;   // volts above vddq
    double undershoot_limit = 0.4;  // volts below ground
    double vddq = 1.5;

    void validate(const std::string& path) const;
};

/// Speed-grade timing inputs. All seconds.
struct BaseTiming {
    double tck = 2.5e-9;
    int cas_latency = 6;
    double base_tds = 75e-12;
    double base_tdh = 150e-12;
    double ui = 1.25e-9;  // defaults to tck/2 at load
    double step_resolution = 25e-12;
};

enum class CrossDir { rising, falling, both };

/// Interpolated threshold-crossing times of a sampled trace, ascending,
/// deduplicated within dt/2.
std::vector<double> crossings(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double level,
                              CrossDir dir = CrossDir::both);

enum class SlewMethod { nominal, tangent };

struct SlewResult {
    double v_per_ns = 0;
    SlewMethod method = SlewMethod::nominal;
    EdgeDir edge = EdgeDir::rising;
    double t_start = 0;  // measurement window, seconds
    double t_end = 0;
};

/// Differential strobe/clock slew: slope of (p - n) between the symmetric
/// differential levels +-(vih_ac - vref) around 0.
SlewResult diff_slew(const Eigen::Ref<const Eigen::VectorXd>& trace_p, const Eigen::Ref<const Eigen::VectorXd>& trace_n,
                     double dt, const Thresholds& thr, EdgeDir edge,
                     std::optional<double> near_time = std::nullopt, SlewMethod method = SlewMethod::nominal);

enum class SlewKind { setup, hold };

/// Single-ended data slew per the JEDEC setup/hold construction:
///   setup rising  vref -> vih_ac      setup falling vref -> vil_ac
///   hold  rising  vil_dc -> vref      hold  falling vih_dc -> vref
/// Nominal = secant between the two crossings; tangent = max sample-to-sample
/// slope inside the same window.
SlewResult data_slew(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, const Thresholds& thr, SlewKind kind,
                     EdgeDir edge, std::optional<double> near_time = std::nullopt,
                     SlewMethod method = SlewMethod::nominal);

struct SetupHold {
    double t_ds = 0;  // seconds
    double t_dh = 0;
    bool data_high = false;  // latched level (true: qualified by vih_*, false: vil_*)
};

/// Raw setup/hold around one strobe crossing. Setup is measured at the AC
/// level, hold at the DC level of the latched side.
SetupHold measure_setup_hold(const Eigen::Ref<const Eigen::VectorXd>& data, double dt, double t_strobe,
                             const Thresholds& thr);

struct DeratingCell {
    bool supported = false;
    double dtds_ps = 0;
    double dtdh_ps = 0;
};

/// 2-D (DQ slew x DQS slew) table of setup/hold corrections. Axes descending.
struct DeratingTable {
    Eigen::VectorXd dqs_axis;  // V/ns, strictly descending
    Eigen::VectorXd dq_axis;   // V/ns, strictly descending
    std::vector<DeratingCell> cells;  // row-major: [dq_index * dqs_axis.size() + dqs_index]

    const DeratingCell& cell(Eigen::Index dq_i, Eigen::Index dqs_i) const {
        return cells[static_cast<size_t>(dq_i * dqs_axis.size() + dqs_i)];
    }
    DeratingCell& cell(Eigen::Index dq_i, Eigen::Index dqs_i) {
        return cells[static_cast<size_t>(dq_i * dqs_axis.size() + dqs_i)];
    }
    void validate(const std::string& path) const;
};

DeratingTable load_derating_csv(const std::filesystem::path& file);
void save_derating_csv(const DeratingTable& table, const std::filesystem::path& file);

enum class DerateMode { bilinear, nearest_cell };

/// (dt_ds, dt_dh) in seconds. Exact-grid hits return the cell; off-grid values
/// interpolate between the four surrounding supported cells; slews above the
/// fastest axis entry clamp to it. NOT_SUPPORTED regions and slews below the
/// table range throw MeasureError.
std::pair<double, double> derate_lookup(const DeratingTable& table, double dq_slew_v_ns, double dqs_slew_v_ns,
                                        DerateMode mode = DerateMode::bilinear);

struct MarginResult {
    double t_ds = 0, t_dh = 0;        // raw, seconds
    double dtds = 0, dtdh = 0;        // derating, seconds
    double setup_margin = 0, hold_margin = 0;
    bool pass = false;
};

MarginResult derated_margins(double t_ds, double t_dh, double dtds, double dtdh, const BaseTiming& base);

struct EyeDiagram {
    double ui = 0;
    double fold_offset = 0;
    Eigen::MatrixXd density;  // rows: voltage bins (low->high), cols: time bins over one UI
    double v_min = 0, v_max = 0;  // voltage extent of the density grid
    double width = 0;             // seconds; settled horizontal opening
    double height = 0;            // volts, at the horizontal eye center
    double center = 0;            // seconds within the folded UI
    bool closed = false;
    double valid_window_start = 0;  // derated data-valid overlay, within the UI
    double valid_window_end = 0;
};

/// Folds a trace modulo UI after discarding the first warmup_ui intervals.
/// Width is the largest folded span free of transition activity (edges sliced
/// at a small guard band off the settled rails); height is measured at the
/// horizontal center of that span.
EyeDiagram eye_diagram(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, double ui, double fold_offset,
                       const Thresholds& thr, std::pair<double, double> valid_window = {0, 0}, int warmup_ui = 4,
                       int time_bins = 128, int volt_bins = 64);

void save_eye_csv(const EyeDiagram& eye, const std::filesystem::path& file);
void save_eye_svg(const EyeDiagram& eye, const Thresholds& thr, const std::filesystem::path& file);

struct NoiseMetrics {
    double overshoot = 0;   // max(v) - vddq, clamped >= 0
    double undershoot = 0;  // -min(v), clamped >= 0
    // Settled-level distances to the AC/DC thresholds; NaN when the trace
    // never settles on that side.
    double ac_margin_high = 0;
    double dc_margin_high = 0;
    double ac_margin_low = 0;
    double dc_margin_low = 0;
};

NoiseMetrics noise_metrics(const Eigen::Ref<const Eigen::VectorXd>& trace, double dt, const Thresholds& thr);

enum class LatchEdges { rising, falling, both };

/// Per-latch-edge timing rollup for one receiver.
struct LatchTiming {
    double t_strobe = 0;
    EdgeDir strobe_edge = EdgeDir::rising;
    SetupHold raw;
    SlewResult dq_slew;
    SlewResult dqs_slew;
    MarginResult margins;
    bool derated = false;       // false when no table applies (raw margins only)
    std::string derate_error;   // nonempty when the lookup failed for this edge
};

struct LaneTimingReport {
    std::vector<LatchTiming> events;
    double worst_setup_margin = 0;
    double worst_hold_margin = 0;
    bool pass = false;
    NoiseMetrics noise;
    EyeDiagram eye;
};

/// Full post-processing for one data/address receiver: latch edges from the
/// strobe, setup/hold + slews + derating per edge, eye and noise metrics.
/// strobe_n may be empty for a single-ended reference.
LaneTimingReport measure_lane(const Eigen::Ref<const Eigen::VectorXd>& data,
                              const Eigen::Ref<const Eigen::VectorXd>& strobe_p,
                              const Eigen::Ref<const Eigen::VectorXd>& strobe_n, double dt, double ui,
                              const Thresholds& thr, const DeratingTable* table, const BaseTiming& base,
                              LatchEdges latch, SlewMethod method = SlewMethod::nominal, int warmup_ui = 4,
                              DerateMode derate_mode = DerateMode::bilinear);

}  // namespace ddrsi
