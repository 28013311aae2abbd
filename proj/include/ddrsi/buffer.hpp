#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json_fwd.hpp>

#include "ddrsi/common.hpp"

namespace ddrsi {

enum class Corner { slow = 0, typical = 1, fast = 2 };

const char* to_string(Corner c);
Corner corner_from_string(const std::string& s);

enum class EdgeDir { rising, falling };

/// Piecewise-linear V-I curve. Voltages strictly increasing; evaluation clamps
/// flat beyond the end points.
struct ViCurve {
    Eigen::VectorXd v;  // volts, strictly increasing
    Eigen::VectorXd i;  // amperes

    double operator()(double volts) const;
    /// Value plus local slope (dI/dV); slope is 0 outside the tabulated range.
    std::pair<double, double> value_and_slope(double volts) const;

    bool empty() const { return v.size() == 0; }
};

double eval_vi(const ViCurve& curve, double volts);

/// Corner scale set applied on top of a model's tabulated curves.
struct PvtCorner {
    Corner tag = Corner::typical;
    double voltage_scale = 1.0;
    double strength_scale = 1.0;
    double ramp_scale = 1.0;
    double r_scale = 1.0;  // ODT leg resistance scale
};

/// slow/typical/fast scale triple. Typical is pinned to 1.0 everywhere.
struct CornerScales {
    PvtCorner slow{Corner::slow, 1.0, 0.9, 1.25, 1.0};
    PvtCorner typical{Corner::typical, 1.0, 1.0, 1.0, 1.0};
    PvtCorner fast{Corner::fast, 1.0, 1.1, 0.8, 1.0};

    const PvtCorner& at(Corner c) const;
};

/// Curve/ramp set a driver presents at one corner.
struct DriverCorner {
    ViCurve pullup;    // I out of pad vs pad voltage; 0 A at v = vddq for a resistive pull-up
    ViCurve pulldown;  // I into pad (sink) vs pad voltage; 0 A at v = 0
    double ramp_rise = 0;  // seconds for switching weight 0 -> 1
    double ramp_fall = 0;
    double c_comp = 0;  // farads
};

struct BufferModel {
    std::string name;
    double vddq = 1.5;
    std::array<DriverCorner, 3> corners;  // indexed by Corner

    const DriverCorner& corner(Corner c) const { return corners[static_cast<int>(c)]; }
};

/// Termination / receiver model: split termination (one leg to vddq, one to
/// ground) plus a pad capacitance. A model without legs is a plain
/// high-impedance receiver load.
struct OdtModel {
    std::string name;
    double vddq = 1.5;
    bool has_termination = false;
    double r_to_vddq = 0;  // ohms, valid when has_termination
    double r_to_gnd = 0;
    double rtt_effective = 0;  // parallel of the two legs
    double c_comp = 0;
    std::array<double, 3> r_scale{1.0, 1.0, 1.0};

    double leg_scale(Corner c) const { return r_scale[static_cast<int>(c)]; }
};

/// Two-curve switching composition. Positive current flows out of the pad.
double driver_current(const BufferModel& m, const PvtCorner& corner, double w_up, double w_dn, double v_pad);

/// Same, with the local conductance needed by a Newton solve.
std::pair<double, double> driver_current_and_slope(const BufferModel& m, const PvtCorner& corner, double w_up,
                                                   double w_dn, double v_pad);

/// Linear switching-weight ramp. Returns (w_up, w_dn), clamped.
std::pair<double, double> switching_weights(double t_since_edge, double ramp, EdgeDir direction);

/// Current absorbed by the split termination (positive when the external node
/// sources current into the termination). Zero-termination models return 0.
double odt_current(const OdtModel& m, const PvtCorner& corner, double v_pad);

/// Norton view of the termination: i_absorbed(v) = g*v - j.
std::pair<double, double> odt_norton(const OdtModel& m, const PvtCorner& corner);

struct BufferLibrary {
    std::map<std::string, BufferModel> models;
    std::map<std::string, OdtModel> odt_models;

    const BufferModel* find_model(const std::string& name) const;
    const OdtModel* find_odt(const std::string& name) const;
    bool has(const std::string& name) const { return find_model(name) || find_odt(name); }
};

BufferLibrary load_buffer_library(const nlohmann::json& doc, const std::string& path_hint = "");
BufferLibrary load_buffer_library_file(const std::filesystem::path& file);

}  // namespace ddrsi
