#pragma once

// Analytic bounce-diagram (lattice) solution for a single lossless line
// between a resistive Thevenin step source and a resistive or open far end.
// Written directly from the closed-form reflection series so it shares no
// code with the solver under test.

#include <cmath>
#include <limits>

namespace lattice {

inline constexpr double kOpen = std::numeric_limits<double>::infinity();

struct StepLineCase {
    double rs = 50;     // source resistance, ohms
    double z0 = 50;     // line impedance, ohms
    double td = 1e-9;   // one-way delay, seconds
    double rt = kOpen;  // far-end resistor to ground; kOpen = unterminated
    double v1 = 1.5;    // source step height (from 0 V)
    double t0 = 0;      // step instant
};

inline double rho_source(const StepLineCase& c) { return (c.rs - c.z0) / (c.rs + c.z0); }

inline double rho_load(const StepLineCase& c) {
    if (std::isinf(c.rt)) return 1.0;
    return (c.rt - c.z0) / (c.rt + c.z0);
}

// Voltage at the far (load) end at absolute time t. Arrival instants are
// inclusive: the k-th reflection contributes from t0 + (2k+1)*td onward.
inline double far_voltage(const StepLineCase& c, double t) {
    if (t < c.t0) return 0.0;
    const double a1 = c.v1 * c.z0 / (c.rs + c.z0);
    const double rs = rho_source(c), rl = rho_load(c);
    const double eps = 1e-15 + 1e-12 * c.td;
    double v = 0.0, amp = a1;
    for (int k = 0; k < 100000; ++k) {
        const double arrival = c.t0 + (2 * k + 1) * c.td;
        if (t + eps < arrival) break;
        v += (1.0 + rl) * amp;
        amp *= rl * rs;
        if (std::abs(amp) < 1e-18) break;
    }
    return v;
}

// Voltage at the near (source) end at absolute time t.
inline double near_voltage(const StepLineCase& c, double t) {
    if (t < c.t0) return 0.0;
    const double a1 = c.v1 * c.z0 / (c.rs + c.z0);
    const double rs = rho_source(c), rl = rho_load(c);
    const double eps = 1e-15 + 1e-12 * c.td;
    double v = a1;  // launched wave appears immediately
    double amp = a1 * rl;
    for (int k = 1; k < 100000; ++k) {
        const double arrival = c.t0 + 2 * k * c.td;
        if (t + eps < arrival) break;
        v += (1.0 + rs) * amp;
        amp *= rl * rs;
        if (std::abs(amp) < 1e-18) break;
    }
    return v;
}

}  // namespace lattice
