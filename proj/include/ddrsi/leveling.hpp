#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ddrsi/netlist.hpp"

namespace ddrsi {

/// Clock arrival offsets along a fly-by chain, relative to the first tap.
struct FlybySchedule {
    std::vector<double> arrival;  // seconds, one per tap, non-decreasing

    double span() const;  // last arrival minus first
};

/// Cumulative arrivals from per-gap delays. An empty gap list means a single
/// tap. All gaps must be positive.
FlybySchedule flyby_flight_times(const std::vector<double>& segment_delays);

/// Per-tap launch delays that align strobe arrival with the clock arrival at
/// each tap, quantized to the controller's delay-line step.
struct WriteLeveling {
    double step = 0;               // delay-line quantum, seconds
    std::vector<double> ideal;     // exact delay each tap wants
    std::vector<double> delay;     // quantized delay actually programmed
    std::vector<double> residual;  // delay - ideal (signed alignment error)

    double worst_residual() const;  // max |residual|
};

/// Quantizes each tap's ideal delay to the nearest step; exact half-step ties
/// round toward the smaller delay.
WriteLeveling compute_write_leveling(const FlybySchedule& sched, double step);

/// Strobe-to-clock alignment check at a DRAM pin.
struct TdqssCheck {
    double skew = 0;    // measured strobe-vs-clock offset, seconds (signed)
    double limit = 0;   // allowed magnitude: a quarter clock period
    double margin = 0;  // limit - |skew|; negative means violation
    bool pass = false;  // |skew| <= limit (boundary passes)
};

TdqssCheck check_tdqss(double skew_s, double tck_s);

/// Per-lane capture delays that de-skew read returns at the controller.
struct ReadLeveling {
    std::vector<double> total;    // command flight + data return per lane
    std::vector<double> capture;  // added capture delay, max(total) - total
    double spread = 0;            // max(total) - min(total)
    double limit = 0;             // levelable range: 2 * CL * tCK
};

/// Throws ConfigError when the flight-time spread exceeds the levelable
/// range; a spread exactly at the limit is accepted.
ReadLeveling compute_read_leveling(const std::vector<double>& command_flight,
                                   const std::vector<double>& return_flight, double tck, int cas_latency);

/// base_launch + programmed delay, per tap.
std::vector<double> apply_leveling(const WriteLeveling& wl, double base_launch);

/// Whole-interface leveling solution derived from the clock fly-by geometry
/// and the byte-lane map.
struct LevelingSolution {
    std::string clock_net;              // fly-by net the schedule came from
    std::vector<std::string> taps;      // DRAMs in fly-by order
    FlybySchedule schedule;
    WriteLeveling write;
    std::vector<TdqssCheck> tdqss;      // post-leveling check per tap
    ReadLeveling read;
    std::vector<std::string> lanes;     // "bus.lane@dram" labels for read rows
    bool pass = false;                  // every tDQSS check passed
};

/// Computes write + read leveling for an interface. `step` defaults to the
/// interface's delay-line resolution when <= 0.
LevelingSolution solve_leveling(const Interface& iface, double step = 0);

nlohmann::json leveling_report(const LevelingSolution& sol);

}  // namespace ddrsi
