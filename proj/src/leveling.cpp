#include "ddrsi/leveling.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace ddrsi {

double FlybySchedule::span() const { return arrival.empty() ? 0.0 : arrival.back() - arrival.front(); }

FlybySchedule flyby_flight_times(const std::vector<double>& segment_delays) {
    FlybySchedule s;
    s.arrival.reserve(segment_delays.size() + 1);
    double t = 0;
    s.arrival.push_back(t);
    for (size_t i = 0; i < segment_delays.size(); ++i) {
        if (segment_delays[i] <= 0)
            throw ConfigError("flyby", "segment delay " + std::to_string(i) + " must be positive");
        t += segment_delays[i];
        s.arrival.push_back(t);
    }
    return s;
}

double WriteLeveling::worst_residual() const {
    double w = 0;
    for (double r : residual) w = std::max(w, std::abs(r));
    return w;
}

WriteLeveling compute_write_leveling(const FlybySchedule& sched, double step) {
    if (step <= 0) throw ConfigError("write_leveling", "delay-line step must be positive");
    WriteLeveling wl;
    wl.step = step;
    wl.ideal.reserve(sched.arrival.size());
    for (double a : sched.arrival) {
        // Launch later for taps the clock reaches later, so strobe and clock
        // edges meet at the pin.
        const double ideal = a - sched.arrival.front();
        // Round to nearest step; half-step ties take the smaller delay.
        const auto k = static_cast<long long>(std::ceil(ideal / step - 0.5));
        const double programmed = static_cast<double>(k) * step;
        wl.ideal.push_back(ideal);
        wl.delay.push_back(programmed);
        wl.residual.push_back(programmed - ideal);
    }
    return wl;
}

TdqssCheck check_tdqss(double skew_s, double tck_s) {
    if (tck_s <= 0) throw ConfigError("tdqss", "clock period must be positive");
    TdqssCheck c;
    c.skew = skew_s;
    c.limit = 0.25 * tck_s;
    c.margin = c.limit - std::abs(skew_s);
    c.pass = std::abs(skew_s) <= c.limit;
    return c;
}

ReadLeveling compute_read_leveling(const std::vector<double>& command_flight,
                                   const std::vector<double>& return_flight, double tck, int cas_latency) {
    if (command_flight.size() != return_flight.size())
        throw ConfigError("read_leveling", "command and return flight lists differ in length");
    if (command_flight.empty()) throw ConfigError("read_leveling", "no lanes to level");
    if (tck <= 0 || cas_latency < 1) throw ConfigError("read_leveling", "need positive tck and CL >= 1");
    ReadLeveling rl;
    rl.limit = 2.0 * cas_latency * tck;
    for (size_t i = 0; i < command_flight.size(); ++i) rl.total.push_back(command_flight[i] + return_flight[i]);
    const double lo = *std::min_element(rl.total.begin(), rl.total.end());
    const double hi = *std::max_element(rl.total.begin(), rl.total.end());
    rl.spread = hi - lo;
    if (rl.spread > rl.limit)
        throw ConfigError("read_leveling", "round-trip spread " + std::to_string(rl.spread) +
                                               " s exceeds the levelable range " + std::to_string(rl.limit) + " s");
    for (double t : rl.total) rl.capture.push_back(hi - t);
    return rl;
}

std::vector<double> apply_leveling(const WriteLeveling& wl, double base_launch) {
    std::vector<double> out;
    out.reserve(wl.delay.size());
    for (double d : wl.delay) out.push_back(base_launch + d);
    return out;
}

LevelingSolution solve_leveling(const Interface& iface, double step) {
    LevelingSolution sol;
    const double eff_step = step > 0 ? step : iface.timing_base.step_resolution;

    // Fly-by geometry comes from the clock distribution net.
    const Bus* clock_bus = nullptr;
    for (const auto& b : iface.buses)
        if (b.cls == BusClass::clock) {
            clock_bus = &b;
            break;
        }
    if (!clock_bus) throw ConfigError("leveling", "interface has no clock bus");
    sol.clock_net.clear();
    for (const auto& a : iface.associations)
        if (!a.reference.is_strobe) {
            sol.clock_net = a.reference.p;
            break;
        }
    if (sol.clock_net.empty()) sol.clock_net = clock_bus->nets.front();

    const NetTopology* topo = iface.topology.find(sol.clock_net);
    if (!topo) throw ConfigError("leveling", "clock net '" + sol.clock_net + "' has no topology");
    double entry = 0;
    bool seen_tap = false;
    for (const auto& item : topo->path) {
        if (item.kind == PathItem::Kind::tap) {
            sol.taps.push_back(item.component);
            seen_tap = true;
        } else if (item.kind == PathItem::Kind::segment && !seen_tap) {
            entry += item.seg.td;
        }
    }
    if (sol.taps.empty()) throw ConfigError("leveling", "clock net '" + sol.clock_net + "' taps no component");

    sol.schedule = flyby_flight_times(flyby_segment_delays(iface, sol.clock_net));
    sol.write = compute_write_leveling(sol.schedule, eff_step);
    sol.pass = true;
    for (size_t i = 0; i < sol.taps.size(); ++i) {
        sol.tdqss.push_back(check_tdqss(sol.write.residual[i], iface.timing_base.tck));
        sol.pass = sol.pass && sol.tdqss.back().pass;
    }

    // Read leveling over the byte-lane map: command rides the fly-by out,
    // data returns on the lane's strobe path.
    std::map<std::string, size_t> tap_index;
    for (size_t i = 0; i < sol.taps.size(); ++i) tap_index[sol.taps[i]] = i;
    std::vector<double> cmd, ret;
    for (const auto& lane : lane_map(iface)) {
        auto it = tap_index.find(lane.dram);
        if (it == tap_index.end())
            throw ConfigError("leveling", "lane target '" + lane.dram + "' is not tapped on the clock net");
        cmd.push_back(entry + sol.schedule.arrival[it->second]);
        ret.push_back(lane.return_delay);
        sol.lanes.push_back((lane.lane.empty() ? lane.bus : lane.bus + "." + lane.lane) + "@" + lane.dram);
    }
    if (!cmd.empty())
        sol.read = compute_read_leveling(cmd, ret, iface.timing_base.tck, iface.timing_base.cas_latency);
    else
        sol.read.limit = 2.0 * iface.timing_base.cas_latency * iface.timing_base.tck;
    return sol;
}

nlohmann::json leveling_report(const LevelingSolution& sol) {
    nlohmann::json j;
    j["clock_net"] = sol.clock_net;
    j["taps"] = sol.taps;
    j["arrival_s"] = sol.schedule.arrival;
    j["span_s"] = sol.schedule.span();
    j["write"] = {{"step_s", sol.write.step},
                  {"ideal_s", sol.write.ideal},
                  {"delay_s", sol.write.delay},
                  {"residual_s", sol.write.residual},
                  {"worst_residual_s", sol.write.worst_residual()}};
    nlohmann::json td = nlohmann::json::array();
    for (size_t i = 0; i < sol.tdqss.size(); ++i) {
        td.push_back({{"tap", sol.taps[i]},
                      {"skew_s", sol.tdqss[i].skew},
                      {"limit_s", sol.tdqss[i].limit},
                      {"margin_s", sol.tdqss[i].margin},
                      {"pass", sol.tdqss[i].pass}});
    }
    j["tdqss"] = td;
    j["read"] = {{"lanes", sol.lanes},
                 {"total_s", sol.read.total},
                 {"capture_s", sol.read.capture},
                 {"spread_s", sol.read.spread},
                 {"limit_s", sol.read.limit}};
    j["pass"] = sol.pass;
    return j;
}

}  // namespace ddrsi
