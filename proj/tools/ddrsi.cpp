#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddrsi/campaign.hpp"
#include "ddrsi/leveling.hpp"

namespace {

using namespace ddrsi;

std::string ps(double seconds) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.1f", seconds * 1e12);
    return buf;
}

std::string volts(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

Scenario parse_scenario_key(const Interface& iface, const std::string& key) {
    const auto p1 = key.find(':');
    const auto p2 = key.rfind(':');
    if (p1 == std::string::npos || p2 == p1)
        throw ConfigError("--scenario", "expected <op>:<target>:<corner>, e.g. write:dram0:typical");
    Scenario s;
    const std::string op = key.substr(0, p1);
    if (op == "read")
        s.op = Operation::read;
    else if (op == "write")
        s.op = Operation::write;
    else
        throw ConfigError("--scenario", "operation must be read or write");
    s.target = key.substr(p1 + 1, p2 - p1 - 1);
    const Component* comp = iface.find_component(s.target);
    if (!comp || comp->is_controller)
        throw ConfigError("--scenario", "target '" + s.target + "' is not a DRAM of this interface");
    s.corner = corner_from_string(key.substr(p2 + 1));
    return s;
}

Scenario pick_scenario(const Interface& iface, const std::string& net, const std::string& key) {
    if (!key.empty()) return parse_scenario_key(iface, key);
    const Bus* bus = iface.bus_of_net(net);
    if (!bus) throw ConfigError("--net", "unknown net '" + net + "'");
    for (const Scenario& s : enumerate_scenarios(iface)) {
        if (scenario_covers_bus(s, *bus)) return s;
    }
    throw ConfigError("--net", "no scenario exercises net '" + net + "'");
}

std::vector<int> parse_pattern(const std::string& s) {
    std::vector<int> bits;
    for (char c : s) {
        if (c != '0' && c != '1') throw ConfigError("--pattern", "pattern must be a string of 0s and 1s");
        bits.push_back(c - '0');
    }
    return bits;
}

void write_json(const nlohmann::json& j, const std::string& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file, "cannot write json report");
    out << j.dump(2) << "\n";
}

nlohmann::json lane_report_json(const LaneTimingReport& rep) {
    nlohmann::json j;
    j["pass"] = rep.pass;
    j["worst_setup_margin_s"] = rep.worst_setup_margin;
    j["worst_hold_margin_s"] = rep.worst_hold_margin;
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : rep.events) {
        events.push_back({{"t_strobe_s", e.t_strobe},
                          {"strobe_edge", e.strobe_edge == EdgeDir::rising ? "rising" : "falling"},
                          {"data_high", e.raw.data_high},
                          {"t_ds_s", e.raw.t_ds},
                          {"t_dh_s", e.raw.t_dh},
                          {"dq_slew_v_ns", e.dq_slew.v_per_ns},
                          {"dqs_slew_v_ns", e.dqs_slew.v_per_ns},
                          {"dtds_s", e.margins.dtds},
                          {"dtdh_s", e.margins.dtdh},
                          {"setup_margin_s", e.margins.setup_margin},
                          {"hold_margin_s", e.margins.hold_margin},
                          {"derated", e.derated},
                          {"derate_error", e.derate_error}});
    }
    j["events"] = std::move(events);
    j["eye"] = {{"width_s", rep.eye.width},   {"height_v", rep.eye.height},
                {"center_s", rep.eye.center}, {"closed", rep.eye.closed},
                {"ui_s", rep.eye.ui},         {"valid_window_start_s", rep.eye.valid_window_start},
                {"valid_window_end_s", rep.eye.valid_window_end}};
    j["noise"] = {{"overshoot_v", rep.noise.overshoot}, {"undershoot_v", rep.noise.undershoot}};
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DDR3 interface signal-integrity toolkit"};
    app.set_version_flag("--version", std::string("ddrsi ") + ddrsi::kVersion);
    app.require_subcommand(1);

    std::string config, net, scenario_key, mode_str = "reflection", pattern, slew_str = "tangent",
                derate_str = "bilinear";
    std::string out_json, out_csv, out_waves, out_eye_svg, out_eye_csv;
    int bits = 64, prbs_order = 7, jobs = 0;
    double launch = 0, level_step = 0;
    std::string op_str, corner_str;
    std::vector<std::string> net_filter;

    auto* cmd_validate = app.add_subcommand("validate", "Load and cross-check an interface description");
    cmd_validate->add_option("config", config, "interface json")->required();

    auto* cmd_level = app.add_subcommand("level", "Write/read leveling from the fly-by geometry");
    cmd_level->add_option("config", config, "interface json")->required();
    cmd_level->add_option("--step", level_step, "delay-line step in seconds (default: interface setting)");
    cmd_level->add_option("--json", out_json, "write the leveling report here");

    auto add_sim_opts = [&](CLI::App* c, bool single_net) {
        c->add_option("config", config, "interface json")->required();
        if (single_net) {
            c->add_option("--net", net, "subject net")->required();
            c->add_option("--scenario", scenario_key, "op:target:corner (default: first applicable)");
        }
        c->add_option("--mode", mode_str, "reflection|crosstalk")->check(CLI::IsMember({"reflection", "crosstalk"}));
        c->add_option("--bits", bits, "bits simulated after launch")->check(CLI::PositiveNumber);
        c->add_option("--prbs-order", prbs_order, "PRBS order: 7, 9, 11, 15");
        c->add_option("--pattern", pattern, "fixed 0/1 pattern instead of PRBS");
        c->add_option("--launch", launch, "launch time in seconds (default: 8 bit intervals)");
    };

    auto* cmd_sim = app.add_subcommand("simulate", "Transient-simulate one net and dump waveforms");
    add_sim_opts(cmd_sim, true);
    cmd_sim->add_option("-o,--out", out_waves, "waveform csv")->required();

    auto* cmd_measure = app.add_subcommand("measure", "Simulate one net and report timing margins");
    add_sim_opts(cmd_measure, true);
    cmd_measure->add_option("--slew", slew_str, "nominal|tangent")->check(CLI::IsMember({"nominal", "tangent"}));
    cmd_measure->add_option("--derate", derate_str, "bilinear|nearest")->check(CLI::IsMember({"bilinear", "nearest"}));
    cmd_measure->add_option("--json", out_json, "write the timing report here");
    cmd_measure->add_option("--waves", out_waves, "also dump waveforms to csv");
    cmd_measure->add_option("--eye-svg", out_eye_svg, "render the eye diagram to svg");
    cmd_measure->add_option("--eye-csv", out_eye_csv, "dump the eye density grid to csv");

    auto* cmd_campaign = app.add_subcommand("campaign", "Sweep every scenario x net and report margins");
    add_sim_opts(cmd_campaign, false);
    cmd_campaign->add_option("--jobs", jobs, "worker threads (default: DDRSI_JOBS or hardware)");
    cmd_campaign->add_option("--op", op_str, "read|write")->check(CLI::IsMember({"read", "write"}));
    cmd_campaign->add_option("--corner", corner_str, "slow|typical|fast")
        ->check(CLI::IsMember({"slow", "typical", "fast"}));
    cmd_campaign->add_option("--net", net_filter, "restrict to these nets (repeatable)");
    cmd_campaign->add_option("--slew", slew_str, "nominal|tangent")->check(CLI::IsMember({"nominal", "tangent"}));
    cmd_campaign->add_option("--derate", derate_str, "bilinear|nearest")->check(CLI::IsMember({"bilinear", "nearest"}));
    cmd_campaign->add_option("--json", out_json, "write the campaign report here");
    cmd_campaign->add_option("--csv", out_csv, "write the per-job table here");

    auto* cmd_explore = app.add_subcommand("explore", "Grid-search geometry parameters for best margin");
    cmd_explore->add_option("spec", config, "sweep spec json")->required();
    cmd_explore->add_option("--jobs", jobs, "worker threads per campaign");
    cmd_explore->add_option("--json", out_json, "write the sweep report here");
    cmd_explore->add_option("--csv", out_csv, "write the margins landscape here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 64;
    }

    try {
        if (cmd_validate->parsed()) {
            const Interface iface = load_interface_file(config);
            int subjects = 0, refs = 0, nets_total = 0;
            for (const auto& b : iface.buses) {
                nets_total += static_cast<int>(b.nets.size());
                for (const auto& n : b.nets) {
                    if (iface.association_for(n)) ++subjects;
                    if (iface.is_reference_net(n)) ++refs;
                }
            }
            std::cout << "interface: " << iface.name << "\n"
                      << "components: 1 controller + " << iface.drams().size() << " dram\n"
                      << "buses: " << iface.buses.size() << ", nets: " << nets_total << " (" << subjects
                      << " subjects, " << refs << " references)\n"
                      << "scenarios: " << enumerate_scenarios(iface).size() << "\n"
                      << "ok\n";
            return 0;
        }

        if (cmd_level->parsed()) {
            const Interface iface = load_interface_file(config);
            const LevelingSolution sol = solve_leveling(iface, level_step);
            std::cout << "clock net " << sol.clock_net << ", span " << ps(sol.schedule.span()) << " ps, step "
                      << ps(sol.write.step) << " ps\n";
            std::cout << "tap          arrival_ps  delay_ps  residual_ps  tdqss_margin_ps\n";
            for (size_t i = 0; i < sol.taps.size(); ++i) {
                std::printf("%-12s %10s %9s %12s %16s %s\n", sol.taps[i].c_str(),
                            ps(sol.schedule.arrival[i]).c_str(), ps(sol.write.delay[i]).c_str(),
                            ps(sol.write.residual[i]).c_str(), ps(sol.tdqss[i].margin).c_str(),
                            sol.tdqss[i].pass ? "pass" : "FAIL");
            }
            for (size_t i = 0; i < sol.lanes.size(); ++i) {
                std::cout << "lane " << sol.lanes[i] << ": round-trip " << ps(sol.read.total[i]) << " ps, capture +"
                          << ps(sol.read.capture[i]) << " ps\n";
            }
            std::cout << "read spread " << ps(sol.read.spread) << " ps (limit " << ps(sol.read.limit) << " ps)\n"
                      << (sol.pass ? "PASS" : "FAIL") << "\n";
            if (!out_json.empty()) write_json(leveling_report(sol), out_json);
            return sol.pass ? 0 : 1;
        }

        StimulusPlan plan;
        plan.prbs_order = prbs_order;
        plan.nbits = bits;
        plan.launch = launch;
        if (!pattern.empty()) plan.pattern = parse_pattern(pattern);
        const SimMode mode = sim_mode_from_string(mode_str);
        const SlewMethod slew = slew_str == "nominal" ? SlewMethod::nominal : SlewMethod::tangent;
        const DerateMode derate = derate_str == "nearest" ? DerateMode::nearest_cell : DerateMode::bilinear;

        if (cmd_sim->parsed()) {
            const Interface iface = load_interface_file(config);
            const Scenario sc = pick_scenario(iface, net, scenario_key);
            NetSimSetup setup = build_net_sim(iface, sc, net, mode, plan);
            const WaveformSet ws = simulate(setup.circuit, setup.dt, setup.t_stop, setup.record);
            for (const auto& w : ws.warnings) std::cerr << "warning: " << w << "\n";
            save_waveforms_csv(ws, out_waves);
            std::cout << "scenario " << sc.key() << ", net " << net << ": " << ws.data.rows() << " samples x "
                      << ws.names.size() << " nodes, dt " << ps(ws.dt) << " ps -> " << out_waves << "\n";
            return 0;
        }

        if (cmd_measure->parsed()) {
            const Interface iface = load_interface_file(config);
            const Scenario sc = pick_scenario(iface, net, scenario_key);
            NetSimSetup setup = build_net_sim(iface, sc, net, mode, plan);
            const WaveformSet ws = simulate(setup.circuit, setup.dt, setup.t_stop, setup.record);
            for (const auto& w : ws.warnings) std::cerr << "warning: " << w << "\n";
            std::string at = setup.receivers.front();
            for (const auto& comp : setup.receivers)
                if (comp == sc.target) at = comp;
            const Eigen::VectorXd data = ws.trace(pad_name(net, at));
            const Eigen::VectorXd strobe_p = ws.trace(pad_name(setup.reference.p, at));
            Eigen::VectorXd strobe_n;
            if (!setup.reference.n.empty()) strobe_n = ws.trace(pad_name(setup.reference.n, at));
            const bool differential = !setup.reference.n.empty();
            const Thresholds& thr = iface.thresholds_for(setup.bus_class);
            const LaneTimingReport rep =
                measure_lane(data, strobe_p, strobe_n, ws.dt, setup.bit_time, thr,
                             iface.derating_for(setup.bus_class, differential), iface.timing_base, setup.latch,
                             slew, 4, derate);

            std::cout << "scenario " << sc.key() << ", net " << net << " measured at " << at << " ("
                      << rep.events.size() << " latch events)\n";
            std::cout << "edge  t_strobe_ns dir     tDS_ps  tDH_ps  dq_V/ns dqs_V/ns dtDS_ps dtDH_ps  setup_ps  hold_ps\n";
            for (size_t i = 0; i < rep.events.size(); ++i) {
                const auto& e = rep.events[i];
                std::printf("%-5zu %11.3f %-7s %7s %7s %8.2f %8.2f %7s %7s %9s %8s\n", i, e.t_strobe * 1e9,
                            e.strobe_edge == EdgeDir::rising ? "rising" : "falling", ps(e.raw.t_ds).c_str(),
                            ps(e.raw.t_dh).c_str(), e.dq_slew.v_per_ns, e.dqs_slew.v_per_ns,
                            ps(e.margins.dtds).c_str(), ps(e.margins.dtdh).c_str(),
                            ps(e.margins.setup_margin).c_str(), ps(e.margins.hold_margin).c_str());
            }
            std::cout << "worst margins: setup " << ps(rep.worst_setup_margin) << " ps, hold "
                      << ps(rep.worst_hold_margin) << " ps\n";
            std::cout << "eye: width " << ps(rep.eye.width) << " ps, height " << volts(rep.eye.height)
                      << " V, center " << ps(rep.eye.center) << " ps" << (rep.eye.closed ? " (closed)" : "") << "\n";
            std::cout << "noise: overshoot " << volts(rep.noise.overshoot) << " V, undershoot "
                      << volts(rep.noise.undershoot) << " V\n";
            std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";

            if (!out_waves.empty()) save_waveforms_csv(ws, out_waves);
            if (!out_eye_svg.empty()) save_eye_svg(rep.eye, thr, out_eye_svg);
            if (!out_eye_csv.empty()) save_eye_csv(rep.eye, out_eye_csv);
            if (!out_json.empty()) {
                nlohmann::json j = lane_report_json(rep);
                j["scenario"] = sc.key();
                j["net"] = net;
                j["measured_at"] = at;
                write_json(j, out_json);
            }
            return rep.pass ? 0 : 1;
        }

        if (cmd_campaign->parsed()) {
            const Interface iface = load_interface_file(config);
            CampaignOptions opt;
            opt.mode = mode;
            opt.plan = plan;
            opt.slew = slew;
            opt.derate = derate;
            opt.jobs = jobs;
            opt.net_filter = net_filter;
            if (!op_str.empty()) opt.op_filter = op_str == "read" ? Operation::read : Operation::write;
            if (!corner_str.empty()) opt.corner_filter = corner_from_string(corner_str);
            const CampaignResult res = run_campaign(iface, opt);
            double worst = std::numeric_limits<double>::infinity();
            const JobResult* worst_job = nullptr;
            for (const auto& r : res.results) {
                if (!r.ok) {
                    std::cerr << "error: " << r.job.scenario.key() << "/" << r.job.net << ": " << r.error << "\n";
                    continue;
                }
                const double m = std::min(r.report.worst_setup_margin, r.report.worst_hold_margin);
                if (m < worst) {
                    worst = m;
                    worst_job = &r;
                }
            }
            std::cout << "campaign: " << res.results.size() << " jobs, "
                      << res.results.size() - static_cast<size_t>(res.failures + res.errors) << " pass, "
                      << res.failures << " fail, " << res.errors << " error\n";
            if (worst_job)
                std::cout << "worst margin " << ps(worst) << " ps at " << worst_job->job.scenario.key() << "/"
                          << worst_job->job.net << " (" << worst_job->measured_at << ")\n";
            if (!out_json.empty()) write_json(campaign_report(iface, opt, res), out_json);
            if (!out_csv.empty()) save_campaign_csv(res, out_csv);
            std::cout << (res.pass() ? "PASS" : "FAIL") << "\n";
            return campaign_exit_code(res);
        }

        if (cmd_explore->parsed()) {
            std::ifstream in(config);
            if (!in) throw ConfigError(config, "cannot open sweep spec");
            nlohmann::json doc = nlohmann::json::parse(in, nullptr, true, true);
            if (!doc.contains("interface") || !doc.contains("axes"))
                throw ConfigError(config, "sweep spec needs 'interface' and 'axes'");
            const auto base_dir = std::filesystem::path(config).parent_path();
            const Interface iface =
                load_interface_file(base_dir / doc.at("interface").get<std::string>());
            CampaignOptions opt;
            opt.jobs = jobs;
            if (doc.contains("mode")) opt.mode = sim_mode_from_string(doc.at("mode").get<std::string>());
            if (doc.contains("bits")) opt.plan.nbits = doc.at("bits").get<int>();
            if (doc.contains("operation")) {
                const std::string op = doc.at("operation").get<std::string>();
                if (op != "read" && op != "write") throw ConfigError(config, "operation must be read or write");
                opt.op_filter = op == "read" ? Operation::read : Operation::write;
            }
            if (doc.contains("corner")) opt.corner_filter = corner_from_string(doc.at("corner").get<std::string>());
            if (doc.contains("nets")) opt.net_filter = doc.at("nets").get<std::vector<std::string>>();
            SweepAxes axes;
            for (const auto& [k, v] : doc.at("axes").items()) axes[k] = v.get<std::vector<double>>();
            const SweepResult res = run_sweep(iface, opt, axes);
            int failed = 0;
            for (const auto& p : res.points)
                if (!p.ok) ++failed;
            if (failed) std::cerr << "warning: " << failed << " of " << res.points.size() << " points errored\n";
            if (res.best >= 0) {
                const auto& b = res.points[static_cast<size_t>(res.best)];
                std::cout << "best point (" << res.points.size() << " evaluated):\n";
                for (size_t a = 0; a < res.axes.size(); ++a)
                    std::cout << "  " << res.axes[a] << " = " << b.values[a] << "\n";
                std::cout << "objective (worst derated margin) " << ps(b.objective) << " ps\n";
            } else {
                std::cout << "no feasible point\n";
            }
            if (!out_json.empty()) write_json(sweep_report(res), out_json);
            if (!out_csv.empty()) save_sweep_csv(res, out_csv);
            return res.best >= 0 ? 0 : 2;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 65;
    } catch (const MeasureError& e) {
        std::cerr << "measurement error: " << e.what() << "\n";
        return 2;
    } catch (const SolveError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 70;
    }
    return 0;
}
