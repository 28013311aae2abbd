#include "ddrsi/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

#include <nlohmann/json.hpp>

namespace ddrsi {

std::vector<CampaignJob> campaign_plan(const Interface& iface, const CampaignOptions& opt) {
    std::vector<CampaignJob> plan;
    for (const Scenario& s : enumerate_scenarios(iface, opt.op_filter)) {
        if (opt.corner_filter && s.corner != *opt.corner_filter) continue;
        for (const std::string& net : nets_in_scope(iface, s)) {
            if (!opt.net_filter.empty() &&
                std::find(opt.net_filter.begin(), opt.net_filter.end(), net) == opt.net_filter.end())
                continue;
            plan.push_back({s, net});
        }
    }
    return plan;
}

JobResult run_job(const Interface& iface, const CampaignJob& job, const CampaignOptions& opt) {
    JobResult r;
    r.job = job;
    try {
        NetSimSetup setup = build_net_sim(iface, job.scenario, job.net, opt.mode, opt.plan);
        WaveformSet ws = simulate(setup.circuit, setup.dt, setup.t_stop, setup.record);

        // Margins are taken at the scenario's target when it receives this
        // net, otherwise at the first receiver (the controller on reads).
        std::string at = setup.receivers.front();
        for (const auto& comp : setup.receivers)
            if (comp == job.scenario.target) at = comp;
        r.measured_at = at;

        const Eigen::VectorXd data = ws.trace(pad_name(job.net, at));
        const Eigen::VectorXd strobe_p = ws.trace(pad_name(setup.reference.p, at));
        Eigen::VectorXd strobe_n;
        if (!setup.reference.n.empty()) strobe_n = ws.trace(pad_name(setup.reference.n, at));

        const bool differential = !setup.reference.n.empty();
        r.report = measure_lane(data, strobe_p, strobe_n, ws.dt, setup.bit_time,
                                iface.thresholds_for(setup.bus_class),
                                iface.derating_for(setup.bus_class, differential), iface.timing_base,
                                setup.latch, opt.slew, 4, opt.derate);
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

CampaignResult run_campaign(const Interface& iface, const CampaignOptions& opt) {
    const auto plan = campaign_plan(iface, opt);
    CampaignResult res;
    res.results.resize(plan.size());

    int jobs = opt.jobs;
    if (jobs <= 0) {
        if (const char* env = std::getenv("DDRSI_JOBS")) jobs = std::atoi(env);
    }
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::clamp(jobs, 1, std::max(1, static_cast<int>(plan.size())));

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < plan.size();) res.results[i] = run_job(iface, plan[i], opt);
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(jobs - 1));
    for (int k = 1; k < jobs; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (const auto& r : res.results) {
        if (!r.ok)
            ++res.errors;
        else if (!r.report.pass)
            ++res.failures;
    }
    return res;
}

nlohmann::json campaign_report(const Interface& iface, const CampaignOptions& opt, const CampaignResult& res) {
    nlohmann::json out;
    out["interface"] = iface.name;
    out["mode"] = to_string(opt.mode);
    nlohmann::json jobs = nlohmann::json::array();
    for (const auto& r : res.results) {
        nlohmann::json j;
        j["scenario"] = r.job.scenario.key();
        j["net"] = r.job.net;
        j["ok"] = r.ok;
        if (!r.ok) {
            j["error"] = r.error;
        } else {
            j["measured_at"] = r.measured_at;
            j["pass"] = r.report.pass;
            j["events"] = r.report.events.size();
            j["worst_setup_margin_s"] = r.report.worst_setup_margin;
            j["worst_hold_margin_s"] = r.report.worst_hold_margin;
            j["eye"] = {{"width_s", r.report.eye.width},
                        {"height_v", r.report.eye.height},
                        {"closed", r.report.eye.closed}};
            j["noise"] = {{"overshoot_v", r.report.noise.overshoot},
                          {"undershoot_v", r.report.noise.undershoot}};
        }
        jobs.push_back(std::move(j));
    }
    out["jobs"] = std::move(jobs);
    out["summary"] = {{"total", res.results.size()},
                      {"pass", res.results.size() - static_cast<size_t>(res.failures + res.errors)},
                      {"fail", res.failures},
                      {"error", res.errors}};
    out["pass"] = res.pass();
    return out;
}

void save_campaign_csv(const CampaignResult& res, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file.string(), "cannot write campaign csv");
    out << "scenario,net,ok,measured_at,pass,worst_setup_margin_s,worst_hold_margin_s,"
           "eye_width_s,eye_height_v,eye_closed,overshoot_v,undershoot_v,events,error\n";
    char buf[40];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6e", v);
        return std::string(buf);
    };
    for (const auto& r : res.results) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << r.job.scenario.key() << ',' << r.job.net << ',' << (r.ok ? 1 : 0) << ',' << r.measured_at << ',';
        if (r.ok) {
            out << (r.report.pass ? 1 : 0) << ',' << num(r.report.worst_setup_margin) << ','
                << num(r.report.worst_hold_margin) << ',' << num(r.report.eye.width) << ','
                << num(r.report.eye.height) << ',' << (r.report.eye.closed ? 1 : 0) << ','
                << num(r.report.noise.overshoot) << ',' << num(r.report.noise.undershoot) << ','
                << r.report.events.size() << ',';
        } else {
            out << ",,,,,,,,,";
        }
        out << err << '\n';
    }
}

int campaign_exit_code(const CampaignResult& res) {
    if (res.errors > 0) return 2;
    if (res.failures > 0) return 1;
    return 0;
}

// --- design-space exploration -------------------------------------------

const std::vector<std::string> kSweepAxisOrder = {"stub_length", "stub_impedance", "line_spacing", "flight_time"};

void apply_sweep_point(Interface& iface, const std::vector<std::string>& axes, const std::vector<double>& values) {
    if (axes.size() != values.size()) throw ConfigError("sweep", "axis/value count mismatch");
    for (size_t i = 0; i < axes.size(); ++i) {
        const std::string& axis = axes[i];
        const double v = values[i];
        if (axis == "stub_length" || axis == "stub_impedance") {
            if (v <= 0) throw ConfigError("sweep", axis + " values must be positive");
            for (auto& [net, topo] : iface.topology.nets) {
                for (auto& stub : topo.stubs)
                    for (auto& item : stub.path)
                        if (item.kind == PathItem::Kind::segment)
                            (axis == "stub_length" ? item.seg.td : item.seg.z0) = v;
            }
        } else if (axis == "line_spacing") {
            if (v < 0 || v >= 1) throw ConfigError("sweep", "line_spacing (coupling k) must be in [0, 1)");
            for (auto& pair : iface.topology.coupling) {
                pair.k = v;
                pair.z0_even.reset();
                pair.z0_odd.reset();
                pair.td_even.reset();
                pair.td_odd.reset();
            }
        } else if (axis == "flight_time") {
            if (v <= 0) throw ConfigError("sweep", "flight_time values must be positive");
            for (auto& [net, topo] : iface.topology.nets)
                for (auto& item : topo.path)
                    if (item.kind == PathItem::Kind::segment) item.seg.td = v;
        } else {
            throw ConfigError("sweep", "unknown axis '" + axis + "'");
        }
    }
}

SweepResult run_sweep(const Interface& base, const CampaignOptions& opt, const SweepAxes& axes) {
    SweepResult sr;
    std::vector<std::vector<double>> grid;
    for (const auto& name : kSweepAxisOrder) {
        auto it = axes.find(name);
        if (it == axes.end()) continue;
        if (it->second.empty()) throw ConfigError("sweep", "axis '" + name + "' has no values");
        std::vector<double> vals = it->second;
        std::sort(vals.begin(), vals.end());
        sr.axes.push_back(name);
        grid.push_back(std::move(vals));
    }
    for (const auto& kv : axes)
        if (std::find(kSweepAxisOrder.begin(), kSweepAxisOrder.end(), kv.first) == kSweepAxisOrder.end())
            throw ConfigError("sweep", "unknown axis '" + kv.first + "'");
    if (grid.empty()) throw ConfigError("sweep", "no axes to sweep");

    size_t total = 1;
    for (const auto& vals : grid) {
        total *= vals.size();
        if (total > 10000) throw ConfigError("sweep", "grid exceeds the 10000-point cap");
    }

    std::vector<size_t> idx(grid.size(), 0);
    double best_obj = -std::numeric_limits<double>::infinity();
    for (size_t p = 0; p < total; ++p) {
        SweepPoint pt;
        for (size_t a = 0; a < grid.size(); ++a) pt.values.push_back(grid[a][idx[a]]);
        try {
            Interface work = base;
            apply_sweep_point(work, sr.axes, pt.values);
            const CampaignResult cr = run_campaign(work, opt);
            if (cr.results.empty()) throw ConfigError("sweep", "no jobs in scope");
            double obj = std::numeric_limits<double>::infinity();
            for (const auto& r : cr.results) {
                if (!r.ok) throw ConfigError("sweep", r.job.scenario.key() + "/" + r.job.net + ": " + r.error);
                obj = std::min(obj, std::min(r.report.worst_setup_margin, r.report.worst_hold_margin));
            }
            pt.objective = obj;
            pt.ok = true;
            // Strictly-better wins; grid order is lexicographic over ascending
            // axis values, so ties keep the smallest parameter vector.
            if (obj > best_obj) {
                best_obj = obj;
                sr.best = static_cast<int>(p);
            }
        } catch (const std::exception& e) {
            pt.ok = false;
            pt.error = e.what();
            pt.objective = std::numeric_limits<double>::quiet_NaN();
        }
        sr.points.push_back(std::move(pt));
        for (size_t a = grid.size(); a-- > 0;) {
            if (++idx[a] < grid[a].size()) break;
            idx[a] = 0;
        }
    }
    return sr;
}

nlohmann::json sweep_report(const SweepResult& res) {
    nlohmann::json out;
    out["axes"] = res.axes;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : res.points) {
        nlohmann::json j;
        j["values"] = p.values;
        j["ok"] = p.ok;
        if (p.ok)
            j["objective_s"] = p.objective;
        else
            j["error"] = p.error;
        pts.push_back(std::move(j));
    }
    out["points"] = std::move(pts);
    if (res.best >= 0) {
        const auto& b = res.points[static_cast<size_t>(res.best)];
        out["best"] = {{"index", res.best}, {"values", b.values}, {"objective_s", b.objective}};
    } else {
        out["best"] = nullptr;
    }
    return out;
}

void save_sweep_csv(const SweepResult& res, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw ConfigError(file.string(), "cannot write sweep csv");
    for (const auto& a : res.axes) out << a << ',';
    out << "objective_s,ok,error\n";
    char buf[40];
    for (const auto& p : res.points) {
        for (double v : p.values) {
            std::snprintf(buf, sizeof buf, "%.6e", v);
            out << buf << ',';
        }
        if (p.ok) {
            std::snprintf(buf, sizeof buf, "%.6e", p.objective);
            out << buf;
        }
        std::string err = p.error;
        std::replace(err.begin(), err.end(), ',', ';');
        out << ',' << (p.ok ? 1 : 0) << ',' << err << '\n';
    }
}

}  // namespace ddrsi
