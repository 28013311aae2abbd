#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ddrsi/measure.hpp"
#include "ddrsi/netlist.hpp"
#include "ddrsi/txline.hpp"

namespace ddrsi {

struct CampaignJob {
    Scenario scenario;
    std::string net;
};

struct CampaignOptions {
    SimMode mode = SimMode::reflection;
    StimulusPlan plan;
    SlewMethod slew = SlewMethod::tangent;
    DerateMode derate = DerateMode::bilinear;
    int jobs = 0;  // 0 -> DDRSI_JOBS env, then hardware concurrency
    std::optional<Operation> op_filter;
    std::optional<Corner> corner_filter;
    std::vector<std::string> net_filter;  // empty -> every subject net in scope
};

struct JobResult {
    CampaignJob job;
    bool ok = false;       // simulated and measured without throwing
    std::string error;     // reason when !ok
    std::string measured_at;  // receiver component the margins were taken at
    LaneTimingReport report;  // valid when ok
};

struct CampaignResult {
    std::vector<JobResult> results;  // plan order, independent of job count
    int failures = 0;  // measured jobs with failing margins or excursions
    int errors = 0;    // jobs that threw

    bool pass() const { return failures == 0 && errors == 0; }
};

/// Deterministic job list: scenarios in enumeration order crossed with the
/// subject nets each scenario exercises, filtered by the options.
std::vector<CampaignJob> campaign_plan(const Interface& iface, const CampaignOptions& opt);

/// Runs one job (build, simulate, measure at the scenario's receiver).
JobResult run_job(const Interface& iface, const CampaignJob& job, const CampaignOptions& opt);

/// Fans the plan across worker threads. Results land in plan order, so the
/// report is byte-identical for any worker count.
CampaignResult run_campaign(const Interface& iface, const CampaignOptions& opt);

nlohmann::json campaign_report(const Interface& iface, const CampaignOptions& opt, const CampaignResult& res);
void save_campaign_csv(const CampaignResult& res, const std::filesystem::path& file);

/// 0 all pass, 1 margin/excursion failures, 2 any job errored.
int campaign_exit_code(const CampaignResult& res);

// --- design-space exploration -------------------------------------------

/// Grid axes, applied to a copy of the interface per point:
///   stub_length    - sets every branch-stub segment delay (seconds)
///   stub_impedance - sets every branch-stub segment impedance (ohms)
///   line_spacing   - sets every coupling pair's coefficient k
///   flight_time    - sets every trunk segment delay (seconds)
using SweepAxes = std::map<std::string, std::vector<double>>;

struct SweepPoint {
    std::vector<double> values;  // one per axis, canonical axis order
    double objective = 0;        // min derated margin across the jobs
    bool ok = false;
    std::string error;
};

struct SweepResult {
    std::vector<std::string> axes;
    std::vector<SweepPoint> points;  // lexicographic grid order
    int best = -1;                   // index of the winning point
};

extern const std::vector<std::string> kSweepAxisOrder;

/// Applies one grid point to the interface geometry in place.
void apply_sweep_point(Interface& iface, const std::vector<std::string>& axes, const std::vector<double>& values);

/// Exhaustive grid search (capped at 10000 points) maximizing the worst
/// derated margin; ties keep the lexicographically smallest value vector.
SweepResult run_sweep(const Interface& base, const CampaignOptions& opt, const SweepAxes& axes);

nlohmann::json sweep_report(const SweepResult& res);
void save_sweep_csv(const SweepResult& res, const std::filesystem::path& file);

}  // namespace ddrsi
