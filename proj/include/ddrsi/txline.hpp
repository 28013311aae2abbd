#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ddrsi/buffer.hpp"
#include "ddrsi/common.hpp"
#include "ddrsi/netlist.hpp"

namespace ddrsi {

/// Bit/toggle schedule for one driver. Edge times are exact (never quantized
/// to the simulation grid): launch + k * bit_time.
struct Stimulus {
    enum class Kind { clock, bits };
    Kind kind = Kind::bits;
    double bit_time = 0;  // bit interval; for clocks, the toggle (half-period) interval
    double launch = 0;    // first toggle (clock) / first bit boundary (bits)
    bool start_high = false;  // clock level before launch
    std::vector<int> bits;    // cyclic bit sequence (bits kind)

    int level_before_launch() const;
    int bit(std::int64_t k) const { return bits[static_cast<size_t>(k % static_cast<std::int64_t>(bits.size()))]; }
    std::vector<std::pair<double, EdgeDir>> edges(double t_stop) const;
};

Stimulus clock_stimulus(double half_period, double launch, bool start_high = false);
Stimulus pattern_stimulus(std::vector<int> bits, double bit_time, double launch);
Stimulus prbs_stimulus(int order, std::uint64_t seed, double bit_time, double launch);

/// Maximal-length LFSR sequence. Supported orders: 7, 9, 11, 15.
std::vector<int> prbs_bits(int order, std::uint64_t seed, int count);

/// Flat element-list circuit solved with the method of characteristics:
/// lossless lines carry history currents, everything else is lumped at nodes.
struct Circuit {
    struct Line {
        int a = -1, b = -1;
        double z0 = 50, td = 0;
    };
    struct Coupled {
        int a1 = -1, b1 = -1, a2 = -1, b2 = -1;
        double z0e = 50, z0o = 50, tde = 0, tdo = 0;
    };
    struct Res {
        int a = -1, b = -1;
        double r = 0;
    };
    struct RailRes {
        int a = -1;
        double r = 0, vrail = 0;
    };
    struct Cap {
        int a = -1;
        double c = 0;
    };
    struct DriverInst {
        int node = -1;
        const BufferModel* model = nullptr;
        PvtCorner corner;
        Stimulus stim;
    };
    struct TermInst {
        int node = -1;
        const OdtModel* model = nullptr;
        PvtCorner corner;
    };
    struct StepSource {
        int node = -1;
        double rs = 50, v0 = 0, v1 = 0, t0 = 0;
    };
    struct PwlSource {
        int node = -1;
        double rs = 50;
        std::vector<std::pair<double, double>> points;  // (t, v), ascending t
    };

    std::vector<std::string> node_names;
    std::map<std::string, int> by_name;  // primary names and aliases

    std::vector<Line> lines;
    std::vector<Coupled> coupled;
    std::vector<Res> resistors;
    std::vector<RailRes> rail_resistors;
    std::vector<Cap> caps;
    std::vector<DriverInst> drivers;
    std::vector<TermInst> terms;
    std::vector<StepSource> steps;
    std::vector<PwlSource> pwls;

    int add_node(const std::string& name);
    void alias(const std::string& name, int node);
    int node(const std::string& name) const;  // -1 when absent
    int require_node(const std::string& name) const;
    int node_count() const { return static_cast<int>(node_names.size()); }

    void add_line(int a, int b, double z0, double td);
    /// Degenerate pairs (z0e == z0o and tde == tdo) are lowered to two
    /// independent plain lines at build time.
    void add_coupled(int a1, int b1, int a2, int b2, double z0e, double z0o, double tde, double tdo);
    void add_res(int a, int b, double r);
    void add_rail_res(int a, double r, double vrail);
    void add_cap(int a, double c);
    void add_driver(int node, const BufferModel* model, PvtCorner corner, Stimulus stim);
    void add_term(int node, const OdtModel* model, PvtCorner corner);
    void add_step(int node, double rs, double v0, double v1, double t0);
    void add_pwl(int node, double rs, std::vector<std::pair<double, double>> points);
};

struct WaveformSet {
    double dt = 0;
    std::vector<std::string> names;  // column names, excluding the time column
    Eigen::MatrixXd data;            // rows = samples, cols = names
    std::vector<std::string> warnings;

    Eigen::Index col(const std::string& name) const;  // throws on unknown name
    Eigen::VectorXd trace(const std::string& name) const { return data.col(col(name)); }
    double t_end() const { return data.rows() > 0 ? dt * static_cast<double>(data.rows() - 1) : 0; }
};

void save_waveforms_csv(const WaveformSet& ws, const std::filesystem::path& file);
WaveformSet load_waveforms_csv(const std::filesystem::path& file);

/// Fixed-step transient solve. Records the named nodes (all nodes when the
/// list is empty). Line delays are rounded to whole steps; coarse roundings
/// are reported in WaveformSet::warnings.
WaveformSet simulate(const Circuit& circuit, double dt, double t_stop, const std::vector<std::string>& record = {});

enum class SimMode { reflection, crosstalk };

const char* to_string(SimMode m);
SimMode sim_mode_from_string(const std::string& s);

struct StimulusPlan {
    int prbs_order = 7;
    int nbits = 64;                            // bits simulated after launch
    double launch = 0;                         // 0: auto (8 bit intervals)
    std::optional<std::vector<int>> pattern;   // fixed pattern instead of PRBS
};

/// Everything needed to run and post-process one net in one scenario.
struct NetSimSetup {
    Circuit circuit;
    double dt = 0;
    double t_stop = 0;
    std::vector<std::string> record;  // pad node names
    std::string subject;
    BusClass bus_class = BusClass::data;
    std::vector<std::string> receivers;  // components whose pads get measured
    RefPair reference;
    LatchEdges latch = LatchEdges::both;
    double bit_time = 0;
    double launch = 0;
    std::uint64_t seed = 0;
};

std::string pad_name(const std::string& net, const std::string& component);

/// Builds the scenario circuit for one subject net: the net itself, its
/// strobe/clock reference nets, and (in crosstalk mode) its coupled partner.
NetSimSetup build_net_sim(const Interface& iface, const Scenario& scenario, const std::string& net, SimMode mode,
                          const StimulusPlan& plan = {});

}  // namespace ddrsi
