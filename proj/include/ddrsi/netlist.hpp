#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ddrsi/buffer.hpp"
#include "ddrsi/common.hpp"
#include "ddrsi/measure.hpp"

namespace ddrsi {

enum class BusClass { data, address_command, control, clock };
enum class BusDirection { unidirectional, bidirectional };
enum class Operation { read = 0, write = 1 };

const char* to_string(BusClass c);
const char* to_string(Operation op);

struct ModelTriple {
    std::string driver;
    std::string receiver;
    std::string standby;
};

struct Component {
    std::string name;
    bool is_controller = false;
    std::optional<int> dimm_index;
    std::optional<int> position_on_flyby;
    std::map<std::string, ModelTriple> model_assignment;  // selector group -> triple

    const ModelTriple& triple(const std::string& selector) const;
};

struct Bus {
    std::string name;
    BusClass cls = BusClass::data;
    BusDirection direction = BusDirection::bidirectional;
    std::vector<std::string> nets;
    std::map<std::string, std::vector<std::string>> lanes;  // lane id -> subset of nets
    std::string model_selector = "default";
};

struct RefPair {
    bool is_strobe = false;  // strobe (DQS/DQS#) vs clock (CK/CK#)
    std::string p;
    std::string n;
};

struct SignalAssociation {
    enum class SubjectKind { bus, lane, net };
    SubjectKind kind = SubjectKind::bus;
    std::string subject;  // bus name, "bus.lane" id, or net name
    RefPair reference;
    LatchEdges latch_edges = LatchEdges::both;
};

struct OdtOverride {
    Operation op = Operation::write;
    std::optional<std::string> target;  // match any target when empty
    std::string component;
    bool odt_on = true;
    std::optional<std::string> model;  // standby model override
};

struct OdtPolicy {
    std::vector<OdtOverride> overrides;
};

struct Segment {
    double z0 = 50;
    double td = 0;  // seconds
};

struct PathItem {
    enum class Kind { segment, series_r, shunt_c, tap };
    Kind kind = Kind::segment;
    Segment seg;
    double value = 0;       // ohms for series_r, farads for shunt_c
    std::string component;  // for tap
};

struct Termination {
    double r = 50;
    double vtt = 0.75;
};

struct Stub {
    std::string component;
    std::vector<PathItem> path;
};

/// One net's passive geometry. A chain runs from the controller pad through
/// segments/lumps, tapping component pads in order (covers point-to-point,
/// multi-drop and fly-by). A tbranch runs a trunk to a junction with one stub
/// per component.
struct NetTopology {
    enum class Kind { chain, tbranch };
    Kind kind = Kind::chain;
    std::vector<PathItem> path;  // chain path, or tbranch trunk
    std::vector<Stub> stubs;     // tbranch only
    std::optional<Termination> termination;
};

struct CouplingPair {
    std::string a;
    std::string b;
    double k = 0;  // coupling coefficient; ignored when modal values explicit
    std::optional<double> z0_even, z0_odd, td_even, td_odd;
};

struct TopologyGeometry {
    std::map<std::string, NetTopology> nets;
    std::vector<CouplingPair> coupling;

    const NetTopology* find(const std::string& net) const;
    const CouplingPair* pair_for(const std::string& net) const;
};

struct Scenario {
    Operation op = Operation::write;
    std::string target;  // DRAM component name
    Corner corner = Corner::typical;

    std::string key() const;
};

/// Validated, immutable model of the interface. Everything downstream reads
/// this structure and never mutates it.
struct Interface {
    std::string name;
    std::vector<Component> components;
    std::vector<Bus> buses;
    std::vector<SignalAssociation> associations;
    OdtPolicy odt_policy;
    TopologyGeometry topology;
    std::map<std::string, Thresholds> thresholds;  // keyed by bus-class name
    BaseTiming timing_base;
    CornerScales corner_scales;
    std::string buffers_ref;
    std::map<std::string, std::string> derating_refs;  // registry key -> path

    BufferLibrary buffers;
    std::map<std::string, DeratingTable> derating;

    const Component& controller() const;
    const Component* find_component(const std::string& name) const;
    std::vector<const Component*> drams() const;  // sorted by (dimm, position, name)
    const Bus* find_bus(const std::string& name) const;
    const Bus* bus_of_net(const std::string& net) const;
    /// Association whose subject scope contains this net (nullptr for
    /// reference nets and clock nets).
    const SignalAssociation* association_for(const std::string& net) const;
    bool is_reference_net(const std::string& net) const;
    const Thresholds& thresholds_for(BusClass cls) const;
    /// Derating table for a bus class + reference type, nullptr when the
    /// registry has no entry.
    const DeratingTable* derating_for(BusClass cls, bool differential_ref) const;
    /// Data-rate unit interval for a bus class (UI for data, tCK for the rest).
    double ui_for(BusClass cls) const;
};

Interface load_interface(const nlohmann::json& doc, const std::filesystem::path& base_dir = ".");
Interface load_interface_file(const std::filesystem::path& file);
nlohmann::json save_interface(const Interface& iface);

/// Full cross product {read,write} x {DRAM targets} x {slow,typical,fast},
/// ordered by (operation, target position, corner).
std::vector<Scenario> enumerate_scenarios(const Interface& iface, std::optional<Operation> op_filter = std::nullopt);

/// Buses a scenario touches: data buses always; unidirectional buses only in
/// write direction.
bool scenario_covers_bus(const Scenario& s, const Bus& bus);

/// Subject nets (nets with an association) in scope of the scenario, in bus
/// declaration order.
std::vector<std::string> nets_in_scope(const Interface& iface, const Scenario& s);

enum class PinRole { driver, receiver, standby };

const char* to_string(PinRole r);

struct PinAssignment {
    std::string component;
    std::string net;
    PinRole role = PinRole::standby;
    std::string model;  // buffer or odt model name
    bool odt_on = true; // standby pins only: false means termination disabled
};

/// (net, component) -> assignment, total over the pins of the nets in scope.
using PinRoleMap = std::map<std::pair<std::string, std::string>, PinAssignment>;

PinRoleMap resolve_models(const Interface& iface, const Scenario& s);

/// Components tapped by a net (controller first, then taps in path order).
std::vector<std::string> net_pins(const Interface& iface, const std::string& net);

struct LaneInfo {
    std::string bus;
    std::string lane;
    std::string dram;     // DRAM the lane's strobe lands on
    int position = 0;     // its fly-by position
    double return_delay = 0;  // strobe flight time DRAM -> controller, seconds
    RefPair strobe;
};

/// Byte-lane map for leveling: lane -> (DRAM, fly-by position, strobe flight).
std::vector<LaneInfo> lane_map(const Interface& iface);

/// Inter-tap delays of a fly-by (chain) net, one entry per gap between
/// consecutive DRAM taps. Entry segments before the first tap are excluded.
std::vector<double> flyby_segment_delays(const Interface& iface, const std::string& net);

}  // namespace ddrsi
