#include "ddrsi/netlist.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace ddrsi {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(path, "unknown key '" + it.key() + "'");
    }
}

const json& req(const json& j, const std::string& path, const char* key) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(path, std::string("missing required key '") + key + "'");
    return *it;
}

double num(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
}

int intval(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    return v.get<int>();
}

std::string str(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
}

double opt_num(const json& j, const std::string& path, const char* key, double dflt) {
    auto it = j.find(key);
    return it == j.end() ? dflt : num(*it, path + "." + key);
}

std::string idx(const std::string& base, const char* key, size_t i) {
    const std::string stem = base.empty() ? key : base + "." + key;
    return stem + "[" + std::to_string(i) + "]";
}

}  // namespace

const char* to_string(BusClass c) {
    switch (c) {
        case BusClass::data: return "data";
        case BusClass::address_command: return "address_command";
        case BusClass::control: return "control";
        case BusClass::clock: return "clock";
    }
    return "?";
}

const char* to_string(Operation op) { return op == Operation::read ? "read" : "write"; }

const char* to_string(PinRole r) {
    switch (r) {
        case PinRole::driver: return "driver";
        case PinRole::receiver: return "receiver";
        case PinRole::standby: return "standby";
    }
    return "?";
}

namespace {

BusClass bus_class_from_string(const std::string& s, const std::string& path) {
    if (s == "data") return BusClass::data;
    if (s == "address_command") return BusClass::address_command;
    if (s == "control") return BusClass::control;
    if (s == "clock") return BusClass::clock;
    throw ConfigError(path, "unknown bus class '" + s + "'");
}

LatchEdges latch_from_string(const std::string& s, const std::string& path) {
    if (s == "rising") return LatchEdges::rising;
    if (s == "falling") return LatchEdges::falling;
    if (s == "both") return LatchEdges::both;
    throw ConfigError(path, "latch_edges must be rising, falling or both");
}

const char* to_string(LatchEdges e) {
    switch (e) {
        case LatchEdges::rising: return "rising";
        case LatchEdges::falling: return "falling";
        case LatchEdges::both: return "both";
    }
    return "?";
}

}  // namespace

const ModelTriple& Component::triple(const std::string& selector) const {
    auto it = model_assignment.find(selector);
    if (it == model_assignment.end())
        throw ConfigError("components." + name, "no model group '" + selector + "'");
    return it->second;
}

const NetTopology* TopologyGeometry::find(const std::string& net) const {
    auto it = nets.find(net);
    return it == nets.end() ? nullptr : &it->second;
}

const CouplingPair* TopologyGeometry::pair_for(const std::string& net) const {
    for (const auto& p : coupling)
        if (p.a == net || p.b == net) return &p;
    return nullptr;
}

std::string Scenario::key() const {
    return std::string(to_string(op)) + ":" + target + ":" + to_string(corner);
}

const Component& Interface::controller() const {
    for (const auto& c : components)
        if (c.is_controller) return c;
    throw ConfigError("components", "no controller");  // unreachable after load
}

const Component* Interface::find_component(const std::string& name) const {
    for (const auto& c : components)
        if (c.name == name) return &c;
    return nullptr;
}

std::vector<const Component*> Interface::drams() const {
    std::vector<const Component*> out;
    for (const auto& c : components)
        if (!c.is_controller) out.push_back(&c);
    std::sort(out.begin(), out.end(), [](const Component* a, const Component* b) {
        return std::tuple(a->dimm_index.value_or(0), a->position_on_flyby.value_or(0), a->name) <
               std::tuple(b->dimm_index.value_or(0), b->position_on_flyby.value_or(0), b->name);
    });
    return out;
}

const Bus* Interface::find_bus(const std::string& name) const {
    for (const auto& b : buses)
        if (b.name == name) return &b;
    return nullptr;
}

const Bus* Interface::bus_of_net(const std::string& net) const {
    for (const auto& b : buses)
        if (std::find(b.nets.begin(), b.nets.end(), net) != b.nets.end()) return &b;
    return nullptr;
}

namespace {

// Nets an association's subject covers, minus its own reference nets.
std::vector<std::string> association_scope(const Interface& iface, const SignalAssociation& a) {
    std::vector<std::string> nets;
    if (a.kind == SignalAssociation::SubjectKind::net) {
        nets.push_back(a.subject);
    } else if (a.kind == SignalAssociation::SubjectKind::bus) {
        if (const Bus* b = iface.find_bus(a.subject)) nets = b->nets;
    } else {
        const auto dot = a.subject.find('.');
        if (const Bus* b = iface.find_bus(a.subject.substr(0, dot))) {
            auto it = b->lanes.find(a.subject.substr(dot + 1));
            if (it != b->lanes.end()) nets = it->second;
        }
    }
    std::erase_if(nets, [&](const std::string& n) { return n == a.reference.p || n == a.reference.n; });
    return nets;
}

}  // namespace

const SignalAssociation* Interface::association_for(const std::string& net) const {
    for (const auto& a : associations) {
        const auto scope = association_scope(*this, a);
        if (std::find(scope.begin(), scope.end(), net) != scope.end()) return &a;
    }
    return nullptr;
}

bool Interface::is_reference_net(const std::string& net) const {
    for (const auto& a : associations)
        if (a.reference.p == net || a.reference.n == net) return true;
    return false;
}

const Thresholds& Interface::thresholds_for(BusClass cls) const {
    auto it = thresholds.find(to_string(cls));
    if (it == thresholds.end())
        throw ConfigError("thresholds", std::string("no thresholds for class '") + to_string(cls) + "'");
    return it->second;
}

const DeratingTable* Interface::derating_for(BusClass cls, bool differential_ref) const {
    const std::string key = std::string(to_string(cls)) + (differential_ref ? "_diff" : "_se");
    auto it = derating.find(key);
    return it == derating.end() ? nullptr : &it->second;
}

double Interface::ui_for(BusClass cls) const {
    return cls == BusClass::data ? timing_base.ui : timing_base.tck;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace {

ModelTriple parse_triple(const json& j, const std::string& path) {
    check_keys(j, path, {"driver", "receiver", "standby"});
    ModelTriple t;
    t.driver = str(req(j, path, "driver"), path + ".driver");
    t.receiver = str(req(j, path, "receiver"), path + ".receiver");
    t.standby = str(req(j, path, "standby"), path + ".standby");
    return t;
}

Component parse_component(const json& j, const std::string& path) {
    check_keys(j, path, {"name", "kind", "dimm", "position", "models"});
    Component c;
    c.name = str(req(j, path, "name"), path + ".name");
    if (c.name.empty()) throw ConfigError(path + ".name", "component name must not be empty");
    const std::string kind = str(req(j, path, "kind"), path + ".kind");
    if (kind == "controller") {
        c.is_controller = true;
        if (j.contains("dimm") || j.contains("position"))
            throw ConfigError(path, "controller takes no dimm/position");
    } else if (kind == "dram") {
        c.dimm_index = intval(req(j, path, "dimm"), path + ".dimm");
        c.position_on_flyby = intval(req(j, path, "position"), path + ".position");
        if (*c.dimm_index < 0 || *c.position_on_flyby < 0)
            throw ConfigError(path, "dimm/position must be non-negative");
    } else {
        throw ConfigError(path + ".kind", "component kind must be controller or dram");
    }
    const json& models = req(j, path, "models");
    if (!models.is_object() || models.empty()) throw ConfigError(path + ".models", "expected a non-empty object");
    for (auto it = models.begin(); it != models.end(); ++it)
        c.model_assignment[it.key()] = parse_triple(it.value(), path + ".models." + it.key());
    return c;
}

Bus parse_bus(const json& j, const std::string& path) {
    check_keys(j, path, {"name", "class", "direction", "nets", "lanes", "model_selector"});
    Bus b;
    b.name = str(req(j, path, "name"), path + ".name");
    b.cls = bus_class_from_string(str(req(j, path, "class"), path + ".class"), path + ".class");
    const std::string want_dir = b.cls == BusClass::data ? "bidirectional" : "unidirectional";
    std::string dir = want_dir;
    if (j.contains("direction")) dir = str(j.at("direction"), path + ".direction");
    if (dir != want_dir)
        throw ConfigError(path + ".direction", std::string(to_string(b.cls)) + " buses must be " + want_dir);
    b.direction = b.cls == BusClass::data ? BusDirection::bidirectional : BusDirection::unidirectional;
    const json& nets = req(j, path, "nets");
    if (!nets.is_array() || nets.empty()) throw ConfigError(path + ".nets", "expected a non-empty array");
    for (size_t i = 0; i < nets.size(); ++i) {
        b.nets.push_back(str(nets[i], idx(path, "nets", i)));
        if (b.nets.back().empty()) throw ConfigError(idx(path, "nets", i), "net name must not be empty");
    }
    if (j.contains("lanes")) {
        if (b.cls != BusClass::data) throw ConfigError(path + ".lanes", "lanes are only valid on data buses");
        const json& lanes = j.at("lanes");
        if (!lanes.is_object()) throw ConfigError(path + ".lanes", "expected an object");
        std::set<std::string> seen;
        for (auto it = lanes.begin(); it != lanes.end(); ++it) {
            const std::string lp = path + ".lanes." + it.key();
            if (!it.value().is_array() || it.value().empty()) throw ConfigError(lp, "expected a non-empty array");
            std::vector<std::string> members;
            for (size_t i = 0; i < it.value().size(); ++i) {
                const std::string n = str(it.value()[i], lp + "[" + std::to_string(i) + "]");
                if (std::find(b.nets.begin(), b.nets.end(), n) == b.nets.end())
                    throw ConfigError(lp, "net '" + n + "' is not part of bus '" + b.name + "'");
                if (!seen.insert(n).second)
                    throw ConfigError(lp, "net '" + n + "' appears in more than one lane");
                members.push_back(n);
            }
            b.lanes[it.key()] = std::move(members);
        }
    }
    if (j.contains("model_selector")) b.model_selector = str(j.at("model_selector"), path + ".model_selector");
    if (b.model_selector.empty()) throw ConfigError(path + ".model_selector", "must not be empty");
    return b;
}

SignalAssociation parse_association(const json& j, const std::string& path) {
    check_keys(j, path, {"bus", "lane", "net", "strobe", "clock", "latch_edges"});
    SignalAssociation a;
    int subjects = 0;
    if (j.contains("bus")) {
        a.kind = SignalAssociation::SubjectKind::bus;
        a.subject = str(j.at("bus"), path + ".bus");
        ++subjects;
    }
    if (j.contains("lane")) {
        a.kind = SignalAssociation::SubjectKind::lane;
        a.subject = str(j.at("lane"), path + ".lane");
        ++subjects;
    }
    if (j.contains("net")) {
        a.kind = SignalAssociation::SubjectKind::net;
        a.subject = str(j.at("net"), path + ".net");
        ++subjects;
    }
    if (subjects != 1) throw ConfigError(path, "exactly one of bus/lane/net is required");

    int refs = 0;
    const json* ref = nullptr;
    if (j.contains("strobe")) {
        a.reference.is_strobe = true;
        ref = &j.at("strobe");
        ++refs;
    }
    if (j.contains("clock")) {
        a.reference.is_strobe = false;
        ref = &j.at("clock");
        ++refs;
    }
    if (refs != 1) throw ConfigError(path, "exactly one of strobe/clock is required");
    if (!ref->is_array() || ref->empty() || ref->size() > 2)
        throw ConfigError(path, "reference must be [p] or [p, n]");
    a.reference.p = str((*ref)[0], path + "[0]");
    if (ref->size() == 2) a.reference.n = str((*ref)[1], path + "[1]");
    if (a.reference.p.empty()) throw ConfigError(path, "reference net must not be empty");
    if (a.reference.p == a.reference.n) throw ConfigError(path, "reference legs must differ");

    a.latch_edges = a.reference.is_strobe ? LatchEdges::both : LatchEdges::rising;
    if (j.contains("latch_edges"))
        a.latch_edges = latch_from_string(str(j.at("latch_edges"), path + ".latch_edges"), path + ".latch_edges");
    return a;
}

OdtOverride parse_override(const json& j, const std::string& path) {
    check_keys(j, path, {"op", "target", "component", "odt", "model"});
    OdtOverride o;
    const std::string op = str(req(j, path, "op"), path + ".op");
    if (op == "read")
        o.op = Operation::read;
    else if (op == "write")
        o.op = Operation::write;
    else
        throw ConfigError(path + ".op", "op must be read or write");
    if (j.contains("target")) o.target = str(j.at("target"), path + ".target");
    o.component = str(req(j, path, "component"), path + ".component");
    const json& odt = req(j, path, "odt");
    if (!odt.is_boolean()) throw ConfigError(path + ".odt", "expected a boolean");
    o.odt_on = odt.get<bool>();
    if (j.contains("model")) {
        if (!o.odt_on) throw ConfigError(path + ".model", "model override requires odt=true");
        o.model = str(j.at("model"), path + ".model");
    }
    return o;
}

PathItem parse_path_item(const json& j, const std::string& path) {
    check_keys(j, path, {"segment", "series_r", "shunt_c", "tap"});
    if (j.size() != 1) throw ConfigError(path, "exactly one of segment/series_r/shunt_c/tap is required");
    PathItem it;
    if (j.contains("segment")) {
        const json& s = j.at("segment");
        check_keys(s, path + ".segment", {"z0", "td"});
        it.kind = PathItem::Kind::segment;
        it.seg.z0 = num(req(s, path + ".segment", "z0"), path + ".segment.z0");
        it.seg.td = num(req(s, path + ".segment", "td"), path + ".segment.td");
        if (it.seg.z0 <= 0) throw ConfigError(path + ".segment.z0", "impedance must be positive");
        if (it.seg.td <= 0) throw ConfigError(path + ".segment.td", "delay must be positive");
    } else if (j.contains("series_r")) {
        it.kind = PathItem::Kind::series_r;
        it.value = num(j.at("series_r"), path + ".series_r");
        if (it.value <= 0) throw ConfigError(path + ".series_r", "resistance must be positive");
    } else if (j.contains("shunt_c")) {
        it.kind = PathItem::Kind::shunt_c;
        it.value = num(j.at("shunt_c"), path + ".shunt_c");
        if (it.value <= 0) throw ConfigError(path + ".shunt_c", "capacitance must be positive");
    } else {
        it.kind = PathItem::Kind::tap;
        it.component = str(j.at("tap"), path + ".tap");
    }
    return it;
}

NetTopology parse_net_topology(const json& j, const std::string& path) {
    check_keys(j, path, {"kind", "path", "stubs", "termination"});
    NetTopology t;
    std::string kind = "chain";
    if (j.contains("kind")) kind = str(j.at("kind"), path + ".kind");
    if (kind == "chain")
        t.kind = NetTopology::Kind::chain;
    else if (kind == "tbranch")
        t.kind = NetTopology::Kind::tbranch;
    else
        throw ConfigError(path + ".kind", "kind must be chain or tbranch");

    const json& p = req(j, path, "path");
    if (!p.is_array() || p.empty()) throw ConfigError(path + ".path", "expected a non-empty array");
    for (size_t i = 0; i < p.size(); ++i) t.path.push_back(parse_path_item(p[i], idx(path, "path", i)));

    if (t.kind == NetTopology::Kind::chain) {
        if (j.contains("stubs")) throw ConfigError(path + ".stubs", "stubs are only valid on tbranch nets");
        bool any_tap = false;
        for (const auto& it : t.path) any_tap |= it.kind == PathItem::Kind::tap;
        if (!any_tap) throw ConfigError(path + ".path", "chain must tap at least one component");
    } else {
        for (size_t i = 0; i < t.path.size(); ++i)
            if (t.path[i].kind == PathItem::Kind::tap)
                throw ConfigError(idx(path, "path", i), "tbranch trunk must not contain taps");
        const json& stubs = req(j, path, "stubs");
        if (!stubs.is_array() || stubs.empty()) throw ConfigError(path + ".stubs", "expected a non-empty array");
        for (size_t i = 0; i < stubs.size(); ++i) {
            const std::string sp = idx(path, "stubs", i);
            check_keys(stubs[i], sp, {"component", "path"});
            Stub s;
            s.component = str(req(stubs[i], sp, "component"), sp + ".component");
            const json& spath = req(stubs[i], sp, "path");
            if (!spath.is_array()) throw ConfigError(sp + ".path", "expected an array");
            for (size_t k = 0; k < spath.size(); ++k) {
                s.path.push_back(parse_path_item(spath[k], idx(sp, "path", k)));
                if (s.path.back().kind == PathItem::Kind::tap)
                    throw ConfigError(idx(sp, "path", k), "stub paths must not contain taps");
            }
            t.stubs.push_back(std::move(s));
        }
    }
    if (j.contains("termination")) {
        const json& term = j.at("termination");
        check_keys(term, path + ".termination", {"r", "vtt"});
        Termination tm;
        tm.r = num(req(term, path + ".termination", "r"), path + ".termination.r");
        tm.vtt = opt_num(term, path + ".termination", "vtt", 0.75);
        if (tm.r <= 0) throw ConfigError(path + ".termination.r", "resistance must be positive");
        t.termination = tm;
    }
    return t;
}

CouplingPair parse_coupling(const json& j, const std::string& path) {
    check_keys(j, path, {"nets", "k", "z0_even", "z0_odd", "td_even", "td_odd"});
    CouplingPair c;
    const json& nets = req(j, path, "nets");
    if (!nets.is_array() || nets.size() != 2) throw ConfigError(path + ".nets", "expected exactly two nets");
    c.a = str(nets[0], path + ".nets[0]");
    c.b = str(nets[1], path + ".nets[1]");
    if (c.a == c.b) throw ConfigError(path + ".nets", "coupled nets must differ");
    const bool has_k = j.contains("k");
    const bool has_modal = j.contains("z0_even") || j.contains("z0_odd") || j.contains("td_even") || j.contains("td_odd");
    if (has_k == has_modal)
        throw ConfigError(path, "give either k or the full even/odd modal set");
    if (has_k) {
        c.k = num(j.at("k"), path + ".k");
        if (c.k < 0 || c.k >= 1) throw ConfigError(path + ".k", "k must be in [0, 1)");
    } else {
        c.z0_even = num(req(j, path, "z0_even"), path + ".z0_even");
        c.z0_odd = num(req(j, path, "z0_odd"), path + ".z0_odd");
        c.td_even = num(req(j, path, "td_even"), path + ".td_even");
        c.td_odd = num(req(j, path, "td_odd"), path + ".td_odd");
        if (*c.z0_even <= 0 || *c.z0_odd <= 0 || *c.td_even <= 0 || *c.td_odd <= 0)
            throw ConfigError(path, "modal impedances and delays must be positive");
    }
    return c;
}

Thresholds parse_thresholds(const json& j, const std::string& path) {
    check_keys(j, path,
               {"vref", "vih_ac", "vih_dc", "vil_ac", "vil_dc", "overshoot_limit", "undershoot_limit", "vddq"});
    Thresholds t;
    t.vref = opt_num(j, path, "vref", t.vref);
    t.vih_ac = opt_num(j, path, "vih_ac", t.vih_ac);
    t.vih_dc = opt_num(j, path, "vih_dc", t.vih_dc);
    t.vil_ac = opt_num(j, path, "vil_ac", t.vil_ac);
    t.vil_dc = opt_num(j, path, "vil_dc", t.vil_dc);
    t.overshoot_limit = opt_num(j, path, "overshoot_limit", t.overshoot_limit);
    t.undershoot_limit = opt_num(j, path, "undershoot_limit", t.undershoot_limit);
    t.vddq = opt_num(j, path, "vddq", t.vddq);
    t.validate(path);
    return t;
}

BaseTiming parse_timing(const json& j, const std::string& path) {
    check_keys(j, path, {"tck", "cas_latency", "base_tds", "base_tdh", "ui", "step_resolution"});
    BaseTiming t;
    t.tck = opt_num(j, path, "tck", t.tck);
    if (j.contains("cas_latency")) t.cas_latency = intval(j.at("cas_latency"), path + ".cas_latency");
    t.base_tds = opt_num(j, path, "base_tds", t.base_tds);
    t.base_tdh = opt_num(j, path, "base_tdh", t.base_tdh);
    t.ui = opt_num(j, path, "ui", t.tck / 2);
    t.step_resolution = opt_num(j, path, "step_resolution", t.step_resolution);
    if (t.tck <= 0 || t.ui <= 0 || t.step_resolution <= 0 || t.base_tds <= 0 || t.base_tdh <= 0)
        throw ConfigError(path, "timing values must be positive");
    if (t.cas_latency < 1) throw ConfigError(path + ".cas_latency", "must be at least 1");
    return t;
}

void parse_corner_overrides(const json& j, const std::string& path, CornerScales& s) {
    check_keys(j, path, {"slow", "fast", "typical"});
    if (j.contains("typical")) throw ConfigError(path + ".typical", "typical scales are fixed at 1.0");
    auto apply = [&](const char* key, PvtCorner& c) {
        if (!j.contains(key)) return;
        const std::string p = path + "." + key;
        const json& o = j.at(key);
        check_keys(o, p, {"voltage_scale", "strength_scale", "ramp_scale", "r_scale"});
        c.voltage_scale = opt_num(o, p, "voltage_scale", c.voltage_scale);
        c.strength_scale = opt_num(o, p, "strength_scale", c.strength_scale);
        c.ramp_scale = opt_num(o, p, "ramp_scale", c.ramp_scale);
        c.r_scale = opt_num(o, p, "r_scale", c.r_scale);
        if (c.voltage_scale <= 0 || c.strength_scale <= 0 || c.ramp_scale <= 0 || c.r_scale <= 0)
            throw ConfigError(p, "corner scales must be positive");
    };
    apply("slow", s.slow);
    apply("fast", s.fast);
}

std::vector<std::string> chain_taps(const NetTopology& t) {
    std::vector<std::string> taps;
    if (t.kind == NetTopology::Kind::chain) {
        for (const auto& it : t.path)
            if (it.kind == PathItem::Kind::tap) taps.push_back(it.component);
    } else {
        for (const auto& s : t.stubs) taps.push_back(s.component);
    }
    return taps;
}

void cross_validate(Interface& iface) {
    // Components: names unique, exactly one controller, contiguous fly-by
    // positions per dimm.
    std::set<std::string> names;
    int controllers = 0;
    std::map<int, std::set<int>> positions;
    for (size_t i = 0; i < iface.components.size(); ++i) {
        const auto& c = iface.components[i];
        if (!names.insert(c.name).second)
            throw ConfigError(idx("", "components", i), "duplicate component name '" + c.name + "'");
        if (c.is_controller) {
            ++controllers;
        } else {
            if (!positions[*c.dimm_index].insert(*c.position_on_flyby).second)
                throw ConfigError(idx("", "components", i),
                                  "duplicate fly-by position " + std::to_string(*c.position_on_flyby) + " on dimm " +
                                      std::to_string(*c.dimm_index));
        }
    }
    if (controllers != 1)
        throw ConfigError("components", "exactly one controller is required, found " + std::to_string(controllers));
    for (const auto& [dimm, pos] : positions) {
        if (*pos.begin() != 0 || *pos.rbegin() != static_cast<int>(pos.size()) - 1)
            throw ConfigError("components", "fly-by positions on dimm " + std::to_string(dimm) +
                                                " must be contiguous starting at 0");
    }

    // Buses: names unique, nets globally unique.
    std::set<std::string> bus_names, net_names;
    for (size_t i = 0; i < iface.buses.size(); ++i) {
        const auto& b = iface.buses[i];
        if (!bus_names.insert(b.name).second)
            throw ConfigError(idx("", "buses", i), "duplicate bus name '" + b.name + "'");
        for (const auto& n : b.nets)
            if (!net_names.insert(n).second)
                throw ConfigError(idx("", "buses", i), "net '" + n + "' belongs to more than one bus");
    }

    // Associations: subjects resolve, references resolve with the right class,
    // and every non-clock, non-reference net is covered exactly once.
    for (size_t i = 0; i < iface.associations.size(); ++i) {
        const auto& a = iface.associations[i];
        const std::string path = idx("", "associations", i);
        if (a.kind == SignalAssociation::SubjectKind::bus) {
            if (!iface.find_bus(a.subject)) throw ConfigError(path, "unknown bus '" + a.subject + "'");
        } else if (a.kind == SignalAssociation::SubjectKind::lane) {
            const auto dot = a.subject.find('.');
            const Bus* b = dot == std::string::npos ? nullptr : iface.find_bus(a.subject.substr(0, dot));
            if (!b || !b->lanes.count(a.subject.substr(dot + 1)))
                throw ConfigError(path, "unknown lane '" + a.subject + "' (use bus.lane)");
        } else {
            if (!iface.bus_of_net(a.subject)) throw ConfigError(path, "unknown net '" + a.subject + "'");
        }
        for (const std::string* n : {&a.reference.p, &a.reference.n}) {
            if (n->empty()) continue;
            const Bus* rb = iface.bus_of_net(*n);
            if (!rb) throw ConfigError(path, "unknown reference net '" + *n + "'");
            if (a.reference.is_strobe && rb->cls != BusClass::data)
                throw ConfigError(path, "strobe reference '" + *n + "' must be a data net");
            if (!a.reference.is_strobe && rb->cls != BusClass::clock)
                throw ConfigError(path, "clock reference '" + *n + "' must be a clock net");
        }
        const Bus* sb = a.kind == SignalAssociation::SubjectKind::net
                            ? iface.bus_of_net(a.subject)
                            : iface.find_bus(a.kind == SignalAssociation::SubjectKind::lane
                                                 ? a.subject.substr(0, a.subject.find('.'))
                                                 : a.subject);
        if (sb && sb->cls == BusClass::data && !a.reference.is_strobe)
            throw ConfigError(path, "data subjects latch against a strobe, not the clock");
        if (sb && sb->cls != BusClass::data && a.reference.is_strobe)
            throw ConfigError(path, std::string(to_string(sb->cls)) + " subjects latch against the clock");
        if (sb && sb->cls == BusClass::clock) throw ConfigError(path, "clock nets are references, not subjects");
    }
    std::map<std::string, int> cover;
    for (const auto& a : iface.associations)
        for (const auto& n : association_scope(iface, a)) ++cover[n];
    for (const auto& b : iface.buses) {
        if (b.cls == BusClass::clock) continue;
        for (const auto& n : b.nets) {
            if (iface.is_reference_net(n)) {
                if (cover.count(n))
                    throw ConfigError("associations", "net '" + n + "' is both a subject and a reference");
                continue;
            }
            const int c = cover.count(n) ? cover.at(n) : 0;
            if (c == 0) throw ConfigError("associations", "net '" + n + "' has no signal association");
            if (c > 1) throw ConfigError("associations", "net '" + n + "' is covered by multiple associations");
        }
    }

    // ODT overrides reference real components / targets / models.
    for (size_t i = 0; i < iface.odt_policy.overrides.size(); ++i) {
        const auto& o = iface.odt_policy.overrides[i];
        const std::string path = idx("", "odt_policy.overrides", i);
        const Component* c = iface.find_component(o.component);
        if (!c) throw ConfigError(path, "unknown component '" + o.component + "'");
        if (o.target) {
            const Component* t = iface.find_component(*o.target);
            if (!t || t->is_controller) throw ConfigError(path, "target must name a dram");
        }
        if (o.model && !iface.buffers.find_odt(*o.model))
            throw ConfigError(path, "unknown termination model '" + *o.model + "'");
    }

    // Topology: every bus net has one, nothing extra, taps resolve.
    for (const auto& [net, topo] : iface.topology.nets) {
        if (!iface.bus_of_net(net)) throw ConfigError("topology.nets." + net, "net belongs to no bus");
        std::set<std::string> seen;
        for (const auto& tapped : chain_taps(topo)) {
            const Component* c = iface.find_component(tapped);
            if (!c) throw ConfigError("topology.nets." + net, "tap references unknown component '" + tapped + "'");
            if (c->is_controller)
                throw ConfigError("topology.nets." + net, "the controller anchors the near end and cannot be tapped");
            if (!seen.insert(tapped).second)
                throw ConfigError("topology.nets." + net, "component '" + tapped + "' tapped more than once");
        }
        if (seen.empty()) throw ConfigError("topology.nets." + net, "no component taps");
    }
    for (const auto& b : iface.buses)
        for (const auto& n : b.nets)
            if (!iface.topology.find(n)) throw ConfigError("topology.nets", "no topology for net '" + n + "'");

    // Coupling: each net in at most one pair, both point-to-point single
    // segments; the k form needs matching segments.
    std::set<std::string> coupled;
    for (size_t i = 0; i < iface.topology.coupling.size(); ++i) {
        const auto& p = iface.topology.coupling[i];
        const std::string path = idx("", "topology.coupling", i);
        for (const std::string* n : {&p.a, &p.b}) {
            if (!iface.topology.find(*n)) throw ConfigError(path, "unknown net '" + *n + "'");
            if (!coupled.insert(*n).second) throw ConfigError(path, "net '" + *n + "' is in more than one pair");
        }
        const Segment* segs[2] = {nullptr, nullptr};
        const std::string* ns[2] = {&p.a, &p.b};
        for (int k = 0; k < 2; ++k) {
            const NetTopology* t = iface.topology.find(*ns[k]);
            if (t->kind != NetTopology::Kind::chain || t->path.size() != 2 ||
                t->path[0].kind != PathItem::Kind::segment || t->path[1].kind != PathItem::Kind::tap)
                throw ConfigError(path, "coupled net '" + *ns[k] +
                                            "' must be a single-segment point-to-point chain (segment then tap)");
            segs[k] = &t->path[0].seg;
        }
        if (!p.z0_even) {  // k form: derive modal values from the (shared) segment
            if (std::abs(segs[0]->z0 - segs[1]->z0) > 1e-9 || std::abs(segs[0]->td - segs[1]->td) > 1e-15)
                throw ConfigError(path, "k-coupled nets must share the same segment impedance and delay");
        }
    }

    // Every tapped component (and the controller) resolves its model triple
    // for the owning bus's selector group.
    std::set<std::string> missing;
    for (const auto& b : iface.buses) {
        for (const auto& n : b.nets) {
            std::vector<std::string> pins = chain_taps(*iface.topology.find(n));
            pins.push_back(iface.controller().name);
            for (const auto& pin : pins) {
                const Component* c = iface.find_component(pin);
                auto it = c->model_assignment.find(b.model_selector);
                if (it == c->model_assignment.end())
                    throw ConfigError("components", "component '" + pin + "' has no model group '" + b.model_selector +
                                                        "' required by bus '" + b.name + "'");
                const ModelTriple& t = it->second;
                if (!iface.buffers.find_model(t.driver))
                    throw ConfigError("components", "unknown driver model '" + t.driver + "' on '" + pin + "'");
                for (const std::string* m : {&t.receiver, &t.standby})
                    if (!iface.buffers.find_odt(*m))
                        throw ConfigError("components", "unknown termination model '" + *m + "' on '" + pin + "'");
            }
        }
    }
}

}  // namespace

Interface load_interface(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("", "interface document must be an object");
    check_keys(doc, "", {"name", "components", "buses", "associations", "odt_policy", "topology", "thresholds",
                         "timing", "corners", "buffers", "derating"});
    Interface iface;
    if (doc.contains("name")) iface.name = str(doc.at("name"), "name");

    const json& comps = req(doc, "", "components");
    if (!comps.is_array() || comps.empty()) throw ConfigError("components", "expected a non-empty array");
    for (size_t i = 0; i < comps.size(); ++i)
        iface.components.push_back(parse_component(comps[i], idx("", "components", i)));

    const json& buses = req(doc, "", "buses");
    if (!buses.is_array() || buses.empty()) throw ConfigError("buses", "expected a non-empty array");
    for (size_t i = 0; i < buses.size(); ++i) iface.buses.push_back(parse_bus(buses[i], idx("", "buses", i)));

    const json& assocs = req(doc, "", "associations");
    if (!assocs.is_array()) throw ConfigError("associations", "expected an array");
    for (size_t i = 0; i < assocs.size(); ++i)
        iface.associations.push_back(parse_association(assocs[i], idx("", "associations", i)));

    if (doc.contains("odt_policy")) {
        const json& op = doc.at("odt_policy");
        check_keys(op, "odt_policy", {"overrides"});
        if (op.contains("overrides")) {
            const json& ov = op.at("overrides");
            if (!ov.is_array()) throw ConfigError("odt_policy.overrides", "expected an array");
            for (size_t i = 0; i < ov.size(); ++i)
                iface.odt_policy.overrides.push_back(parse_override(ov[i], idx("", "odt_policy.overrides", i)));
        }
    }

    const json& topo = req(doc, "", "topology");
    check_keys(topo, "topology", {"nets", "coupling"});
    const json& tnets = req(topo, "topology", "nets");
    if (!tnets.is_object() || tnets.empty()) throw ConfigError("topology.nets", "expected a non-empty object");
    for (auto it = tnets.begin(); it != tnets.end(); ++it)
        iface.topology.nets[it.key()] = parse_net_topology(it.value(), "topology.nets." + it.key());
    if (topo.contains("coupling")) {
        const json& cp = topo.at("coupling");
        if (!cp.is_array()) throw ConfigError("topology.coupling", "expected an array");
        for (size_t i = 0; i < cp.size(); ++i)
            iface.topology.coupling.push_back(parse_coupling(cp[i], idx("", "topology.coupling", i)));
    }

    for (const char* cls : {"data", "address_command", "control", "clock"}) iface.thresholds[cls] = Thresholds{};
    if (doc.contains("thresholds")) {
        const json& th = doc.at("thresholds");
        check_keys(th, "thresholds", {"data", "address_command", "control", "clock"});
        for (auto it = th.begin(); it != th.end(); ++it)
            iface.thresholds[it.key()] = parse_thresholds(it.value(), "thresholds." + it.key());
    }

    iface.timing_base = doc.contains("timing") ? parse_timing(doc.at("timing"), "timing") : BaseTiming{};
    if (!doc.contains("timing")) iface.timing_base.ui = iface.timing_base.tck / 2;

    if (doc.contains("corners")) parse_corner_overrides(doc.at("corners"), "corners", iface.corner_scales);

    iface.buffers_ref = str(req(doc, "", "buffers"), "buffers");
    iface.buffers = load_buffer_library_file(base_dir / iface.buffers_ref);

    if (doc.contains("derating")) {
        const json& der = doc.at("derating");
        if (!der.is_object()) throw ConfigError("derating", "expected an object");
        for (auto it = der.begin(); it != der.end(); ++it) {
            static const std::set<std::string> allowed = {"data_diff",    "data_se",   "address_command_diff",
                                                          "address_command_se", "control_diff", "control_se"};
            if (!allowed.count(it.key()))
                throw ConfigError("derating." + it.key(), "key must be <bus class>_diff or <bus class>_se");
            const std::string rel = str(it.value(), "derating." + it.key());
            iface.derating_refs[it.key()] = rel;
            iface.derating[it.key()] = load_derating_csv(base_dir / rel);
        }
    }

    cross_validate(iface);
    return iface;
}

Interface load_interface_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file.string(), "cannot open interface description");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);  // allow comments
    } catch (const json::parse_error& e) {
        throw ConfigError(file.string(), e.what());
    }
    return load_interface(doc, file.parent_path());
}

nlohmann::json save_interface(const Interface& iface) {
    json doc = json::object();
    if (!iface.name.empty()) doc["name"] = iface.name;

    json comps = json::array();
    for (const auto& c : iface.components) {
        json jc{{"name", c.name}, {"kind", c.is_controller ? "controller" : "dram"}};
        if (c.dimm_index) jc["dimm"] = *c.dimm_index;
        if (c.position_on_flyby) jc["position"] = *c.position_on_flyby;
        json models = json::object();
        for (const auto& [sel, t] : c.model_assignment)
            models[sel] = {{"driver", t.driver}, {"receiver", t.receiver}, {"standby", t.standby}};
        jc["models"] = std::move(models);
        comps.push_back(std::move(jc));
    }
    doc["components"] = std::move(comps);

    json buses = json::array();
    for (const auto& b : iface.buses) {
        json jb{{"name", b.name},
                {"class", to_string(b.cls)},
                {"direction", b.direction == BusDirection::bidirectional ? "bidirectional" : "unidirectional"},
                {"nets", b.nets},
                {"model_selector", b.model_selector}};
        if (!b.lanes.empty()) {
            json lanes = json::object();
            for (const auto& [id, nets] : b.lanes) lanes[id] = nets;
            jb["lanes"] = std::move(lanes);
        }
        buses.push_back(std::move(jb));
    }
    doc["buses"] = std::move(buses);

    json assocs = json::array();
    for (const auto& a : iface.associations) {
        json ja = json::object();
        switch (a.kind) {
            case SignalAssociation::SubjectKind::bus: ja["bus"] = a.subject; break;
            case SignalAssociation::SubjectKind::lane: ja["lane"] = a.subject; break;
            case SignalAssociation::SubjectKind::net: ja["net"] = a.subject; break;
        }
        json ref = json::array({a.reference.p});
        if (!a.reference.n.empty()) ref.push_back(a.reference.n);
        ja[a.reference.is_strobe ? "strobe" : "clock"] = std::move(ref);
        ja["latch_edges"] = to_string(a.latch_edges);
        assocs.push_back(std::move(ja));
    }
    doc["associations"] = std::move(assocs);

    if (!iface.odt_policy.overrides.empty()) {
        json ov = json::array();
        for (const auto& o : iface.odt_policy.overrides) {
            json jo{{"op", to_string(o.op)}, {"component", o.component}, {"odt", o.odt_on}};
            if (o.target) jo["target"] = *o.target;
            if (o.model) jo["model"] = *o.model;
            ov.push_back(std::move(jo));
        }
        doc["odt_policy"] = {{"overrides", std::move(ov)}};
    }

    json tnets = json::object();
    for (const auto& [net, t] : iface.topology.nets) {
        json jt{{"kind", t.kind == NetTopology::Kind::chain ? "chain" : "tbranch"}};
        auto dump_path = [](const std::vector<PathItem>& path) {
            json arr = json::array();
            for (const auto& it : path) {
                switch (it.kind) {
                    case PathItem::Kind::segment: arr.push_back({{"segment", {{"z0", it.seg.z0}, {"td", it.seg.td}}}}); break;
                    case PathItem::Kind::series_r: arr.push_back({{"series_r", it.value}}); break;
                    case PathItem::Kind::shunt_c: arr.push_back({{"shunt_c", it.value}}); break;
                    case PathItem::Kind::tap: arr.push_back({{"tap", it.component}}); break;
                }
            }
            return arr;
        };
        jt["path"] = dump_path(t.path);
        if (!t.stubs.empty()) {
            json stubs = json::array();
            for (const auto& s : t.stubs)
                stubs.push_back({{"component", s.component}, {"path", dump_path(s.path)}});
            jt["stubs"] = std::move(stubs);
        }
        if (t.termination) jt["termination"] = {{"r", t.termination->r}, {"vtt", t.termination->vtt}};
        tnets[net] = std::move(jt);
    }
    doc["topology"] = {{"nets", std::move(tnets)}};
    if (!iface.topology.coupling.empty()) {
        json cp = json::array();
        for (const auto& p : iface.topology.coupling) {
            json jp{{"nets", {p.a, p.b}}};
            if (p.z0_even) {
                jp["z0_even"] = *p.z0_even;
                jp["z0_odd"] = *p.z0_odd;
                jp["td_even"] = *p.td_even;
                jp["td_odd"] = *p.td_odd;
            } else {
                jp["k"] = p.k;
            }
            cp.push_back(std::move(jp));
        }
        doc["topology"]["coupling"] = std::move(cp);
    }

    json th = json::object();
    for (const auto& [cls, t] : iface.thresholds)
        th[cls] = {{"vref", t.vref},
                   {"vih_ac", t.vih_ac},
                   {"vih_dc", t.vih_dc},
                   {"vil_ac", t.vil_ac},
                   {"vil_dc", t.vil_dc},
                   {"overshoot_limit", t.overshoot_limit},
                   {"undershoot_limit", t.undershoot_limit},
                   {"vddq", t.vddq}};
    doc["thresholds"] = std::move(th);

    const BaseTiming& tb = iface.timing_base;
    doc["timing"] = {{"tck", tb.tck},           {"cas_latency", tb.cas_latency},
                     {"base_tds", tb.base_tds}, {"base_tdh", tb.base_tdh},
                     {"ui", tb.ui},             {"step_resolution", tb.step_resolution}};

    auto corner_json = [](const PvtCorner& c) {
        return json{{"voltage_scale", c.voltage_scale},
                    {"strength_scale", c.strength_scale},
                    {"ramp_scale", c.ramp_scale},
                    {"r_scale", c.r_scale}};
    };
    doc["corners"] = {{"slow", corner_json(iface.corner_scales.slow)}, {"fast", corner_json(iface.corner_scales.fast)}};

    doc["buffers"] = iface.buffers_ref;
    if (!iface.derating_refs.empty()) {
        json der = json::object();
        for (const auto& [k, v] : iface.derating_refs) der[k] = v;
        doc["derating"] = std::move(der);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Scenario fabric
// ---------------------------------------------------------------------------

std::vector<Scenario> enumerate_scenarios(const Interface& iface, std::optional<Operation> op_filter) {
    std::vector<Scenario> out;
    const auto targets = iface.drams();
    for (Operation op : {Operation::read, Operation::write}) {
        if (op_filter && op != *op_filter) continue;
        for (const Component* t : targets)
            for (Corner c : {Corner::slow, Corner::typical, Corner::fast}) out.push_back({op, t->name, c});
    }
    return out;
}

bool scenario_covers_bus(const Scenario& s, const Bus& bus) {
    if (bus.direction == BusDirection::bidirectional) return true;
    return s.op == Operation::write;
}

std::vector<std::string> nets_in_scope(const Interface& iface, const Scenario& s) {
    std::vector<std::string> out;
    for (const auto& b : iface.buses) {
        if (!scenario_covers_bus(s, b)) continue;
        for (const auto& n : b.nets)
            if (iface.association_for(n)) out.push_back(n);
    }
    return out;
}

std::vector<std::string> net_pins(const Interface& iface, const std::string& net) {
    const NetTopology* t = iface.topology.find(net);
    if (!t) throw ConfigError("topology.nets", "no topology for net '" + net + "'");
    std::vector<std::string> pins{iface.controller().name};
    for (const auto& tap : chain_taps(*t)) pins.push_back(tap);
    return pins;
}

PinRoleMap resolve_models(const Interface& iface, const Scenario& s) {
    const Component* target = iface.find_component(s.target);
    if (!target || target->is_controller) throw ConfigError("scenario", "target '" + s.target + "' is not a dram");
    // Activity is per module (rank): every dram on the accessed dimm drives or
    // receives together, drams on other dimms sit in stand-by.
    const int target_rank = target->dimm_index.value_or(0);

    auto standby_override = [&](const std::string& comp) -> const OdtOverride* {
        const OdtOverride* hit = nullptr;
        for (const auto& o : iface.odt_policy.overrides) {
            if (o.op != s.op || o.component != comp) continue;
            if (o.target && *o.target != s.target) continue;
            hit = &o;  // last matching override wins
        }
        return hit;
    };

    PinRoleMap map;
    for (const auto& b : iface.buses) {
        if (!scenario_covers_bus(s, b)) continue;
        for (const auto& n : b.nets) {
            for (const auto& pin : net_pins(iface, n)) {
                const Component* c = iface.find_component(pin);
                const ModelTriple& t = c->triple(b.model_selector);
                PinAssignment pa;
                pa.component = pin;
                pa.net = n;
                if (b.cls != BusClass::data) {
                    // Uni-directional fabric: controller always launches,
                    // every dram input listens.
                    pa.role = c->is_controller ? PinRole::driver : PinRole::receiver;
                    pa.model = c->is_controller ? t.driver : t.receiver;
                } else if (s.op == Operation::write) {
                    if (c->is_controller) {
                        pa.role = PinRole::driver;
                        pa.model = t.driver;
                    } else if (c->dimm_index.value_or(0) == target_rank) {
                        pa.role = PinRole::receiver;
                        pa.model = t.receiver;
                    } else {
                        pa.role = PinRole::standby;
                        pa.model = t.standby;
                    }
                } else {  // read
                    if (c->is_controller) {
                        pa.role = PinRole::receiver;
                        pa.model = t.receiver;
                    } else if (c->dimm_index.value_or(0) == target_rank) {
                        pa.role = PinRole::driver;
                        pa.model = t.driver;
                    } else {
                        pa.role = PinRole::standby;
                        pa.model = t.standby;
                    }
                }
                if (pa.role == PinRole::standby) {
                    if (const OdtOverride* o = standby_override(pin)) {
                        pa.odt_on = o->odt_on;
                        if (o->model) pa.model = *o->model;
                    }
                }
                map[{n, pin}] = std::move(pa);
            }
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Fly-by helpers
// ---------------------------------------------------------------------------

namespace {

// Flight time from the controller pad to a component's tap. Lumped elements
// contribute no ideal delay.
double flight_to_tap(const NetTopology& t, const std::string& component) {
    double acc = 0;
    if (t.kind == NetTopology::Kind::chain) {
        for (const auto& it : t.path) {
            if (it.kind == PathItem::Kind::segment) acc += it.seg.td;
            if (it.kind == PathItem::Kind::tap && it.component == component) return acc;
        }
    } else {
        for (const auto& it : t.path)
            if (it.kind == PathItem::Kind::segment) acc += it.seg.td;
        for (const auto& s : t.stubs) {
            if (s.component != component) continue;
            for (const auto& it : s.path)
                if (it.kind == PathItem::Kind::segment) acc += it.seg.td;
            return acc;
        }
    }
    throw ConfigError("topology", "component '" + component + "' is not tapped by this net");
}

}  // namespace

std::vector<LaneInfo> lane_map(const Interface& iface) {
    std::vector<LaneInfo> out;
    for (const auto& a : iface.associations) {
        if (!a.reference.is_strobe) continue;
        const NetTopology* strobe_topo = iface.topology.find(a.reference.p);
        if (!strobe_topo) continue;
        for (const auto& dram : chain_taps(*strobe_topo)) {
            const Component* c = iface.find_component(dram);
            LaneInfo li;
            if (a.kind == SignalAssociation::SubjectKind::lane) {
                const auto dot = a.subject.find('.');
                li.bus = a.subject.substr(0, dot);
                li.lane = a.subject.substr(dot + 1);
            } else if (a.kind == SignalAssociation::SubjectKind::bus) {
                li.bus = a.subject;
                li.lane = a.subject;
            } else {
                li.bus = iface.bus_of_net(a.subject)->name;
                li.lane = a.subject;
            }
            li.dram = dram;
            li.position = c ? c->position_on_flyby.value_or(0) : 0;
            li.return_delay = flight_to_tap(*strobe_topo, dram);
            li.strobe = a.reference;
            out.push_back(std::move(li));
        }
    }
    std::sort(out.begin(), out.end(), [](const LaneInfo& x, const LaneInfo& y) {
        return std::tuple(x.position, x.bus, x.lane, x.dram) < std::tuple(y.position, y.bus, y.lane, y.dram);
    });
    return out;
}

std::vector<double> flyby_segment_delays(const Interface& iface, const std::string& net) {
    const NetTopology* t = iface.topology.find(net);
    if (!t) throw ConfigError("topology.nets", "no topology for net '" + net + "'");
    if (t->kind != NetTopology::Kind::chain)
        throw ConfigError("topology.nets." + net, "fly-by timing needs a chain topology");
    std::vector<double> gaps;
    double acc = 0;
    bool past_first_tap = false;
    for (const auto& it : t->path) {
        if (it.kind == PathItem::Kind::segment) acc += it.seg.td;
        if (it.kind != PathItem::Kind::tap) continue;
        if (past_first_tap) gaps.push_back(acc);
        acc = 0;
        past_first_tap = true;
    }
    if (!past_first_tap) throw ConfigError("topology.nets." + net, "no component taps");
    return gaps;
}

}  // namespace ddrsi
