#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ddrsi/netlist.hpp"

using namespace ddrsi;
using nlohmann::json;

namespace {

const std::filesystem::path kExamples = std::filesystem::path(DDRSI_DATA_DIR) / "examples";

Interface dimm8() { return load_interface_file(kExamples / "dimm8.json"); }
Interface dimm2() { return load_interface_file(kExamples / "dimm2.json"); }

json dimm2_doc() {
    std::ifstream in(kExamples / "dimm2.json");
    return json::parse(in, nullptr, true, true);
}

const PinAssignment& pin(const PinRoleMap& m, const std::string& net, const std::string& comp) {
    auto it = m.find({net, comp});
    REQUIRE_MESSAGE(it != m.end(), "missing pin ", net, "@", comp);
    return it->second;
}

}  // namespace

TEST_CASE("examples load with the expected shape") {
    const Interface i8 = dimm8();
    CHECK_EQ(i8.components.size(), 9u);
    CHECK_EQ(i8.controller().name, "ctrl");
    const auto drams = i8.drams();
    REQUIRE_EQ(drams.size(), 8u);
    CHECK_EQ(drams.front()->name, "dram0");
    CHECK_EQ(drams.back()->name, "dram7");
    CHECK_EQ(i8.buses.size(), 4u);
    const Bus* data = i8.find_bus("data0");
    REQUIRE_NE(data, nullptr);
    CHECK_EQ(data->cls, BusClass::data);
    CHECK_EQ(data->nets.size(), 11u);
    REQUIRE(data->lanes.count("lane0"));
    CHECK_EQ(data->lanes.at("lane0").size(), 9u);

    const Interface i2 = dimm2();
    CHECK_EQ(i2.drams().size(), 2u);
    CHECK_EQ(i2.drams()[0]->name, "dram1");  // dimm 0 before dimm 1
    CHECK_EQ(i2.drams()[1]->name, "dram2");
}

TEST_CASE("scenario enumeration covers op x target x corner in stable order") {
    const Interface i8 = dimm8();
    const auto all = enumerate_scenarios(i8);
    REQUIRE_EQ(all.size(), 48u);  // 2 ops x 8 drams x 3 corners
    CHECK_EQ(all.front().key(), "read:dram0:slow");
    CHECK_EQ(all.back().key(), "write:dram7:fast");
    // keys are unique
    std::set<std::string> keys;
    for (const auto& s : all) keys.insert(s.key());
    CHECK_EQ(keys.size(), all.size());

    CHECK_EQ(enumerate_scenarios(i8, Operation::write).size(), 24u);
    CHECK_EQ(enumerate_scenarios(dimm2()).size(), 12u);
}

TEST_CASE("unidirectional fabric is only in scope for writes") {
    const Interface i8 = dimm8();
    const Bus* addr = i8.find_bus("addr");
    REQUIRE_NE(addr, nullptr);
    const Scenario wr{Operation::write, "dram3", Corner::typical};
    const Scenario rd{Operation::read, "dram3", Corner::typical};
    CHECK(scenario_covers_bus(wr, *addr));
    CHECK_FALSE(scenario_covers_bus(rd, *addr));
    const Bus* data = i8.find_bus("data0");
    CHECK(scenario_covers_bus(wr, *data));
    CHECK(scenario_covers_bus(rd, *data));

    CHECK_EQ(nets_in_scope(i8, wr).size(), 13u);  // 9 data + A0 A1 BA0 CKE0
    CHECK_EQ(nets_in_scope(i8, rd).size(), 9u);
    // reference nets never appear as subjects
    for (const auto& n : nets_in_scope(i8, wr)) {
        CHECK_NE(n, "DQS0");
        CHECK_NE(n, "CK");
    }
}

TEST_CASE("model resolution matches the two-rank assignment table") {
    const Interface i2 = dimm2();

    SUBCASE("write to the near rank") {
        const auto m = resolve_models(i2, {Operation::write, "dram1", Corner::typical});
        CHECK_EQ(pin(m, "DQ0", "ctrl").role, PinRole::driver);
        CHECK_EQ(pin(m, "DQ0", "ctrl").model, "DRVR");
        CHECK_EQ(pin(m, "DQ0", "dram1").role, PinRole::receiver);
        CHECK_EQ(pin(m, "DQ0", "dram1").model, "RCVR");
        CHECK_EQ(pin(m, "DQ0", "dram2").role, PinRole::standby);
        CHECK_EQ(pin(m, "DQ0", "dram2").model, "ODT_80");
        CHECK(pin(m, "DQ0", "dram2").odt_on);
    }
    SUBCASE("read from the far rank") {
        const auto m = resolve_models(i2, {Operation::read, "dram2", Corner::typical});
        CHECK_EQ(pin(m, "DQ0", "dram2").role, PinRole::driver);
        CHECK_EQ(pin(m, "DQ0", "dram2").model, "DRVR");
        CHECK_EQ(pin(m, "DQ0", "ctrl").role, PinRole::receiver);
        CHECK_EQ(pin(m, "DQ0", "ctrl").model, "RCVR_240");
        CHECK_EQ(pin(m, "DQ0", "dram1").role, PinRole::standby);
        CHECK_EQ(pin(m, "DQ0", "dram1").model, "ODT_80");
    }
    SUBCASE("policy override swaps the parked rank's standby model") {
        const auto m = resolve_models(i2, {Operation::write, "dram2", Corner::typical});
        CHECK_EQ(pin(m, "DQ0", "dram1").role, PinRole::standby);
        CHECK_EQ(pin(m, "DQ0", "dram1").model, "ODT_40");  // override
        CHECK_EQ(pin(m, "DQ0", "dram2").role, PinRole::receiver);
    }
    SUBCASE("address pins ignore data roles") {
        const auto m = resolve_models(i2, {Operation::write, "dram2", Corner::typical});
        CHECK_EQ(pin(m, "A0", "ctrl").role, PinRole::driver);
        CHECK_EQ(pin(m, "A0", "dram1").role, PinRole::receiver);
        CHECK_EQ(pin(m, "A0", "dram2").role, PinRole::receiver);
    }
}

TEST_CASE("a single-module rank acts together") {
    const Interface i8 = dimm8();
    // every data net lands on dram0; the whole rank reads/writes as one
    const auto wr = resolve_models(i8, {Operation::write, "dram4", Corner::typical});
    CHECK_EQ(pin(wr, "DQ0", "dram0").role, PinRole::receiver);
    const auto rd = resolve_models(i8, {Operation::read, "dram4", Corner::typical});
    CHECK_EQ(pin(rd, "DQ0", "dram0").role, PinRole::driver);
}

TEST_CASE("net pin order follows the route") {
    const Interface i2 = dimm2();
    const auto pins = net_pins(i2, "DQ0");
    REQUIRE_EQ(pins.size(), 3u);
    CHECK_EQ(pins[0], "ctrl");
    CHECK_EQ(pins[1], "dram1");
    CHECK_EQ(pins[2], "dram2");
    CHECK_THROWS_AS(net_pins(i2, "nope"), ConfigError);
}

TEST_CASE("associations resolve subjects, references stay unassociated") {
    const Interface i2 = dimm2();
    const SignalAssociation* a = i2.association_for("DQ2");
    REQUIRE_NE(a, nullptr);
    CHECK(a->reference.is_strobe);
    CHECK_EQ(a->reference.p, "DQS0");
    CHECK_EQ(a->reference.n, "DQS0N");
    const SignalAssociation* addr = i2.association_for("A0");
    REQUIRE_NE(addr, nullptr);
    CHECK_FALSE(addr->reference.is_strobe);
    CHECK_EQ(addr->reference.p, "CK");
    CHECK_EQ(i2.association_for("DQS0"), nullptr);
    CHECK_EQ(i2.association_for("CK"), nullptr);
    CHECK(i2.is_reference_net("DQS0"));
    CHECK(i2.is_reference_net("CKN"));
    CHECK_FALSE(i2.is_reference_net("DQ0"));
}

TEST_CASE("thresholds, unit intervals and derating registry") {
    const Interface i8 = dimm8();
    const Thresholds& thr = i8.thresholds_for(BusClass::data);
    CHECK_EQ(thr.vref, doctest::Approx(0.75));
    CHECK_EQ(thr.vih_ac, doctest::Approx(0.925));
    CHECK_EQ(thr.vih_dc, doctest::Approx(0.85));
    CHECK_EQ(thr.vil_ac, doctest::Approx(0.575));
    CHECK_EQ(thr.vil_dc, doctest::Approx(0.65));
    CHECK_EQ(i8.ui_for(BusClass::data), doctest::Approx(1.25e-9));
    CHECK_EQ(i8.ui_for(BusClass::address_command), doctest::Approx(2.5e-9));
    CHECK_NE(i8.derating_for(BusClass::data, true), nullptr);
    CHECK_EQ(i8.derating_for(BusClass::control, false), nullptr);  // optional
    CHECK_EQ(i8.timing_base.base_tds, doctest::Approx(75e-12));
    CHECK_EQ(i8.timing_base.base_tdh, doctest::Approx(150e-12));
    CHECK_EQ(i8.timing_base.cas_latency, 6);
}

TEST_CASE("lane map walks strobes to their drams") {
    const Interface i2 = dimm2();
    const auto lanes = lane_map(i2);
    REQUIRE_EQ(lanes.size(), 2u);  // one declared lane, strobe taps two ranks
    CHECK_EQ(lanes[0].bus, "data0");
    CHECK_EQ(lanes[0].lane, "lane0");
    CHECK_EQ(lanes[0].dram, "dram1");
    CHECK_EQ(lanes[0].return_delay, doctest::Approx(0.6e-9));
    CHECK_EQ(lanes[1].dram, "dram2");
    CHECK_EQ(lanes[1].return_delay, doctest::Approx(0.85e-9));

    const auto l8 = lane_map(dimm8());
    REQUIRE_EQ(l8.size(), 1u);
    CHECK_EQ(l8[0].dram, "dram0");
    CHECK_EQ(l8[0].strobe.p, "DQS0");
}

TEST_CASE("fly-by gap delays exclude the entry run") {
    const Interface i8 = dimm8();
    const auto gaps = flyby_segment_delays(i8, "A0");
    REQUIRE_EQ(gaps.size(), 7u);  // 8 taps -> 7 gaps
    for (double g : gaps) CHECK_EQ(g, doctest::Approx(0.2e-9));
}

TEST_CASE("interface json round-trips") {
    const Interface i2 = dimm2();
    const json saved = save_interface(i2);
    const Interface again = load_interface(saved, kExamples);
    CHECK_EQ(again.name, i2.name);
    CHECK_EQ(enumerate_scenarios(again).size(), enumerate_scenarios(i2).size());
    const Scenario sc{Operation::write, "dram2", Corner::slow};
    const auto m1 = resolve_models(i2, sc);
    const auto m2 = resolve_models(again, sc);
    REQUIRE_EQ(m1.size(), m2.size());
    for (const auto& [k, v] : m1) {
        const PinAssignment& w = m2.at(k);
        CHECK_EQ(v.role, w.role);
        CHECK_EQ(v.model, w.model);
        CHECK_EQ(v.odt_on, w.odt_on);
    }
    CHECK_EQ(nets_in_scope(again, sc), nets_in_scope(i2, sc));
}

TEST_CASE("loader rejects inconsistent documents") {
    SUBCASE("unknown top-level key") {
        json doc = dimm2_doc();
        doc["extra"] = 1;
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("tap references an unknown component") {
        json doc = dimm2_doc();
        doc["topology"]["nets"]["DQ0"]["path"][1]["tap"] = "dram9";
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("bus lists a net without topology") {
        json doc = dimm2_doc();
        doc["buses"][0]["nets"].push_back("DQ9");
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("association references an unknown strobe") {
        json doc = dimm2_doc();
        doc["associations"][0]["strobe"] = {"DQS9", "DQS9N"};
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("duplicate component name") {
        json doc = dimm2_doc();
        doc["components"][2]["name"] = "dram1";
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("bad bus class") {
        json doc = dimm2_doc();
        doc["buses"][0]["class"] = "dram";
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("negative segment delay") {
        json doc = dimm2_doc();
        doc["topology"]["nets"]["DQ0"]["path"][0]["segment"]["td"] = -1e-9;
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("model assignment names a missing buffer model") {
        json doc = dimm2_doc();
        doc["components"][1]["models"]["default"]["receiver"] = "NOPE";
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("coupling between unknown nets") {
        json doc = dimm2_doc();
        doc["topology"]["coupling"] = {{{"nets", {"DQ0", "DQ9"}}, {"k", 0.05}}};
        CHECK_THROWS_AS(load_interface(doc, kExamples), ConfigError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_interface_file("/nonexistent/iface.json"), ConfigError);
    }
}

TEST_CASE("scenario keys are op:target:corner") {
    const Scenario s{Operation::write, "dram3", Corner::fast};
    CHECK_EQ(s.key(), "write:dram3:fast");
    CHECK_EQ(Scenario{Operation::read, "dram0", Corner::slow}.key(), "read:dram0:slow");
}
