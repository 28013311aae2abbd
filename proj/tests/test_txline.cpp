#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "ddrsi/netlist.hpp"
#include "ddrsi/txline.hpp"
#include "support/lattice.hpp"

using namespace ddrsi;

namespace {

const BufferLibrary& sstl15() {
    static BufferLibrary lib = load_buffer_library_file(std::filesystem::path(DDRSI_DATA_DIR) / "buffers/sstl15.json");
    return lib;
}

Interface load_example(const char* name) {
    return load_interface_file(std::filesystem::path(DDRSI_DATA_DIR) / "examples" / name);
}

// Max |sim - oracle| over every recorded sample of both line ends.
double max_oracle_error(const lattice::StepLineCase& lc, double dt, double t_stop) {
    Circuit c;
    const int a = c.add_node("a");
    const int b = c.add_node("b");
    c.add_line(a, b, lc.z0, lc.td);
    c.add_step(a, lc.rs, 0.0, lc.v1, lc.t0);
    if (!std::isinf(lc.rt)) c.add_rail_res(b, lc.rt, 0.0);
    const WaveformSet ws = simulate(c, dt, t_stop, {"a", "b"});
    const Eigen::VectorXd va = ws.trace("a"), vb = ws.trace("b");
    double err = 0;
    for (Eigen::Index n = 0; n < ws.data.rows(); ++n) {
        const double t = static_cast<double>(n) * dt;
        err = std::max(err, std::abs(va[n] - lattice::near_voltage(lc, t)));
        err = std::max(err, std::abs(vb[n] - lattice::far_voltage(lc, t)));
    }
    return err;
}

}  // namespace

TEST_CASE("randomized source/line/termination circuits match the bounce-diagram oracle") {
    std::mt19937 rng(12345);
    std::uniform_int_distribution<int> pick_m(5, 40);
    std::uniform_real_distribution<double> pick_rs(5.0, 300.0);
    std::uniform_real_distribution<double> pick_z0(20.0, 150.0);
    std::uniform_real_distribution<double> pick_rt(5.0, 500.0);
    std::uniform_real_distribution<double> pick_v(0.5, 2.0);
    std::uniform_int_distribution<int> pick_open(0, 2);

    const double dt = 5e-11;
    for (int i = 0; i < 24; ++i) {
        lattice::StepLineCase lc;
        const int m = pick_m(rng);
        lc.td = m * dt;  // exact multiple: no quantization disagreement
        lc.rs = pick_rs(rng);
        lc.z0 = pick_z0(rng);
        lc.rt = pick_open(rng) == 0 ? lattice::kOpen : pick_rt(rng);
        lc.v1 = pick_v(rng);
        lc.t0 = 8 * dt;
        const double t_stop = lc.t0 + 24 * lc.td;
        CAPTURE(i);
        CAPTURE(lc.rs);
        CAPTURE(lc.z0);
        CAPTURE(lc.rt);
        CAPTURE(m);
        CHECK_LT(max_oracle_error(lc, dt, t_stop), 1e-6);
    }
}

TEST_CASE("open-ended line reproduces the classic reflection staircase") {
    // 25 ohm source, 50 ohm line, 0.8 ns delay, far end open, 1.5 V step:
    // the far end steps 2.000 -> 1.333 -> ... -> 1.5 V.
    Circuit c;
    const int a = c.add_node("src");
    const int b = c.add_node("stub");
    c.add_line(a, b, 50.0, 0.8e-9);
    c.add_step(a, 25.0, 0.0, 1.5, 0.0);
    const double dt = 1.25e-11;  // 64 steps per transit
    const WaveformSet ws = simulate(c, dt, 30e-9, {"stub"});
    const Eigen::VectorXd vb = ws.trace("stub");
    auto at = [&](double t) { return vb[static_cast<Eigen::Index>(std::llround(t / dt))]; };
    CHECK_EQ(at(1e-9), doctest::Approx(2.0).epsilon(1e-9));
    CHECK_EQ(at(3e-9), doctest::Approx(4.0 / 3.0).epsilon(1e-9));
    CHECK_EQ(vb[vb.size() - 1], doctest::Approx(1.5).epsilon(1e-3));
}

TEST_CASE("matched rail termination settles to the resistive-divider bias point") {
    Circuit c;
    const int a = c.add_node("a");
    const int b = c.add_node("b");
    c.add_line(a, b, 60.0, 0.5e-9);
    c.add_step(a, 40.0, 0.0, 1.2, 0.0);
    c.add_rail_res(b, 60.0, 0.75);  // matched: settles after one transit
    const WaveformSet ws = simulate(c, 2.5e-11, 10e-9, {"a", "b"});
    // DC: (1.2/40 + 0.75/60) / (1/40 + 1/60)
    const double vdc = (1.2 / 40.0 + 0.75 / 60.0) / (1.0 / 40.0 + 1.0 / 60.0);
    CHECK_EQ(ws.trace("a")[ws.data.rows() - 1], doctest::Approx(vdc).epsilon(1e-9));
    CHECK_EQ(ws.trace("b")[ws.data.rows() - 1], doctest::Approx(vdc).epsilon(1e-9));
}

TEST_CASE("prbs sequences have maximal period and balanced ones count") {
    for (int order : {7, 9, 11, 15}) {
        CAPTURE(order);
        const int period = (1 << order) - 1;
        const auto bits = prbs_bits(order, 0xDEADBEEF, 2 * period);
        REQUIRE_EQ(static_cast<int>(bits.size()), 2 * period);
        int ones = 0;
        bool repeats = true;
        for (int k = 0; k < period; ++k) {
            ones += bits[static_cast<size_t>(k)];
            repeats = repeats && bits[static_cast<size_t>(k)] == bits[static_cast<size_t>(k + period)];
        }
        CHECK(repeats);                              // full period
        CHECK_EQ(ones, 1 << (order - 1));            // maximal-length balance
        // no shorter period (check a few proper divisors-ish shifts)
        for (int shift : {1, 2, 3, period / 2}) {
            bool same = true;
            for (int k = 0; k < period && same; ++k)
                same = bits[static_cast<size_t>(k)] == bits[static_cast<size_t>((k + shift) % period)];
            CHECK_FALSE(same);
        }
    }
}

TEST_CASE("prbs seeds select different phases and seed zero is usable") {
    const auto b1 = prbs_bits(7, 1, 127);
    const auto b2 = prbs_bits(7, 999, 127);
    CHECK(b1 != b2);
    const auto b0 = prbs_bits(7, 0, 127);
    REQUIRE_EQ(b0.size(), 127u);
    CHECK_EQ(std::accumulate(b0.begin(), b0.end(), 0), 64);
}

TEST_CASE("clock stimulus toggles every half period starting at launch") {
    const Stimulus s = clock_stimulus(1e-9, 5e-9, false);
    CHECK_EQ(s.level_before_launch(), 0);
    const auto e = s.edges(9.5e-9);
    REQUIRE_EQ(e.size(), 5u);  // 5, 6, 7, 8, 9 ns
    for (size_t k = 0; k < e.size(); ++k) {
        CHECK_EQ(e[k].first, doctest::Approx(5e-9 + k * 1e-9));
        CHECK_EQ(e[k].second, k % 2 == 0 ? EdgeDir::rising : EdgeDir::falling);
    }
    const Stimulus inv = clock_stimulus(1e-9, 5e-9, true);
    CHECK_EQ(inv.level_before_launch(), 1);
    CHECK_EQ(inv.edges(9.5e-9)[0].second, EdgeDir::falling);
}

TEST_CASE("pattern stimulus emits edges at value changes and wraps cyclically") {
    const Stimulus s = pattern_stimulus({1, 1, 0}, 1e-9, 2e-9);
    CHECK_EQ(s.level_before_launch(), 1);
    // pattern 1,1,0,1,1,0,... -> changes at k = 2, 3, 5, 6, 8, ...
    const auto e = s.edges(11e-9);
    REQUIRE_GE(e.size(), 4u);
    CHECK_EQ(e[0].first, doctest::Approx(2e-9 + 2e-9));
    CHECK_EQ(e[0].second, EdgeDir::falling);
    CHECK_EQ(e[1].first, doctest::Approx(2e-9 + 3e-9));
    CHECK_EQ(e[1].second, EdgeDir::rising);
    CHECK_EQ(e[2].first, doctest::Approx(2e-9 + 5e-9));
    CHECK_EQ(e[2].second, EdgeDir::falling);
    // directions always alternate (the underlying waveform is binary)
    for (size_t k = 1; k < e.size(); ++k) CHECK_NE(e[k].second, e[k - 1].second);
}

TEST_CASE("prbs stimulus edge times sit on bit boundaries after launch") {
    const Stimulus s = prbs_stimulus(7, 42, 1.25e-9, 10e-9);
    const auto e = s.edges(80e-9);
    REQUIRE_FALSE(e.empty());
    for (const auto& [t, dir] : e) {
        (void)dir;
        CHECK_GE(t, 10e-9 + 1.25e-9 - 1e-15);
        const double k = (t - 10e-9) / 1.25e-9;
        CHECK_EQ(k, doctest::Approx(std::round(k)).epsilon(1e-12));
    }
    for (size_t k = 1; k < e.size(); ++k) CHECK_NE(e[k].second, e[k - 1].second);
}

TEST_CASE("nonlinear driver swings an unloaded line between the rails") {
    const BufferModel* drv = sstl15().find_model("DRVR");
    REQUIRE_NE(drv, nullptr);
    CornerScales scales;
    Circuit c;
    const int pad = c.add_node("pad");
    const int far = c.add_node("far");
    c.add_line(pad, far, 50.0, 1e-9);
    c.add_driver(pad, drv, scales.typical, pattern_stimulus({0, 1}, 10e-9, 5e-9));
    const WaveformSet ws = simulate(c, 2.5e-11, 34.9e-9, {"pad", "far"});
    const Eigen::VectorXd vf = ws.trace("far");
    auto at = [&](double t) { return vf[static_cast<Eigen::Index>(std::llround(t / 2.5e-11))]; };
    CHECK_EQ(at(14.5e-9), doctest::Approx(0.0).scale(1.0).epsilon(5e-3));   // settled low
    CHECK_EQ(at(24.5e-9), doctest::Approx(1.5).epsilon(5e-3));              // settled high
    CHECK_LT(vf.minCoeff(), 0.05);
    CHECK_GT(vf.maxCoeff(), 1.45);
}

TEST_CASE("degenerate coupled pair is lowered to independent lines") {
    auto build = [](bool coupled, double z0e, double z0o) {
        Circuit c;
        const int a1 = c.add_node("a1"), b1 = c.add_node("b1");
        const int a2 = c.add_node("a2"), b2 = c.add_node("b2");
        if (coupled)
            c.add_coupled(a1, b1, a2, b2, z0e, z0o, 1e-9, 1e-9);
        else {
            c.add_line(a1, b1, 50.0, 1e-9);
            c.add_line(a2, b2, 50.0, 1e-9);
        }
        c.add_step(a1, 40.0, 0.0, 1.5, 2e-9);  // aggressor
        c.add_step(a2, 40.0, 0.0, 0.0, 0.0);   // quiet victim
        c.add_rail_res(b1, 50.0, 0.0);
        c.add_rail_res(b2, 50.0, 0.0);
        return simulate(c, 5e-11, 20e-9, {"a1", "b1", "a2", "b2"});
    };

    SUBCASE("equal even/odd impedance gives a bit-exact match and a silent victim") {
        const WaveformSet plain = build(false, 0, 0);
        const WaveformSet deg = build(true, 50.0, 50.0);
        REQUIRE_EQ(plain.data.rows(), deg.data.rows());
        CHECK(plain.data == deg.data);  // bitwise identical
        CHECK_EQ(deg.trace("b2").cwiseAbs().maxCoeff(), 0.0);
    }
    SUBCASE("split even/odd impedance couples noise onto the quiet victim") {
        const WaveformSet cpl = build(true, 55.0, 45.0);
        CHECK_GT(cpl.trace("b2").cwiseAbs().maxCoeff(), 1e-3);
        CHECK_GT(cpl.trace("b1").cwiseAbs().maxCoeff(), 0.5);  // aggressor still switches
    }
}

TEST_CASE("coupled pair count reflects degenerate lowering") {
    Circuit c;
    const int a1 = c.add_node("a1"), b1 = c.add_node("b1");
    const int a2 = c.add_node("a2"), b2 = c.add_node("b2");
    c.add_coupled(a1, b1, a2, b2, 50.0, 50.0, 1e-9, 1e-9);
    CHECK_EQ(c.coupled.size(), 0u);
    CHECK_EQ(c.lines.size(), 2u);
    c.add_coupled(a1, b1, a2, b2, 55.0, 45.0, 1e-9, 1e-9);
    CHECK_EQ(c.coupled.size(), 1u);
}

TEST_CASE("waveform csv round-trips names and samples") {
    Circuit c;
    const int a = c.add_node("a");
    const int b = c.add_node("n.b@x");  // punctuation must survive
    c.add_line(a, b, 50.0, 0.5e-9);
    c.add_step(a, 30.0, 0.0, 1.0, 0.0);
    c.add_rail_res(b, 75.0, 0.75);
    const WaveformSet ws = simulate(c, 2.5e-11, 5e-9, {"a", "n.b@x"});
    const auto file = std::filesystem::temp_directory_path() / "ddrsi_txline_roundtrip.csv";
    save_waveforms_csv(ws, file);
    const WaveformSet rt = load_waveforms_csv(file);
    std::filesystem::remove(file);
    REQUIRE_EQ(rt.names, ws.names);
    REQUIRE_EQ(rt.data.rows(), ws.data.rows());
    CHECK_EQ(rt.dt, doctest::Approx(ws.dt).epsilon(1e-9));
    CHECK_LT((rt.data - ws.data).cwiseAbs().maxCoeff(), 1e-8);
}

TEST_CASE("coarse delay quantization is reported, clean multiples are silent") {
    Circuit c;
    const int a = c.add_node("a"), b = c.add_node("b");
    c.add_line(a, b, 50.0, 1.03e-9);  // 10.3 steps at dt = 0.1 ns
    c.add_step(a, 50.0, 0.0, 1.0, 0.0);
    c.add_rail_res(b, 50.0, 0.0);
    CHECK_FALSE(simulate(c, 1e-10, 5e-9).warnings.empty());

    Circuit c2;
    const int a2 = c2.add_node("a"), b2 = c2.add_node("b");
    c2.add_line(a2, b2, 50.0, 1.0e-9);
    c2.add_step(a2, 50.0, 0.0, 1.0, 0.0);
    c2.add_rail_res(b2, 50.0, 0.0);
    CHECK(simulate(c2, 1e-10, 5e-9).warnings.empty());
}

TEST_CASE("element validation rejects broken values") {
    Circuit c;
    const int a = c.add_node("a"), b = c.add_node("b");
    CHECK_THROWS_AS(c.add_res(a, b, 0.0), ConfigError);
    CHECK_THROWS_AS(c.add_line(a, b, 50.0, 0.0), ConfigError);
    CHECK_THROWS_AS(c.add_line(a, b, -1.0, 1e-9), ConfigError);
    CHECK_THROWS_AS(c.add_step(a, 0.0, 0.0, 1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(c.add_cap(a, -1e-12), ConfigError);
    CHECK_THROWS_AS(c.add_node("a"), ConfigError);  // duplicate name
}

TEST_CASE("a node without any conductance fails the solve") {
    Circuit c;
    c.add_node("float");
    c.add_cap(c.node("float"), 0.0);  // c = 0 is dropped: node stays bare
    CHECK_THROWS_AS(simulate(c, 1e-10, 1e-9), SolveError);
}

TEST_CASE("simulate rejects unknown record names") {
    Circuit c;
    const int a = c.add_node("a");
    c.add_rail_res(a, 50.0, 0.0);
    CHECK_THROWS_AS(simulate(c, 1e-10, 1e-9, {"nope"}), ConfigError);
}

TEST_CASE("build_net_sim assembles subject, references and roles for a read") {
    const Interface iface = load_example("dimm2.json");
    const Scenario sc{Operation::read, "dram2", Corner::typical};
    const NetSimSetup setup = build_net_sim(iface, sc, "DQ0", SimMode::reflection);

    CHECK_EQ(setup.subject, "DQ0");
    CHECK_EQ(setup.bus_class, BusClass::data);
    CHECK_EQ(setup.latch, LatchEdges::both);
    CHECK_EQ(setup.bit_time, doctest::Approx(1.25e-9));
    // subject + strobe pair pads all present
    for (const char* n : {"DQ0@ctrl", "DQ0@dram1", "DQ0@dram2", "DQS0@ctrl", "DQS0N@dram2"})
        CHECK_GE(setup.circuit.node(n), 0);
    // read: dram2 drives subject and both strobe legs
    std::set<int> driven;
    for (const auto& d : setup.circuit.drivers) driven.insert(d.node);
    CHECK(driven.count(setup.circuit.node("DQ0@dram2")));
    CHECK(driven.count(setup.circuit.node("DQS0@dram2")));
    CHECK(driven.count(setup.circuit.node("DQS0N@dram2")));
    CHECK_FALSE(driven.count(setup.circuit.node("DQ0@ctrl")));
    // measured pads are sorted and exclude the driver component
    CHECK(std::is_sorted(setup.receivers.begin(), setup.receivers.end()));
    CHECK(std::find(setup.receivers.begin(), setup.receivers.end(), "dram2") == setup.receivers.end());
}

TEST_CASE("build_net_sim crosstalk mode pulls in the declared partner") {
    const Interface iface = load_example("dimm8.json");
    const Scenario sc{Operation::write, "dram0", Corner::typical};
    const NetSimSetup refl = build_net_sim(iface, sc, "DQ0", SimMode::reflection);
    CHECK_EQ(refl.circuit.coupled.size(), 0u);
    CHECK_LT(refl.circuit.node("DQ1@ctrl"), 0);

    const NetSimSetup xt = build_net_sim(iface, sc, "DQ0", SimMode::crosstalk);
    CHECK_EQ(xt.circuit.coupled.size(), 1u);
    CHECK_GE(xt.circuit.node("DQ1@ctrl"), 0);
    CHECK_GE(xt.circuit.node("DQ1@dram0"), 0);
}

TEST_CASE("build_net_sim rejects a subject outside the scenario's scope") {
    const Interface iface = load_example("dimm8.json");
    const Scenario sc{Operation::read, "dram1", Corner::typical};
    // the address fabric only carries traffic on writes
    CHECK_THROWS_AS(build_net_sim(iface, sc, "A0", SimMode::reflection), ConfigError);
    CHECK_NOTHROW(build_net_sim(iface, Scenario{Operation::write, "dram1", Corner::typical}, "A0", SimMode::reflection));
}

TEST_CASE("identical seeds and plans give identical stimulus edge trains") {
    const Interface iface = load_example("dimm8.json");
    const Scenario sc{Operation::write, "dram3", Corner::fast};
    const NetSimSetup s1 = build_net_sim(iface, sc, "DQ5", SimMode::reflection);
    const NetSimSetup s2 = build_net_sim(iface, sc, "DQ5", SimMode::reflection);
    CHECK_EQ(s1.seed, s2.seed);
    CHECK_EQ(s1.dt, s2.dt);
    CHECK_EQ(s1.t_stop, s2.t_stop);
    const Scenario other{Operation::write, "dram3", Corner::slow};
    const NetSimSetup s3 = build_net_sim(iface, other, "DQ5", SimMode::reflection);
    CHECK_NE(s1.seed, s3.seed);  // scenario key feeds the seed
}
