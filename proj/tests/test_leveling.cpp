#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "ddrsi/leveling.hpp"

using namespace ddrsi;

namespace {

Interface load_example(const char* name) {
    return load_interface_file(std::filesystem::path(DDRSI_DATA_DIR) / "examples" / name);
}

}  // namespace

TEST_CASE("fly-by arrivals accumulate gap delays") {
    const FlybySchedule s = flyby_flight_times({0.4e-9, 0.4e-9, 0.4e-9, 0.4e-9});
    REQUIRE_EQ(s.arrival.size(), 5u);
    CHECK_EQ(s.arrival[0], 0.0);
    CHECK_EQ(s.arrival[2], doctest::Approx(0.8e-9));
    CHECK_EQ(s.arrival[4], doctest::Approx(1.6e-9));
    CHECK_EQ(s.span(), doctest::Approx(1.6e-9));

    CHECK_EQ(flyby_flight_times({}).arrival.size(), 1u);  // single tap
    CHECK_EQ(flyby_flight_times({}).span(), 0.0);
    CHECK_THROWS_AS(flyby_flight_times({0.1e-9, -0.1e-9}), ConfigError);
}

TEST_CASE("write leveling quantizes toward the delay-line grid") {
    const double step = 25e-12;
    const FlybySchedule s = flyby_flight_times({0.4e-9, 0.4e-9, 0.4e-9, 0.4e-9});
    const WriteLeveling wl = compute_write_leveling(s, step);
    REQUIRE_EQ(wl.delay.size(), 5u);
    // gaps are exact multiples of the step: residuals vanish
    for (size_t i = 0; i < wl.delay.size(); ++i) {
        CHECK_EQ(wl.delay[i], doctest::Approx(s.arrival[i]).scale(1.0).epsilon(1e-15));
        CHECK_EQ(wl.residual[i], doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    }
    CHECK_EQ(wl.worst_residual(), doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

    SUBCASE("off-grid arrivals round to the nearest step") {
        const WriteLeveling odd = compute_write_leveling(flyby_flight_times({0.26e-9, 0.26e-9}), step);
        CHECK_EQ(odd.delay[1], doctest::Approx(0.25e-9));  // 260 ps -> 10.4 steps -> 10
        CHECK_EQ(odd.residual[1], doctest::Approx(-0.01e-9));
        CHECK_EQ(odd.delay[2], doctest::Approx(0.525e-9));  // 520 ps -> 20.8 -> 21
        CHECK_EQ(odd.residual[2], doctest::Approx(0.005e-9));
        CHECK_LE(odd.worst_residual(), step / 2 + 1e-15);
    }
    SUBCASE("half-step ties round toward the smaller delay") {
        // arrival 12.5 ps = exactly half a step
        const WriteLeveling tie = compute_write_leveling(flyby_flight_times({12.5e-12}), step);
        CHECK_EQ(tie.delay[1], doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
        CHECK_EQ(tie.residual[1], doctest::Approx(-12.5e-12));
    }
    SUBCASE("a zero or negative step is rejected") {
        CHECK_THROWS_AS(compute_write_leveling(s, 0.0), ConfigError);
    }
}

TEST_CASE("tdqss allows a quarter period of skew, boundary inclusive") {
    const double tck = 2.5e-9;
    const TdqssCheck ok = check_tdqss(0.3e-9, tck);
    CHECK_EQ(ok.limit, doctest::Approx(0.625e-9));
    CHECK(ok.pass);
    CHECK_EQ(ok.margin, doctest::Approx(0.325e-9));

    const TdqssCheck edge = check_tdqss(0.625e-9, tck);
    CHECK(edge.pass);
    CHECK_EQ(edge.margin, doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    const TdqssCheck neg_edge = check_tdqss(-0.625e-9, tck);
    CHECK(neg_edge.pass);

    const TdqssCheck bad = check_tdqss(0.626e-9, tck);
    CHECK_FALSE(bad.pass);
    CHECK_LT(bad.margin, 0.0);
}

TEST_CASE("read leveling equalizes total flight with capture delays") {
    const double tck = 2.5e-9;
    const ReadLeveling rl =
        compute_read_leveling({0.4e-9, 0.8e-9}, {0.6e-9, 0.85e-9}, tck, 6);
    REQUIRE_EQ(rl.total.size(), 2u);
    CHECK_EQ(rl.total[0], doctest::Approx(1.0e-9));
    CHECK_EQ(rl.total[1], doctest::Approx(1.65e-9));
    CHECK_EQ(rl.capture[0], doctest::Approx(0.65e-9));
    CHECK_EQ(rl.capture[1], doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK_EQ(rl.spread, doctest::Approx(0.65e-9));
    CHECK_EQ(rl.limit, doctest::Approx(2 * 6 * tck));

    SUBCASE("spread beyond the levelable range throws, at the limit passes") {
        const double limit = 2 * 6 * tck;
        CHECK_NOTHROW(compute_read_leveling({0.0, limit}, {0.0, 0.0}, tck, 6));
        CHECK_THROWS_AS(compute_read_leveling({0.0, limit + 1e-12}, {0.0, 0.0}, tck, 6), ConfigError);
    }
}

TEST_CASE("apply_leveling offsets the base launch per tap") {
    const WriteLeveling wl = compute_write_leveling(flyby_flight_times({0.2e-9, 0.3e-9}), 25e-12);
    const auto launches = apply_leveling(wl, 10e-9);
    REQUIRE_EQ(launches.size(), 3u);
    CHECK_EQ(launches[0], doctest::Approx(10e-9));
    CHECK_EQ(launches[1], doctest::Approx(10.2e-9));
    CHECK_EQ(launches[2], doctest::Approx(10.5e-9));
}

TEST_CASE("whole-interface solution follows the clock fly-by") {
    const Interface i8 = load_example("dimm8.json");
    const LevelingSolution sol = solve_leveling(i8);
    CHECK_EQ(sol.clock_net, "CK");
    REQUIRE_EQ(sol.taps.size(), 8u);
    CHECK_EQ(sol.taps.front(), "dram0");
    CHECK_EQ(sol.taps.back(), "dram7");
    CHECK_EQ(sol.schedule.span(), doctest::Approx(1.4e-9));  // 7 gaps x 0.2 ns
    CHECK(sol.pass);
    // gaps are multiples of the 25 ps step: perfect alignment
    for (const auto& t : sol.tdqss) {
        CHECK(t.pass);
        CHECK_EQ(t.skew, doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    }
    REQUIRE_EQ(sol.lanes.size(), 1u);
    CHECK_EQ(sol.lanes[0], "data0.lane0@dram0");
    CHECK_EQ(sol.read.spread, 0.0);  // single lane

    SUBCASE("a coarser delay line leaves bounded residuals") {
        const LevelingSolution coarse = solve_leveling(i8, 150e-12);
        CHECK_EQ(coarse.write.step, doctest::Approx(150e-12));
        CHECK_LE(coarse.write.worst_residual(), 75e-12 + 1e-15);
        bool some_nonzero = false;
        for (double r : coarse.write.residual) some_nonzero = some_nonzero || std::abs(r) > 1e-15;
        CHECK(some_nonzero);  // 200 ps gaps don't sit on a 150 ps grid
    }
}

TEST_CASE("two-rank solution levels both lanes") {
    const Interface i2 = load_example("dimm2.json");
    const LevelingSolution sol = solve_leveling(i2);
    CHECK_EQ(sol.clock_net, "CK");
    REQUIRE_EQ(sol.taps.size(), 2u);
    CHECK_EQ(sol.schedule.span(), doctest::Approx(0.3e-9));
    REQUIRE_EQ(sol.lanes.size(), 2u);
    CHECK_EQ(sol.lanes[0], "data0.lane0@dram1");
    CHECK_EQ(sol.lanes[1], "data0.lane0@dram2");
    // dram2 sits 0.3 ns later on the command fly-by and 0.25 ns further on
    // the strobe return: total spread 0.55 ns, absorbed by dram1's capture
    CHECK_EQ(sol.read.spread, doctest::Approx(0.55e-9));
    CHECK_EQ(sol.read.capture[0], doctest::Approx(0.55e-9));
    CHECK_EQ(sol.read.capture[1], doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK(sol.pass);
}

TEST_CASE("leveling report serializes the solution") {
    const Interface i8 = load_example("dimm8.json");
    const LevelingSolution sol = solve_leveling(i8);
    const nlohmann::json rep = leveling_report(sol);
    CHECK_EQ(rep.at("clock_net"), "CK");
    CHECK_EQ(rep.at("taps").size(), 8u);
    CHECK_EQ(rep.at("write").at("step_s").get<double>(), doctest::Approx(25e-12));
    CHECK_EQ(rep.at("tdqss").size(), 8u);
    CHECK(rep.at("pass").get<bool>());
    CHECK_EQ(rep.at("read").at("lanes").size(), 1u);
}
