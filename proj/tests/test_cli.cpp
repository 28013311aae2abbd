#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

const fs::path kData = DDRSI_DATA_DIR;
const fs::path kTmp = fs::temp_directory_path();

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    const fs::path outfile = kTmp / "ddrsi_cli_out.txt";
    const std::string cmd = std::string(DDRSI_CLI_PATH) + " " + args + " > " + outfile.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
    std::ifstream in(outfile);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string example(const char* name) { return (kData / "examples" / name).string(); }

json slurp_json(const fs::path& file) {
    std::ifstream in(file);
    REQUIRE(in.good());
    return json::parse(in);
}

}  // namespace

TEST_CASE("version and help exit cleanly") {
    const RunResult v = run_cli("--version");
    CHECK_EQ(v.code, 0);
    CHECK_NE(v.out.find("ddrsi"), std::string::npos);
    CHECK_EQ(run_cli("--help").code, 0);
    CHECK_EQ(run_cli("campaign --help").code, 0);
}

TEST_CASE("usage errors exit 64") {
    CHECK_EQ(run_cli("frobnicate").code, 64);
    CHECK_EQ(run_cli("measure " + example("dimm2.json")).code, 64);  // --net required
    CHECK_EQ(run_cli("validate").code, 64);                          // config required
}

TEST_CASE("validate accepts the examples and rejects garbage with 65") {
    const RunResult ok = run_cli("validate " + example("dimm8.json"));
    CHECK_EQ(ok.code, 0);
    CHECK_NE(ok.out.find("48"), std::string::npos);  // scenario count in summary

    const fs::path bad = kTmp / "ddrsi_bad_iface.json";
    std::ofstream(bad) << "{ \"name\": \"x\" }";
    CHECK_EQ(run_cli("validate " + bad.string()).code, 65);
    std::ofstream(bad) << "{ not json";
    CHECK_EQ(run_cli("validate " + bad.string()).code, 65);
    fs::remove(bad);

    CHECK_EQ(run_cli("validate /nonexistent.json").code, 65);
}

TEST_CASE("level prints a passing plan for the fly-by examples") {
    const RunResult r = run_cli("level " + example("dimm8.json"));
    CHECK_EQ(r.code, 0);
    CHECK_NE(r.out.find("PASS"), std::string::npos);

    const fs::path out = kTmp / "ddrsi_level.json";
    CHECK_EQ(run_cli("level " + example("dimm2.json") + " --json " + out.string()).code, 0);
    const json rep = slurp_json(out);
    CHECK_EQ(rep.at("clock_net"), "CK");
    CHECK(rep.at("pass").get<bool>());
    fs::remove(out);
}

TEST_CASE("simulate writes a waveform csv") {
    const fs::path out = kTmp / "ddrsi_sim.csv";
    const RunResult r =
        run_cli("simulate " + example("dimm2.json") + " --net DQ1 --scenario read:dram2:typical --out " + out.string());
    CHECK_EQ(r.code, 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    CHECK_EQ(header.rfind("time_s,", 0), 0u);
    CHECK_NE(header.find("DQ1@ctrl"), std::string::npos);
    in.close();
    fs::remove(out);
}

TEST_CASE("measure reports margins and honors the json sink") {
    const fs::path out = kTmp / "ddrsi_meas.json";
    const RunResult r = run_cli("measure " + example("dimm2.json") +
                                " --net DQ0 --scenario read:dram2:typical --json " + out.string());
    CHECK_EQ(r.code, 0);
    CHECK_NE(r.out.find("worst margins"), std::string::npos);
    CHECK_NE(r.out.find("PASS"), std::string::npos);
    const json rep = slurp_json(out);
    CHECK_EQ(rep.at("net"), "DQ0");
    CHECK_EQ(rep.at("scenario"), "read:dram2:typical");
    CHECK_EQ(rep.at("measured_at"), "ctrl");
    CHECK(rep.at("pass").get<bool>());
    CHECK(rep.contains("eye"));
    CHECK(rep.contains("events"));
    fs::remove(out);

    // unknown net inside a valid config is a config error
    CHECK_EQ(run_cli("measure " + example("dimm2.json") + " --net DQ9").code, 65);
    // malformed scenario key too
    CHECK_EQ(run_cli("measure " + example("dimm2.json") + " --net DQ0 --scenario bogus").code, 65);
}

TEST_CASE("measure writes eye artifacts") {
    const fs::path svg = kTmp / "ddrsi_eye.svg";
    const fs::path csv = kTmp / "ddrsi_eye.csv";
    const RunResult r = run_cli("measure " + example("dimm2.json") + " --net DQ0 --eye-svg " + svg.string() +
                                " --eye-csv " + csv.string());
    CHECK_EQ(r.code, 0);
    std::ifstream svg_in(svg);
    std::string first;
    std::getline(svg_in, first);
    CHECK_NE(first.find("<svg"), std::string::npos);
    svg_in.close();
    CHECK(fs::file_size(csv) > 0);
    fs::remove(svg);
    fs::remove(csv);
}

TEST_CASE("campaign exit codes track the rollup and reports are stable") {
    const fs::path rep1 = kTmp / "ddrsi_c1.json";
    const fs::path rep2 = kTmp / "ddrsi_c2.json";
    const std::string base =
        "campaign " + example("dimm2.json") + " --corner typical --net DQ0 --net DQ2 ";
    CHECK_EQ(run_cli(base + "--jobs 1 --json " + rep1.string()).code, 0);
    CHECK_EQ(run_cli(base + "--jobs 3 --json " + rep2.string()).code, 0);

    std::ifstream a(rep1), b(rep2);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK_EQ(sa.str(), sb.str());  // byte-identical across worker counts
    const json rep = json::parse(sa.str());
    CHECK_EQ(rep.at("summary").at("total").get<int>(), 8);
    CHECK_EQ(rep.at("summary").at("error").get<int>(), 0);
    fs::remove(rep1);
    fs::remove(rep2);

    // the noisy fast-corner writes surface as exit 1, not an error
    const RunResult noisy =
        run_cli("campaign " + example("dimm8.json") + " --op write --corner fast --net DQ0");
    CHECK_EQ(noisy.code, 1);
    CHECK_NE(noisy.out.find("FAIL"), std::string::npos);
}

TEST_CASE("campaign csv export matches the job count") {
    const fs::path csv = kTmp / "ddrsi_campaign_cli.csv";
    const RunResult r = run_cli("campaign " + example("dimm2.json") +
                                " --op read --corner slow --net DQ3 --csv " + csv.string());
    CHECK_EQ(r.code, 0);
    std::ifstream in(csv);
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK_EQ(lines, 3);  // header + 2 read scenarios
    in.close();
    fs::remove(csv);
}

TEST_CASE("explore runs the shipped sweep spec") {
    const fs::path out = kTmp / "ddrsi_sweep_cli.json";
    const RunResult r =
        run_cli("explore " + example("sweep_dimm8.json") + " --json " + out.string());
    CHECK_EQ(r.code, 0);
    CHECK_NE(r.out.find("best point"), std::string::npos);
    const json rep = slurp_json(out);
    CHECK_EQ(rep.at("points").size(), 9u);
    CHECK(rep.at("best").is_object());
    fs::remove(out);

    const fs::path bad = kTmp / "ddrsi_bad_sweep.json";
    std::ofstream(bad) << "{ \"interface\": \"/nonexistent.json\", \"axes\": {} }";
    CHECK_EQ(run_cli("explore " + bad.string()).code, 65);
    fs::remove(bad);
}
