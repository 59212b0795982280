#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbf_shield/config.hpp"
#include "cbf_shield/run_io.hpp"

using namespace cbf;
namespace fs = std::filesystem;

namespace {

#ifndef CLI_BIN
#define CLI_BIN "cbf-shield"
#endif

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int run_cli(const std::string& args) {
    const int rc = std::system((std::string(CLI_BIN) + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("flat config parsing") {
    const FlatConfig cfg = FlatConfig::parse_text(
        "# comment line\n"
        "inputs.u_max = 0.5\n"
        "scenario.kind = sphere   # trailing comment\n"
        "\n"
        "gains.k1 = -0.2\n",
        "test");
    CHECK(cfg.get("inputs.u_max") == "0.5");
    CHECK(cfg.get("scenario.kind") == "sphere");
    CHECK(cfg.get("gains.k1") == "-0.2");
}

TEST_CASE("config parse errors carry location and key") {
    CHECK_THROWS_WITH_AS(FlatConfig::parse_text("inputs.umax = 1\n", "cfg"),
                         doctest::Contains("cfg:1"), ConfigError);
    CHECK_THROWS_WITH_AS(FlatConfig::parse_text("inputs.umax = 1\n", "cfg"),
                         doctest::Contains("inputs.umax"), ConfigError);
    CHECK_THROWS_WITH_AS(FlatConfig::parse_text("just some words\n", "cfg"),
                         doctest::Contains("key = value"), ConfigError);
    CHECK_THROWS_AS(FlatConfig::parse_text("= 3\n", "cfg"), ConfigError);
}

TEST_CASE("typed getters report the offending key") {
    FlatConfig cfg = default_config("sphere");
    cfg.set("inputs.u_max", "fast");
    CHECK_THROWS_WITH_AS(build_scenario(cfg), doctest::Contains("inputs.u_max"), ConfigError);
    cfg = default_config("sphere");
    cfg.set("obstacle.center", "1 2");
    CHECK_THROWS_WITH_AS(build_scenario(cfg), doctest::Contains("obstacle.center"), ConfigError);
    cfg = default_config("sphere");
    cfg.set("sim.substeps", "2.5");
    CHECK_THROWS_WITH_AS(build_scenario(cfg), doctest::Contains("sim.substeps"), ConfigError);
}

TEST_CASE("defaults build and serialization round-trips") {
    for (const char* kind : {"sphere", "pointcloud"}) {
        const FlatConfig cfg = default_config(kind);
        CHECK_NOTHROW(build_scenario(cfg));
        const std::string text = cfg.serialize();
        const FlatConfig reparsed = FlatConfig::parse_text(text, "roundtrip");
        CHECK(reparsed.serialize() == text);
        CHECK(reparsed.kv == cfg.kv);
    }
}

TEST_CASE("overrides validate keys") {
    FlatConfig cfg = default_config("sphere");
    cfg.apply_override("inputs.u_max=0.3");
    CHECK(cfg.get("inputs.u_max") == "0.3");
    CHECK_THROWS_AS(cfg.apply_override("nonsense.key=1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("no_equals"), ConfigError);
}

TEST_CASE("trajectory csv has the pinned column layout") {
    TrajectoryLog log;
    StepRecord rec;
    rec.t = 0.5;
    rec.x.r = Vec3(1, 2, 3);
    rec.x.v = Vec3(-1, 0.25, 0);
    rec.u = Vec3(0.1, -0.2, 0.0);
    rec.h_max = -4.0;
    rec.barrier_max = -3.5;
    rec.qp_status = QpStatus::Optimal;
    rec.n_active_rows = 2;
    log.steps = {rec};
    const std::string csv = trajectory_csv(log);
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "t,rx,ry,rz,vx,vy,vz,ux,uy,uz,h_max,H_max,qp_status,n_active_rows");
    CHECK(row == "0.5,1,2,3,-1,0.25,0,0.10000000000000001,-0.20000000000000001,0,-4,-3.5,optimal,2");
}

TEST_CASE("cli run writes outputs and exits by outcome") {
    TempDir dir("cbf_cli_run");
    SUBCASE("constant-authority barrier completes") {
        const int rc = run_cli("run --scenario sphere --barrier hprime --out " + dir.str());
        CHECK(rc == 0);
        CHECK(fs::exists(dir.path / "trajectory.csv"));
        CHECK(fs::exists(dir.path / "summary.json"));
        CHECK(fs::exists(dir.path / "manifest.json"));
        CHECK(fs::exists(dir.path / "effective.cfg"));
        const std::string csv = read_file((dir.path / "trajectory.csv").string());
        CHECK(csv.rfind("t,rx,ry,rz,vx,vy,vz,ux,uy,uz,h_max,H_max,qp_status,n_active_rows\n",
                        0) == 0);
    }
    SUBCASE("comparison barrier reports the infeasibility halt") {
        CHECK(run_cli("run --scenario sphere --barrier ho --out " + dir.str()) == 2);
    }
    SUBCASE("missing config file is an error") {
        CHECK(run_cli("run --config /nonexistent/path.cfg --out " + dir.str()) == 1);
    }
    SUBCASE("bad override is an error") {
        CHECK(run_cli("run --scenario sphere --set bogus=1 --out " + dir.str()) == 1);
    }
}

TEST_CASE("cli check classifies the initial state") {
    TempDir dir("cbf_cli_check");
    CHECK(run_cli("check --scenario sphere --barrier hprime") == 0);
    // hot approach just outside the keep-out: outside the sublevel set
    CHECK(run_cli("check --scenario sphere --barrier hprime --set init.r='7 0 0' "
                  "--set init.v='-1.5 0 0'") == 3);
    // zero authority: no valid dissipation rate
    CHECK(run_cli("check --scenario sphere --barrier hprime --set inputs.u_max=0") == 1);
    CHECK(run_cli("check --scenario sphere --barrier h_flow") == 0);
    CHECK(run_cli("check --scenario sphere --barrier ho") == 0);
}

TEST_CASE("cli runs are byte-identical across repeats") {
    TempDir a("cbf_cli_det_a"), b("cbf_cli_det_b");
    REQUIRE(run_cli("run --scenario sphere --barrier hprime --seed 7 --out " + a.str()) == 0);
    REQUIRE(run_cli("run --scenario sphere --barrier hprime --seed 7 --out " + b.str()) == 0);
    CHECK(read_file((a.path / "trajectory.csv").string()) ==
          read_file((b.path / "trajectory.csv").string()));
    CHECK(read_file((a.path / "summary.json").string()) ==
          read_file((b.path / "summary.json").string()));
    CHECK(read_file((a.path / "effective.cfg").string()) ==
          read_file((b.path / "effective.cfg").string()));
}

TEST_CASE("effective config reruns to identical output") {
    TempDir a("cbf_cli_rt_a"), b("cbf_cli_rt_b");
    REQUIRE(run_cli("run --scenario sphere --barrier hprime --set inputs.u_max=0.25 "
                    "--set gains.k3=0.4 --out " +
                    a.str()) == 0);
    REQUIRE(run_cli("run --config " + (a.path / "effective.cfg").string() + " --out " + b.str()) ==
            0);
    CHECK(read_file((a.path / "trajectory.csv").string()) ==
          read_file((b.path / "trajectory.csv").string()));
}

TEST_CASE("environment variable overrides the output directory") {
    TempDir dir("cbf_cli_env");
    const std::string env_dir = dir.str() + "/env_out";
    const std::string cmd = std::string("CBF_SHIELD_OUT=") + env_dir + " " + CLI_BIN +
                            " run --scenario sphere --barrier hprime --out " + dir.str() +
                            "/ignored >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    CHECK(fs::exists(fs::path(env_dir) / "trajectory.csv"));
    CHECK(!fs::exists(dir.path / "ignored"));
}

TEST_CASE("cli runs a point cloud supplied as a file") {
    TempDir dir("cbf_cli_cloudfile");
    const std::string cloud_path = dir.str() + "/cloud.txt";
    {
        std::ofstream out(cloud_path);
        out << "# a small square of points near the path\n";
        for (const double x : {-2.0, 2.0})
            for (const double y : {-2.0, 2.0}) out << x << " " << y << " 0.0\n";
    }
    const int rc = run_cli("run --scenario pointcloud --set cloud.source=file --set cloud.file=" +
                           cloud_path + " --set sim.duration=20 --out " + dir.str());
    CHECK(rc == 0);
    CHECK(fs::exists(dir.path / "trajectory.csv"));
}

TEST_CASE("cli sweep emits the summary table") {
    TempDir dir("cbf_cli_sweep");
    SUBCASE("step refinement never worsens the peak constraint") {
        REQUIRE(run_cli("sweep --scenario sphere --barrier hprime --param dt_ctrl "
                        "--values 0.2 0.1 0.05 --out " +
                        dir.str()) == 0);
        const std::string csv = read_file((dir.path / "sweep.csv").string());
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);  // header
        std::vector<double> max_h;
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string field;
            for (int i = 0; i < 4 && std::getline(row, field, ','); ++i) {
            }
            max_h.push_back(std::stod(field));
        }
        REQUIRE(max_h.size() == 3);
        CHECK(max_h[1] <= max_h[0] + 1e-6);
        CHECK(max_h[2] <= max_h[1] + 1e-6);
    }
    SUBCASE("zero authority is recorded as an error row") {
        REQUIRE(run_cli("sweep --scenario sphere --barrier hprime --param u_max "
                        "--values 0 0.2 --out " +
                        dir.str()) == 0);
        const std::string csv = read_file((dir.path / "sweep.csv").string());
        CHECK(csv.find("error:no_valid_a_max") != std::string::npos);
        CHECK(csv.find("u_max,0.2") != std::string::npos);
    }
    SUBCASE("alpha scaling preserves safety") {
        REQUIRE(run_cli("sweep --scenario sphere --barrier hprime --param alpha_scale "
                        "--values 0.5 1 2 --set sim.dt_ctrl=0.02 --out " +
                        dir.str()) == 0);
        const std::string csv = read_file((dir.path / "sweep.csv").string());
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        int rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            std::istringstream row(line);
            std::string param, value, status, maxh;
            std::getline(row, param, ',');
            std::getline(row, value, ',');
            std::getline(row, status, ',');
            std::getline(row, maxh, ',');
            CHECK((status == "ok"));
            CHECK(std::stod(maxh) <= 5e-3);  // sampled-data ceiling at this step and gain range
        }
        CHECK(rows == 3);
    }
}
