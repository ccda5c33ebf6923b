#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

using json = nlohmann::json;

namespace {

const std::string kCli = STALESGD_CLI_PATH;

struct CmdResult {
    int exit_code;
    std::string out;
};

CmdResult run_cmd(const std::string& args) {
    std::string out_file = "/tmp/stalesgd_cli_out.txt";
    std::string cmd = kCli + " " + args + " > " + out_file + " 2>/tmp/stalesgd_cli_err.txt";
    int rc = std::system(cmd.c_str());
    std::ifstream f(out_file);
    std::stringstream ss;
    ss << f.rdbuf();
    return {WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("run: sequential contraction example") {
    auto r = run_cmd("run --mode seq --problem quad-1d --alpha 0.1 --steps 50 --seed 1");
    REQUIRE(r.exit_code == 0);
    json s = json::parse(r.out);
    CHECK(std::abs(s["final_dist2"].get<double>() - 2.6561398887587462e-05) < 1e-15);
}

TEST_CASE("run: sync effective batch equals sequential") {
    auto a = run_cmd(
        "run --mode sync --workers 2 --problem lsq:64,8,0.4,3 --alpha 0.02 --steps 500 "
        "--seed 7 --stride 500");
    auto b = run_cmd(
        "run --mode seq --problem lsq:64,8,0.4,6 --alpha 0.02 --steps 500 --seed 7 "
        "--stride 500");
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    json ja = json::parse(a.out), jb = json::parse(b.out);
    CHECK(ja["effective_batch"] == 6);
    CHECK(std::abs(ja["final_loss"].get<double>() - jb["final_loss"].get<double>()) <=
          1e-9 * std::max(1.0, std::abs(jb["final_loss"].get<double>())));
}

TEST_CASE("run: --batch override mirrors the problem spec field") {
    auto a = run_cmd(
        "run --mode sync --workers 2 --problem lsq:64,8,0.4,1 --batch 3 --alpha 0.02 "
        "--steps 100 --seed 7 --stride 100");
    auto b = run_cmd(
        "run --mode sync --workers 2 --problem lsq:64,8,0.4,3 --alpha 0.02 --steps 100 "
        "--seed 7 --stride 100");
    REQUIRE(a.exit_code == 0);
    json ja = json::parse(a.out), jb = json::parse(b.out);
    CHECK(ja["final_loss"] == jb["final_loss"]);
}

TEST_CASE("run: validation errors exit 2 with machine-readable stderr") {
    auto r = run_cmd("run --mode seq --problem quad-1d --alpha 0.1 --steps 0 --seed 1");
    CHECK(r.exit_code == 2);
    json err = json::parse(slurp("/tmp/stalesgd_cli_err.txt"));
    CHECK(err["error"] == "validation");
    CHECK(err.contains("message"));

    auto r2 = run_cmd("run --mode seq --problem quad-1d --steps 5");
    CHECK(r2.exit_code == 2);

    auto r3 = run_cmd("run --not-a-flag");
    CHECK(r3.exit_code == 2);
}

TEST_CASE("run: byte-exact round trip through the echoed config") {
    auto r = run_cmd(
        "run --mode async-sim --problem quad:2,1,2,0.3 --alpha 0.01 --delay poisson:6 "
        "--steps 2000 --seed 5 --trace /tmp/rt1.csv --summary /tmp/rt1.json");
    REQUIRE(r.exit_code == 0);
    auto r2 = run_cmd("run --config /tmp/rt1.json --trace /tmp/rt2.csv --summary /tmp/rt2.json");
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp("/tmp/rt1.csv") == slurp("/tmp/rt2.csv"));
    json s1 = json::parse(slurp("/tmp/rt1.json"));
    json s2 = json::parse(slurp("/tmp/rt2.json"));
    CHECK(s1["config"] == s2["config"]);
    CHECK(s1["final_loss"] == s2["final_loss"]);
}

TEST_CASE("run: policy json file form") {
    {
        std::ofstream pf("/tmp/pol.json");
        pf << R"({"kind":"poisson-tune","params":{"lambda":8,"K":0.01,"alpha":0.01},)"
           << R"("wrappers":{"normalize_to":null,"clip_mult":5,"cutoff":150}})";
    }
    auto r = run_cmd(
        "run --mode async-sim --problem quad:2,1,1,0.1 --policy-file /tmp/pol.json "
        "--alpha-c 0.01 --delay poisson:8 --steps 500 --seed 2");
    REQUIRE(r.exit_code == 0);
    json s = json::parse(r.out);
    CHECK(s["config"]["wrappers"]["clip_cap"].get<double>() == doctest::Approx(0.05));
    CHECK(s["config"]["wrappers"]["cutoff"] == 150);
}

TEST_CASE("fit: ranking on poisson-generated data") {
    {
        auto g = run_cmd(
            "run --mode async-sim --problem quad-1d --alpha 0.0001 --delay poisson:8 "
            "--steps 30000 --seed 3 --summary /tmp/fit_src.json");
        REQUIRE(g.exit_code == 0);
        json s = json::parse(slurp("/tmp/fit_src.json"));
        std::ofstream hf("/tmp/hist.csv");
        hf << "tau,count\n";
        // histogram keys come back sorted numerically as strings; re-sort
        std::vector<std::pair<int64_t, int64_t>> rows;
        for (auto& [k, v] : s["staleness_histogram"].items())
            rows.emplace_back(std::stoll(k), v.get<int64_t>());
        std::sort(rows.begin(), rows.end());
        for (auto& [k, v] : rows) hf << k << "," << v << "\n";
    }
    auto r = run_cmd("fit --hist /tmp/hist.csv --families all --workers 8 -o /tmp/fit.json");
    REQUIRE(r.exit_code == 0);
    json out = json::parse(slurp("/tmp/fit.json"));
    REQUIRE(out["ranking"].size() == 4);
    std::string first = out["ranking"][0], second = out["ranking"][1];
    CHECK((first == "poisson" || first == "cmp"));
    CHECK((second == "poisson" || second == "cmp"));

    auto bad = run_cmd("fit --hist /nonexistent.csv");
    CHECK(bad.exit_code == 2);
    {
        std::ofstream ef("/tmp/empty.csv");
    }
    auto empty = run_cmd("fit --hist /tmp/empty.csv");
    CHECK(empty.exit_code == 2);
}

TEST_CASE("bounds: corollary example lands at T ~ 829") {
    auto r = run_cmd("bounds --c 1 --L 1 --M 1 --eps 0.01 --tau-bar 4 --theta 1 --d0 1");
    REQUIRE(r.exit_code == 0);
    json s = json::parse(r.out);
    CHECK(s["constant_alpha"]["T_ceil"] == 829);
    CHECK(s["general"]["T_ceil"] == 829);
    CHECK(std::abs(s["alpha_choice"].get<double>() - 0.01 / 1.8) < 1e-12);
}

TEST_CASE("analyze drift: flatness identity via the cli") {
    auto r = run_cmd("analyze drift --model cmp:8,1 --policy cmp-zero:1,0.01 --imax 150");
    REQUIRE(r.exit_code == 0);
    json s = json::parse(r.out);
    CHECK(s["theorem"] == "cmp-flat");
    CHECK(s["residual"].get<double>() < 1e-10);
}

TEST_CASE("analyze momentum: increments round trip") {
    for (int seed = 0; seed < 3; ++seed) {
        auto r = run_cmd("run --mode async-sim --problem quad:2,250,300,1 --alpha 0.001 "
                         "--delay geom:0.5 --steps 20000 --seed " +
                         std::to_string(100 + seed) +
                         " --stride 20000 --increments-out /tmp/inc" + std::to_string(seed) +
                         ".csv --summary /tmp/inc_sum.json");
        REQUIRE(r.exit_code == 0);
    }
    auto r = run_cmd(
        "analyze momentum --increments /tmp/inc0.csv /tmp/inc1.csv /tmp/inc2.csv");
    REQUIRE(r.exit_code == 0);
    json s = json::parse(r.out);
    double mu = s["mu_hat"].get<double>();
    CHECK(mu > 0.2);
    CHECK(mu < 0.8);
}

TEST_CASE("sweep: output shape contract") {
    auto r = run_cmd(
        "sweep --workers 2,4 --repeats 3 --problem lsq:64,8,0.3,2 --alpha-c 0.02 "
        "--threshold 0.12 --max-steps 20000 --pilot-steps 2000 --seed 5 -o /tmp/sweep.csv");
    REQUIRE(r.exit_code == 0);
    std::istringstream is(slurp("/tmp/sweep.csv"));
    std::string line;
    std::getline(is, line);
    CHECK(line == "m,policy,median_updates,stddev_updates,repeats,unconverged");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);  // 2 worker counts x 2 policies
}
