// End-to-end checks of the mcre_cli binary: exit codes, JSON/CSV output
// shape and byte-reproducibility. The binary path comes from the build
// via MCRE_CLI_PATH.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = MCRE_CLI_PATH;

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "mcre_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args, const std::string& stdout_path = "/dev/null") {
    const std::string cmd = kCli + " " + args + " > " + stdout_path + " 2> /dev/null";
    const int st = std::system(cmd.c_str());
    REQUIRE(st != -1);
    REQUIRE(WIFEXITED(st));
    return WEXITSTATUS(st);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("gen-data --env gridworld-8x8-v1") == 2);        // missing --out
    CHECK(run("--out /dev/null gen-data --tier bogus") == 2);  // unknown tier
    CHECK(run("solve --policy sideways") == 2);
    CHECK(run("train --out /dev/null") == 2);  // --dataset is required
    CHECK(run("solve --no-such-flag") == 2);
}

TEST_CASE("runtime errors exit 1") {
    CHECK(run("eval --checkpoint " + (work_dir() / "missing.ckpt").string()) == 1);
    CHECK(run("--out " + (work_dir() / "x.ckpt").string() + " train --dataset " +
              (work_dir() / "missing.jsonl").string()) == 1);
}

TEST_CASE("gen-data writes a dataset and reports its meta") {
    const fs::path ds = work_dir() / "grid.jsonl";
    const fs::path out = work_dir() / "gen.json";
    REQUIRE(run("--seed 7 --out " + ds.string() +
                " gen-data --env gridworld-8x8-v1 --tier medium --n 500",
                out.string()) == 0);
    const json j = json::parse(slurp(out));
    CHECK(j.at("count") == 500);
    CHECK(j.at("env_id") == "gridworld-8x8-v1");
    CHECK(j.at("seed") == 7);
    CHECK(j.at("behavior_spec") == "epsilon_greedy(0.3)");

    // identical flags and seed: byte-identical dataset and report
    const fs::path ds2 = work_dir() / "grid2.jsonl";
    const fs::path out2 = work_dir() / "gen2.json";
    REQUIRE(run("--seed 7 --out " + ds2.string() +
                " gen-data --env gridworld-8x8-v1 --tier medium --n 500",
                out2.string()) == 0);
    CHECK(slurp(ds) == slurp(ds2));
    json a = json::parse(slurp(out)), b = json::parse(slurp(out2));
    a.erase("path");
    b.erase("path");  // only the output path may differ
    CHECK(a == b);
}

TEST_CASE("solve reports the exact-model gap under its bound") {
    const fs::path out = work_dir() / "solve.json";
    REQUIRE(run("solve --env gridworld-8x8-v1 --upsilon 0.002 --omega 0.5", out.string()) == 0);
    const json j = json::parse(slurp(out));
    CHECK(j.at("mode") == "exact");
    CHECK(j.at("condition_met") == true);
    CHECK(j.at("lhs").get<double>() <= j.at("rhs").get<double>());
    CHECK(j.at("slack").get<double>() >= 0.0);
}

TEST_CASE("solve against a dataset uses the empirical bounds") {
    const fs::path ds = work_dir() / "grid.jsonl";  // written by the gen-data case
    REQUIRE(fs::exists(ds));
    const fs::path out = work_dir() / "solve_emp.json";
    REQUIRE(run("solve --env gridworld-8x8-v1 --dataset " + ds.string() + " --omega 0.5",
                out.string()) == 0);
    const json j = json::parse(slurp(out));
    CHECK(j.at("mode") == "empirical");
    CHECK(j.at("dataset_count") == 500);
    CHECK(j.at("slack").get<double>() >= 0.0);
    CHECK(j.at("slack_v").get<double>() >= 0.0);
}

TEST_CASE("train then eval round trips a checkpoint") {
    const fs::path ds = work_dir() / "pm.jsonl";
    REQUIRE(run("--seed 3 --out " + ds.string() +
                " gen-data --env pointmass-1d-v1 --tier medium --n 600") == 0);
    const fs::path ckpt = work_dir() / "pm.ckpt";
    const fs::path out = work_dir() / "train.json";
    REQUIRE(run("--seed 5 --out " + ckpt.string() + " train --dataset " + ds.string() +
                " --steps 30 --alpha 0",
                out.string()) == 0);
    const json jt = json::parse(slurp(out));
    CHECK(jt.at("checkpoint") == ckpt.string());
    CHECK(std::isfinite(jt.at("final").at("mean_return").get<double>()));

    const fs::path ev = work_dir() / "eval.json";
    REQUIRE(run("--seed 9 eval --checkpoint " + ckpt.string() + " --episodes 3", ev.string()) == 0);
    const json je = json::parse(slurp(ev));
    CHECK(je.at("env_id") == "pointmass-1d-v1");
    CHECK(je.at("episodes") == 3);
    CHECK(std::isfinite(je.at("mean_return").get<double>()));

    // retrain with the same seed: byte-identical checkpoint
    const fs::path ckpt2 = work_dir() / "pm2.ckpt";
    REQUIRE(run("--seed 5 --out " + ckpt2.string() + " train --dataset " + ds.string() +
                " --steps 30 --alpha 0") == 0);
    CHECK(slurp(ckpt) == slurp(ckpt2));
}

TEST_CASE("verify exits 0 on the faithful operator and 1 under the fault hook") {
    const fs::path out = work_dir() / "verify.json";
    REQUIRE(run("verify --quick --suite contraction --suite td3", out.string()) == 0);
    const json j = json::parse(slurp(out));
    CHECK(j.at("failures") == 0);
    CHECK(j.at("cells").size() > 0);
    CHECK(run("verify --quick --suite contraction --h-scale 1.1") == 1);
}

TEST_CASE("ablate emits a CSV sweep on stdout") {
    const fs::path ds = work_dir() / "grid.jsonl";
    REQUIRE(fs::exists(ds));
    const fs::path out = work_dir() / "ablate.csv";
    REQUIRE(run("ablate --dataset " + ds.string() + " --upsilons 0 --omegas 0 0.5 1",
                out.string()) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.rfind("upsilon,omega,alpha,seed,q_gap,q_gap_bound\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
}

TEST_CASE("bounds-report emits one row per theorem check") {
    const fs::path out = work_dir() / "bounds.csv";
    REQUIRE(run("--seed 12 bounds-report --quick", out.string()) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.rfind("suite,cell,kind,lhs,rhs,slack,condition_met\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') > 5);
    const fs::path out2 = work_dir() / "bounds2.csv";
    REQUIRE(run("--seed 12 bounds-report --quick", out2.string()) == 0);
    CHECK(csv == slurp(out2));
}
