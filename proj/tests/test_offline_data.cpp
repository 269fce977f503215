#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mcre/envs.hpp"
#include "mcre/offline_data.hpp"

using namespace mcre;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("behavior tiers and spec strings") {
    CHECK(BehaviorSpec::tier("random").to_string() == "random");
    CHECK(BehaviorSpec::tier("medium").to_string() == "epsilon_greedy(0.3)");
    CHECK(BehaviorSpec::tier("expert").to_string() == "epsilon_greedy(0.05)");
    CHECK(BehaviorSpec::tier("medium-replay").to_string() == "replay_schedule(1->0.3)");
    CHECK(BehaviorSpec::tier("medium-expert").to_string() ==
          "mixture[0.5*epsilon_greedy(0.3),0.5*epsilon_greedy(0.05)]");
    CHECK_THROWS_AS(BehaviorSpec::tier("gold"), MdpError);

    BehaviorSpec bad = BehaviorSpec::tier("medium-expert");
    bad.mixture_weights[0].weight = 0.6;
    CHECK_THROWS_AS(bad.validate(), MdpError);
}

TEST_CASE("generation is reproducible from the seed alone") {
    const auto env = make_env("gridworld-8x8-v1");
    const auto spec = BehaviorSpec::tier("medium");
    const OfflineDataset a = generate_dataset(*env, spec, 500, 42);
    const OfflineDataset b = generate_dataset(*env, spec, 500, 42);
    const OfflineDataset c = generate_dataset(*env, spec, 500, 43);
    CHECK(dataset_to_string(a) == dataset_to_string(b));
    CHECK(dataset_to_string(a) != dataset_to_string(c));
    CHECK(a.transitions.size() == 500);
    CHECK(a.meta.env_id == "gridworld-8x8-v1");
    CHECK(a.meta.count == 500);
}

TEST_CASE("expert-tier returns beat random-tier returns") {
    const auto env = make_env("gridworld-8x8-v1");
    const OfflineDataset ex = generate_dataset(*env, BehaviorSpec::tier("expert"), 5000, 7);
    const OfflineDataset rn = generate_dataset(*env, BehaviorSpec::tier("random"), 5000, 7);
    CHECK(ex.behavior_mean_return() > rn.behavior_mean_return());
}

TEST_CASE("behavior_mean_return on a hand-built log") {
    OfflineDataset ds;
    auto push = [&](double r, bool done) {
        ds.transitions.push_back({{0.0}, {0.0}, r, {0.0}, done});
    };
    push(1.0, false);
    push(2.0, true);   // episode return 3
    push(0.5, true);   // episode return 0.5
    push(10.0, false); // incomplete tail, ignored
    CHECK(ds.behavior_mean_return() == doctest::Approx(1.75));

    OfflineDataset empty;
    empty.transitions.push_back({{0.0}, {0.0}, 1.0, {0.0}, false});
    CHECK_THROWS_AS(empty.behavior_mean_return(), MdpError);
}

TEST_CASE("fit_empirical_model frozen counts on a tiny log") {
    OfflineDataset ds;
    ds.transitions.push_back({{0.0}, {1.0}, 0.5, {1.0}, false});
    ds.transitions.push_back({{0.0}, {1.0}, 1.5, {0.0}, false});
    ds.transitions.push_back({{1.0}, {0.0}, -2.0, {1.0}, true});
    const EmpiricalModel em = fit_empirical_model(ds, 2, 2);
    CHECK(em.counts[0 * 2 + 1] == 2);
    CHECK(em.counts[1 * 2 + 0] == 1);
    CHECK(em.visited[0 * 2 + 0] == 0);
    CHECK(em.r_hat[0 * 2 + 1] == doctest::Approx(1.0));
    CHECK(em.p_hat[(0 * 2 + 1) * 2 + 0] == doctest::Approx(0.5));
    CHECK(em.p_hat[(0 * 2 + 1) * 2 + 1] == doctest::Approx(0.5));
    CHECK(em.min_reward == doctest::Approx(-2.0));

    OfflineDataset bad;
    bad.transitions.push_back({{5.0}, {0.0}, 0.0, {0.0}, true});
    CHECK_THROWS_AS(fit_empirical_model(bad, 2, 2), MdpError);
}

TEST_CASE("model_deviation: unvisited pairs report the trivial bound 2") {
    // deterministic 2-state MDP; one visit pins the fitted row exactly
    TabularMdp m;
    m.n_states = 2;
    m.n_actions = 2;
    m.gamma = 0.9;
    m.transition = {1, 0, 0, 1, 0, 1, 0, 1};
    m.reward = {0.5, 0.0, 1.0, 0.2};
    m.r_max = 1.0;
    m.initial_dist = {0.5, 0.5};
    m.default_embedding();

    OfflineDataset ds;
    ds.transitions.push_back({{0.0}, {1.0}, 0.0, {1.0}, true});
    const EmpiricalModel em = fit_empirical_model(ds, 2, 2);
    const std::vector<double> dev = model_deviation(em, m);
    CHECK(dev[0 * 2 + 1] == doctest::Approx(0.0));
    CHECK(dev[0 * 2 + 0] == doctest::Approx(2.0));
    CHECK(dev[1 * 2 + 0] == doctest::Approx(2.0));
}

TEST_CASE("model deviation shrinks with more data") {
    const auto env = make_env("gridworld-8x8-v1");
    const auto* gw = dynamic_cast<const GridworldEnv*>(env.get());
    const auto spec = BehaviorSpec::tier("medium");

    auto mean_visited_dev = [&](std::size_t n) {
        const OfflineDataset ds = generate_dataset(*env, spec, n, 1234);
        const EmpiricalModel em = fit_empirical_model(ds, 64, 4);
        const std::vector<double> dev = model_deviation(em, gw->mdp());
        double acc = 0.0;
        std::size_t k = 0;
        for (std::size_t i = 0; i < dev.size(); ++i)
            if (em.visited[i] && em.counts[i] >= 5) {
                acc += dev[i];
                ++k;
            }
        REQUIRE(k > 0);
        return acc / double(k);
    };
    CHECK(mean_visited_dev(50000) < mean_visited_dev(2000));
}

TEST_CASE("permissive empirical view backs off to the minimum reward") {
    OfflineDataset ds;
    ds.transitions.push_back({{0.0}, {0.0}, -1.0, {0.0}, true});
    const EmpiricalModel em = fit_empirical_model(ds, 1, 2);
    const BackupModel model = em.view(0.9, SupportMode::permissive);
    CHECK(model.fallback_reward == doctest::Approx(-1.0));
    CHECK(model.supported(0, 0));
    CHECK_FALSE(model.supported(0, 1));
}

TEST_CASE("dataset save/load round trip is byte-exact") {
    const auto env = make_env("pointmass-1d-v1");
    const OfflineDataset ds = generate_dataset(*env, BehaviorSpec::tier("medium"), 600, 99);
    const std::string path = tmp_path("mcre_test_ds.jsonl");
    save_dataset(ds, path);
    const OfflineDataset back = load_dataset(path);
    CHECK(dataset_to_string(back) == dataset_to_string(ds));
    const std::string path2 = tmp_path("mcre_test_ds2.jsonl");
    save_dataset(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("load_dataset rejects corrupted files") {
    const auto env = make_env("gridworld-8x8-v1");
    const OfflineDataset ds = generate_dataset(*env, BehaviorSpec::tier("random"), 20, 5);
    const std::string text = dataset_to_string(ds);
    const std::string path = tmp_path("mcre_test_bad.jsonl");

    SUBCASE("truncated file fails the integrity check") {
        const std::size_t cut = text.rfind("{");
        std::ofstream(path, std::ios::binary) << text.substr(0, cut);
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("integrity error"),
                             DatasetIoError);
    }
    SUBCASE("non-finite reward is rejected with a line number") {
        std::string t = text;
        const std::size_t pos = t.find("\"r\":");
        t.replace(pos, 5, "\"r\":1e999,\"x\":");
        std::ofstream(path, std::ios::binary) << t;
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 2"), DatasetIoError);
    }
    SUBCASE("garbage meta line") {
        std::ofstream(path, std::ios::binary) << "not json\n";
        CHECK_THROWS_AS(load_dataset(path), DatasetIoError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(tmp_path("nope.jsonl")), DatasetIoError); }
    std::remove(path.c_str());
}
