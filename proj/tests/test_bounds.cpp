#include <doctest.h>

#include <cmath>

#include "mcre/bounds.hpp"
#include "mcre/verify.hpp"

using namespace mcre;

TEST_CASE("q_gap_bound_exact closed forms") {
    // gamma=0.5, u=0.2: denom = 1 - 0.5 - 0.05 - 0.1 = 0.35
    CHECK(q_gap_bound_exact({0.2, 0.0, 0.5}, 0.7) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q_gap_bound_exact({0.0, 0.0, 0.5}, 0.8) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(q_gap_bound_exact({0.2, 0.0, 0.5}, 0.0) == doctest::Approx(0.0));
    // linear in max_bc
    CHECK(q_gap_bound_exact({0.05, 0.0, 0.9}, 2.0) ==
          doctest::Approx(2.0 * q_gap_bound_exact({0.05, 0.0, 0.9}, 1.0)).epsilon(1e-12));
}

TEST_CASE("bound is undefined past the upsilon threshold") {
    const MreConfig cfg{0.5, 0.0, 0.9};
    CHECK_FALSE(cfg.theorem_condition_met());
    try {
        q_gap_bound_exact(cfg, 1.0);
        FAIL("expected BoundUndefinedError");
    } catch (const BoundUndefinedError& e) {
        CHECK(e.threshold == doctest::Approx(upsilon_threshold(0.9)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(q_gap_bound_empirical(cfg, 1.0, 0.1, 1.0), BoundUndefinedError);
}

TEST_CASE("empirical q bound adds the sampling term") {
    const MreConfig cfg{0.2, 0.0, 0.5};
    CHECK(q_gap_bound_empirical(cfg, 0.7, 0.0, 3.0) ==
          doctest::Approx(q_gap_bound_exact(cfg, 0.7)).epsilon(1e-12));
    // sampling term: 0.5 * 0.2 * 2 / (0.35 * 0.5) = 8/7
    CHECK(q_gap_bound_empirical(cfg, 0.0, 0.2, 2.0) ==
          doctest::Approx(8.0 / 7.0).epsilon(1e-12));
    CHECK(q_gap_bound_empirical(cfg, 0.7, 0.2, 2.0) ==
          doctest::Approx(1.0 + 8.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("v gap bound closed form") {
    CHECK(v_gap_bound_empirical(0.5, 0.4, 2.0) == doctest::Approx(1.6).epsilon(1e-12));
    CHECK(v_gap_bound_empirical(0.9, 0.0, 5.0) == doctest::Approx(0.0));
}

TEST_CASE("suboptimality sign and value on the chain") {
    TabularMdp m;
    m.n_states = 2;
    m.n_actions = 2;
    m.gamma = 0.9;
    m.transition = {1, 0, 0, 1, 0, 1, 0, 1};
    m.reward = {0.5, 0.0, 1.0, 0.2};
    m.r_max = 1.0;
    m.initial_dist = {1.0, 0.0};
    m.default_embedding();
    const DeterministicPolicy stay{{0, 0}};   // V(s0) = 5
    const DeterministicPolicy jump{{1, 0}};   // V(s0) = 0 + 0.9 * 10 = 9
    CHECK(suboptimality(m, stay, jump) == doctest::Approx(-4.0).epsilon(1e-10));
    CHECK(suboptimality(m, jump, jump) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("suboptimality bound closed forms") {
    // 2*l*a_max/(1-g) + 2*g*r_max*tv/(1-g)^2 at g=0.5
    CHECK(suboptimality_bound(0.5, 0.5, 1.0, 2.0, 0.25, std::nullopt) ==
          doctest::Approx(2.0 + 2.0).epsilon(1e-12));
    // sampling adds (1+g)*g*dev*r_max/(1-g)^3 = 1.5*0.5*0.1*2/0.125 = 1.2
    CHECK(suboptimality_bound(0.5, 0.5, 1.0, 2.0, 0.25, SamplingTerm{0.1}) ==
          doctest::Approx(4.0 + 1.2).epsilon(1e-12));
    // monotone in every argument
    CHECK(suboptimality_bound(0.9, 1.0, 1.0, 1.0, 0.5, std::nullopt) >
          suboptimality_bound(0.9, 1.0, 1.0, 1.0, 0.25, std::nullopt));
}

TEST_CASE("lipschitz_estimate matches a brute-force oracle") {
    Rng rng = make_rng(31, 0);
    const TabularMdp m = random_mdp(6, 4, 0.9, rng);
    double oracle = 0.0;
    for (std::size_t s = 0; s < m.n_states; ++s)
        for (std::size_t a1 = 0; a1 < m.n_actions; ++a1)
            for (std::size_t a2 = 0; a2 < m.n_actions; ++a2) {
                if (a1 == a2) continue;
                double gap = 0.0;
                for (std::size_t i = 0; i < m.embed_dim; ++i)
                    gap = std::max(gap, std::abs(m.embedding(a1)[i] - m.embedding(a2)[i]));
                oracle = std::max(oracle, std::abs(m.r(s, a1) - m.r(s, a2)) / gap);
            }
    CHECK(lipschitz_estimate(m) == doctest::Approx(oracle).epsilon(1e-12));

    // action-independent rewards: constant = 0
    TabularMdp flat = m;
    for (std::size_t s = 0; s < flat.n_states; ++s)
        for (std::size_t a = 0; a < flat.n_actions; ++a)
            flat.reward[s * flat.n_actions + a] = 0.25;
    CHECK(lipschitz_estimate(flat) == doctest::Approx(0.0));

    // coincident embeddings with differing rewards have no finite constant
    TabularMdp degenerate = m;
    for (double& e : degenerate.action_embedding) e = 0.0;
    CHECK_THROWS_AS(lipschitz_estimate(degenerate), MdpError);
}

TEST_CASE("max_policy_tv") {
    Rng rng = make_rng(32, 0);
    const TabularMdp m = random_mdp(5, 3, 0.9, rng);
    const BackupModel model = model_view(m);
    const DeterministicPolicy pa{{0, 1, 2, 0, 1}};
    const DeterministicPolicy pb{{0, 1, 2, 0, 1}};
    CHECK(max_policy_tv(model, model, pa, pb) == doctest::Approx(0.0));

    const DeterministicPolicy pc{{1, 1, 2, 0, 1}};
    double oracle = 0.0;
    for (std::size_t s2 = 0; s2 < m.n_states; ++s2)
        oracle += std::abs(m.p(0, 0, s2) - m.p(0, 1, s2));
    CHECK(max_policy_tv(model, model, pa, pc) == doctest::Approx(0.5 * oracle).epsilon(1e-12));

    // disjoint supports: TV = 1
    TabularMdp d;
    d.n_states = 2;
    d.n_actions = 2;
    d.gamma = 0.9;
    d.transition = {1, 0, 0, 1, 1, 0, 0, 1};
    d.reward = {0, 0, 0, 0};
    d.initial_dist = {1, 0};
    d.default_embedding();
    const BackupModel dm = model_view(d);
    CHECK(max_policy_tv(dm, dm, {{0, 0}}, {{1, 0}}) == doctest::Approx(1.0));
}

TEST_CASE("max_bc_over_dataset restricts to visited pairs") {
    Rng rng = make_rng(33, 0);
    const TabularMdp m = random_mdp(3, 3, 0.9, rng);
    const ActionEmbedding emb = embedding_view(m);
    const DeterministicPolicy pi{{0, 0, 0}};
    // one-hot embeddings: off-policy pairs contribute omega * 2
    CHECK(max_bc_over_dataset(emb, pi, 1.5, nullptr, 3, 3) == doctest::Approx(3.0));
    CHECK(max_bc_over_dataset(emb, pi, 0.0, nullptr, 3, 3) == doctest::Approx(0.0));
    // only on-policy pairs visited: the bc term vanishes
    const std::vector<std::uint8_t> visited = {1, 0, 0, 1, 0, 0, 1, 0, 0};
    CHECK(max_bc_over_dataset(emb, pi, 1.5, visited.data(), 3, 3) == doctest::Approx(0.0));
}
