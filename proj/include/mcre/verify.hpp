#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcre/mdp.hpp"
#include "mcre/rng.hpp"

namespace mcre {

/// Dense random MDP: Dirichlet(1) transition rows, uniform [0,1] rewards,
/// uniform initial distribution, one-hot action embeddings.
TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, Rng& rng);

struct CellResult {
    std::string suite;
    std::string name;
    bool pass = false;
    std::map<std::string, double> metrics;
    std::string detail;  // failure description, empty on pass
};

struct VerifyOptions {
    std::uint64_t seed = 2024;
    /// Fault-injection hook: scales the H term inside the combined operator.
    /// 1.0 is the faithful operator; anything else must break contraction
    /// cells with upsilon > 0.
    double h_scale = 1.0;
    /// "gamma=0.99,upsilon=0.5" restricts contraction/rate cells; empty runs all.
    std::string cell_filter;
    /// Reduced trial counts for fast unit-test runs.
    bool quick = false;
    /// Subset of suite names to run; empty means every suite.
    std::vector<std::string> suites;
};

struct SuiteResult {
    std::vector<CellResult> cells;

    bool all_pass() const;
    std::size_t failures() const;
    std::string to_json() const;
};

/// Full property suite: contraction grid, geometric rate, theorem bound
/// checks, gradient finite-difference checks, TD-target collapse,
/// conservatism direction, determinism.
SuiteResult run_verify(const VerifyOptions& opts = {});

}  // namespace mcre
