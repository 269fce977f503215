#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcre {

struct MdpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Q-values as a dense (n_states x n_actions) row-major table.
struct QTable {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> values;  // values[s * n_actions + a]

    QTable() = default;
    QTable(std::size_t ns, std::size_t na, double fill = 0.0)
        : n_states(ns), n_actions(na), values(ns * na, fill) {}

    double& at(std::size_t s, std::size_t a) { return values[s * n_actions + a]; }
    double at(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }
};

struct VTable {
    std::vector<double> values;  // indexed by state
};

struct DeterministicPolicy {
    std::vector<std::size_t> action_of;  // state index -> action index
};

/// Finite MDP (S, A, P, r, rho0, gamma) with declared bounds r_max, a_max
/// and a per-action embedding for the vector-action quantities.
struct TabularMdp {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> transition;  // [s * A * S + a * S + s']
    std::vector<double> reward;      // [s * A + a]
    double r_max = 1.0;
    double gamma = 0.99;
    std::vector<double> initial_dist;      // rho0, length S
    std::vector<double> action_embedding;  // [a * embed_dim + i]
    std::size_t embed_dim = 0;
    double a_max = 1.0;

    double p(std::size_t s, std::size_t a, std::size_t s2) const {
        return transition[(s * n_actions + a) * n_states + s2];
    }
    double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
    const double* embedding(std::size_t a) const { return action_embedding.data() + a * embed_dim; }

    /// Row sums, bounds and shapes; throws MdpError on violation.
    void validate() const;

    /// One-hot embedding scaled so a_max = 1.
    void default_embedding();
};

/// Exact Q^pi by direct linear solve of the on-policy system, then one
/// backup to fill off-policy entries. Entries satisfy the Bellman
/// equation to 1e-10.
QTable exact_q(const TabularMdp& mdp, const DeterministicPolicy& pi);

VTable exact_v(const TabularMdp& mdp, const DeterministicPolicy& pi);

/// Gamma-discounted return from the initial distribution: sum_s rho0(s) V(s).
double policy_return(const TabularMdp& mdp, const DeterministicPolicy& pi);

/// Argmax per state; ties break to the lowest action index.
DeterministicPolicy greedy_policy(const QTable& q);

/// Exact optimal policy via policy iteration.
DeterministicPolicy optimal_policy(const TabularMdp& mdp);

/// (1/2) * l1 distance between two distributions of equal length.
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);

}  // namespace mcre
