#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mcre/mdp.hpp"

namespace mcre {

struct MreConfig {
    double upsilon = 0.0;  // weight of the TD-corrected backup, [0,1]
    double omega = 0.0;    // behavior-cloning weight, >= 0
    double gamma = 0.99;

    bool theorem_condition_met() const {
        return 1.0 - gamma - upsilon * gamma * gamma - upsilon * gamma > 0.0;
    }
};

/// Lipschitz factor of the combined operator in sup-norm: gamma + upsilon*gamma - upsilon*gamma^2.
double contraction_modulus(const MreConfig& cfg);

/// Largest upsilon for which the gap bounds apply: (1-gamma)/(gamma^2+gamma).
double upsilon_threshold(double gamma);

enum class SupportMode { strict, permissive };

/// Transition model view consumed by the backup kernels. Wraps either a
/// ground-truth MDP (all pairs supported) or a fitted empirical model,
/// where unseen pairs either error (strict) or fall back to the dataset
/// minimum reward with a self-loop (permissive).
struct BackupModel {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    double gamma = 0.99;
    const double* p = nullptr;  // [s*A*S + a*S + s2]
    const double* r = nullptr;  // [s*A + a]
    const std::uint8_t* visited = nullptr;  // null => every pair supported
    double fallback_reward = 0.0;
    SupportMode mode = SupportMode::strict;

    bool supported(std::size_t s, std::size_t a) const {
        return visited == nullptr || visited[s * n_actions + a] != 0;
    }
};

BackupModel model_view(const TabularMdp& mdp);

struct ActionEmbedding {
    const double* data = nullptr;  // [a*dim + i]
    std::size_t dim = 0;
    std::size_t n_actions = 0;

    const double* at(std::size_t a) const { return data + a * dim; }
};

inline ActionEmbedding embedding_view(const TabularMdp& mdp) {
    return {mdp.action_embedding.data(), mdp.embed_dim, mdp.n_actions};
}

struct UnsupportedPairError : MdpError {
    using MdpError::MdpError;
};

/// One step of the plain backup: r + gamma * E_{s'}[q(s', pi(s'))].
QTable bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi);

/// TD-corrected backup: subtracts gamma times the expected TD error,
/// pulling the result toward q(s, pi(s)).
QTable td_bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi);

/// omega-weighted squared distance between a policy action and a dataset action.
double bc_term(const std::vector<double>& pi_action, const std::vector<double>& data_action,
               double omega);

/// Combined operator: (1-upsilon)*T + upsilon*H - gamma*I, with
/// I(s,a) = omega * ||emb(pi(s)) - emb(a)||^2.
QTable mcre_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi,
                   const MreConfig& cfg, const ActionEmbedding& emb);

namespace serial {
// Reference kernels: plain nested loops, no OpenMP. Kept as independent
// checks for the parallel versions and for benchmarking.
QTable bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi);
QTable td_bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi);
QTable mcre_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi,
                   const MreConfig& cfg, const ActionEmbedding& emb);
}  // namespace serial

struct FixedPointReport {
    QTable q_star;
    std::size_t iterations = 0;
    double final_residual = 0.0;
    double empirical_modulus = 0.0;           // max ratio of successive sup-norm residuals
    std::vector<double> residuals;            // ||Q_{k+1} - Q_k||_inf per step
    std::vector<double> gaps_to_fixed_point;  // ||Q_k - Q*||_inf, filled when record_rate
};

struct FixedPointOptions {
    double tol = 1e-10;
    std::size_t max_iter = 200000;
    bool record_rate = false;  // keep iterate snapshots for geometric-rate checks
};

struct NonConvergenceError : MdpError {
    double last_residual;
    NonConvergenceError(const std::string& msg, double res) : MdpError(msg), last_residual(res) {}
};

/// Iterates the combined backup from q0 until the sup-norm residual falls
/// below tol. Warns (does not fail) when the gap-bound precondition on
/// upsilon is violated; the contraction itself holds for all upsilon in [0,1].
FixedPointReport fixed_point(const BackupModel& model, const DeterministicPolicy& pi,
                             const MreConfig& cfg, const ActionEmbedding& emb, const QTable& q0,
                             const FixedPointOptions& opts = {});

}  // namespace mcre
