#pragma once

#include <optional>
#include <vector>

#include "mcre/mcre_ops.hpp"
#include "mcre/mdp.hpp"
#include "mcre/offline_data.hpp"

namespace mcre {

struct BoundReport {
    double lhs = 0.0;  // measured gap
    double rhs = 0.0;  // theorem bound
    bool condition_met = false;
    double slack() const { return rhs - lhs; }
};

struct BoundUndefinedError : MdpError {
    double threshold;
    BoundUndefinedError(const std::string& msg, double thr) : MdpError(msg), threshold(thr) {}
};

/// Q-gap bound without sampling error: gamma * max_bc / (1 - gamma - u g^2 - u g).
double q_gap_bound_exact(const MreConfig& cfg, double max_bc);

/// Adds the sampling term gamma * max_dev * r_max / (denom * (1-gamma)),
/// with the measured max l1 model deviation standing in for c_p/sqrt(D_c).
double q_gap_bound_empirical(const MreConfig& cfg, double max_bc, double max_dev, double r_max);

/// V-gap with sampling error: gamma * max_dev * r_max / (1-gamma)^2.
double v_gap_bound_empirical(double gamma, double max_dev, double r_max);

/// Expected initial-state value difference between pi_hat and pi_star.
double suboptimality(const TabularMdp& mdp, const DeterministicPolicy& pi_hat,
                     const DeterministicPolicy& pi_star);

struct SamplingTerm {
    double max_dev = 0.0;  // measured l1 deviation; empty optional => exact case
};

/// Performance-difference bound: 2 l a_max/(1-g) + 2 g r_max max_tv/(1-g)^2,
/// plus (1+g) g max_dev r_max/(1-g)^3 in the sampling-error case.
double suboptimality_bound(double gamma, double ell, double a_max, double r_max, double max_tv,
                           const std::optional<SamplingTerm>& sampling);

/// Empirical reward Lipschitz constant over action-embedding distances
/// (sup-norm on embeddings).
double lipschitz_estimate(const TabularMdp& mdp);

/// max over states of TV between the next-state rows induced by two
/// (model, policy) pairs.
double max_policy_tv(const BackupModel& model_a, const BackupModel& model_b,
                     const DeterministicPolicy& pi_a, const DeterministicPolicy& pi_b);

/// Largest behavior-cloning term over the visited pairs ("(s,a) in D").
double max_bc_over_dataset(const ActionEmbedding& emb, const DeterministicPolicy& pi,
                           double omega, const std::uint8_t* visited, std::size_t n_states,
                           std::size_t n_actions);

}  // namespace mcre
