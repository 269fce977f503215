#include "mcre/bounds.hpp"

#include <cmath>
#include <limits>

namespace mcre {

namespace {

double denom_or_throw(const MreConfig& cfg) {
    const double g = cfg.gamma;
    const double d = 1.0 - g - cfg.upsilon * g * g - cfg.upsilon * g;
    if (d <= 0.0)
        throw BoundUndefinedError("gap bound undefined: upsilon >= (1-gamma)/(gamma^2+gamma)",
                                  upsilon_threshold(g));
    return d;
}

}  // namespace

double q_gap_bound_exact(const MreConfig& cfg, double max_bc) {
    return cfg.gamma * max_bc / denom_or_throw(cfg);
}

double q_gap_bound_empirical(const MreConfig& cfg, double max_bc, double max_dev, double r_max) {
    const double d = denom_or_throw(cfg);
    return cfg.gamma * max_bc / d + cfg.gamma * max_dev * r_max / (d * (1.0 - cfg.gamma));
}

double v_gap_bound_empirical(double gamma, double max_dev, double r_max) {
    return gamma * max_dev * r_max / ((1.0 - gamma) * (1.0 - gamma));
}

double suboptimality(const TabularMdp& mdp, const DeterministicPolicy& pi_hat,
                     const DeterministicPolicy& pi_star) {
    return policy_return(mdp, pi_hat) - policy_return(mdp, pi_star);
}

double suboptimality_bound(double gamma, double ell, double a_max, double r_max, double max_tv,
                           const std::optional<SamplingTerm>& sampling) {
    const double one_m = 1.0 - gamma;
    double b = 2.0 * ell * a_max / one_m + 2.0 * gamma * r_max * max_tv / (one_m * one_m);
    if (sampling)
        b += (1.0 + gamma) * gamma * sampling->max_dev * r_max / (one_m * one_m * one_m);
    return b;
}

double lipschitz_estimate(const TabularMdp& mdp) {
    double ell = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a1 = 0; a1 < mdp.n_actions; ++a1) {
            for (std::size_t a2 = a1 + 1; a2 < mdp.n_actions; ++a2) {
                double gap = 0.0;
                for (std::size_t i = 0; i < mdp.embed_dim; ++i)
                    gap = std::max(gap, std::abs(mdp.embedding(a1)[i] - mdp.embedding(a2)[i]));
                const double dr = std::abs(mdp.r(s, a1) - mdp.r(s, a2));
                if (gap == 0.0) {
                    if (dr > 0.0)
                        throw MdpError(
                            "lipschitz_estimate: coincident embeddings with differing rewards");
                    continue;
                }
                ell = std::max(ell, dr / gap);
            }
        }
    }
    return ell;
}

double max_policy_tv(const BackupModel& model_a, const BackupModel& model_b,
                     const DeterministicPolicy& pi_a, const DeterministicPolicy& pi_b) {
    if (model_a.n_states != model_b.n_states || model_a.n_actions != model_b.n_actions)
        throw MdpError("max_policy_tv: shape mismatch");
    const std::size_t S = model_a.n_states, A = model_a.n_actions;
    double m = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
        const double* pa = model_a.p + (s * A + pi_a.action_of[s]) * S;
        const double* pb = model_b.p + (s * A + pi_b.action_of[s]) * S;
        double acc = 0.0;
        for (std::size_t s2 = 0; s2 < S; ++s2) acc += std::abs(pa[s2] - pb[s2]);
        m = std::max(m, 0.5 * acc);
    }
    return m;
}

double max_bc_over_dataset(const ActionEmbedding& emb, const DeterministicPolicy& pi,
                           double omega, const std::uint8_t* visited, std::size_t n_states,
                           std::size_t n_actions) {
    double m = 0.0;
    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            if (visited && !visited[s * n_actions + a]) continue;
            const double* x = emb.at(pi.action_of[s]);
            const double* y = emb.at(a);
            double acc = 0.0;
            for (std::size_t i = 0; i < emb.dim; ++i) {
                const double d = x[i] - y[i];
                acc += d * d;
            }
            m = std::max(m, omega * acc);
        }
    }
    return m;
}

}  // namespace mcre
