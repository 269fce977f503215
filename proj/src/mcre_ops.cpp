#include "mcre/mcre_ops.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "mcre/log.hpp"

namespace mcre {

double contraction_modulus(const MreConfig& cfg) {
    const double g = cfg.gamma;
    return g + cfg.upsilon * g - cfg.upsilon * g * g;
}

double upsilon_threshold(double gamma) {
    if (gamma <= 0.0 || gamma >= 1.0)
        throw MdpError("upsilon_threshold requires gamma in (0,1)");
    return (1.0 - gamma) / (gamma * gamma + gamma);
}

BackupModel model_view(const TabularMdp& mdp) {
    BackupModel m;
    m.n_states = mdp.n_states;
    m.n_actions = mdp.n_actions;
    m.gamma = mdp.gamma;
    m.p = mdp.transition.data();
    m.r = mdp.reward.data();
    return m;
}

double bc_term(const std::vector<double>& pi_action, const std::vector<double>& data_action,
               double omega) {
    if (pi_action.size() != data_action.size()) throw MdpError("bc_term: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pi_action.size(); ++i) {
        const double d = pi_action[i] - data_action[i];
        acc += d * d;
    }
    return omega * acc;
}

namespace {

void check_shapes(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi) {
    if (q.n_states != model.n_states || q.n_actions != model.n_actions)
        throw MdpError("backup: Q-table shape mismatch");
    if (pi.action_of.size() != model.n_states) throw MdpError("backup: policy shape mismatch");
}

void check_support(const BackupModel& model) {
    if (model.mode != SupportMode::strict || model.visited == nullptr) return;
    for (std::size_t i = 0; i < model.n_states * model.n_actions; ++i)
        if (model.visited[i] == 0)
            throw UnsupportedPairError("strict mode: backup queries unseen state-action pair (" +
                                       std::to_string(i / model.n_actions) + "," +
                                       std::to_string(i % model.n_actions) + ")");
}

std::vector<double> on_policy_values(const QTable& q, const DeterministicPolicy& pi) {
    std::vector<double> v(q.n_states);
    for (std::size_t s = 0; s < q.n_states; ++s) v[s] = q.at(s, pi.action_of[s]);
    return v;
}

// Plain backup value at one pair. Permissive fallback for unseen pairs:
// dataset minimum reward and a self-loop.
inline double t_value(const BackupModel& model, const std::vector<double>& on_policy_q,
                      std::size_t s, std::size_t a) {
    if (!model.supported(s, a)) return model.fallback_reward + model.gamma * on_policy_q[s];
    const double* row = model.p + (s * model.n_actions + a) * model.n_states;
    double acc = 0.0;
    for (std::size_t s2 = 0; s2 < model.n_states; ++s2) acc += row[s2] * on_policy_q[s2];
    return model.r[s * model.n_actions + a] + model.gamma * acc;
}

inline double bc_value(const ActionEmbedding& emb, std::size_t pi_a, std::size_t a, double omega) {
    const double* x = emb.at(pi_a);
    const double* y = emb.at(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < emb.dim; ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    return omega * acc;
}

void check_cfg(const MreConfig& cfg, const BackupModel& model) {
    if (cfg.upsilon < 0.0 || cfg.upsilon > 1.0) throw MdpError("upsilon must lie in [0,1]");
    if (cfg.omega < 0.0) throw MdpError("omega must be nonnegative");
    if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) throw MdpError("gamma must lie in [0,1)");
    if (std::abs(cfg.gamma - model.gamma) > 1e-12)
        throw MdpError("config gamma disagrees with model gamma");
}

}  // namespace

namespace serial {

QTable bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi) {
    check_shapes(q, model, pi);
    check_support(model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    for (std::size_t s = 0; s < model.n_states; ++s)
        for (std::size_t a = 0; a < model.n_actions; ++a)
            out.at(s, a) = t_value(model, vq, s, a);
    return out;
}

QTable td_bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi) {
    check_shapes(q, model, pi);
    check_support(model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    for (std::size_t s = 0; s < model.n_states; ++s)
        for (std::size_t a = 0; a < model.n_actions; ++a) {
            const double t = t_value(model, vq, s, a);
            out.at(s, a) = t - model.gamma * (t - vq[s]);
        }
    return out;
}

QTable mcre_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi,
                   const MreConfig& cfg, const ActionEmbedding& emb) {
    check_shapes(q, model, pi);
    check_support(model);
    check_cfg(cfg, model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    for (std::size_t s = 0; s < model.n_states; ++s)
        for (std::size_t a = 0; a < model.n_actions; ++a) {
            const double t = t_value(model, vq, s, a);
            const double h = t - cfg.gamma * (t - vq[s]);
            const double bc = bc_value(emb, pi.action_of[s], a, cfg.omega);
            out.at(s, a) = (1.0 - cfg.upsilon) * t + cfg.upsilon * h - cfg.gamma * bc;
        }
    return out;
}

}  // namespace serial

QTable bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi) {
    check_shapes(q, model, pi);
    check_support(model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    const std::int64_t n = static_cast<std::int64_t>(model.n_states * model.n_actions);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i) / model.n_actions;
        const std::size_t a = static_cast<std::size_t>(i) % model.n_actions;
        out.values[i] = t_value(model, vq, s, a);
    }
    return out;
}

QTable td_bellman_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi) {
    check_shapes(q, model, pi);
    check_support(model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    const std::int64_t n = static_cast<std::int64_t>(model.n_states * model.n_actions);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i) / model.n_actions;
        const std::size_t a = static_cast<std::size_t>(i) % model.n_actions;
        const double t = t_value(model, vq, s, a);
        out.values[i] = t - model.gamma * (t - vq[s]);
    }
    return out;
}

QTable mcre_backup(const QTable& q, const BackupModel& model, const DeterministicPolicy& pi,
                   const MreConfig& cfg, const ActionEmbedding& emb) {
    check_shapes(q, model, pi);
    check_support(model);
    check_cfg(cfg, model);
    const std::vector<double> vq = on_policy_values(q, pi);
    QTable out(model.n_states, model.n_actions);
    const std::int64_t n = static_cast<std::int64_t>(model.n_states * model.n_actions);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i) / model.n_actions;
        const std::size_t a = static_cast<std::size_t>(i) % model.n_actions;
        const double t = t_value(model, vq, s, a);
        const double h = t - cfg.gamma * (t - vq[s]);
        const double bc = bc_value(emb, pi.action_of[s], a, cfg.omega);
        out.values[i] = (1.0 - cfg.upsilon) * t + cfg.upsilon * h - cfg.gamma * bc;
    }
    return out;
}

namespace {

double sup_diff(const QTable& a, const QTable& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

}  // namespace

FixedPointReport fixed_point(const BackupModel& model, const DeterministicPolicy& pi,
                             const MreConfig& cfg, const ActionEmbedding& emb, const QTable& q0,
                             const FixedPointOptions& opts) {
    check_cfg(cfg, model);
    const double modulus = contraction_modulus(cfg);
    if (modulus >= 1.0) throw MdpError("fixed_point: contraction modulus >= 1");
    if (!cfg.theorem_condition_met())
        log_msg(LogLevel::warn,
                "fixed_point: upsilon exceeds the gap-bound threshold (1-gamma)/(gamma^2+gamma); "
                "iteration still contracts, gap bounds do not apply");

    // Stop tighter than the requested tol so that the distance to the true
    // fixed point, about residual * m / (1 - m), stays below tol/2 and two
    // initializations agree within 10*tol.
    const double stop_tol =
        modulus > 1.0 / 3.0 ? opts.tol * (1.0 - modulus) / (2.0 * modulus) : opts.tol;

    FixedPointReport rep;
    std::vector<QTable> snapshots;
    QTable q = q0;
    if (opts.record_rate) snapshots.push_back(q);
    double prev_res = -1.0;
    double best_res = std::numeric_limits<double>::infinity();
    std::size_t since_improved = 0;
    for (std::size_t k = 0; k < opts.max_iter; ++k) {
        QTable next = mcre_backup(q, model, pi, cfg, emb);
        const double res = sup_diff(next, q);
        rep.residuals.push_back(res);
        double scale = 0.0;
        for (double v : next.values) scale = std::max(scale, std::abs(v));
        // ratios are only meaningful above round-off noise of the table entries
        const double noise_floor = 1e-12 * std::max(1.0, scale);
        if (prev_res > noise_floor)
            rep.empirical_modulus = std::max(rep.empirical_modulus, res / prev_res);
        prev_res = res;
        q = std::move(next);
        if (opts.record_rate) snapshots.push_back(q);
        if (res < best_res * (1.0 - 1e-3)) {
            best_res = res;
            since_improved = 0;
        } else {
            ++since_improved;
        }
        // accept once below stop_tol, or once the residual has plateaued at
        // the round-off floor while still meeting the requested tol
        if (res <= stop_tol || (res <= opts.tol && since_improved >= 50)) {
            rep.q_star = std::move(q);
            rep.iterations = k + 1;
            rep.final_residual = res;
            if (opts.record_rate) {
                rep.gaps_to_fixed_point.reserve(snapshots.size());
                for (const QTable& s : snapshots)
                    rep.gaps_to_fixed_point.push_back(sup_diff(s, rep.q_star));
            }
            return rep;
        }
    }
    throw NonConvergenceError("fixed_point: max_iter exceeded", prev_res);
}

}  // namespace mcre
