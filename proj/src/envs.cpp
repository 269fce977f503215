#include "mcre/envs.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mcre/log.hpp"

namespace mcre {

namespace {

constexpr std::size_t kGrid = 8;
constexpr std::size_t kGoal = kGrid * kGrid - 1;
constexpr double kSlip = 0.1;

// 0=up 1=right 2=down 3=left; off-grid moves stay in place
std::size_t move(std::size_t s, std::size_t dir) {
    const std::size_t row = s / kGrid, col = s % kGrid;
    switch (dir) {
        case 0: return row > 0 ? s - kGrid : s;
        case 1: return col + 1 < kGrid ? s + 1 : s;
        case 2: return row + 1 < kGrid ? s + kGrid : s;
        default: return col > 0 ? s - 1 : s;
    }
}

TabularMdp build_gridworld_mdp() {
    TabularMdp m;
    m.n_states = kGrid * kGrid;
    m.n_actions = 4;
    m.gamma = 0.99;
    m.r_max = 1.0;
    m.transition.assign(m.n_states * 4 * m.n_states, 0.0);
    m.reward.assign(m.n_states * 4, 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s) {
        for (std::size_t a = 0; a < 4; ++a) {
            double* row = m.transition.data() + (s * 4 + a) * m.n_states;
            if (s == kGoal) {
                row[s] = 1.0;  // absorbing, zero reward
                continue;
            }
            for (std::size_t dir = 0; dir < 4; ++dir) {
                const double p = (dir == a) ? 1.0 - kSlip : kSlip / 3.0;
                row[move(s, dir)] += p;
            }
            m.reward[s * 4 + a] = row[kGoal];  // expected goal bonus
        }
    }
    m.initial_dist.assign(m.n_states, 1.0 / double(m.n_states - 1));
    m.initial_dist[kGoal] = 0.0;
    m.default_embedding();
    m.validate();
    return m;
}

double mean_return(const Env& env, const PolicyFn& policy, std::uint64_t seed,
                   std::size_t episodes) {
    double acc = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        Rng rng = make_rng(seed, e);
        acc += rollout_return(env, policy, rng);
    }
    return acc / double(episodes);
}

}  // namespace

double rollout_return(const Env& env, const PolicyFn& policy, Rng& rng) {
    EnvState st = env.reset(rng);
    double total = 0.0;
    while (!st.done) {
        auto [next, r] = env.step(st, policy(st, rng), rng);
        total += r;
        st = std::move(next);
    }
    return total;
}

GridworldEnv::GridworldEnv() {
    mdp_ = build_gridworld_mdp();
    optimal_ = optimal_policy(mdp_);
    refs_.random_ref = mean_return(
        *this, [this](const EnvState&, Rng& r) { return random_action(r); }, 9001, 1000);
    refs_.expert_ref = mean_return(
        *this, [this](const EnvState& s, Rng& r) { return expert_action(s, r); }, 9002, 1000);
}

EnvState GridworldEnv::reset(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double x = u(rng), cum = 0.0;
    std::size_t s = 0;
    for (std::size_t i = 0; i < mdp_.n_states; ++i) {
        cum += mdp_.initial_dist[i];
        if (x < cum) {
            s = i;
            break;
        }
    }
    return {{double(s)}, 0, false};
}

std::pair<EnvState, double> GridworldEnv::step(const EnvState& state,
                                               const std::vector<double>& action,
                                               Rng& rng) const {
    if (state.done) throw MdpError("step: episode already complete");
    const auto s = static_cast<std::size_t>(state.observation[0]);
    auto a = static_cast<long>(std::llround(action.at(0)));
    if (a < 0 || a > 3) {
        log_msg(LogLevel::warn, "gridworld: action out of range, clamping");
        a = std::clamp<long>(a, 0, 3);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double* row = mdp_.transition.data() + (s * 4 + std::size_t(a)) * mdp_.n_states;
    double x = u(rng), cum = 0.0;
    std::size_t s2 = mdp_.n_states - 1;
    for (std::size_t i = 0; i < mdp_.n_states; ++i) {
        cum += row[i];
        if (x < cum) {
            s2 = i;
            break;
        }
    }
    EnvState next{{double(s2)}, state.steps_elapsed + 1, false};
    next.done = (s2 == kGoal) || (next.steps_elapsed >= horizon());
    return {std::move(next), mdp_.r(s, std::size_t(a))};
}

std::vector<double> GridworldEnv::random_action(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> d(0, 3);
    return {double(d(rng))};
}

std::vector<double> GridworldEnv::expert_action(const EnvState& state, Rng&) const {
    const auto s = static_cast<std::size_t>(state.observation[0]);
    return {double(optimal_.action_of[s])};
}

PointMassEnv::PointMassEnv() {
    // Discrete LQR for z' = Az + Ba, per-step cost dt*(x^2 + 0.1 a^2)
    const double a11 = 1.0, a12 = dt_, a22 = 1.0;
    const double b1 = 0.0, b2 = dt_;
    const double q11 = dt_, r_cost = 0.1 * dt_;
    double p11 = q11, p12 = 0.0, p22 = 0.0;
    for (int it = 0; it < 10000; ++it) {
        // AtPA, AtPB, BtPB with A upper triangular
        const double pa11 = p11 * a11, pa12 = p11 * a12 + p12 * a22;
        const double pa21 = p12 * a11, pa22 = p12 * a12 + p22 * a22;
        const double atpa11 = a11 * pa11;
        const double atpa12 = a11 * pa12;
        const double atpa22 = a12 * pa12 + a22 * pa22;
        const double atpb1 = a11 * (p11 * b1 + p12 * b2);
        const double atpb2 = a12 * (p11 * b1 + p12 * b2) + a22 * (p12 * b1 + p22 * b2);
        const double btpb = b2 * (p12 * b1 + p22 * b2) + b1 * (p11 * b1 + p12 * b2);
        const double denom = r_cost + btpb;
        const double n11 = q11 + atpa11 - atpb1 * atpb1 / denom;
        const double n12 = atpa12 - atpb1 * atpb2 / denom;
        const double n22 = atpa22 - atpb2 * atpb2 / denom;
        const double diff = std::abs(n11 - p11) + std::abs(n12 - p12) + std::abs(n22 - p22);
        p11 = n11;
        p12 = n12;
        p22 = n22;
        if (diff < 1e-14) break;
    }
    // K = (R + BtPB)^-1 Bt P A
    const double btpb = b2 * (p12 * b1 + p22 * b2) + b1 * (p11 * b1 + p12 * b2);
    const double denom = r_cost + btpb;
    const double btpa1 = b1 * (p11 * a11) + b2 * (p12 * a11);
    const double btpa2 = b1 * (p11 * a12 + p12 * a22) + b2 * (p12 * a12 + p22 * a22);
    kx_ = btpa1 / denom;
    kv_ = btpa2 / denom;

    refs_.random_ref = mean_return(
        *this, [this](const EnvState&, Rng& r) { return random_action(r); }, 9003, 1000);
    refs_.expert_ref = mean_return(
        *this, [this](const EnvState& s, Rng& r) { return expert_action(s, r); }, 9004, 1000);
}

EnvState PointMassEnv::reset(Rng& rng) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return {{u(rng), 0.0}, 0, false};
}

std::pair<EnvState, double> PointMassEnv::step(const EnvState& state,
                                               const std::vector<double>& action,
                                               Rng&) const {
    if (state.done) throw MdpError("step: episode already complete");
    double a = action.at(0);
    if (std::abs(a) > action_bound()) {
        log_msg(LogLevel::debug, "pointmass: action out of bounds, clamping");
        a = std::clamp(a, -action_bound(), action_bound());
    }
    const double x = state.observation[0], v = state.observation[1];
    const double reward = -(x * x + 0.1 * a * a) * dt_;
    EnvState next{{x + v * dt_, v + a * dt_}, state.steps_elapsed + 1, false};
    next.done = next.steps_elapsed >= horizon();
    return {std::move(next), reward};
}

std::vector<double> PointMassEnv::random_action(Rng& rng) const {
    std::uniform_real_distribution<double> u(-action_bound(), action_bound());
    return {u(rng)};
}

std::vector<double> PointMassEnv::expert_action(const EnvState& state, Rng&) const {
    const double a = -kx_ * state.observation[0] - kv_ * state.observation[1];
    return {std::clamp(a, -action_bound(), action_bound())};
}

std::shared_ptr<const Env> make_env(const std::string& env_id) {
    static std::map<std::string, std::shared_ptr<const Env>> cache;
    auto it = cache.find(env_id);
    if (it != cache.end()) return it->second;
    std::shared_ptr<const Env> env;
    if (env_id == "gridworld-8x8-v1")
        env = std::make_shared<GridworldEnv>();
    else if (env_id == "pointmass-1d-v1")
        env = std::make_shared<PointMassEnv>();
    else
        throw MdpError("unknown env_id: " + env_id);
    cache[env_id] = env;
    return env;
}

}  // namespace mcre
