#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcre/mdp.hpp"
#include "mcre/rng.hpp"

namespace mcre {

struct EnvState {
    std::vector<double> observation;
    std::size_t steps_elapsed = 0;
    bool done = false;
};

struct ReferenceReturns {
    double random_ref = 0.0;
    double expert_ref = 0.0;
};

/// Episodic environment with stored normalization anchors. Instances are
/// immutable after construction; episode state lives in EnvState.
class Env {
public:
    virtual ~Env() = default;

    virtual std::string id() const = 0;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t action_dim() const = 0;
    virtual double action_bound() const = 0;
    virtual std::size_t horizon() const = 0;
    virtual bool tabular() const = 0;

    virtual EnvState reset(Rng& rng) const = 0;
    /// Steps one transition; out-of-bound actions are clamped (logged).
    /// Throws MdpError when called on a done state.
    virtual std::pair<EnvState, double> step(const EnvState& state,
                                             const std::vector<double>& action,
                                             Rng& rng) const = 0;

    virtual std::vector<double> random_action(Rng& rng) const = 0;
    virtual std::vector<double> expert_action(const EnvState& state, Rng& rng) const = 0;

    ReferenceReturns reference_returns() const { return refs_; }

protected:
    ReferenceReturns refs_;
};

/// 8x8 gridworld, 4 actions, 10% slip, absorbing goal worth 1. Exposes an
/// exactly matching TabularMdp for oracle checks. Observations are a
/// single state index stored as a double; actions likewise.
class GridworldEnv : public Env {
public:
    GridworldEnv();

    std::string id() const override { return "gridworld-8x8-v1"; }
    std::size_t state_dim() const override { return 1; }
    std::size_t action_dim() const override { return 1; }
    double action_bound() const override { return 3.0; }  // action indices 0..3
    std::size_t horizon() const override { return 100; }
    bool tabular() const override { return true; }

    EnvState reset(Rng& rng) const override;
    std::pair<EnvState, double> step(const EnvState& state, const std::vector<double>& action,
                                     Rng& rng) const override;
    std::vector<double> random_action(Rng& rng) const override;
    std::vector<double> expert_action(const EnvState& state, Rng& rng) const override;

    const TabularMdp& mdp() const { return mdp_; }
    const DeterministicPolicy& optimal() const { return optimal_; }

private:
    TabularMdp mdp_;
    DeterministicPolicy optimal_;
};

/// 1-D double-integrator point mass: x' = x + v dt, v' = v + a dt,
/// reward -(x^2 + 0.1 a^2) dt, fixed-length episodes. The expert is the
/// clamped discrete-time LQR law for the same quadratic cost.
class PointMassEnv : public Env {
public:
    PointMassEnv();

    std::string id() const override { return "pointmass-1d-v1"; }
    std::size_t state_dim() const override { return 2; }
    std::size_t action_dim() const override { return 1; }
    double action_bound() const override { return 1.0; }
    std::size_t horizon() const override { return 200; }
    bool tabular() const override { return false; }

    EnvState reset(Rng& rng) const override;
    std::pair<EnvState, double> step(const EnvState& state, const std::vector<double>& action,
                                     Rng& rng) const override;
    std::vector<double> random_action(Rng& rng) const override;
    std::vector<double> expert_action(const EnvState& state, Rng& rng) const override;

    double dt() const { return dt_; }
    double lqr_gain_x() const { return kx_; }
    double lqr_gain_v() const { return kv_; }

private:
    double dt_ = 0.05;
    double kx_ = 0.0;
    double kv_ = 0.0;
};

/// Env registry keyed by the id strings used in dataset meta and CLI flags.
std::shared_ptr<const Env> make_env(const std::string& env_id);

using PolicyFn = std::function<std::vector<double>(const EnvState&, Rng&)>;

/// Undiscounted return of one full episode under `policy`.
double rollout_return(const Env& env, const PolicyFn& policy, Rng& rng);

}  // namespace mcre
