#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcre/envs.hpp"
#include "mcre/neural.hpp"
#include "mcre/offline_data.hpp"

namespace mcre {

struct McrqConfig {
    double upsilon = 0.0;
    double omega = 0.0;
    double alpha = 2.5;
    double gamma = 0.99;
    double tau = 0.005;
    std::size_t policy_delay = 2;
    std::size_t batch_size = 256;
    std::size_t total_steps = 0;
    double target_noise_sigma = 0.2;
    double target_noise_clip = 0.5;
    std::size_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden = {64, 64};
    double lr = 3e-4;

    void validate() const;
    std::string to_json() const;
    static McrqConfig from_json(const std::string& text);
};

/// Table-style presets keyed "<task>-<tier>", e.g. "hopper-e"; only
/// (upsilon, omega, alpha) differ between presets.
const std::map<std::string, McrqConfig>& mcrq_presets();

/// Per-dimension state whitening fitted on the dataset; stored in the
/// checkpoint so evaluation is self-contained.
struct StateNorm {
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-6

    static StateNorm fit(const OfflineDataset& ds);
    std::vector<double> apply(const std::vector<double>& state) const;
};

struct AgentState {
    Mlp critic1, critic2, actor;
    Mlp target_critic1, target_critic2, target_actor;
    OptimState opt_critic1, opt_critic2, opt_actor;
    StateNorm norm;
    double action_bound = 1.0;
    std::size_t step = 0;

    static AgentState make(std::size_t state_dim, std::size_t action_dim, double action_bound,
                           const McrqConfig& cfg, const StateNorm& norm);

    std::vector<double> policy_action(const std::vector<double>& raw_state) const;
};

struct Batch {
    std::vector<std::vector<double>> states;       // normalized
    std::vector<std::vector<double>> actions;
    std::vector<double> rewards;
    std::vector<std::vector<double>> next_states;  // normalized
    std::vector<std::uint8_t> done;

    std::size_t size() const { return rewards.size(); }
};

Batch sample_batch(const OfflineDataset& ds, const StateNorm& norm, std::size_t batch_size,
                   Rng& rng);

/// Target-policy actions with clipped Gaussian smoothing noise, clamped to
/// the action bound.
std::vector<std::vector<double>> target_action(const AgentState& agent,
                                               const std::vector<std::vector<double>>& next_states,
                                               const McrqConfig& cfg, Rng& rng);

/// Per-row TD target: (1-upsilon)*y1 + upsilon*y2 - gamma*I, where y1 is
/// the clipped double-Q bootstrap, y2 replaces the bootstrap with a
/// TD-corrected term, and I is the omega-weighted distance to the dataset
/// action. Constant with respect to every network.
std::vector<double> td_target(const AgentState& agent, const Batch& batch, const McrqConfig& cfg,
                              Rng& rng);

struct CriticGrads {
    double loss = 0.0;  // mean over rows and both critics
    std::vector<double> grad1, grad2;
};

/// Loss and analytic parameter gradients of both critics for a fixed y;
/// no optimizer step. Exposed so finite-difference checks probe the same
/// path the updates use.
CriticGrads critic_loss_grads(const AgentState& agent, const Batch& batch,
                              const std::vector<double>& y);

struct ActorGrads {
    double loss = 0.0;
    double lambda = 0.0;
    std::vector<double> grad;
};

ActorGrads actor_loss_grads(const AgentState& agent, const Batch& batch, const McrqConfig& cfg);

/// One least-squares step on both critics toward a fixed y; returns the
/// pre-step loss averaged over rows and critics.
double critic_update(AgentState& agent, const Batch& batch, const McrqConfig& cfg, Rng& rng);

/// One step on the actor only: loss = -mean[lambda*Q1(s,pi(s)) - ||pi(s)-a||^2],
/// lambda = alpha / mean|Q1(s,a)|.
double actor_update(AgentState& agent, const Batch& batch, const McrqConfig& cfg);

struct TrainingLogRow {
    std::size_t step = 0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double eval_return = 0.0;
    double normalized_score = 0.0;
    double action_divergence = 0.0;
};

struct TrainingLog {
    std::vector<TrainingLogRow> rows;
    std::string to_csv() const;
};

struct EvalResult {
    double mean_return = 0.0;
    double normalized_score = 0.0;
};

EvalResult evaluate(const Env& env, const AgentState& agent, std::size_t episodes,
                    std::uint64_t seed);

/// Full training loop; evaluation env is looked up from the dataset meta.
std::pair<AgentState, TrainingLog> train(const OfflineDataset& ds, const McrqConfig& cfg);

/// KL between diagonal Gaussians fitted to dataset actions and to actor
/// outputs on dataset states (dataset || actor); variances floored at 1e-6.
double action_divergence(const OfflineDataset& ds, const AgentState& agent);

struct Checkpoint {
    AgentState agent;
    McrqConfig config;
    std::string env_id;
};

void save_checkpoint(const AgentState& agent, const McrqConfig& cfg, const std::string& env_id,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcre
