#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcre/envs.hpp"
#include "mcre/mcre_ops.hpp"
#include "mcre/mdp.hpp"

namespace mcre {

struct Transition {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
};

struct DatasetMeta {
    std::string format = "mcre-ds/1";
    std::string env_id;
    std::string behavior_spec;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string created_at;
};

struct OfflineDataset {
    DatasetMeta meta;
    std::vector<Transition> transitions;

    /// Mean undiscounted return of the complete episodes in the log.
    double behavior_mean_return() const;
};

struct BehaviorSpec {
    enum class Kind { random, epsilon_greedy, expert, mixture, replay_schedule };
    struct Component {
        double weight = 1.0;
        Kind kind = Kind::random;
        double epsilon = 0.0;
    };

    Kind kind = Kind::random;
    double epsilon = 0.0;                    // epsilon_greedy
    double epsilon_start = 1.0;              // replay_schedule anneal, start -> epsilon
    std::vector<Component> mixture_weights;  // mixture; weights sum to 1

    /// Named tiers: random, medium, expert, medium-replay, medium-expert.
    static BehaviorSpec tier(const std::string& name);
    std::string to_string() const;
    void validate() const;
};

/// Fitted transition frequencies, mean rewards and visit counts for a
/// tabular dataset.
struct EmpiricalModel {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> p_hat;           // [s*A*S + a*S + s2], rows of visited pairs sum to 1
    std::vector<double> r_hat;           // [s*A + a]
    std::vector<std::uint64_t> counts;   // [s*A + a]
    std::vector<std::uint8_t> visited;   // [s*A + a]
    double min_reward = 0.0;             // permissive-mode fallback

    BackupModel view(double gamma, SupportMode mode) const;
};

/// Rolls episodes under the behavior spec until exactly n transitions are
/// logged; episodes truncate at the env horizon. Byte-reproducible from seed.
OfflineDataset generate_dataset(const Env& env, const BehaviorSpec& spec, std::size_t n,
                                std::uint64_t seed);

EmpiricalModel fit_empirical_model(const OfflineDataset& ds, std::size_t n_states,
                                   std::size_t n_actions);

/// Per-pair l1 distance between fitted and true transition rows; unvisited
/// pairs report the trivial bound 2.
std::vector<double> model_deviation(const EmpiricalModel& em, const TabularMdp& mdp);

struct DatasetIoError : MdpError {
    using MdpError::MdpError;
};

void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

std::string dataset_to_string(const OfflineDataset& ds);

}  // namespace mcre
