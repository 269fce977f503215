#include "mcre/offline_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mcre/log.hpp"

namespace mcre {

namespace {

std::string format_epoch(std::time_t t) {
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Reproducibility contract: generation output depends only on
// (env, spec, n, seed), so the timestamp honors SOURCE_DATE_EPOCH and
// defaults to the epoch instead of wall clock.
std::string created_at_stamp() {
    if (const char* v = std::getenv("SOURCE_DATE_EPOCH"))
        return format_epoch(static_cast<std::time_t>(std::strtoll(v, nullptr, 10)));
    return format_epoch(0);
}

const char* kind_name(BehaviorSpec::Kind k) {
    switch (k) {
        case BehaviorSpec::Kind::random: return "random";
        case BehaviorSpec::Kind::epsilon_greedy: return "epsilon_greedy";
        case BehaviorSpec::Kind::expert: return "expert";
        case BehaviorSpec::Kind::mixture: return "mixture";
        default: return "replay_schedule";
    }
}

}  // namespace

BehaviorSpec BehaviorSpec::tier(const std::string& name) {
    BehaviorSpec s;
    if (name == "random") {
        s.kind = Kind::random;
    } else if (name == "medium") {
        s.kind = Kind::epsilon_greedy;
        s.epsilon = 0.3;
    } else if (name == "expert") {
        s.kind = Kind::epsilon_greedy;
        s.epsilon = 0.05;
    } else if (name == "medium-replay") {
        s.kind = Kind::replay_schedule;
        s.epsilon_start = 1.0;
        s.epsilon = 0.3;
    } else if (name == "medium-expert") {
        s.kind = Kind::mixture;
        s.mixture_weights = {{0.5, Kind::epsilon_greedy, 0.3}, {0.5, Kind::epsilon_greedy, 0.05}};
    } else {
        throw MdpError("unknown dataset tier: " + name);
    }
    return s;
}

void BehaviorSpec::validate() const {
    if (epsilon < 0.0 || epsilon > 1.0) throw MdpError("behavior epsilon out of [0,1]");
    if (kind == Kind::mixture) {
        double sum = 0.0;
        for (const auto& c : mixture_weights) {
            if (c.weight < 0.0) throw MdpError("negative mixture weight");
            if (c.epsilon < 0.0 || c.epsilon > 1.0) throw MdpError("mixture epsilon out of [0,1]");
            sum += c.weight;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw MdpError("mixture weights must sum to 1");
    }
}

std::string BehaviorSpec::to_string() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::random:
        case Kind::expert: os << kind_name(kind); break;
        case Kind::epsilon_greedy: os << "epsilon_greedy(" << epsilon << ")"; break;
        case Kind::replay_schedule:
            os << "replay_schedule(" << epsilon_start << "->" << epsilon << ")";
            break;
        case Kind::mixture: {
            os << "mixture[";
            for (std::size_t i = 0; i < mixture_weights.size(); ++i) {
                const auto& c = mixture_weights[i];
                if (i) os << ",";
                os << c.weight << "*" << kind_name(c.kind);
                if (c.kind == Kind::epsilon_greedy) os << "(" << c.epsilon << ")";
            }
            os << "]";
            break;
        }
    }
    return os.str();
}

double OfflineDataset::behavior_mean_return() const {
    double episode = 0.0, acc = 0.0;
    std::size_t episodes = 0;
    for (const Transition& t : transitions) {
        episode += t.reward;
        if (t.done) {
            acc += episode;
            episode = 0.0;
            ++episodes;
        }
    }
    if (episodes == 0) throw MdpError("behavior_mean_return: no complete episode in dataset");
    return acc / double(episodes);
}

OfflineDataset generate_dataset(const Env& env, const BehaviorSpec& spec, std::size_t n,
                                std::uint64_t seed) {
    if (n == 0) throw MdpError("generate_dataset: n must be >= 1");
    spec.validate();

    OfflineDataset ds;
    ds.meta.env_id = env.id();
    ds.meta.behavior_spec = spec.to_string();
    ds.meta.seed = seed;
    ds.meta.count = n;
    ds.meta.created_at = created_at_stamp();
    ds.transitions.reserve(n);

    Rng rng = make_rng(seed, 0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    auto act = [&](const EnvState& st, double eps, BehaviorSpec::Kind k) {
        switch (k) {
            case BehaviorSpec::Kind::random: return env.random_action(rng);
            case BehaviorSpec::Kind::expert: return env.expert_action(st, rng);
            default:
                if (coin(rng) < eps) return env.random_action(rng);
                return env.expert_action(st, rng);
        }
    };

    while (ds.transitions.size() < n) {
        BehaviorSpec::Kind k = spec.kind;
        double eps = spec.epsilon;
        if (spec.kind == BehaviorSpec::Kind::mixture) {
            double x = coin(rng), cum = 0.0;
            for (const auto& c : spec.mixture_weights) {
                cum += c.weight;
                if (x < cum) {
                    k = c.kind;
                    eps = c.epsilon;
                    break;
                }
            }
        }
        EnvState st = env.reset(rng);
        while (!st.done && ds.transitions.size() < n) {
            if (spec.kind == BehaviorSpec::Kind::replay_schedule) {
                const double frac = n > 1 ? double(ds.transitions.size()) / double(n - 1) : 1.0;
                eps = spec.epsilon_start + (spec.epsilon - spec.epsilon_start) * frac;
                k = BehaviorSpec::Kind::epsilon_greedy;
            }
            std::vector<double> a = act(st, eps, k);
            auto [next, r] = env.step(st, a, rng);
            ds.transitions.push_back({st.observation, a, r, next.observation, next.done});
            st = std::move(next);
        }
    }
    return ds;
}

EmpiricalModel fit_empirical_model(const OfflineDataset& ds, std::size_t n_states,
                                   std::size_t n_actions) {
    EmpiricalModel em;
    em.n_states = n_states;
    em.n_actions = n_actions;
    em.p_hat.assign(n_states * n_actions * n_states, 0.0);
    em.r_hat.assign(n_states * n_actions, 0.0);
    em.counts.assign(n_states * n_actions, 0);
    em.visited.assign(n_states * n_actions, 0);
    em.min_reward = 0.0;

    bool first = true;
    for (const Transition& t : ds.transitions) {
        const auto s = static_cast<std::size_t>(t.state.at(0));
        const auto a = static_cast<std::size_t>(t.action.at(0));
        const auto s2 = static_cast<std::size_t>(t.next_state.at(0));
        if (s >= n_states || a >= n_actions || s2 >= n_states)
            throw MdpError("fit_empirical_model: index out of declared shape");
        em.p_hat[(s * n_actions + a) * n_states + s2] += 1.0;
        em.r_hat[s * n_actions + a] += t.reward;
        em.counts[s * n_actions + a] += 1;
        em.visited[s * n_actions + a] = 1;
        em.min_reward = first ? t.reward : std::min(em.min_reward, t.reward);
        first = false;
    }
    for (std::size_t i = 0; i < n_states * n_actions; ++i) {
        if (!em.visited[i]) continue;
        const double c = double(em.counts[i]);
        em.r_hat[i] /= c;
        double* row = em.p_hat.data() + i * n_states;
        for (std::size_t s2 = 0; s2 < n_states; ++s2) row[s2] /= c;
    }
    return em;
}

BackupModel EmpiricalModel::view(double gamma, SupportMode mode) const {
    BackupModel m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    m.p = p_hat.data();
    m.r = r_hat.data();
    m.visited = visited.data();
    m.fallback_reward = min_reward;
    m.mode = mode;
    return m;
}

std::vector<double> model_deviation(const EmpiricalModel& em, const TabularMdp& mdp) {
    if (em.n_states != mdp.n_states || em.n_actions != mdp.n_actions)
        throw MdpError("model_deviation: shape mismatch");
    std::vector<double> dev(em.n_states * em.n_actions, 2.0);
    for (std::size_t i = 0; i < dev.size(); ++i) {
        if (!em.visited[i]) continue;  // trivial bound
        double acc = 0.0;
        for (std::size_t s2 = 0; s2 < em.n_states; ++s2)
            acc += std::abs(em.p_hat[i * em.n_states + s2] - mdp.transition[i * em.n_states + s2]);
        dev[i] = acc;
    }
    return dev;
}

namespace {

nlohmann::json transition_to_json(const Transition& t) {
    nlohmann::json j;
    j["s"] = t.state;
    j["a"] = t.action;
    j["r"] = t.reward;
    j["s2"] = t.next_state;
    j["done"] = t.done;
    return j;
}

}  // namespace

std::string dataset_to_string(const OfflineDataset& ds) {
    nlohmann::json meta;
    meta["format"] = ds.meta.format;
    meta["env_id"] = ds.meta.env_id;
    meta["behavior_spec"] = ds.meta.behavior_spec;
    meta["seed"] = ds.meta.seed;
    meta["count"] = ds.meta.count;
    meta["created_at"] = ds.meta.created_at;
    std::string out = meta.dump();
    out += "\n";
    for (const Transition& t : ds.transitions) {
        out += transition_to_json(t).dump();
        out += "\n";
    }
    return out;
}

void save_dataset(const OfflineDataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DatasetIoError("cannot open for writing: " + path);
    f << dataset_to_string(ds);
    if (!f) throw DatasetIoError("write failed: " + path);
}

OfflineDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetIoError("cannot open for reading: " + path);
    OfflineDataset ds;
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(f, line)) throw DatasetIoError("empty dataset file: " + path);
    ++line_no;
    try {
        nlohmann::json meta = nlohmann::json::parse(line);
        ds.meta.format = meta.at("format").get<std::string>();
        ds.meta.env_id = meta.at("env_id").get<std::string>();
        ds.meta.behavior_spec = meta.at("behavior_spec").get<std::string>();
        ds.meta.seed = meta.at("seed").get<std::uint64_t>();
        ds.meta.count = meta.at("count").get<std::size_t>();
        ds.meta.created_at = meta.at("created_at").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DatasetIoError("parse error at line 1 (meta): " + std::string(e.what()));
    }
    if (ds.meta.format != "mcre-ds/1")
        throw DatasetIoError("unsupported dataset format: " + ds.meta.format);

    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            Transition t;
            t.state = j.at("s").get<std::vector<double>>();
            t.action = j.at("a").get<std::vector<double>>();
            t.reward = j.at("r").get<double>();
            t.next_state = j.at("s2").get<std::vector<double>>();
            t.done = j.at("done").get<bool>();
            if (!std::isfinite(t.reward))
                throw DatasetIoError("non-finite reward at line " + std::to_string(line_no));
            ds.transitions.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw DatasetIoError("parse error at line " + std::to_string(line_no) + ": " +
                                 std::string(e.what()));
        }
    }
    if (ds.transitions.size() != ds.meta.count)
        throw DatasetIoError("integrity error: meta count " + std::to_string(ds.meta.count) +
                             " but found " + std::to_string(ds.transitions.size()) +
                             " transitions");
    return ds;
}

}  // namespace mcre
