#include "mcre/mcrq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "mcre/log.hpp"

namespace mcre {

void McrqConfig::validate() const {
    if (upsilon < 0.0 || upsilon > 1.0) throw MdpError("upsilon out of [0,1]");
    if (omega < 0.0) throw MdpError("omega must be nonnegative");
    if (alpha < 0.0) throw MdpError("alpha must be nonnegative");
    if (gamma < 0.0 || gamma >= 1.0) throw MdpError("gamma out of [0,1)");
    if (tau <= 0.0 || tau > 1.0) throw MdpError("tau out of (0,1]");
    if (policy_delay == 0) throw MdpError("policy_delay must be >= 1");
    if (batch_size == 0) throw MdpError("batch_size must be >= 1");
    if (eval_interval == 0) throw MdpError("eval_interval must be >= 1");
    if (eval_episodes == 0) throw MdpError("eval_episodes must be >= 1");
    if (target_noise_sigma < 0.0 || target_noise_clip < 0.0)
        throw MdpError("noise parameters must be nonnegative");
    if (hidden.empty()) throw MdpError("need at least one hidden layer");
}

std::string McrqConfig::to_json() const {
    nlohmann::json j;
    j["upsilon"] = upsilon;
    j["omega"] = omega;
    j["alpha"] = alpha;
    j["gamma"] = gamma;
    j["tau"] = tau;
    j["policy_delay"] = policy_delay;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["target_noise_sigma"] = target_noise_sigma;
    j["target_noise_clip"] = target_noise_clip;
    j["eval_interval"] = eval_interval;
    j["eval_episodes"] = eval_episodes;
    j["seed"] = seed;
    j["hidden"] = hidden;
    j["lr"] = lr;
    return j.dump();
}

McrqConfig McrqConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    McrqConfig c;
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("upsilon", c.upsilon);
    get("omega", c.omega);
    get("alpha", c.alpha);
    get("gamma", c.gamma);
    get("tau", c.tau);
    get("policy_delay", c.policy_delay);
    get("batch_size", c.batch_size);
    get("total_steps", c.total_steps);
    get("target_noise_sigma", c.target_noise_sigma);
    get("target_noise_clip", c.target_noise_clip);
    get("eval_interval", c.eval_interval);
    get("eval_episodes", c.eval_episodes);
    get("seed", c.seed);
    get("hidden", c.hidden);
    get("lr", c.lr);
    c.validate();
    return c;
}

const std::map<std::string, McrqConfig>& mcrq_presets() {
    static const std::map<std::string, McrqConfig> presets = [] {
        std::map<std::string, McrqConfig> m;
        auto add = [&](const std::string& key, double u, double w, double a) {
            McrqConfig c;
            c.upsilon = u;
            c.omega = w;
            c.alpha = a;
            m[key] = c;
        };
        add("halfcheetah-r", 0.0, 2.5, 25.0);
        add("halfcheetah-m", 0.0, 0.0, 25.0);
        add("halfcheetah-m-r", 0.1, 0.0, 25.0);
        add("halfcheetah-m-e", 0.2, 2.0, 2.5);
        add("halfcheetah-e", 0.2, 0.5, 2.5);
        add("hopper-r", 0.0, 0.0, 20.0);
        add("hopper-m", 0.0, 2.0, 10.0);
        add("hopper-m-r", 0.0, 1.0, 20.0);
        add("hopper-m-e", 0.0, 2.0, 2.5);
        add("hopper-e", 0.3, 1.5, 2.5);
        add("walker2d-r", 0.3, 2.0, 15.0);
        add("walker2d-m", 0.0, 1.0, 5.0);
        add("walker2d-m-r", 0.0, 2.0, 10.0);
        add("walker2d-m-e", 0.0, 1.0, 5.0);
        add("walker2d-e", 0.0, 2.5, 5.0);
        return m;
    }();
    return presets;
}

StateNorm StateNorm::fit(const OfflineDataset& ds) {
    if (ds.transitions.empty()) throw MdpError("StateNorm: empty dataset");
    const std::size_t dim = ds.transitions.front().state.size();
    StateNorm n;
    n.mean.assign(dim, 0.0);
    n.stddev.assign(dim, 0.0);
    const double count = double(ds.transitions.size());
    for (const Transition& t : ds.transitions)
        for (std::size_t i = 0; i < dim; ++i) n.mean[i] += t.state[i];
    for (std::size_t i = 0; i < dim; ++i) n.mean[i] /= count;
    for (const Transition& t : ds.transitions)
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = t.state[i] - n.mean[i];
            n.stddev[i] += d * d;
        }
    for (std::size_t i = 0; i < dim; ++i)
        n.stddev[i] = std::max(std::sqrt(n.stddev[i] / count), 1e-6);
    return n;
}

std::vector<double> StateNorm::apply(const std::vector<double>& state) const {
    std::vector<double> out(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) out[i] = (state[i] - mean[i]) / stddev[i];
    return out;
}

AgentState AgentState::make(std::size_t state_dim, std::size_t action_dim, double action_bound,
                            const McrqConfig& cfg, const StateNorm& norm) {
    Rng rng = make_rng(cfg.seed, 0);
    std::vector<std::size_t> critic_dims = {state_dim + action_dim};
    std::vector<std::size_t> actor_dims = {state_dim};
    for (std::size_t h : cfg.hidden) {
        critic_dims.push_back(h);
        actor_dims.push_back(h);
    }
    critic_dims.push_back(1);
    actor_dims.push_back(action_dim);

    AgentState ag;
    ag.critic1 = Mlp::make(critic_dims, Mlp::Output::identity, 0.0, rng);
    ag.critic2 = Mlp::make(critic_dims, Mlp::Output::identity, 0.0, rng);
    ag.actor = Mlp::make(actor_dims, Mlp::Output::bounded, action_bound, rng);
    ag.target_critic1 = ag.critic1;
    ag.target_critic2 = ag.critic2;
    ag.target_actor = ag.actor;
    ag.opt_critic1 = OptimState::make(ag.critic1.params.size(), cfg.lr);
    ag.opt_critic2 = OptimState::make(ag.critic2.params.size(), cfg.lr);
    ag.opt_actor = OptimState::make(ag.actor.params.size(), cfg.lr);
    ag.norm = norm;
    ag.action_bound = action_bound;
    return ag;
}

std::vector<double> AgentState::policy_action(const std::vector<double>& raw_state) const {
    return forward(actor, norm.apply(raw_state));
}

Batch sample_batch(const OfflineDataset& ds, const StateNorm& norm, std::size_t batch_size,
                   Rng& rng) {
    if (ds.transitions.empty()) throw MdpError("sample_batch: empty dataset");
    std::uniform_int_distribution<std::size_t> pick(0, ds.transitions.size() - 1);
    Batch b;
    b.states.reserve(batch_size);
    b.actions.reserve(batch_size);
    b.rewards.reserve(batch_size);
    b.next_states.reserve(batch_size);
    b.done.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const Transition& t = ds.transitions[pick(rng)];
        b.states.push_back(norm.apply(t.state));
        b.actions.push_back(t.action);
        b.rewards.push_back(t.reward);
        b.next_states.push_back(norm.apply(t.next_state));
        b.done.push_back(t.done ? 1 : 0);
    }
    return b;
}

std::vector<std::vector<double>> target_action(const AgentState& agent,
                                               const std::vector<std::vector<double>>& next_states,
                                               const McrqConfig& cfg, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, cfg.target_noise_sigma);
    std::vector<std::vector<double>> out;
    out.reserve(next_states.size());
    for (const auto& s : next_states) {
        std::vector<double> a = forward(agent.target_actor, s);
        for (double& ai : a) {
            double eps = cfg.target_noise_sigma > 0.0 ? gauss(rng) : 0.0;
            eps = std::clamp(eps, -cfg.target_noise_clip, cfg.target_noise_clip);
            ai = std::clamp(ai + eps, -agent.action_bound, agent.action_bound);
        }
        out.push_back(std::move(a));
    }
    return out;
}

namespace {

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

double q_value(const Mlp& critic, const std::vector<double>& state,
               const std::vector<double>& action) {
    return forward(critic, concat(state, action))[0];
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

std::vector<double> td_target(const AgentState& agent, const Batch& batch, const McrqConfig& cfg,
                              Rng& rng) {
    const std::size_t n = batch.size();
    const auto next_actions = target_action(agent, batch.next_states, cfg, rng);
    std::vector<double> y(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) {
        const double r = batch.rewards[i];
        const double mask = batch.done[i] ? 0.0 : 1.0;
        const double q1p = q_value(agent.target_critic1, batch.next_states[i], next_actions[i]);
        const double q2p = q_value(agent.target_critic2, batch.next_states[i], next_actions[i]);
        const double min_p = std::min(q1p, q2p);
        const double max_p = std::max(q1p, q2p);
        const std::vector<double> pi_s = forward(agent.actor, batch.states[i]);
        const double q1 = q_value(agent.critic1, batch.states[i], pi_s);
        const double q2 = q_value(agent.critic2, batch.states[i], pi_s);
        const double online_max = std::max(q1, q2);
        const double y1 = r + cfg.gamma * mask * min_p;
        const double y2 =
            r + cfg.gamma * mask * (max_p - (r + cfg.gamma * mask * min_p - online_max));
        const double bc = cfg.omega * sq_dist(pi_s, batch.actions[i]);
        const double yi = (1.0 - cfg.upsilon) * y1 + cfg.upsilon * y2 - cfg.gamma * bc;
        if (!std::isfinite(yi)) y[i] = std::numeric_limits<double>::quiet_NaN();
        else y[i] = yi;
    }
    for (double v : y)
        if (!std::isfinite(v)) throw TrainingDivergenceError("non-finite TD target");
    return y;
}

namespace {

// Mean-squared-error loss and gradient of one critic toward fixed targets.
// Per-row gradients are computed in parallel and reduced in index order so
// the result is independent of thread count.
std::pair<double, std::vector<double>> critic_mse_grads(const Mlp& critic, const Batch& batch,
                                                        const std::vector<double>& y) {
    const std::size_t n = batch.size();
    std::vector<double> losses(n);
    std::vector<Gradients> row_grads(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) {
        const std::vector<double> input = concat(batch.states[i], batch.actions[i]);
        const double q = forward(critic, input)[0];
        const double resid = q - y[i];
        losses[i] = resid * resid;
        row_grads[i] = backward(critic, input, {2.0 * resid / double(n)});
    }
    std::vector<double> grad(critic.params.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss += losses[i];
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += row_grads[i].params[k];
    }
    loss /= double(n);
    if (!std::isfinite(loss)) throw TrainingDivergenceError("non-finite critic loss");
    return {loss, std::move(grad)};
}

}  // namespace

CriticGrads critic_loss_grads(const AgentState& agent, const Batch& batch,
                              const std::vector<double>& y) {
    CriticGrads out;
    auto [l1, g1] = critic_mse_grads(agent.critic1, batch, y);
    auto [l2, g2] = critic_mse_grads(agent.critic2, batch, y);
    out.loss = 0.5 * (l1 + l2);
    out.grad1 = std::move(g1);
    out.grad2 = std::move(g2);
    return out;
}

double critic_update(AgentState& agent, const Batch& batch, const McrqConfig& cfg, Rng& rng) {
    const std::vector<double> y = td_target(agent, batch, cfg, rng);
    CriticGrads g = critic_loss_grads(agent, batch, y);
    optimizer_step(agent.critic1.params, g.grad1, agent.opt_critic1);
    optimizer_step(agent.critic2.params, g.grad2, agent.opt_critic2);
    return g.loss;
}

ActorGrads actor_loss_grads(const AgentState& agent, const Batch& batch, const McrqConfig& cfg) {
    const std::size_t n = batch.size();
    const std::size_t state_dim = agent.actor.input_dim();
    const std::size_t action_dim = agent.actor.output_dim();

    // lambda from the batch mean of |Q1(s,a)| on dataset actions
    std::vector<double> absq(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i)
        absq[i] = std::abs(q_value(agent.critic1, batch.states[i], batch.actions[i]));
    double mean_absq = 0.0;
    for (double v : absq) mean_absq += v;
    mean_absq /= double(n);
    if (mean_absq < 1e-8) {
        log_msg(LogLevel::warn, "actor_update: mean |Q| below epsilon guard");
        mean_absq = 1e-8;
    }
    const double lambda = cfg.alpha / mean_absq;

    std::vector<double> losses(n);
    std::vector<Gradients> row_grads(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) {
        const std::vector<double> u = forward(agent.actor, batch.states[i]);
        const std::vector<double> input = concat(batch.states[i], u);
        const double q = forward(agent.critic1, input)[0];
        losses[i] = -(lambda * q - sq_dist(u, batch.actions[i]));
        // dLoss/du = -(1/N) (lambda dQ/du - 2(u - a))
        const Gradients qg = backward(agent.critic1, input, {1.0});
        std::vector<double> du(action_dim);
        for (std::size_t k = 0; k < action_dim; ++k)
            du[k] = (-lambda * qg.input[state_dim + k] + 2.0 * (u[k] - batch.actions[i][k])) /
                    double(n);
        row_grads[i] = backward(agent.actor, batch.states[i], du);
    }
    ActorGrads out;
    out.lambda = lambda;
    out.grad.assign(agent.actor.params.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.loss += losses[i];
        for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += row_grads[i].params[k];
    }
    out.loss /= double(n);
    if (!std::isfinite(out.loss)) throw TrainingDivergenceError("non-finite actor loss");
    return out;
}

double actor_update(AgentState& agent, const Batch& batch, const McrqConfig& cfg) {
    ActorGrads g = actor_loss_grads(agent, batch, cfg);
    optimizer_step(agent.actor.params, g.grad, agent.opt_actor);
    return g.loss;
}

EvalResult evaluate(const Env& env, const AgentState& agent, std::size_t episodes,
                    std::uint64_t seed) {
    const ReferenceReturns refs = env.reference_returns();
    if (refs.expert_ref <= refs.random_ref)
        throw MdpError("evaluate: invalid or missing reference returns");
    double acc = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        Rng rng = make_rng(seed, e);
        acc += rollout_return(
            env, [&](const EnvState& st, Rng&) { return agent.policy_action(st.observation); },
            rng);
    }
    EvalResult res;
    res.mean_return = acc / double(episodes);
    res.normalized_score =
        100.0 * (res.mean_return - refs.random_ref) / (refs.expert_ref - refs.random_ref);
    return res;
}

double action_divergence(const OfflineDataset& ds, const AgentState& agent) {
    if (ds.transitions.empty()) throw MdpError("action_divergence: empty dataset");
    const std::size_t dim = ds.transitions.front().action.size();
    // evenly strided subsample keeps this cheap on large datasets
    const std::size_t cap = 4096;
    const std::size_t stride = std::max<std::size_t>(1, ds.transitions.size() / cap);

    std::vector<double> mu0(dim, 0.0), var0(dim, 0.0), mu1(dim, 0.0), var1(dim, 0.0);
    std::vector<std::vector<double>> actor_actions;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.transitions.size(); i += stride) {
        const Transition& t = ds.transitions[i];
        for (std::size_t k = 0; k < dim; ++k) mu0[k] += t.action[k];
        actor_actions.push_back(agent.policy_action(t.state));
        for (std::size_t k = 0; k < dim; ++k) mu1[k] += actor_actions.back()[k];
        ++n;
    }
    for (std::size_t k = 0; k < dim; ++k) {
        mu0[k] /= double(n);
        mu1[k] /= double(n);
    }
    std::size_t j = 0;
    for (std::size_t i = 0; i < ds.transitions.size(); i += stride, ++j) {
        const Transition& t = ds.transitions[i];
        for (std::size_t k = 0; k < dim; ++k) {
            const double d0 = t.action[k] - mu0[k];
            const double d1 = actor_actions[j][k] - mu1[k];
            var0[k] += d0 * d0;
            var1[k] += d1 * d1;
        }
    }
    double kl = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        double v0 = var0[k] / double(n), v1 = var1[k] / double(n);
        if (v0 < 1e-6 || v1 < 1e-6) log_msg(LogLevel::debug, "action_divergence: variance floored");
        v0 = std::max(v0, 1e-6);
        v1 = std::max(v1, 1e-6);
        const double dmu = mu0[k] - mu1[k];
        kl += 0.5 * std::log(v1 / v0) + (v0 + dmu * dmu) / (2.0 * v1) - 0.5;
    }
    return kl;
}

std::string TrainingLog::to_csv() const {
    std::string out = "step,critic_loss,actor_loss,eval_return,normalized_score,action_divergence\n";
    char buf[256];
    for (const TrainingLogRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                      r.critic_loss, r.actor_loss, r.eval_return, r.normalized_score,
                      r.action_divergence);
        out += buf;
    }
    return out;
}

std::pair<AgentState, TrainingLog> train(const OfflineDataset& ds, const McrqConfig& cfg) {
    cfg.validate();
    if (ds.transitions.empty()) throw MdpError("train: empty dataset");
    const auto env = make_env(ds.meta.env_id);

    const StateNorm norm = StateNorm::fit(ds);
    AgentState agent = AgentState::make(ds.transitions.front().state.size(),
                                        ds.transitions.front().action.size(), env->action_bound(),
                                        cfg, norm);
    TrainingLog log;
    if (cfg.total_steps == 0) return {std::move(agent), std::move(log)};

    Rng rng = make_rng(cfg.seed, 1);
    double last_closs = 0.0, last_aloss = 0.0;
    for (std::size_t t = 1; t <= cfg.total_steps; ++t) {
        Batch batch = sample_batch(ds, norm, cfg.batch_size, rng);
        last_closs = critic_update(agent, batch, cfg, rng);
        if (t % cfg.policy_delay == 0) {
            last_aloss = actor_update(agent, batch, cfg);
            soft_update(agent.target_critic1.params, agent.critic1.params, cfg.tau);
            soft_update(agent.target_critic2.params, agent.critic2.params, cfg.tau);
            soft_update(agent.target_actor.params, agent.actor.params, cfg.tau);
        }
        agent.step = t;
        if (t % cfg.eval_interval == 0 || t == cfg.total_steps) {
            const EvalResult ev = evaluate(*env, agent, cfg.eval_episodes,
                                           split_seed(cfg.seed, 100000 + t));
            TrainingLogRow row;
            row.step = t;
            row.critic_loss = last_closs;
            row.actor_loss = last_aloss;
            row.eval_return = ev.mean_return;
            row.normalized_score = ev.normalized_score;
            row.action_divergence = action_divergence(ds, agent);
            log.rows.push_back(row);
            log_msg(LogLevel::info, "step " + std::to_string(t) + " score " +
                                        std::to_string(ev.normalized_score));
        }
    }
    return {std::move(agent), std::move(log)};
}

void save_checkpoint(const AgentState& agent, const McrqConfig& cfg, const std::string& env_id,
                     const std::string& path) {
    nlohmann::json manifest;
    manifest["config"] = nlohmann::json::parse(cfg.to_json());
    manifest["env_id"] = env_id;
    manifest["norm_mean"] = agent.norm.mean;
    manifest["norm_stddev"] = agent.norm.stddev;
    manifest["action_bound"] = agent.action_bound;
    manifest["step"] = agent.step;
    const Mlp* nets[6] = {&agent.critic1, &agent.critic2,      &agent.actor,
                          &agent.target_critic1, &agent.target_critic2, &agent.target_actor};
    nlohmann::json net_manifests = nlohmann::json::array();
    for (const Mlp* net : nets) net_manifests.push_back(nlohmann::json::parse(mlp_manifest(*net)));
    manifest["networks"] = net_manifests;
    const OptimState* opts[3] = {&agent.opt_critic1, &agent.opt_critic2, &agent.opt_actor};
    nlohmann::json opt_meta = nlohmann::json::array();
    for (const OptimState* o : opts) {
        nlohmann::json jo;
        jo["step"] = o->step;
        jo["lr"] = o->lr;
        jo["n"] = o->m.size();
        opt_meta.push_back(jo);
    }
    manifest["optimizers"] = opt_meta;

    std::string blob;
    for (const Mlp* net : nets) write_f64_le(blob, net->params);
    for (const OptimState* o : opts) {
        write_f64_le(blob, o->m);
        write_f64_le(blob, o->v);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw MdpError("cannot open checkpoint for writing: " + path);
    f << manifest.dump() << "\n" << blob;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MdpError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line)) throw MdpError("checkpoint missing manifest line");
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    nlohmann::json manifest = nlohmann::json::parse(line);

    Checkpoint ck;
    ck.config = McrqConfig::from_json(manifest.at("config").dump());
    ck.env_id = manifest.at("env_id").get<std::string>();
    AgentState& ag = ck.agent;
    ag.norm.mean = manifest.at("norm_mean").get<std::vector<double>>();
    ag.norm.stddev = manifest.at("norm_stddev").get<std::vector<double>>();
    ag.action_bound = manifest.at("action_bound").get<double>();
    ag.step = manifest.at("step").get<std::size_t>();

    Mlp* nets[6] = {&ag.critic1, &ag.critic2, &ag.actor, &ag.target_critic1, &ag.target_critic2,
                    &ag.target_actor};
    std::size_t off = 0;
    for (int i = 0; i < 6; ++i) {
        const nlohmann::json& nm = manifest.at("networks").at(i);
        const std::size_t count = nm.at("n_params").get<std::size_t>();
        *nets[i] = mlp_from_manifest(nm.dump(), read_f64_le(blob, off, count));
        off += 8 * count;
    }
    OptimState* opts[3] = {&ag.opt_critic1, &ag.opt_critic2, &ag.opt_actor};
    for (int i = 0; i < 3; ++i) {
        const nlohmann::json& om = manifest.at("optimizers").at(i);
        const std::size_t count = om.at("n").get<std::size_t>();
        *opts[i] = OptimState::make(count, om.at("lr").get<double>());
        opts[i]->step = om.at("step").get<std::size_t>();
        opts[i]->m = read_f64_le(blob, off, count);
        off += 8 * count;
        opts[i]->v = read_f64_le(blob, off, count);
        off += 8 * count;
    }
    return ck;
}

}  // namespace mcre
