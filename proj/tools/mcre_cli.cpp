// mcre command-line harness: dataset generation, tabular solving, MCRQ
// training/evaluation, property verification, ablation sweeps and bound
// reports. Machine-readable output (JSON/CSV) on stdout, prose on stderr.
// Exit codes: 0 success, 1 runtime failure, 2 usage/validation failure.

#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "mcre/bounds.hpp"
#include "mcre/envs.hpp"
#include "mcre/log.hpp"
#include "mcre/mcre_ops.hpp"
#include "mcre/mcrq.hpp"
#include "mcre/mdp.hpp"
#include "mcre/offline_data.hpp"
#include "mcre/verify.hpp"

namespace {

using nlohmann::json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

mcre::McrqConfig config_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw UsageError("config file is not valid JSON: " + std::string(e.what()));
    }
    static const std::set<std::string> allowed = {
        "upsilon",      "omega",         "alpha",        "gamma",
        "tau",          "policy_delay",  "batch_size",   "total_steps",
        "target_noise_sigma", "target_noise_clip", "eval_interval",
        "eval_episodes", "seed",         "hidden",       "lr"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw UsageError("unknown config key: " + it.key());
    try {
        return mcre::McrqConfig::from_json(ss.str());
    } catch (const mcre::MdpError& e) {
        throw UsageError(std::string("invalid config: ") + e.what());
    }
}

const mcre::GridworldEnv& tabular_env(const std::string& env_id) {
    const auto env = mcre::make_env(env_id);
    const auto* gw = dynamic_cast<const mcre::GridworldEnv*>(env.get());
    if (!gw) throw UsageError("command requires a tabular env, got: " + env_id);
    return *gw;
}

mcre::DeterministicPolicy make_policy(const mcre::GridworldEnv& gw, const std::string& kind,
                                      std::uint64_t seed) {
    if (kind == "optimal") return gw.optimal();
    if (kind == "random") {
        mcre::Rng rng = mcre::make_rng(seed, 42);
        std::uniform_int_distribution<std::size_t> pick(0, gw.mdp().n_actions - 1);
        mcre::DeterministicPolicy pi;
        pi.action_of.resize(gw.mdp().n_states);
        for (auto& a : pi.action_of) a = pick(rng);
        return pi;
    }
    throw UsageError("unknown policy kind: " + kind + " (expected optimal|random)");
}

// --------------------------------------------------------------------- solve

json run_solve(const std::string& env_id, const std::string& dataset_path,
               const std::string& policy_kind, double upsilon, double omega,
               std::uint64_t seed) {
    const mcre::GridworldEnv& gw = tabular_env(env_id);
    const mcre::TabularMdp& mdp = gw.mdp();
    const mcre::ActionEmbedding emb = mcre::embedding_view(mdp);
    const mcre::DeterministicPolicy pi = make_policy(gw, policy_kind, seed);
    const mcre::MreConfig cfg{upsilon, omega, mdp.gamma};
    const mcre::QTable q_pi = mcre::exact_q(mdp, pi);

    json rep;
    rep["env_id"] = env_id;
    rep["policy"] = policy_kind;
    rep["gamma"] = mdp.gamma;
    rep["upsilon"] = upsilon;
    rep["omega"] = omega;
    rep["condition_met"] = cfg.theorem_condition_met();
    if (!cfg.theorem_condition_met())
        mcre::log_msg(mcre::LogLevel::warn,
                      "upsilon exceeds the gap-bound threshold; bounds will be null");

    auto bound_or_null = [&](auto&& fn) -> json {
        try {
            return fn();
        } catch (const mcre::BoundUndefinedError&) {
            return nullptr;
        }
    };

    if (dataset_path.empty()) {
        rep["mode"] = "exact";
        const auto fp = mcre::fixed_point(mcre::model_view(mdp), pi, cfg, emb,
                                          mcre::QTable(mdp.n_states, mdp.n_actions));
        double lhs = 0.0;
        for (std::size_t i = 0; i < fp.q_star.values.size(); ++i)
            lhs = std::max(lhs, std::abs(fp.q_star.values[i] - q_pi.values[i]));
        const double max_bc = mcre::max_bc_over_dataset(emb, pi, omega, nullptr, mdp.n_states,
                                                        mdp.n_actions);
        rep["iterations"] = fp.iterations;
        rep["max_bc"] = max_bc;
        rep["lhs"] = lhs;
        rep["rhs"] = bound_or_null([&] { return json(mcre::q_gap_bound_exact(cfg, max_bc)); });
        rep["slack"] = rep["rhs"].is_null() ? json(nullptr) : json(rep["rhs"].get<double>() - lhs);
        return rep;
    }

    rep["mode"] = "empirical";
    const mcre::OfflineDataset ds = mcre::load_dataset(dataset_path);
    if (ds.meta.env_id != env_id)
        throw UsageError("dataset env_id " + ds.meta.env_id + " does not match --env " + env_id);
    const mcre::EmpiricalModel em = mcre::fit_empirical_model(ds, mdp.n_states, mdp.n_actions);
    const auto fp = mcre::fixed_point(em.view(mdp.gamma, mcre::SupportMode::permissive), pi, cfg,
                                      emb, mcre::QTable(mdp.n_states, mdp.n_actions));
    const std::vector<double> dev = mcre::model_deviation(em, mdp);
    double max_dev = 0.0, lhs_q = 0.0, lhs_v = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            const std::size_t i = s * mdp.n_actions + a;
            if (!em.visited[i]) continue;
            max_dev = std::max(max_dev, dev[i]);
            lhs_q = std::max(lhs_q, std::abs(fp.q_star.at(s, a) - q_pi.at(s, a)));
        }
        if (em.visited[s * mdp.n_actions + pi.action_of[s]])
            lhs_v = std::max(lhs_v, std::abs(fp.q_star.at(s, pi.action_of[s]) -
                                             q_pi.at(s, pi.action_of[s])));
    }
    const double max_bc = mcre::max_bc_over_dataset(emb, pi, omega, em.visited.data(),
                                                    mdp.n_states, mdp.n_actions);
    rep["iterations"] = fp.iterations;
    rep["dataset_count"] = ds.meta.count;
    rep["max_bc"] = max_bc;
    rep["max_dev"] = max_dev;
    rep["lhs"] = lhs_q;
    rep["lhs_v"] = lhs_v;
    rep["rhs"] = bound_or_null(
        [&] { return json(mcre::q_gap_bound_empirical(cfg, max_bc, max_dev, mdp.r_max)); });
    rep["rhs_v"] = mcre::v_gap_bound_empirical(mdp.gamma, max_dev, mdp.r_max);
    rep["slack"] = rep["rhs"].is_null() ? json(nullptr) : json(rep["rhs"].get<double>() - lhs_q);
    rep["slack_v"] = rep["rhs_v"].get<double>() - lhs_v;
    return rep;
}

// -------------------------------------------------------------------- ablate

std::string run_ablate_tabular(const mcre::OfflineDataset& ds, const std::vector<double>& ups,
                               const std::vector<double>& oms, const std::vector<double>& alphas,
                               const std::vector<std::uint64_t>& seeds) {
    const mcre::GridworldEnv& gw = tabular_env(ds.meta.env_id);
    const mcre::TabularMdp& mdp = gw.mdp();
    const mcre::ActionEmbedding emb = mcre::embedding_view(mdp);
    const mcre::DeterministicPolicy& pi = gw.optimal();
    const mcre::QTable q_pi = mcre::exact_q(mdp, pi);
    const mcre::EmpiricalModel em = mcre::fit_empirical_model(ds, mdp.n_states, mdp.n_actions);

    std::string csv = "upsilon,omega,alpha,seed,q_gap,q_gap_bound\n";
    char buf[256];
    for (double u : ups) {
        for (double w : oms) {
            for (double al : alphas) {
                for (std::uint64_t sd : seeds) {
                    const mcre::MreConfig cfg{u, w, mdp.gamma};
                    try {
                        // Theorem-2 setting: exact model, gap against exact_q
                        const auto fp =
                            mcre::fixed_point(mcre::model_view(mdp), pi, cfg, emb,
                                              mcre::QTable(mdp.n_states, mdp.n_actions));
                        double gap = 0.0;
                        for (std::size_t i = 0; i < fp.q_star.values.size(); ++i)
                            gap = std::max(gap,
                                           std::abs(fp.q_star.values[i] - q_pi.values[i]));
                        const double max_bc = mcre::max_bc_over_dataset(
                            emb, pi, w, em.visited.data(), mdp.n_states, mdp.n_actions);
                        const double bound = mcre::q_gap_bound_exact(cfg, max_bc);
                        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%llu,%.17g,%.17g\n", u,
                                      w, al, static_cast<unsigned long long>(sd), gap, bound);
                        csv += buf;
                    } catch (const std::exception& e) {
                        mcre::log_msg(mcre::LogLevel::warn,
                                      "ablate cell failed, continuing: " + std::string(e.what()));
                        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%llu,nan,nan\n", u, w,
                                      al, static_cast<unsigned long long>(sd));
                        csv += buf;
                    }
                }
            }
        }
    }
    return csv;
}

std::string run_ablate_neural(const mcre::OfflineDataset& ds, const std::vector<double>& ups,
                              const std::vector<double>& oms, const std::vector<double>& alphas,
                              const std::vector<std::uint64_t>& seeds,
                              const mcre::McrqConfig& base) {
    std::string csv = "upsilon,omega,alpha,seed,final_score,divergence\n";
    char buf[256];
    const auto env = mcre::make_env(ds.meta.env_id);
    for (double u : ups) {
        for (double w : oms) {
            for (double al : alphas) {
                for (std::uint64_t sd : seeds) {
                    mcre::McrqConfig cfg = base;
                    cfg.upsilon = u;
                    cfg.omega = w;
                    cfg.alpha = al;
                    cfg.seed = sd;
                    try {
                        auto [agent, log] = mcre::train(ds, cfg);
                        const auto ev = mcre::evaluate(*env, agent, cfg.eval_episodes,
                                                       mcre::split_seed(sd, 999));
                        const double div = mcre::action_divergence(ds, agent);
                        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%llu,%.17g,%.17g\n", u,
                                      w, al, static_cast<unsigned long long>(sd),
                                      ev.normalized_score, div);
                        csv += buf;
                    } catch (const std::exception& e) {
                        mcre::log_msg(mcre::LogLevel::warn,
                                      "ablate cell failed, continuing: " + std::string(e.what()));
                        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%llu,nan,nan\n", u, w,
                                      al, static_cast<unsigned long long>(sd));
                        csv += buf;
                    }
                }
            }
        }
    }
    return csv;
}

// -------------------------------------------------------------- bounds-report

std::string run_bounds_report(std::uint64_t seed, bool quick) {
    mcre::VerifyOptions opts;
    opts.seed = seed;
    opts.quick = quick;
    opts.suites = {"theorem2", "theorem3", "theorem45"};
    const mcre::SuiteResult res = mcre::run_verify(opts);

    std::string csv = "suite,cell,kind,lhs,rhs,slack,condition_met\n";
    char buf[512];
    auto row = [&](const mcre::CellResult& c, const char* kind, double lhs, double rhs) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.17g,%.17g,%.17g,%d\n", c.suite.c_str(),
                      c.name.c_str(), kind, lhs, rhs, rhs - lhs, 1);
        csv += buf;
    };
    for (const mcre::CellResult& c : res.cells) {
        if (c.suite == "theorem2" || c.suite == "theorem3") {
            row(c, "q_gap", c.metrics.at("gap_q"), c.metrics.at("bound_q"));
            if (c.metrics.count("bound_v"))
                row(c, "v_gap", c.metrics.at("gap_v"), c.metrics.at("bound_v"));
        } else if (c.suite == "theorem45") {
            row(c, "suboptimality", c.metrics.at("abs_sub"), c.metrics.at("bound"));
        }
    }
    return csv;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCRE/MCRQ offline-RL toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::size_t jobs = 0;
    std::string config_path;
    std::string out_path;
    app.add_option("--seed", seed, "root RNG seed")->capture_default_str();
    app.add_option("--jobs", jobs, "worker threads (default: logical cores)");
    app.add_option("--config", config_path, "JSON config file (train)");
    app.add_option("--out", out_path, "output path");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate an offline dataset");
    std::string gd_env = "gridworld-8x8-v1", gd_tier = "medium";
    std::size_t gd_n = 10000;
    gen->add_option("--env", gd_env, "env id")->capture_default_str();
    gen->add_option("--tier", gd_tier, "random|medium|expert|medium-replay|medium-expert")
        ->capture_default_str();
    gen->add_option("--n", gd_n, "transition count")->capture_default_str();

    // solve
    auto* solve = app.add_subcommand("solve", "tabular fixed point + theorem bound report");
    std::string sv_env = "gridworld-8x8-v1", sv_dataset, sv_policy = "optimal";
    double sv_upsilon = 0.0, sv_omega = 0.0;
    solve->add_option("--env", sv_env, "tabular env id")->capture_default_str();
    solve->add_option("--dataset", sv_dataset, "dataset path (omit for the exact model)");
    solve->add_option("--policy", sv_policy, "optimal|random")->capture_default_str();
    solve->add_option("--upsilon", sv_upsilon, "TD-corrected weight")->capture_default_str();
    solve->add_option("--omega", sv_omega, "behavior-cloning weight")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train MCRQ on an offline dataset");
    std::string tr_dataset, tr_preset, tr_log;
    double tr_upsilon = 0.0, tr_omega = 0.0, tr_alpha = 2.5;
    std::size_t tr_steps = 50000;
    tr->add_option("--dataset", tr_dataset, "dataset path")->required();
    tr->add_option("--preset", tr_preset, "named hyperparameter preset, e.g. hopper-e");
    auto* tr_u = tr->add_option("--upsilon", tr_upsilon, "TD-corrected weight");
    auto* tr_w = tr->add_option("--omega", tr_omega, "behavior-cloning weight");
    auto* tr_a = tr->add_option("--alpha", tr_alpha, "Q-term scale in the actor loss");
    auto* tr_s = tr->add_option("--steps", tr_steps, "training steps");
    tr->add_option("--log", tr_log, "CSV training-log path");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained checkpoint");
    std::string ev_ckpt;
    std::size_t ev_episodes = 10;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--episodes", ev_episodes, "evaluation episodes")->capture_default_str();

    // verify
    auto* vf = app.add_subcommand("verify", "run the property suite");
    std::string vf_cells;
    std::vector<std::string> vf_suites;
    double vf_h_scale = 1.0;
    bool vf_quick = false;
    vf->add_option("--cells", vf_cells, "filter, e.g. gamma=0.99,upsilon=0.5");
    vf->add_option("--suite", vf_suites, "suite subset (repeatable)");
    vf->add_option("--h-scale", vf_h_scale, "fault-injection hook scaling the H term")
        ->capture_default_str();
    vf->add_flag("--quick", vf_quick, "reduced trial counts");

    // ablate
    auto* ab = app.add_subcommand("ablate", "hyperparameter sweep CSV");
    std::string ab_dataset;
    std::vector<double> ab_ups = {0.0}, ab_oms = {0.0}, ab_alphas = {2.5};
    std::vector<std::uint64_t> ab_seeds = {0};
    std::size_t ab_steps = 5000;
    ab->add_option("--dataset", ab_dataset, "dataset path")->required();
    ab->add_option("--upsilons", ab_ups, "upsilon grid")->capture_default_str();
    ab->add_option("--omegas", ab_oms, "omega grid")->capture_default_str();
    ab->add_option("--alphas", ab_alphas, "alpha grid")->capture_default_str();
    ab->add_option("--seeds", ab_seeds, "seed list")->capture_default_str();
    ab->add_option("--steps", ab_steps, "training steps per neural cell")->capture_default_str();

    // bounds-report
    auto* br = app.add_subcommand("bounds-report", "CSV of theorem lhs/rhs/slack per cell");
    bool br_quick = false;
    br->add_flag("--quick", br_quick, "reduced cell counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (jobs > 0) omp_set_num_threads(static_cast<int>(jobs));

    try {
        if (*gen) {
            if (out_path.empty()) throw UsageError("gen-data requires --out");
            const auto env = mcre::make_env(gd_env);
            mcre::BehaviorSpec spec;
            try {
                spec = mcre::BehaviorSpec::tier(gd_tier);
            } catch (const mcre::MdpError& e) {
                throw UsageError(e.what());
            }
            const mcre::OfflineDataset ds = mcre::generate_dataset(*env, spec, gd_n, seed);
            mcre::save_dataset(ds, out_path);
            json j;
            j["path"] = out_path;
            j["env_id"] = ds.meta.env_id;
            j["behavior_spec"] = ds.meta.behavior_spec;
            j["count"] = ds.meta.count;
            j["seed"] = ds.meta.seed;
            try {
                j["behavior_mean_return"] = ds.behavior_mean_return();
            } catch (const mcre::MdpError&) {
                j["behavior_mean_return"] = nullptr;
            }
            std::cout << j.dump() << "\n";
        } else if (*solve) {
            std::cout << run_solve(sv_env, sv_dataset, sv_policy, sv_upsilon, sv_omega, seed).dump()
                      << "\n";
        } else if (*tr) {
            if (out_path.empty()) throw UsageError("train requires --out (checkpoint path)");
            mcre::McrqConfig cfg;
            if (!config_path.empty()) cfg = config_from_file(config_path);
            if (!tr_preset.empty()) {
                const auto& presets = mcre::mcrq_presets();
                auto it = presets.find(tr_preset);
                if (it == presets.end()) throw UsageError("unknown preset: " + tr_preset);
                cfg.upsilon = it->second.upsilon;
                cfg.omega = it->second.omega;
                cfg.alpha = it->second.alpha;
            }
            if (tr_u->count()) cfg.upsilon = tr_upsilon;
            if (tr_w->count()) cfg.omega = tr_omega;
            if (tr_a->count()) cfg.alpha = tr_alpha;
            if (tr_s->count() || cfg.total_steps == 0) cfg.total_steps = tr_steps;
            cfg.seed = seed;
            try {
                cfg.validate();
            } catch (const mcre::MdpError& e) {
                throw UsageError(std::string("invalid config: ") + e.what());
            }
            const mcre::OfflineDataset ds = mcre::load_dataset(tr_dataset);
            auto [agent, log] = mcre::train(ds, cfg);
            mcre::save_checkpoint(agent, cfg, ds.meta.env_id, out_path);
            if (!tr_log.empty()) write_text(tr_log, log.to_csv());
            const auto env = mcre::make_env(ds.meta.env_id);
            const auto final_ev =
                mcre::evaluate(*env, agent, cfg.eval_episodes, mcre::split_seed(cfg.seed, 999));
            json j;
            j["config"] = json::parse(cfg.to_json());
            j["checkpoint"] = out_path;
            if (!tr_log.empty()) j["log"] = tr_log;
            j["final"] = {{"mean_return", final_ev.mean_return},
                          {"normalized_score", final_ev.normalized_score},
                          {"action_divergence", mcre::action_divergence(ds, agent)}};
            std::cout << j.dump() << "\n";
        } else if (*ev) {
            const mcre::Checkpoint ck = mcre::load_checkpoint(ev_ckpt);
            const auto env = mcre::make_env(ck.env_id);
            const auto res = mcre::evaluate(*env, ck.agent, ev_episodes, seed);
            json j;
            j["env_id"] = ck.env_id;
            j["episodes"] = ev_episodes;
            j["seed"] = seed;
            j["mean_return"] = res.mean_return;
            j["normalized_score"] = res.normalized_score;
            std::cout << j.dump() << "\n";
        } else if (*vf) {
            mcre::VerifyOptions opts;
            opts.seed = seed == 0 ? 2024 : seed;
            opts.cell_filter = vf_cells;
            opts.suites = vf_suites;
            opts.h_scale = vf_h_scale;
            opts.quick = vf_quick;
            const mcre::SuiteResult res = mcre::run_verify(opts);
            const std::string report = res.to_json();
            if (!out_path.empty()) write_text(out_path, report + "\n");
            std::cout << report << "\n";
            if (!res.all_pass()) {
                std::cerr << res.failures() << " verify cell(s) failed\n";
                return 1;
            }
        } else if (*ab) {
            const mcre::OfflineDataset ds = mcre::load_dataset(ab_dataset);
            const auto env = mcre::make_env(ds.meta.env_id);
            std::string csv;
            if (env->tabular()) {
                csv = run_ablate_tabular(ds, ab_ups, ab_oms, ab_alphas, ab_seeds);
            } else {
                mcre::McrqConfig base;
                if (!config_path.empty()) base = config_from_file(config_path);
                base.total_steps = ab_steps;
                base.eval_interval = ab_steps == 0 ? 1 : ab_steps;
                csv = run_ablate_neural(ds, ab_ups, ab_oms, ab_alphas, ab_seeds, base);
            }
            if (!out_path.empty()) write_text(out_path, csv);
            std::cout << csv;
        } else if (*br) {
            const std::string csv = run_bounds_report(seed == 0 ? 2024 : seed, br_quick);
            if (!out_path.empty()) write_text(out_path, csv);
            std::cout << csv;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
