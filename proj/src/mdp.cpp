#include "mcre/mdp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>

namespace mcre {

void TabularMdp::validate() const {
    if (n_states == 0 || n_actions == 0) throw MdpError("empty state or action space");
    if (gamma < 0.0 || gamma >= 1.0) throw MdpError("gamma must lie in [0,1)");
    if (r_max <= 0.0) throw MdpError("r_max must be positive");
    if (a_max <= 0.0) throw MdpError("a_max must be positive");
    if (transition.size() != n_states * n_actions * n_states) throw MdpError("transition shape mismatch");
    if (reward.size() != n_states * n_actions) throw MdpError("reward shape mismatch");
    if (initial_dist.size() != n_states) throw MdpError("initial_dist shape mismatch");
    if (action_embedding.size() != n_actions * embed_dim || embed_dim == 0)
        throw MdpError("action_embedding shape mismatch");

    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (std::size_t s2 = 0; s2 < n_states; ++s2) {
                double v = p(s, a, s2);
                if (v < 0.0) throw MdpError("negative transition probability");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-12) throw MdpError("transition row does not sum to 1");
            if (std::abs(r(s, a)) > r_max) throw MdpError("|reward| exceeds r_max");
        }
    }
    double rho_sum = 0.0;
    for (double v : initial_dist) {
        if (v < 0.0) throw MdpError("negative initial probability");
        rho_sum += v;
    }
    if (std::abs(rho_sum - 1.0) > 1e-12) throw MdpError("initial_dist does not sum to 1");
    for (std::size_t a = 0; a < n_actions; ++a) {
        for (std::size_t i = 0; i < embed_dim; ++i) {
            if (std::abs(embedding(a)[i]) > a_max + 1e-12) throw MdpError("embedding exceeds a_max");
        }
    }
}

void TabularMdp::default_embedding() {
    embed_dim = n_actions;
    a_max = 1.0;
    action_embedding.assign(n_actions * n_actions, 0.0);
    for (std::size_t a = 0; a < n_actions; ++a) action_embedding[a * n_actions + a] = 1.0;
}

QTable exact_q(const TabularMdp& mdp, const DeterministicPolicy& pi) {
    const std::size_t S = mdp.n_states;
    const std::size_t A = mdp.n_actions;
    if (pi.action_of.size() != S) throw MdpError("policy shape mismatch");
    for (std::size_t s = 0; s < S; ++s)
        if (pi.action_of[s] >= A) throw MdpError("policy action out of range");

    // (I - gamma P_pi) V = r_pi
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd rhs(S);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t a = pi.action_of[s];
        rhs(s) = mdp.r(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2) m(s, s2) -= mdp.gamma * mdp.p(s, a, s2);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    Eigen::VectorXd v = lu.solve(rhs);
    if (!v.allFinite() || (m * v - rhs).lpNorm<Eigen::Infinity>() > 1e-8)
        throw MdpError("on-policy linear system solve failed");

    // one backup fills the off-policy entries
    QTable q(S, A);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            double acc = mdp.r(s, a);
            for (std::size_t s2 = 0; s2 < S; ++s2) acc += mdp.gamma * mdp.p(s, a, s2) * v(s2);
            q.at(s, a) = acc;
        }
    }
    return q;
}

VTable exact_v(const TabularMdp& mdp, const DeterministicPolicy& pi) {
    QTable q = exact_q(mdp, pi);
    VTable v;
    v.values.resize(mdp.n_states);
    for (std::size_t s = 0; s < mdp.n_states; ++s) v.values[s] = q.at(s, pi.action_of[s]);
    return v;
}

double policy_return(const TabularMdp& mdp, const DeterministicPolicy& pi) {
    VTable v = exact_v(mdp, pi);
    double acc = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) acc += mdp.initial_dist[s] * v.values[s];
    return acc;
}

DeterministicPolicy greedy_policy(const QTable& q) {
    DeterministicPolicy pi;
    pi.action_of.resize(q.n_states);
    for (std::size_t s = 0; s < q.n_states; ++s) {
        std::size_t best = 0;
        for (std::size_t a = 1; a < q.n_actions; ++a)
            if (q.at(s, a) > q.at(s, best)) best = a;
        pi.action_of[s] = best;
    }
    return pi;
}

DeterministicPolicy optimal_policy(const TabularMdp& mdp) {
    DeterministicPolicy pi;
    pi.action_of.assign(mdp.n_states, 0);
    for (std::size_t iter = 0; iter < mdp.n_states * mdp.n_actions + 2; ++iter) {
        DeterministicPolicy next = greedy_policy(exact_q(mdp, pi));
        if (next.action_of == pi.action_of) return pi;
        pi = next;
    }
    return pi;  // cycling between equal-value policies; current one is optimal
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw MdpError("tv_distance: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

std::string mdp_to_json(const TabularMdp& mdp) {
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    j["r_max"] = mdp.r_max;
    j["a_max"] = mdp.a_max;
    auto& tr = j["transition"] = nlohmann::json::array();
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) row.push_back(mdp.p(s, a, s2));
            rows.push_back(std::move(row));
        }
        tr.push_back(std::move(rows));
    }
    auto& rw = j["reward"] = nlohmann::json::array();
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t a = 0; a < mdp.n_actions; ++a) row.push_back(mdp.r(s, a));
        rw.push_back(std::move(row));
    }
    j["initial_dist"] = mdp.initial_dist;
    auto& em = j["action_embedding"] = nlohmann::json::array();
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t i = 0; i < mdp.embed_dim; ++i) row.push_back(mdp.embedding(a)[i]);
        em.push_back(std::move(row));
    }
    return j.dump();
}

TabularMdp mdp_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TabularMdp mdp;
    mdp.n_states = j.at("n_states").get<std::size_t>();
    mdp.n_actions = j.at("n_actions").get<std::size_t>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.r_max = j.at("r_max").get<double>();
    mdp.a_max = j.at("a_max").get<double>();
    mdp.transition.reserve(mdp.n_states * mdp.n_actions * mdp.n_states);
    for (const auto& rows : j.at("transition"))
        for (const auto& row : rows)
            for (const auto& v : row) mdp.transition.push_back(v.get<double>());
    for (const auto& row : j.at("reward"))
        for (const auto& v : row) mdp.reward.push_back(v.get<double>());
    mdp.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    const auto& em = j.at("action_embedding");
    mdp.embed_dim = em.empty() ? 0 : em.front().size();
    for (const auto& row : em)
        for (const auto& v : row) mdp.action_embedding.push_back(v.get<double>());
    mdp.validate();
    return mdp;
}

}  // namespace mcre
