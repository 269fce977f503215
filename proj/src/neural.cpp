#include "mcre/neural.hpp"

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

namespace mcre {

std::size_t Mlp::n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
        n += layer_dims[l + 1] * layer_dims[l] + layer_dims[l + 1];
    return n;
}

Mlp Mlp::make(std::vector<std::size_t> dims, Output out, double bound, Rng& rng) {
    if (dims.size() < 2) throw MdpError("Mlp: need at least input and output dims");
    Mlp net;
    net.layer_dims = std::move(dims);
    net.output = out;
    net.bound = bound;
    net.params.resize(net.n_params());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        const std::size_t fan_in = net.layer_dims[l];
        const std::size_t n = net.layer_dims[l + 1] * fan_in + net.layer_dims[l + 1];
        const double scale = 1.0 / std::sqrt(double(fan_in));
        std::uniform_real_distribution<double> u(-scale, scale);
        for (std::size_t i = 0; i < n; ++i) net.params[off + i] = u(rng);
        off += n;
    }
    return net;
}

namespace {

// pre-activations per layer; post[0] is the input
struct Workspace {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> post;
};

void run_forward(const Mlp& net, const std::vector<double>& input, Workspace& ws) {
    if (input.size() != net.input_dim()) throw MdpError("forward: input dimension mismatch");
    const std::size_t L = net.layer_dims.size() - 1;
    ws.pre.assign(L, {});
    ws.post.assign(L + 1, {});
    ws.post[0] = input;
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = net.layer_dims[l], out = net.layer_dims[l + 1];
        const double* w = net.params.data() + off;
        const double* b = w + out * in;
        ws.pre[l].resize(out);
        ws.post[l + 1].resize(out);
        const double* x = ws.post[l].data();
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = w + o * in;
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
            ws.pre[l][o] = acc;
        }
        const bool last = (l + 1 == L);
        for (std::size_t o = 0; o < out; ++o) {
            const double z = ws.pre[l][o];
            if (!last)
                ws.post[l + 1][o] = z > 0.0 ? z : 0.0;
            else if (net.output == Mlp::Output::bounded)
                ws.post[l + 1][o] = net.bound * std::tanh(z);
            else
                ws.post[l + 1][o] = z;
        }
        off += out * in + out;
    }
}

}  // namespace

std::vector<double> forward(const Mlp& net, const std::vector<double>& input) {
    Workspace ws;
    run_forward(net, input, ws);
    return ws.post.back();
}

Gradients backward(const Mlp& net, const std::vector<double>& input,
                   const std::vector<double>& upstream) {
    if (upstream.size() != net.output_dim()) throw MdpError("backward: upstream dim mismatch");
    Workspace ws;
    run_forward(net, input, ws);

    Gradients g;
    g.params.assign(net.params.size(), 0.0);
    const std::size_t L = net.layer_dims.size() - 1;

    // dL/dz of the output layer
    std::vector<double> dz(net.output_dim());
    for (std::size_t o = 0; o < dz.size(); ++o) {
        if (net.output == Mlp::Output::bounded) {
            const double t = std::tanh(ws.pre[L - 1][o]);
            dz[o] = upstream[o] * net.bound * (1.0 - t * t);
        } else {
            dz[o] = upstream[o];
        }
    }

    std::vector<std::size_t> offsets(L);
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        offsets[l] = off;
        off += net.layer_dims[l + 1] * net.layer_dims[l] + net.layer_dims[l + 1];
    }

    for (std::size_t l = L; l-- > 0;) {
        const std::size_t in = net.layer_dims[l], out = net.layer_dims[l + 1];
        const double* w = net.params.data() + offsets[l];
        double* gw = g.params.data() + offsets[l];
        double* gb = gw + out * in;
        const double* x = ws.post[l].data();
        for (std::size_t o = 0; o < out; ++o) {
            const double d = dz[o];
            gb[o] = d;
            double* gwr = gw + o * in;
            for (std::size_t i = 0; i < in; ++i) gwr[i] = d * x[i];
        }
        // propagate to the previous layer
        std::vector<double> dx(in, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            const double d = dz[o];
            const double* wr = w + o * in;
            for (std::size_t i = 0; i < in; ++i) dx[i] += d * wr[i];
        }
        if (l == 0) {
            g.input = std::move(dx);
        } else {
            dz.assign(in, 0.0);
            for (std::size_t i = 0; i < in; ++i)
                dz[i] = ws.pre[l - 1][i] > 0.0 ? dx[i] : 0.0;
        }
    }
    return g;
}

OptimState OptimState::make(std::size_t n_params, double lr) {
    OptimState s;
    s.m.assign(n_params, 0.0);
    s.v.assign(n_params, 0.0);
    s.lr = lr;
    return s;
}

void optimizer_step(std::vector<double>& params, const std::vector<double>& grads,
                    OptimState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw MdpError("optimizer_step: shape mismatch");
    for (double gv : grads)
        if (!std::isfinite(gv)) throw TrainingDivergenceError("non-finite gradient");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

void soft_update(std::vector<double>& target_params, const std::vector<double>& online_params,
                 double tau) {
    if (target_params.size() != online_params.size()) throw MdpError("soft_update: shape mismatch");
    if (tau < 0.0 || tau > 1.0) throw MdpError("soft_update: tau out of [0,1]");
    for (std::size_t i = 0; i < target_params.size(); ++i)
        target_params[i] = tau * online_params[i] + (1.0 - tau) * target_params[i];
}

std::string mlp_manifest(const Mlp& net) {
    nlohmann::json j;
    j["layer_dims"] = net.layer_dims;
    j["hidden_activation"] = "relu";
    j["output_activation"] = net.output == Mlp::Output::bounded ? "bounded" : "identity";
    j["bound"] = net.bound;
    j["n_params"] = net.n_params();
    return j.dump();
}

Mlp mlp_from_manifest(const std::string& manifest, std::vector<double> params) {
    nlohmann::json j = nlohmann::json::parse(manifest);
    Mlp net;
    net.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    net.output = j.at("output_activation").get<std::string>() == "bounded"
                     ? Mlp::Output::bounded
                     : Mlp::Output::identity;
    net.bound = j.at("bound").get<double>();
    if (params.size() != j.at("n_params").get<std::size_t>() || params.size() != net.n_params())
        throw MdpError("checkpoint: parameter count disagrees with manifest");
    net.params = std::move(params);
    return net;
}

void write_f64_le(std::string& out, const std::vector<double>& values) {
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) out.push_back(char((bits >> (8 * b)) & 0xff));
    }
}

std::vector<double> read_f64_le(const std::string& bytes, std::size_t offset, std::size_t count) {
    if (offset + 8 * count > bytes.size()) throw MdpError("parameter blob truncated");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= std::uint64_t(std::uint8_t(bytes[offset + 8 * i + b])) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

}  // namespace mcre
