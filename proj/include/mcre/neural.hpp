#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcre/mdp.hpp"
#include "mcre/rng.hpp"

namespace mcre {

struct TrainingDivergenceError : MdpError {
    using MdpError::MdpError;
};

/// Fully connected net with rectifier hidden layers; parameters live in
/// one flat vector (per layer: row-major W, then b) so the optimizer,
/// target blending and checkpoints all work on plain arrays.
struct Mlp {
    enum class Output { identity, bounded };

    std::vector<std::size_t> layer_dims;
    Output output = Output::identity;
    double bound = 1.0;
    std::vector<double> params;

    static Mlp make(std::vector<std::size_t> dims, Output out, double bound, Rng& rng);

    std::size_t n_params() const;
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
};

std::vector<double> forward(const Mlp& net, const std::vector<double>& input);

struct Gradients {
    std::vector<double> params;  // same layout as Mlp::params
    std::vector<double> input;
};

/// Reverse-mode gradients of forward; upstream is dL/dy.
Gradients backward(const Mlp& net, const std::vector<double>& input,
                   const std::vector<double>& upstream);

struct OptimState {
    std::vector<double> m;  // first moments
    std::vector<double> v;  // second moments
    std::size_t step = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimState make(std::size_t n_params, double lr = 3e-4);
};

/// Adaptive-moment update with bias correction. Throws
/// TrainingDivergenceError on non-finite gradients.
void optimizer_step(std::vector<double>& params, const std::vector<double>& grads,
                    OptimState& state);

/// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(std::vector<double>& target_params, const std::vector<double>& online_params,
                 double tau);

/// JSON manifest describing architecture; the parameter blob is stored
/// separately as little-endian float64.
std::string mlp_manifest(const Mlp& net);
Mlp mlp_from_manifest(const std::string& manifest, std::vector<double> params);

void write_f64_le(std::string& out, const std::vector<double>& values);
std::vector<double> read_f64_le(const std::string& bytes, std::size_t offset, std::size_t count);

}  // namespace mcre
