#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "osr/matrix.hpp"

namespace osr {

enum class LayerKind { dense, relu, batchnorm, dropout };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t width = 0;  // dense only
    double keep_prob = 1.0; // dropout only

    static LayerSpec dense(std::size_t width) { return {LayerKind::dense, width, 1.0}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 1.0}; }
    static LayerSpec batchnorm() { return {LayerKind::batchnorm, 0, 1.0}; }
    static LayerSpec dropout(double keep_prob) { return {LayerKind::dropout, 0, keep_prob}; }
};

/// Topology of the embedding network g. `layers` is the hidden stack; the
/// engine appends the final linear z-layer of width `z_dim` (and a batchnorm
/// after it when `z_batchnorm` is set, which the ii regimes rely on to keep
/// the embedding bounded). `ce_classes` > 0 adds a linear head of that width
/// feeding softmax for cross-entropy training.
struct NetworkConfig {
    std::size_t input_dim = 0;
    std::vector<LayerSpec> layers;
    std::size_t z_dim = 0;
    bool z_batchnorm = true;
    std::size_t ce_classes = 0;
    std::uint64_t seed = 0;
};

/// Parameters and running statistics of one layer. Which fields are live
/// depends on spec.kind: dense uses w/b, batchnorm uses gamma/beta plus the
/// running statistics. relu and dropout have no parameters.
struct LayerState {
    LayerSpec spec;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Matrix w, b;                             // dense; b is 1 x out
    Matrix gamma, beta, run_mean, run_var;   // batchnorm; all 1 x out
};

struct NetworkState {
    NetworkConfig config;
    std::vector<LayerState> layers; // hidden stack + z dense (+ z batchnorm)
    LayerState head;                // z_dim -> ce_classes linear, when enabled
    bool has_head() const { return config.ce_classes > 0; }
};

/// Builds a network with weights drawn uniformly in +-sqrt(6/(fan_in+fan_out)),
/// zero biases, batchnorm at gamma=1 beta=0 with running mean 0 / variance 1.
/// Deterministic given config.seed.
NetworkState init_network(const NetworkConfig& config);

enum class Mode { train, infer };

struct LayerCache {
    Matrix input;   // dense, relu
    Matrix x_hat;   // batchnorm normalized activations (before gamma/beta)
    Matrix inv_std; // batchnorm 1/sqrt(var+eps), 1 x n
    Matrix mask;    // dropout inverted mask (0 or 1/keep_prob)
};

struct ForwardCache {
    Mode mode = Mode::infer;
    std::vector<LayerCache> layers;
    Matrix z;      // embedding batch
    Matrix logits; // head output; empty when the network has no head
};

/// Train-mode pass: batch statistics, running-stat update, dropout from rng.
/// Requires batch size >= 2 when any batchnorm layer is present.
ForwardCache forward_train(NetworkState& state, const Matrix& x, std::mt19937_64& rng);

/// Infer-mode pass: running statistics, no dropout. Pure function of (state, x).
ForwardCache forward_infer(const NetworkState& state, const Matrix& x);

/// Convenience: infer-mode embedding z = g(x).
Matrix embed(const NetworkState& state, const Matrix& x);

/// One gradient tensor per live parameter; mirrors LayerState.
struct LayerGrads {
    Matrix w, b, gamma, beta;
};

struct Gradients {
    std::vector<LayerGrads> layers;
    LayerGrads head;
};

/// Backpropagates d(loss)/dz (and optionally d(loss)/dlogits through the ce
/// head) to every learnable parameter, including batchnorm gamma/beta with
/// gradient flowing through the batch statistics. Requires a train-mode cache.
Gradients backward(const NetworkState& state, const ForwardCache& cache,
                   const Matrix& grad_z, const Matrix* grad_logits = nullptr);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t t = 0;
    Gradients m, v; // first/second moment accumulators, zero-initialized
};

AdamState init_adam(const NetworkState& state, const AdamConfig& config);

/// Standard Adam update with bias correction; advances the step counter.
void adam_step(NetworkState& state, AdamState& adam, const Gradients& grads);

inline constexpr double kBatchnormEpsilon = 1e-5;
inline constexpr double kBatchnormMomentum = 0.99;

} // namespace osr
