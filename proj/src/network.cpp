#include "osr/network.hpp"

#include <cmath>
#include <cstring>

#include "osr/errors.hpp"
#include "osr/rng.hpp"

namespace osr {

namespace {

void validate_config(const NetworkConfig& config) {
    if (config.input_dim == 0)
        throw ConfigError("network config: input_dim must be >= 1");
    if (config.z_dim == 0)
        throw ConfigError("network config: z_dim must be >= 1");
    bool seen_dense = false;
    for (const LayerSpec& spec : config.layers) {
        switch (spec.kind) {
        case LayerKind::dense:
            if (spec.width == 0)
                throw ConfigError("network config: dense width must be >= 1");
            seen_dense = true;
            break;
        case LayerKind::batchnorm:
            if (!seen_dense)
                throw ConfigError("network config: batchnorm before any dense layer");
            break;
        case LayerKind::dropout:
            if (!(spec.keep_prob > 0.0 && spec.keep_prob <= 1.0))
                throw ConfigError("network config: dropout keep_prob must be in (0, 1]");
            break;
        case LayerKind::relu:
            break;
        }
    }
}

LayerState make_layer(const LayerSpec& spec, std::size_t in_dim, std::mt19937_64& rng) {
    LayerState layer;
    layer.spec = spec;
    layer.in_dim = in_dim;
    layer.out_dim = spec.kind == LayerKind::dense ? spec.width : in_dim;
    if (spec.kind == LayerKind::dense) {
        layer.w = Matrix(in_dim, layer.out_dim);
        layer.b = Matrix(1, layer.out_dim);
        const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + layer.out_dim));
        for (std::size_t i = 0; i < layer.w.size(); ++i)
            layer.w.data()[i] = uniform_range(rng, -limit, limit);
    } else if (spec.kind == LayerKind::batchnorm) {
        layer.gamma = Matrix(1, layer.out_dim, 1.0);
        layer.beta = Matrix(1, layer.out_dim, 0.0);
        layer.run_mean = Matrix(1, layer.out_dim, 0.0);
        layer.run_var = Matrix(1, layer.out_dim, 1.0);
    }
    return layer;
}

bool has_batchnorm(const NetworkState& state) {
    for (const LayerState& l : state.layers)
        if (l.spec.kind == LayerKind::batchnorm) return true;
    return false;
}

void add_row_broadcast(Matrix& m, const Matrix& row) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j)
            r[j] += row(0, j);
    }
}

Matrix dense_forward(const LayerState& layer, const Matrix& x) {
    Matrix y = matmul(x, layer.w);
    add_row_broadcast(y, layer.b);
    return y;
}

Matrix batchnorm_train(LayerState& layer, const Matrix& x, LayerCache& cache) {
    const std::size_t n = x.rows(), d = x.cols();
    const Matrix mean = col_mean(x);
    Matrix var(1, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = r[j] - mean(0, j);
            var(0, j) += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j)
        var(0, j) /= static_cast<double>(n);

    cache.inv_std = Matrix(1, d);
    for (std::size_t j = 0; j < d; ++j)
        cache.inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + kBatchnormEpsilon);

    cache.x_hat = Matrix(n, d);
    Matrix y(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (r[j] - mean(0, j)) * cache.inv_std(0, j);
            cache.x_hat(i, j) = xh;
            y(i, j) = layer.gamma(0, j) * xh + layer.beta(0, j);
        }
    }

    for (std::size_t j = 0; j < d; ++j) {
        layer.run_mean(0, j) = kBatchnormMomentum * layer.run_mean(0, j) +
                               (1.0 - kBatchnormMomentum) * mean(0, j);
        layer.run_var(0, j) = kBatchnormMomentum * layer.run_var(0, j) +
                              (1.0 - kBatchnormMomentum) * var(0, j);
    }
    return y;
}

Matrix batchnorm_infer(const LayerState& layer, const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const double inv = 1.0 / std::sqrt(layer.run_var(0, j) + kBatchnormEpsilon);
        const double g = layer.gamma(0, j), b = layer.beta(0, j), m = layer.run_mean(0, j);
        for (std::size_t i = 0; i < x.rows(); ++i)
            y(i, j) = g * (x(i, j) - m) * inv + b;
    }
    return y;
}

ForwardCache run_forward(const NetworkState& state_in, NetworkState* mutable_state,
                         const Matrix& x, Mode mode, std::mt19937_64* rng) {
    const NetworkState& state = mutable_state ? *mutable_state : state_in;
    if (x.cols() != state.config.input_dim)
        throw Error("forward: input has " + std::to_string(x.cols()) +
                    " columns, network expects " + std::to_string(state.config.input_dim));
    if (mode == Mode::train && x.rows() < 2 && has_batchnorm(state))
        throw Error("forward: degenerate batch (size < 2) with batchnorm in train mode");

    ForwardCache cache;
    cache.mode = mode;
    cache.layers.resize(state.layers.size());

    Matrix cur = x;
    for (std::size_t li = 0; li < state.layers.size(); ++li) {
        const LayerState& layer = state.layers[li];
        LayerCache& lc = cache.layers[li];
        switch (layer.spec.kind) {
        case LayerKind::dense:
            lc.input = cur;
            cur = dense_forward(layer, cur);
            break;
        case LayerKind::relu:
            lc.input = cur;
            for (std::size_t i = 0; i < cur.size(); ++i)
                if (cur.data()[i] < 0.0) cur.data()[i] = 0.0;
            break;
        case LayerKind::batchnorm:
            if (mode == Mode::train)
                cur = batchnorm_train(mutable_state->layers[li], cur, lc);
            else
                cur = batchnorm_infer(layer, cur);
            break;
        case LayerKind::dropout:
            if (mode == Mode::train && layer.spec.keep_prob < 1.0) {
                const double keep = layer.spec.keep_prob;
                lc.mask = Matrix(cur.rows(), cur.cols());
                for (std::size_t i = 0; i < cur.size(); ++i) {
                    lc.mask.data()[i] = uniform_unit(*rng) < keep ? 1.0 / keep : 0.0;
                    cur.data()[i] *= lc.mask.data()[i];
                }
            }
            // keep_prob == 1 and infer mode are the identity (inverted scaling).
            break;
        }
    }
    cache.z = std::move(cur);
    if (state.has_head())
        cache.logits = dense_forward(state.head, cache.z);
    return cache;
}

Gradients zero_grads(const NetworkState& state) {
    Gradients g;
    g.layers.resize(state.layers.size());
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        const LayerState& l = state.layers[i];
        if (l.spec.kind == LayerKind::dense) {
            g.layers[i].w = Matrix(l.w.rows(), l.w.cols());
            g.layers[i].b = Matrix(1, l.out_dim);
        } else if (l.spec.kind == LayerKind::batchnorm) {
            g.layers[i].gamma = Matrix(1, l.out_dim);
            g.layers[i].beta = Matrix(1, l.out_dim);
        }
    }
    if (state.has_head()) {
        g.head.w = Matrix(state.head.w.rows(), state.head.w.cols());
        g.head.b = Matrix(1, state.head.out_dim);
    }
    return g;
}

} // namespace

NetworkState init_network(const NetworkConfig& config) {
    validate_config(config);
    NetworkState state;
    state.config = config;
    std::mt19937_64 rng(config.seed);

    std::size_t cur = config.input_dim;
    for (const LayerSpec& spec : config.layers) {
        state.layers.push_back(make_layer(spec, cur, rng));
        cur = state.layers.back().out_dim;
    }
    state.layers.push_back(make_layer(LayerSpec::dense(config.z_dim), cur, rng));
    if (config.z_batchnorm)
        state.layers.push_back(make_layer(LayerSpec::batchnorm(), config.z_dim, rng));
    if (config.ce_classes > 0)
        state.head = make_layer(LayerSpec::dense(config.ce_classes), config.z_dim, rng);
    return state;
}

ForwardCache forward_train(NetworkState& state, const Matrix& x, std::mt19937_64& rng) {
    return run_forward(state, &state, x, Mode::train, &rng);
}

ForwardCache forward_infer(const NetworkState& state, const Matrix& x) {
    return run_forward(state, nullptr, x, Mode::infer, nullptr);
}

Matrix embed(const NetworkState& state, const Matrix& x) {
    return forward_infer(state, x).z;
}

Gradients backward(const NetworkState& state, const ForwardCache& cache,
                   const Matrix& grad_z, const Matrix* grad_logits) {
    if (cache.mode != Mode::train)
        throw Error("backward: cache was not produced by a train-mode forward");
    if (cache.layers.size() != state.layers.size())
        throw Error("backward: cache does not match network (layer count)");
    if (!grad_z.same_shape(cache.z))
        throw Error("backward: grad_z shape does not match cached z");
    if (grad_logits && !state.has_head())
        throw Error("backward: grad_logits given but network has no ce head");
    if (grad_logits && !grad_logits->same_shape(cache.logits))
        throw Error("backward: grad_logits shape does not match cached logits");

    Gradients grads = zero_grads(state);
    Matrix g = grad_z;

    if (grad_logits) {
        grads.head.w = matmul_tn(cache.z, *grad_logits);
        grads.head.b = col_sum(*grad_logits);
        const Matrix through_head = matmul_nt(*grad_logits, state.head.w);
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data()[i] += through_head.data()[i];
    }

    for (std::size_t li = state.layers.size(); li-- > 0;) {
        const LayerState& layer = state.layers[li];
        const LayerCache& lc = cache.layers[li];
        switch (layer.spec.kind) {
        case LayerKind::dense:
            grads.layers[li].w = matmul_tn(lc.input, g);
            grads.layers[li].b = col_sum(g);
            g = matmul_nt(g, layer.w);
            break;
        case LayerKind::relu:
            for (std::size_t i = 0; i < g.size(); ++i)
                if (lc.input.data()[i] <= 0.0) g.data()[i] = 0.0;
            break;
        case LayerKind::batchnorm: {
            const std::size_t n = g.rows(), d = g.cols();
            Matrix& dgamma = grads.layers[li].gamma;
            Matrix& dbeta = grads.layers[li].beta;
            Matrix dxhat(n, d);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    dgamma(0, j) += g(i, j) * lc.x_hat(i, j);
                    dbeta(0, j) += g(i, j);
                    dxhat(i, j) = g(i, j) * layer.gamma(0, j);
                }
            }
            // dx = inv_std/n * (n*dxhat - sum(dxhat) - x_hat * sum(dxhat*x_hat))
            Matrix sum_dxhat = col_sum(dxhat);
            Matrix sum_dxhat_xhat(1, d);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    sum_dxhat_xhat(0, j) += dxhat(i, j) * lc.x_hat(i, j);
            const double dn = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    g(i, j) = lc.inv_std(0, j) / dn *
                              (dn * dxhat(i, j) - sum_dxhat(0, j) -
                               lc.x_hat(i, j) * sum_dxhat_xhat(0, j));
                }
            }
            break;
        }
        case LayerKind::dropout:
            if (!lc.mask.empty())
                for (std::size_t i = 0; i < g.size(); ++i)
                    g.data()[i] *= lc.mask.data()[i];
            break;
        }
    }
    return grads;
}

AdamState init_adam(const NetworkState& state, const AdamConfig& config) {
    AdamState adam;
    adam.config = config;
    adam.m = zero_grads(state);
    adam.v = zero_grads(state);
    return adam;
}

namespace {

void adam_update_tensor(Matrix& p, Matrix& m, Matrix& v, const Matrix& g,
                        const AdamConfig& c, double corr1, double corr2) {
    if (!p.same_shape(g))
        throw Error("adam_step: gradient shape does not match parameter");
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.data()[i] = c.beta1 * m.data()[i] + (1.0 - c.beta1) * g.data()[i];
        v.data()[i] = c.beta2 * v.data()[i] + (1.0 - c.beta2) * g.data()[i] * g.data()[i];
        const double m_hat = m.data()[i] / corr1;
        const double v_hat = v.data()[i] / corr2;
        p.data()[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
}

} // namespace

void adam_step(NetworkState& state, AdamState& adam, const Gradients& grads) {
    if (grads.layers.size() != state.layers.size())
        throw Error("adam_step: gradients do not match network (layer count)");
    adam.t += 1;
    const double corr1 = 1.0 - std::pow(adam.config.beta1, static_cast<double>(adam.t));
    const double corr2 = 1.0 - std::pow(adam.config.beta2, static_cast<double>(adam.t));

    auto update = [&](Matrix& p, Matrix& m, Matrix& v, const Matrix& g) {
        if (p.size() > 0)
            adam_update_tensor(p, m, v, g, adam.config, corr1, corr2);
    };
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        LayerState& l = state.layers[i];
        update(l.w, adam.m.layers[i].w, adam.v.layers[i].w, grads.layers[i].w);
        update(l.b, adam.m.layers[i].b, adam.v.layers[i].b, grads.layers[i].b);
        update(l.gamma, adam.m.layers[i].gamma, adam.v.layers[i].gamma, grads.layers[i].gamma);
        update(l.beta, adam.m.layers[i].beta, adam.v.layers[i].beta, grads.layers[i].beta);
    }
    if (state.has_head()) {
        update(state.head.w, adam.m.head.w, adam.v.head.w, grads.head.w);
        update(state.head.b, adam.m.head.b, adam.v.head.b, grads.head.b);
    }
}

} // namespace osr
