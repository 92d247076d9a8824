#include "osr/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "osr/openset.hpp"
#include "osr/rng.hpp"

using nlohmann::json;

namespace osr {

const char* regime_name(TrainRegime regime) {
    switch (regime) {
    case TrainRegime::ii: return "ii";
    case TrainRegime::ce: return "ce";
    case TrainRegime::ii_ce: return "ii_ce";
    }
    return "ii";
}

TrainRegime regime_from_name(const std::string& name) {
    if (name == "ii") return TrainRegime::ii;
    if (name == "ce") return TrainRegime::ce;
    if (name == "ii_ce" || name == "ii+ce") return TrainRegime::ii_ce;
    throw ConfigError("unknown training regime '" + name + "' (expected ii, ce, or ii_ce)");
}

namespace {

std::size_t validate_training_labels(const std::vector<int>& labels) {
    int max_label = -1;
    for (int y : labels) {
        if (y < 0)
            throw ConfigError("train: labels must be contiguous 0..K-1, got " + std::to_string(y));
        max_label = std::max(max_label, y);
    }
    const std::size_t k = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> counts(k, 0);
    for (int y : labels)
        counts[static_cast<std::size_t>(y)] += 1;
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0)
            throw ConfigError("train: class " + std::to_string(c) + " has zero instances");
    return k;
}

} // namespace

TrainedModel train(const Matrix& x, const std::vector<int>& labels,
                   const NetworkConfig& net_config, const TrainConfig& config) {
    if (x.rows() == 0)
        throw ConfigError("train: empty dataset");
    if (x.rows() != labels.size())
        throw ConfigError("train: feature rows and label count disagree");
    if (config.iterations < 1)
        throw ConfigError("train: iterations must be >= 1");
    if (config.batch_size < 2)
        throw ConfigError("train: batch_size must be >= 2");
    if (!(config.contamination_ratio >= 0.0 && config.contamination_ratio < 1.0))
        throw ConfigError("train: contamination_ratio must be in [0, 1)");

    const std::size_t k = validate_training_labels(labels);
    const bool use_ii = config.regime != TrainRegime::ce;
    const bool use_ce = config.regime != TrainRegime::ii;
    if (use_ce && net_config.ce_classes != k)
        throw ConfigError("train: regime " + std::string(regime_name(config.regime)) +
                          " requires a ce head of width " + std::to_string(k));

    NetworkState net = init_network(net_config);
    AdamState adam_ii = init_adam(net, config.adam);
    AdamState adam_ce = init_adam(net, config.adam);
    std::mt19937_64 batch_rng(derive_seed(config.seed, "batch"));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));

    const std::size_t n = x.rows(), dim = x.cols();
    Matrix xb(config.batch_size, dim);
    std::vector<int> yb(config.batch_size);
    std::vector<CurvePoint> curves;
    curves.reserve(config.iterations);

    for (std::size_t iter = 1; iter <= config.iterations; ++iter) {
        // Uniform with replacement, per Algorithm 1's "sample a mini-batch".
        for (std::size_t i = 0; i < config.batch_size; ++i) {
            const std::size_t idx = uniform_index(batch_rng, n);
            std::memcpy(xb.row(i), x.row(idx), dim * sizeof(double));
            yb[i] = labels[idx];
        }

        CurvePoint point;
        if (use_ii) {
            ForwardCache fc = forward_train(net, xb, dropout_rng);
            const LossBreakdown breakdown = ii_loss(fc.z, yb);
            point.intra = breakdown.intra_spread;
            point.inter = breakdown.inter_separation;
            point.ii = breakdown.ii_loss;
            const Matrix grad_z = ii_loss_grad(fc.z, yb);
            const Gradients grads = backward(net, fc, grad_z);
            adam_step(net, adam_ii, grads);
        }
        if (use_ce) {
            ForwardCache fc = forward_train(net, xb, dropout_rng);
            const CrossEntropy ce = cross_entropy(fc.logits, yb);
            point.ce = ce.loss;
            if (!use_ii) {
                const LossBreakdown breakdown = ii_loss(fc.z, yb);
                point.intra = breakdown.intra_spread;
                point.inter = breakdown.inter_separation;
                point.ii = breakdown.ii_loss;
            }
            const Matrix grad_z(fc.z.rows(), fc.z.cols());
            const Gradients grads = backward(net, fc, grad_z, &ce.grad);
            adam_step(net, adam_ce, grads);
        }

        if (!std::isfinite(point.ii) || (point.ce && !std::isfinite(*point.ce)))
            throw TrainingDiverged(iter,
                                   "training diverged (non-finite loss) at iteration " +
                                       std::to_string(iter),
                                   std::move(curves));
        curves.push_back(point);
    }

    // Algorithm 1 epilogue: means over all training instances with the frozen
    // network, then the global threshold from the training-score percentile.
    const Matrix z_full = embed(net, x);
    ClassMeans means = class_means(z_full, labels);
    const std::vector<double> scores = outlier_scores_z(means, z_full);

    TrainedModel model;
    model.network = std::move(net);
    model.class_means = std::move(means);
    model.threshold = estimate_threshold(scores, config.contamination_ratio);
    model.regime = config.regime;
    model.train_seed = config.seed;
    model.iterations = config.iterations;
    model.optimizer_steps = adam_ii.t + adam_ce.t;
    model.curves = std::move(curves);
    return model;
}

// --- model file -------------------------------------------------------------
//
//   8 bytes magic | u32 LE header length | JSON header | f64 LE arrays
//
// The header declares structure and array shapes; every float lives in the
// binary section so round trips are bit-exact.

namespace {

constexpr char kModelMagic[8] = {'O', 'S', 'R', 'M', 'O', 'D', 'L', '1'};
constexpr int kModelVersion = 1;

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32_le(std::istream& in, const std::string& path, const char* what) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw DataError(path + ": truncated while reading " + what);
    return std::uint32_t(buf[0]) | (std::uint32_t(buf[1]) << 8) | (std::uint32_t(buf[2]) << 16) |
           (std::uint32_t(buf[3]) << 24);
}

void write_f64_block(std::ostream& out, const double* values, std::size_t count) {
    std::vector<unsigned char> buf(count * 8);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b)
            buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

void read_f64_block(std::istream& in, double* values, std::size_t count,
                    const std::string& path, const std::string& name) {
    std::vector<unsigned char> buf(count * 8);
    if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
        throw DataError(path + ": truncated in array '" + name + "'");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= std::uint64_t(buf[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
}

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    }
    return "dense";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "dense") return LayerKind::dense;
    if (name == "relu") return LayerKind::relu;
    if (name == "batchnorm") return LayerKind::batchnorm;
    if (name == "dropout") return LayerKind::dropout;
    throw DataError("model header: unknown layer kind '" + name + "'");
}

template <typename T>
T header_field(const json& j, const std::string& name) {
    if (!j.contains(name))
        throw DataError("model header: missing field '" + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw DataError("model header: invalid field '" + name + "'");
    }
}

struct NamedTensor {
    std::string name;
    Matrix* tensor;
};

// The declared array order. `curves` holds the 4 instrumentation rows and
// `threshold` a 1x1 cell so that save and load walk the same list.
std::vector<NamedTensor> model_tensors(TrainedModel& model, Matrix& threshold_cell,
                                       Matrix (&curve_rows)[4]) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < model.network.layers.size(); ++i) {
        LayerState& l = model.network.layers[i];
        const std::string prefix = "layers." + std::to_string(i) + ".";
        if (l.spec.kind == LayerKind::dense) {
            out.push_back({prefix + "w", &l.w});
            out.push_back({prefix + "b", &l.b});
        } else if (l.spec.kind == LayerKind::batchnorm) {
            out.push_back({prefix + "gamma", &l.gamma});
            out.push_back({prefix + "beta", &l.beta});
            out.push_back({prefix + "run_mean", &l.run_mean});
            out.push_back({prefix + "run_var", &l.run_var});
        }
    }
    if (model.network.has_head()) {
        out.push_back({"head.w", &model.network.head.w});
        out.push_back({"head.b", &model.network.head.b});
    }
    out.push_back({"class_means", &model.class_means.means});
    out.push_back({"threshold", &threshold_cell});
    out.push_back({"curves.intra", &curve_rows[0]});
    out.push_back({"curves.inter", &curve_rows[1]});
    out.push_back({"curves.ii", &curve_rows[2]});
    out.push_back({"curves.ce", &curve_rows[3]});
    return out;
}

json network_header(const NetworkConfig& config) {
    json layers = json::array();
    for (const LayerSpec& spec : config.layers) {
        json l;
        l["kind"] = layer_kind_name(spec.kind);
        if (spec.kind == LayerKind::dense)
            l["width"] = spec.width;
        if (spec.kind == LayerKind::dropout)
            l["keep_prob"] = spec.keep_prob;
        layers.push_back(l);
    }
    json net;
    net["input_dim"] = config.input_dim;
    net["layers"] = layers;
    net["z_dim"] = config.z_dim;
    net["z_batchnorm"] = config.z_batchnorm;
    net["ce_classes"] = config.ce_classes;
    net["seed"] = config.seed;
    return net;
}

NetworkConfig network_from_header(const json& net) {
    NetworkConfig config;
    config.input_dim = header_field<std::size_t>(net, "input_dim");
    config.z_dim = header_field<std::size_t>(net, "z_dim");
    config.z_batchnorm = header_field<bool>(net, "z_batchnorm");
    config.ce_classes = header_field<std::size_t>(net, "ce_classes");
    config.seed = header_field<std::uint64_t>(net, "seed");
    for (const json& l : header_field<json>(net, "layers")) {
        LayerSpec spec;
        spec.kind = layer_kind_from_name(header_field<std::string>(l, "kind"));
        if (spec.kind == LayerKind::dense)
            spec.width = header_field<std::size_t>(l, "width");
        if (spec.kind == LayerKind::dropout)
            spec.keep_prob = header_field<double>(l, "keep_prob");
        config.layers.push_back(spec);
    }
    return config;
}

} // namespace

void save_model(const TrainedModel& model, const std::string& path) {
    TrainedModel& m = const_cast<TrainedModel&>(model); // tensors are only read
    Matrix threshold_cell(1, 1);
    threshold_cell(0, 0) = model.threshold;
    Matrix curve_rows[4];
    const std::size_t n_curves = model.curves.size();
    for (Matrix& row : curve_rows)
        row = Matrix(1, n_curves);
    for (std::size_t i = 0; i < n_curves; ++i) {
        curve_rows[0](0, i) = model.curves[i].intra;
        curve_rows[1](0, i) = model.curves[i].inter;
        curve_rows[2](0, i) = model.curves[i].ii;
        curve_rows[3](0, i) =
            model.curves[i].ce ? *model.curves[i].ce : std::numeric_limits<double>::quiet_NaN();
    }
    const std::vector<NamedTensor> tensors = model_tensors(m, threshold_cell, curve_rows);

    json header;
    header["format"] = "osr-model";
    header["format_version"] = kModelVersion;
    header["network"] = network_header(model.network.config);
    header["regime"] = regime_name(model.regime);
    header["train_seed"] = model.train_seed;
    header["iterations"] = model.iterations;
    header["optimizer_steps"] = model.optimizer_steps;
    header["class_ids"] = model.class_means.class_ids;
    header["class_counts"] = model.class_means.counts;
    json arrays = json::array();
    for (const NamedTensor& t : tensors)
        arrays.push_back({{"name", t.name}, {"rows", t.tensor->rows()}, {"cols", t.tensor->cols()}});
    header["arrays"] = arrays;

    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path);
    out.write(kModelMagic, sizeof(kModelMagic));
    write_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), std::streamsize(header_text.size()));
    for (const NamedTensor& t : tensors)
        write_f64_block(out, t.tensor->data(), t.tensor->size());
    if (!out)
        throw DataError("write failed for " + path);
}

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path);
    char magic[8];
    if (!in.read(magic, sizeof(magic)))
        throw DataError(path + ": truncated while reading magic");
    if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw DataError(path + ": not an osr model file (bad magic)");
    const std::uint32_t header_len = read_u32_le(in, path, "header length");
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), header_len))
        throw DataError(path + ": truncated in header");
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw DataError(path + ": malformed header: " + e.what());
    }

    if (header_field<std::string>(header, "format") != "osr-model")
        throw DataError(path + ": field 'format' is not 'osr-model'");
    if (header_field<int>(header, "format_version") != kModelVersion)
        throw DataError(path + ": unsupported field 'format_version' (" +
                        std::to_string(header_field<int>(header, "format_version")) + ")");

    TrainedModel model;
    model.network = init_network(network_from_header(header_field<json>(header, "network")));
    model.regime = regime_from_name(header_field<std::string>(header, "regime"));
    model.train_seed = header_field<std::uint64_t>(header, "train_seed");
    model.iterations = header_field<std::size_t>(header, "iterations");
    model.optimizer_steps = header_field<std::size_t>(header, "optimizer_steps");
    model.class_means.class_ids = header_field<std::vector<int>>(header, "class_ids");
    model.class_means.counts = header_field<std::vector<std::size_t>>(header, "class_counts");
    if (model.class_means.class_ids.size() != model.class_means.counts.size())
        throw DataError(path + ": fields 'class_ids' and 'class_counts' disagree");
    model.class_means.means =
        Matrix(model.class_means.class_ids.size(), model.network.config.z_dim);

    Matrix threshold_cell(1, 1);
    Matrix curve_rows[4];
    const json arrays = header_field<json>(header, "arrays");
    // Curve lengths come from the declared arrays, not `iterations`, so a
    // partial-curve model (diverged run) still loads.
    std::size_t n_curves = 0;
    for (const json& a : arrays)
        if (header_field<std::string>(a, "name") == "curves.intra")
            n_curves = header_field<std::size_t>(a, "cols");
    for (Matrix& row : curve_rows)
        row = Matrix(1, n_curves);

    const std::vector<NamedTensor> tensors = model_tensors(model, threshold_cell, curve_rows);
    if (arrays.size() != tensors.size())
        throw DataError(path + ": field 'arrays' declares " + std::to_string(arrays.size()) +
                        " arrays, expected " + std::to_string(tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const json& a = arrays[i];
        const std::string name = header_field<std::string>(a, "name");
        if (name != tensors[i].name)
            throw DataError(path + ": array " + std::to_string(i) + " is '" + name +
                            "', expected '" + tensors[i].name + "'");
        if (header_field<std::size_t>(a, "rows") != tensors[i].tensor->rows() ||
            header_field<std::size_t>(a, "cols") != tensors[i].tensor->cols())
            throw DataError(path + ": array '" + name + "' has unexpected shape");
    }
    for (const NamedTensor& t : tensors)
        read_f64_block(in, t.tensor->data(), t.tensor->size(), path, t.name);
    if (in.peek() != EOF)
        throw DataError(path + ": trailing bytes after declared arrays");

    model.threshold = threshold_cell(0, 0);
    model.curves.resize(n_curves);
    for (std::size_t i = 0; i < n_curves; ++i) {
        model.curves[i].intra = curve_rows[0](0, i);
        model.curves[i].inter = curve_rows[1](0, i);
        model.curves[i].ii = curve_rows[2](0, i);
        const double ce = curve_rows[3](0, i);
        if (!std::isnan(ce))
            model.curves[i].ce = ce;
    }
    return model;
}

} // namespace osr
