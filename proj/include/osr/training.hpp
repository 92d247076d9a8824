#pragma once

#include <optional>
#include <string>
#include <vector>

#include "osr/errors.hpp"
#include "osr/losses.hpp"
#include "osr/network.hpp"

namespace osr {

/// Training regimes: ii-loss only, cross entropy only, or one ii step
/// followed by one cross-entropy step per iteration.
enum class TrainRegime { ii, ce, ii_ce };

const char* regime_name(TrainRegime regime);
TrainRegime regime_from_name(const std::string& name);

struct TrainConfig {
    TrainRegime regime = TrainRegime::ii;
    std::size_t iterations = 5000;
    std::size_t batch_size = 128;
    AdamConfig adam;
    double contamination_ratio = 0.01;
    std::uint64_t seed = 0;
};

/// Per-iteration loss instrumentation. The ii breakdown is recorded for every
/// regime; ce is present only when a ce head is trained.
struct CurvePoint {
    double intra = 0.0;
    double inter = 0.0;
    double ii = 0.0;
    std::optional<double> ce;
};

/// Training produced a non-finite loss. Carries the curves recorded so far
/// so callers can persist the partial run.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(std::size_t iteration, const std::string& what,
                     std::vector<CurvePoint> curves)
        : Error(what), iteration(iteration), partial_curves(std::move(curves)) {}
    std::size_t iteration;
    std::vector<CurvePoint> partial_curves;
};

/// The deployable artifact: frozen network, full-training-set class means,
/// outlier threshold, and the training metadata needed to replay the run.
struct TrainedModel {
    NetworkState network;
    ClassMeans class_means;
    double threshold = 0.0;
    TrainRegime regime = TrainRegime::ii;
    std::uint64_t train_seed = 0;
    std::size_t iterations = 0;
    std::size_t optimizer_steps = 0;
    std::vector<CurvePoint> curves;
};

/// Mini-batch training per regime. Labels must be 0..K-1 with every class
/// populated. After the loop, class means are computed in infer mode over the
/// full training set and the outlier threshold is fitted at the configured
/// contamination ratio. Deterministic given (net_config.seed, config.seed).
TrainedModel train(const Matrix& x, const std::vector<int>& labels,
                   const NetworkConfig& net_config, const TrainConfig& config);

void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

} // namespace osr
