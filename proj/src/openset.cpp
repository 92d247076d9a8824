#include "osr/openset.hpp"

#include <algorithm>
#include <cmath>

#include "osr/errors.hpp"

namespace osr {

namespace {

std::vector<double> distances_to_means(const ClassMeans& means, const double* z_row) {
    std::vector<double> d(means.size());
    for (std::size_t j = 0; j < means.size(); ++j)
        d[j] = squared_distance(means.means.row(j), z_row, means.means.cols());
    return d;
}

std::vector<double> softmax_neg(const std::vector<double>& distances) {
    // exp(-d_j) / sum_m exp(-d_m), shifted by the minimum distance.
    const double d_min = *std::min_element(distances.begin(), distances.end());
    std::vector<double> p(distances.size());
    double denom = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = std::exp(-(distances[j] - d_min));
        denom += p[j];
    }
    for (double& v : p)
        v /= denom;
    return p;
}

std::vector<double> softmax_row(const double* logits, std::size_t k) {
    const double mx = *std::max_element(logits, logits + k);
    std::vector<double> p(k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        p[j] = std::exp(logits[j] - mx);
        denom += p[j];
    }
    for (double& v : p)
        v /= denom;
    return p;
}

} // namespace

std::vector<double> outlier_scores_z(const ClassMeans& means, const Matrix& z) {
    if (means.size() == 0)
        throw Error("outlier score: model has no class means");
    std::vector<double> scores(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const std::vector<double> d = distances_to_means(means, z.row(i));
        scores[i] = *std::min_element(d.begin(), d.end());
    }
    return scores;
}

std::vector<double> outlier_scores(const TrainedModel& model, const Matrix& x) {
    return outlier_scores_z(model.class_means, embed(model.network, x));
}

double outlier_score(const TrainedModel& model, const Matrix& x_row) {
    return outlier_scores(model, x_row).at(0);
}

double estimate_threshold(std::vector<double> scores, double contamination_ratio) {
    if (scores.empty())
        throw Error("estimate_threshold: empty score list");
    if (!(contamination_ratio >= 0.0 && contamination_ratio < 1.0))
        throw ConfigError("estimate_threshold: contamination_ratio must be in [0, 1)");
    std::sort(scores.begin(), scores.end());
    const double n = static_cast<double>(scores.size());
    const std::size_t rank = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil((1.0 - contamination_ratio) * n)), 1, scores.size());
    return scores[rank - 1];
}

std::vector<double> class_probabilities(const TrainedModel& model, const Matrix& x_row) {
    const Matrix z = embed(model.network, x_row);
    return softmax_neg(distances_to_means(model.class_means, z.row(0)));
}

int open_label(double score, double threshold, const std::vector<double>& probs,
               const std::vector<int>& class_ids) {
    if (score > threshold)
        return kUnknownLabel;
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.size(); ++j)
        if (probs[j] > probs[best]) // strict: ties keep the lowest index
            best = j;
    return class_ids[best];
}

std::vector<OpenPrediction> predict_open_batch(const TrainedModel& model, const Matrix& x) {
    const ForwardCache fc = forward_infer(model.network, x);
    const bool from_head = model.regime != TrainRegime::ii && model.network.has_head();
    std::vector<OpenPrediction> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::vector<double> d = distances_to_means(model.class_means, fc.z.row(i));
        OpenPrediction& p = out[i];
        p.score = *std::min_element(d.begin(), d.end());
        p.probs = from_head ? softmax_row(fc.logits.row(i), fc.logits.cols())
                            : softmax_neg(d);
        p.label = open_label(p.score, model.threshold, p.probs, model.class_means.class_ids);
    }
    return out;
}

OpenPrediction predict_open(const TrainedModel& model, const Matrix& x_row) {
    return predict_open_batch(model, x_row).at(0);
}

std::vector<int> predict_closed(const TrainedModel& model, const Matrix& x) {
    std::vector<OpenPrediction> preds = predict_open_batch(model, x);
    std::vector<int> labels(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::vector<double>& probs = preds[i].probs;
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.size(); ++j)
            if (probs[j] > probs[best])
                best = j;
        labels[i] = model.class_means.class_ids[best];
    }
    return labels;
}

} // namespace osr
