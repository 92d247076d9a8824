#pragma once

#include <vector>

#include "osr/labels.hpp"
#include "osr/training.hpp"

namespace osr {

/// Squared distance from the embedding of x to the nearest class mean.
double outlier_score(const TrainedModel& model, const Matrix& x_row);

/// Batch form; one score per row of x.
std::vector<double> outlier_scores(const TrainedModel& model, const Matrix& x);

/// Scores from an already-computed embedding batch.
std::vector<double> outlier_scores_z(const ClassMeans& means, const Matrix& z);

/// Nearest-rank percentile threshold: sort ascending, return the score at
/// rank ceil((1 - contamination_ratio) * n), clamped to [1, n].
double estimate_threshold(std::vector<double> scores, double contamination_ratio);

/// Known-class probabilities from distances: softmax over the negative
/// squared distances to the class means, with max-shift stabilization.
std::vector<double> class_probabilities(const TrainedModel& model, const Matrix& x_row);

struct OpenPrediction {
    int label = kUnknownLabel; // known class id or kUnknownLabel
    double score = 0.0;
    std::vector<double> probs; // over the known classes, in class_ids order
};

/// The open-set decision: unknown iff score strictly exceeds the threshold,
/// otherwise the argmax probability class (ties toward the lowest index).
/// Pure function of its arguments; probabilities only matter through ranks.
int open_label(double score, double threshold, const std::vector<double>& probs,
               const std::vector<int>& class_ids);

/// Classifies one instance into K known classes or unknown. Probabilities
/// come from the distances for regime ii, and from the softmax head for
/// regimes ce and ii_ce.
OpenPrediction predict_open(const TrainedModel& model, const Matrix& x_row);
std::vector<OpenPrediction> predict_open_batch(const TrainedModel& model, const Matrix& x);

/// Closed-set prediction: argmax class, never unknown.
std::vector<int> predict_closed(const TrainedModel& model, const Matrix& x);

} // namespace osr
