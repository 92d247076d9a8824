#pragma once

#include <vector>

#include "osr/labels.hpp"
#include "osr/matrix.hpp"

namespace osr {

struct TrainedModel;

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0; // classify positive when score > threshold
};

/// Unknown-detection ROC: positives are unknown-class instances. Thresholds
/// sweep the distinct score values descending; tied scores collapse into one
/// step. The implicit (0,0) origin is included.
std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<bool>& is_unknown);

/// Unnormalized trapezoidal area under the ROC for FPR in [0, fpr_cap]
/// (maximum value = fpr_cap). Requires both classes present.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& is_unknown,
               double fpr_cap = 1.0);

struct EvalReport {
    double auc_full = 0.0;
    double auc_at_cap = 0.0;
    double cap = 0.1;
    std::vector<int> labels; // 0..K-1 then kUnknownLabel
    std::vector<double> precision, recall, f1;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion; // [truth][predicted]
    std::size_t n_instances = 0;
};

/// One-vs-rest precision/recall/F1 for each of the K known labels and the
/// unknown label, plus unweighted macro averages. Zero denominators produce
/// zero scores. AUC fields are left at their defaults.
EvalReport macro_prf(const std::vector<int>& predictions, const std::vector<int>& truths,
                     std::size_t k_known);

/// Full open-set evaluation of a model on labeled test data (truths use
/// 0..K-1 and kUnknownLabel): detection AUC (full and capped) + K+1 metrics.
EvalReport evaluate_open(const TrainedModel& model, const Matrix& x,
                         const std::vector<int>& truths, double fpr_cap = 0.1);

struct WelchResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

/// Welch's unequal-variance t-test with two-sided p-value.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta function I_x(a, b), continued-fraction form.
double reg_incomplete_beta(double a, double b, double x);

} // namespace osr
