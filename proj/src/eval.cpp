#include "osr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "osr/errors.hpp"
#include "osr/openset.hpp"

namespace osr {

std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<bool>& is_unknown) {
    if (scores.size() != is_unknown.size())
        throw Error("roc: scores and flags differ in length");
    std::size_t n_pos = 0;
    for (bool f : is_unknown)
        n_pos += f ? 1 : 0;
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error("roc: need both unknown and known instances (" + std::to_string(n_pos) +
                    " positives, " + std::to_string(n_neg) + " negatives)");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> points;
    points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        const double v = scores[order[i]];
        while (i < order.size() && scores[order[i]] == v) {
            if (is_unknown[order[i]])
                ++tp;
            else
                ++fp;
            ++i;
        }
        points.push_back({double(fp) / double(n_neg), double(tp) / double(n_pos), v});
    }
    return points;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& is_unknown,
               double fpr_cap) {
    if (!(fpr_cap > 0.0 && fpr_cap <= 1.0))
        throw ConfigError("roc_auc: fpr_cap must be in (0, 1]");
    const std::vector<RocPoint> points = roc_points(scores, is_unknown);
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double x0 = points[i - 1].fpr, y0 = points[i - 1].tpr;
        const double x1 = points[i].fpr, y1 = points[i].tpr;
        if (x1 <= fpr_cap) {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            if (x0 < fpr_cap) {
                const double yc = y0 + (y1 - y0) * (fpr_cap - x0) / (x1 - x0);
                area += (fpr_cap - x0) * (y0 + yc) / 2.0;
            }
            break;
        }
    }
    return area;
}

EvalReport macro_prf(const std::vector<int>& predictions, const std::vector<int>& truths,
                     std::size_t k_known) {
    if (predictions.size() != truths.size())
        throw Error("macro_prf: predictions and truths differ in length");
    const std::size_t n_labels = k_known + 1;
    const auto index_of = [&](int label) -> std::size_t {
        if (label == kUnknownLabel)
            return k_known;
        if (label < 0 || static_cast<std::size_t>(label) >= k_known)
            throw Error("macro_prf: label " + std::to_string(label) + " outside 0.." +
                        std::to_string(k_known - 1) + " and unknown");
        return static_cast<std::size_t>(label);
    };

    EvalReport report;
    report.n_instances = truths.size();
    report.confusion.assign(n_labels, std::vector<std::size_t>(n_labels, 0));
    for (std::size_t i = 0; i < truths.size(); ++i)
        report.confusion[index_of(truths[i])][index_of(predictions[i])] += 1;

    report.labels.resize(n_labels);
    for (std::size_t j = 0; j < k_known; ++j)
        report.labels[j] = static_cast<int>(j);
    report.labels[k_known] = kUnknownLabel;

    report.precision.assign(n_labels, 0.0);
    report.recall.assign(n_labels, 0.0);
    report.f1.assign(n_labels, 0.0);
    for (std::size_t j = 0; j < n_labels; ++j) {
        const double tp = static_cast<double>(report.confusion[j][j]);
        double predicted = 0, actual = 0;
        for (std::size_t i = 0; i < n_labels; ++i) {
            predicted += static_cast<double>(report.confusion[i][j]);
            actual += static_cast<double>(report.confusion[j][i]);
        }
        report.precision[j] = predicted > 0 ? tp / predicted : 0.0;
        report.recall[j] = actual > 0 ? tp / actual : 0.0;
        const double pr = report.precision[j] + report.recall[j];
        report.f1[j] = pr > 0 ? 2.0 * report.precision[j] * report.recall[j] / pr : 0.0;
    }
    const double nl = static_cast<double>(n_labels);
    report.macro_precision =
        std::accumulate(report.precision.begin(), report.precision.end(), 0.0) / nl;
    report.macro_recall = std::accumulate(report.recall.begin(), report.recall.end(), 0.0) / nl;
    report.macro_f1 = std::accumulate(report.f1.begin(), report.f1.end(), 0.0) / nl;
    return report;
}

EvalReport evaluate_open(const TrainedModel& model, const Matrix& x,
                         const std::vector<int>& truths, double fpr_cap) {
    const std::vector<double> scores = outlier_scores(model, x);
    std::vector<bool> flags(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i)
        flags[i] = truths[i] == kUnknownLabel;

    const std::vector<OpenPrediction> preds = predict_open_batch(model, x);
    std::vector<int> labels(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        labels[i] = preds[i].label;

    EvalReport report = macro_prf(labels, truths, model.class_means.size());
    report.cap = fpr_cap;
    report.auc_full = roc_auc(scores, flags, 1.0);
    report.auc_at_cap = roc_auc(scores, flags, fpr_cap);
    return report;
}

// --- Welch t-test -----------------------------------------------------------

namespace {

// Continued fraction for the incomplete beta function (Lentz's method).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps)
            break;
    }
    return h;
}

} // namespace

double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw Error("welch_t_test: each sample needs >= 2 values");
    const auto mean_var = [](const std::vector<double>& s) {
        const double n = static_cast<double>(s.size());
        const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
        double var = 0.0;
        for (double v : s)
            var += (v - mean) * (v - mean);
        return std::pair<double, double>(mean, var / (n - 1.0));
    };
    const auto [mean_a, var_a] = mean_var(a);
    const auto [mean_b, var_b] = mean_var(b);
    if (var_a == 0.0 && var_b == 0.0)
        throw Error("welch_t_test: both samples have zero variance");

    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sa = var_a / na, sb = var_b / nb;
    WelchResult result;
    result.t = (mean_a - mean_b) / std::sqrt(sa + sb);
    result.df = (sa + sb) * (sa + sb) /
                (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    // Two-sided p from the Student-t distribution via the incomplete beta.
    result.p = reg_incomplete_beta(result.df / 2.0, 0.5,
                                   result.df / (result.df + result.t * result.t));
    return result;
}

} // namespace osr
