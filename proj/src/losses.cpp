#include "osr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "osr/errors.hpp"

namespace osr {

std::size_t ClassMeans::index_of(int class_id) const {
    const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id)
        throw Error("class " + std::to_string(class_id) + " has no mean");
    return static_cast<std::size_t>(it - class_ids.begin());
}

ClassMeans class_means(const Matrix& z, const std::vector<int>& labels) {
    if (z.rows() == 0)
        throw Error("class_means: empty batch");
    if (z.rows() != labels.size())
        throw Error("class_means: " + std::to_string(z.rows()) + " rows vs " +
                    std::to_string(labels.size()) + " labels");

    ClassMeans out;
    out.class_ids = labels;
    std::sort(out.class_ids.begin(), out.class_ids.end());
    out.class_ids.erase(std::unique(out.class_ids.begin(), out.class_ids.end()),
                        out.class_ids.end());

    const std::size_t k = out.class_ids.size(), d = z.cols();
    out.means = Matrix(k, d);
    out.counts.assign(k, 0);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const std::size_t j = out.index_of(labels[i]);
        out.counts[j] += 1;
        const double* zi = z.row(i);
        double* mj = out.means.row(j);
        for (std::size_t c = 0; c < d; ++c)
            mj[c] += zi[c];
    }
    for (std::size_t j = 0; j < k; ++j) {
        double* mj = out.means.row(j);
        for (std::size_t c = 0; c < d; ++c)
            mj[c] /= static_cast<double>(out.counts[j]);
    }
    return out;
}

double intra_spread(const Matrix& z, const std::vector<int>& labels, const ClassMeans& means) {
    if (z.rows() != labels.size())
        throw Error("intra_spread: rows vs labels mismatch");
    if (z.cols() != means.means.cols())
        throw Error("intra_spread: z and means dimensions disagree");
    double acc = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const std::size_t j = means.index_of(labels[i]);
        acc += squared_distance(means.means.row(j), z.row(i), z.cols());
    }
    return acc / static_cast<double>(z.rows());
}

InterSeparation inter_separation(const ClassMeans& means) {
    InterSeparation out;
    const std::size_t k = means.size();
    if (k < 2) {
        out.degenerate = true;
        return out;
    }
    out.value = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
        for (std::size_t n = m + 1; n < k; ++n) {
            const double d =
                squared_distance(means.means.row(m), means.means.row(n), means.means.cols());
            if (d < out.value) { // strict: ties keep the lowest-index pair
                out.value = d;
                out.m = m;
                out.n = n;
            }
        }
    }
    return out;
}

LossBreakdown ii_loss(const Matrix& z, const std::vector<int>& labels) {
    const ClassMeans means = class_means(z, labels);
    const InterSeparation inter = inter_separation(means);
    LossBreakdown out;
    out.intra_spread = intra_spread(z, labels, means);
    out.inter_separation = inter.value;
    out.ii_loss = out.intra_spread - out.inter_separation;
    out.degenerate = inter.degenerate;
    return out;
}

Matrix ii_loss_grad(const Matrix& z, const std::vector<int>& labels) {
    const ClassMeans means = class_means(z, labels);
    const InterSeparation inter = inter_separation(means);
    const std::size_t n_rows = z.rows(), d = z.cols();
    const double n_inv = 1.0 / static_cast<double>(n_rows);

    // Intra term: the chain through the class mean cancels exactly (the
    // within-class deviations sum to zero), leaving (2/N)(z_i - mu_{c(i)}).
    Matrix grad(n_rows, d);
    for (std::size_t i = 0; i < n_rows; ++i) {
        const std::size_t j = means.index_of(labels[i]);
        const double* mj = means.means.row(j);
        const double* zi = z.row(i);
        double* gi = grad.row(i);
        for (std::size_t c = 0; c < d; ++c)
            gi[c] = 2.0 * n_inv * (zi[c] - mj[c]);
    }
    if (inter.degenerate)
        return grad;

    // Inter term: only the argmin pair (m, n) contributes, through their means.
    const double* mu_m = means.means.row(inter.m);
    const double* mu_n = means.means.row(inter.n);
    const double inv_cm = 1.0 / static_cast<double>(means.counts[inter.m]);
    const double inv_cn = 1.0 / static_cast<double>(means.counts[inter.n]);
    const int id_m = means.class_ids[inter.m];
    const int id_n = means.class_ids[inter.n];
    for (std::size_t i = 0; i < n_rows; ++i) {
        double* gi = grad.row(i);
        if (labels[i] == id_m) {
            for (std::size_t c = 0; c < d; ++c)
                gi[c] -= 2.0 * inv_cm * (mu_m[c] - mu_n[c]);
        } else if (labels[i] == id_n) {
            for (std::size_t c = 0; c < d; ++c)
                gi[c] += 2.0 * inv_cn * (mu_m[c] - mu_n[c]);
        }
    }
    return grad;
}

CrossEntropy cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size())
        throw Error("cross_entropy: rows vs labels mismatch");
    const std::size_t n = logits.rows(), k = logits.cols();
    CrossEntropy out;
    out.grad = Matrix(n, k);
    const double n_inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw Error("cross_entropy: label " + std::to_string(y) + " outside logits width " +
                        std::to_string(k));
        const double* row = logits.row(i);
        const double mx = *std::max_element(row, row + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        out.loss += n_inv * (log_denom - (row[y] - mx));
        double* g = out.grad.row(i);
        for (std::size_t j = 0; j < k; ++j)
            g[j] = n_inv * (std::exp(row[j] - mx) / denom - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0));
    }
    return out;
}

} // namespace osr
