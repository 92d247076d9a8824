#pragma once

#include <vector>

#include "osr/matrix.hpp"

namespace osr {

/// Per-class arithmetic means of a z-batch. Only classes present in the batch
/// appear; class_ids lists them in ascending order and row j of `means` is the
/// mean of the rows labeled class_ids[j].
struct ClassMeans {
    Matrix means;
    std::vector<std::size_t> counts;
    std::vector<int> class_ids;

    std::size_t size() const { return class_ids.size(); }
    /// Index of class_id within class_ids; throws if absent.
    std::size_t index_of(int class_id) const;
};

ClassMeans class_means(const Matrix& z, const std::vector<int>& labels);

/// Average squared distance of each instance to its class mean.
double intra_spread(const Matrix& z, const std::vector<int>& labels, const ClassMeans& means);

/// Minimum squared distance between any two class means, with the achieving
/// pair (ties broken toward the lexicographically smallest index pair). A
/// single class is a degenerate case: value 0, flagged.
struct InterSeparation {
    double value = 0.0;
    std::size_t m = 0;
    std::size_t n = 0;
    bool degenerate = false;
};

InterSeparation inter_separation(const ClassMeans& means);

struct LossBreakdown {
    double intra_spread = 0.0;
    double inter_separation = 0.0;
    double ii_loss = 0.0; // always intra_spread - inter_separation
    bool degenerate = false;
};

/// ii-loss of a batch: class means are computed from the batch itself, then
/// ii = intra_spread - inter_separation. A single-class batch is degenerate:
/// the separation term is 0 and the flag is set.
LossBreakdown ii_loss(const Matrix& z, const std::vector<int>& labels);

/// d(ii-loss)/dz, including the dependence of the batch class means on z.
/// Only the two classes achieving the minimum separation receive the inter
/// term (subgradient at ties: lowest-index pair).
Matrix ii_loss_grad(const Matrix& z, const std::vector<int>& labels);

struct CrossEntropy {
    double loss = 0.0;
    Matrix grad; // (softmax - onehot) / batch_size
};

/// Mean softmax cross-entropy with max-subtraction for stability. Labels
/// index logits columns.
CrossEntropy cross_entropy(const Matrix& logits, const std::vector<int>& labels);

} // namespace osr
