#pragma once

// Softmax cross-entropy over a batch of logits (one column per sample, C x N
// like every other batch in this library), and the combined training
// objective: cross-entropy plus lambda times the low-rank embedding loss on
// the feature batch. lambda == 0 skips the embedding term entirely, so a
// combined run at lambda 0 reproduces a plain softmax run bit for bit.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ole/matrix.hpp"
#include "ole/ole_loss.hpp"

namespace ole {

struct SoftmaxLoss {
    /// Mean cross-entropy over the batch.
    double value = 0.0;
    /// d(value)/d(logits), same shape as the logits (C x N).
    Matrix grad;
};

/// Mean softmax cross-entropy with max-subtraction for stability. labels[j]
/// is the class of column j and must lie in [0, C).
inline SoftmaxLoss softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    const std::size_t c = logits.rows();
    const std::size_t n = logits.cols();
    if (labels.size() != n) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " logit columns");
    }
    if (n == 0 || c == 0) {
        throw std::invalid_argument("softmax_cross_entropy: empty logits");
    }

    SoftmaxLoss out;
    out.grad = Matrix(c, n);
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const int label = labels[j];
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " out of range for " + std::to_string(c) + " classes");
        }
        double col_max = logits(0, j);
        for (std::size_t i = 1; i < c; ++i) col_max = std::max(col_max, logits(i, j));
        double sum = 0.0;
        for (std::size_t i = 0; i < c; ++i) sum += std::exp(logits(i, j) - col_max);
        total += col_max + std::log(sum) - logits(static_cast<std::size_t>(label), j);

        for (std::size_t i = 0; i < c; ++i)
            out.grad(i, j) = std::exp(logits(i, j) - col_max) / sum * inv_n;
        out.grad(static_cast<std::size_t>(label), j) -= inv_n;
    }
    out.value = total * inv_n;
    return out;
}

struct CombinedLoss {
    double softmax_value = 0.0;
    /// Embedding loss value; 0 when lambda == 0 (the term is skipped).
    double ole_value = 0.0;
    /// softmax_value + lambda * ole_value.
    double total = 0.0;
    /// d(total)/d(logits), C x N.
    Matrix logit_grad;
    /// d(total)/d(features), D x N; zero when lambda == 0.
    Matrix feature_grad;
};

/// Combined objective on one batch: features D x N, logits C x N, one label
/// per column of both.
inline CombinedLoss combined_loss(const Matrix& features, const Matrix& logits,
                                  const std::vector<int>& labels, double lambda,
                                  const OleConfig& cfg = {}) {
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("combined_loss: lambda must be >= 0");
    }
    if (features.cols() != logits.cols()) {
        throw std::invalid_argument("combined_loss: feature columns " +
                                    std::to_string(features.cols()) + " vs logit columns " +
                                    std::to_string(logits.cols()));
    }

    SoftmaxLoss sm = softmax_cross_entropy(logits, labels);
    CombinedLoss out;
    out.softmax_value = sm.value;
    out.logit_grad = std::move(sm.grad);
    if (lambda > 0.0) {
        OleValueGrad vg = ole_value_and_grad(features, labels, cfg);
        out.ole_value = vg.value;
        out.feature_grad = lambda * vg.grad;
        out.total = out.softmax_value + lambda * vg.value;
    } else {
        out.feature_grad = Matrix(features.rows(), features.cols());
        out.total = out.softmax_value;
    }
    return out;
}

} // namespace ole
