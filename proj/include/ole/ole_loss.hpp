#pragma once

// Orthogonal low-rank embedding loss over a feature batch X (features as
// columns, one column per sample):
//
//   L(X) = sum_c max(delta, |X_c|_*) - |X|_*
//
// where X_c gathers the columns of class c and |.|_* is the nuclear norm.
// Minimizing pulls each class toward a low-rank subspace while pushing the
// whole batch toward high rank; the loss is non-negative and reaches zero
// when class subspaces are mutually orthogonal and each class block sits
// above the clamp.
//
// The descent direction assembles per-class nuclear subgradients scattered
// back to their column positions, minus the whole-batch subgradient. A class
// block at or below the clamp contributes a zero block (the max is flat
// there).

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ole/matrix.hpp"
#include "ole/svd.hpp"

namespace ole {

struct OleConfig {
    /// Lower clamp inside max(delta, |X_c|_*); keeps a class from collapsing
    /// to the zero matrix, which would be trivially low-rank.
    double delta_clamp = 1.0;
    /// A singular value must exceed this strictly to contribute its
    /// singular-vector pair to the subgradient.
    double sv_threshold = 1e-6;
};

inline void validate(const OleConfig& cfg) {
    if (!(cfg.delta_clamp >= 0.0)) {
        throw std::invalid_argument("OleConfig: delta_clamp must be >= 0");
    }
    if (!(cfg.sv_threshold >= 0.0)) {
        throw std::invalid_argument("OleConfig: sv_threshold must be >= 0");
    }
}

/// Column indices per class id, ascending by class id. Labels must be
/// non-negative and there must be one per column.
inline std::map<int, std::vector<std::size_t>> class_columns(const std::vector<int>& labels) {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        if (labels[j] < 0) {
            throw std::invalid_argument("class_columns: negative label at position " +
                                        std::to_string(j));
        }
        out[labels[j]].push_back(j);
    }
    return out;
}

/// Splits X into per-class column blocks, ascending by class id. Classes not
/// present in the batch simply do not appear.
inline std::vector<std::pair<int, Matrix>> partition_by_class(const Matrix& x,
                                                              const std::vector<int>& labels) {
    if (labels.size() != x.cols()) {
        throw std::invalid_argument("partition_by_class: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(x.cols()) + " columns");
    }
    std::vector<std::pair<int, Matrix>> out;
    for (const auto& [cls, cols] : class_columns(labels)) {
        Matrix block(x.rows(), cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j)
            for (std::size_t i = 0; i < x.rows(); ++i) block(i, j) = x(i, cols[j]);
        out.emplace_back(cls, std::move(block));
    }
    return out;
}

struct OleValueGrad {
    double value = 0.0;
    Matrix grad;
};

/// Loss value and descent direction in one pass; forward and backward both
/// route through here so they agree bit for bit.
inline OleValueGrad ole_value_and_grad(const Matrix& x, const std::vector<int>& labels,
                                       const OleConfig& cfg = {}) {
    validate(cfg);
    if (labels.size() != x.cols()) {
        throw std::invalid_argument("ole_value_and_grad: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(x.cols()) + " columns");
    }

    OleValueGrad out;
    out.grad = Matrix(x.rows(), x.cols());

    double intra = 0.0;
    for (const auto& [cls, cols] : class_columns(labels)) {
        Matrix block(x.rows(), cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j)
            for (std::size_t i = 0; i < x.rows(); ++i) block(i, j) = x(i, cols[j]);

        const SvdResult f = svd(block);
        const double nn = nuclear_norm(f);
        if (nn > cfg.delta_clamp) {
            intra += nn;
            const Matrix g = nuclear_subgradient(f, cfg.sv_threshold);
            for (std::size_t j = 0; j < cols.size(); ++j)
                for (std::size_t i = 0; i < x.rows(); ++i) out.grad(i, cols[j]) += g(i, j);
        } else {
            intra += cfg.delta_clamp;
        }
    }

    const SvdResult fb = svd(x);
    const Matrix gb = nuclear_subgradient(fb, cfg.sv_threshold);
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.data()[i] -= gb.data()[i];

    out.value = intra - nuclear_norm(fb);
    return out;
}

inline double ole_forward(const Matrix& x, const std::vector<int>& labels,
                          const OleConfig& cfg = {}) {
    return ole_value_and_grad(x, labels, cfg).value;
}

inline Matrix ole_backward(const Matrix& x, const std::vector<int>& labels,
                           const OleConfig& cfg = {}) {
    return ole_value_and_grad(x, labels, cfg).grad;
}

} // namespace ole
