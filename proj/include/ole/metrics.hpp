#pragma once

// Embedding diagnostics: pairwise angle matrices, normalized singular-value
// spectra, 1-NN cosine classification, block-orthogonality summaries, and
// threshold sweeps for novelty rejection. Features are columns (D x N),
// scores are softmax probabilities (C x N).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ole/common.hpp"
#include "ole/matrix.hpp"
#include "ole/svd.hpp"

namespace ole {

struct NoveltyPoint {
    double threshold = 0.0;
    double known_accuracy = 0.0;
    double false_positive_ratio = 0.0;
};

struct MetricsReport {
    Matrix angles;                     // N x N, degrees
    std::vector<double> spectrum;      // sigma_i / sigma_1
    double knn_accuracy = 0.0;
    double mean_intra_angle = 0.0;     // degrees
    double mean_inter_angle = 0.0;     // degrees
    double energy_top_c = 0.0;
    std::vector<NoveltyPoint> novelty_curve;
};

namespace detail {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

inline std::vector<double> column_norms_checked(const Matrix& m, const char* who) {
    std::vector<double> norms(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j) * m(i, j);
        norms[j] = std::sqrt(s);
        if (norms[j] == 0.0) {
            throw DataError(std::string(who) + ": zero-norm column " + std::to_string(j));
        }
    }
    return norms;
}

} // namespace detail

/// Pairwise angles between feature columns, in degrees. Cosines are clamped
/// to [-1, 1] before arccos to absorb rounding; the diagonal is exactly zero.
inline Matrix angle_matrix(const Matrix& features) {
    const std::vector<double> norms = detail::column_norms_checked(features, "angle_matrix");
    const std::size_t n = features.cols();
    Matrix angles(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < features.rows(); ++r)
                dot += features(r, i) * features(r, j);
            const double cosine = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            const double deg = std::acos(cosine) * detail::kRadToDeg;
            angles(i, j) = deg;
            angles(j, i) = deg;
        }
    }
    return angles;
}

/// Singular values of the feature matrix divided by the largest one;
/// non-increasing with leading entry 1.
inline std::vector<double> spectrum(const Matrix& features) {
    if (max_abs(features) == 0.0) throw DataError("spectrum: zero matrix");
    const SvdResult f = svd(features);
    std::vector<double> out(f.singular_values);
    const double top = out.front();
    for (double& s : out) s /= top;
    return out;
}

/// Fraction of total singular-value mass captured by the first `c` values.
inline double energy_top_c(const Matrix& features, std::size_t c) {
    if (max_abs(features) == 0.0) throw DataError("energy_top_c: zero matrix");
    const SvdResult f = svd(features);
    double total = 0.0;
    double top = 0.0;
    for (std::size_t i = 0; i < f.singular_values.size(); ++i) {
        total += f.singular_values[i];
        if (i < c) top += f.singular_values[i];
    }
    return top / total;
}

/// 1-nearest-neighbor classification by cosine distance: each query column
/// takes the label of the reference column with the highest cosine
/// similarity, ties resolved toward the lowest reference index.
inline double knn_cosine_accuracy(const Matrix& reference, const std::vector<int>& ref_labels,
                                  const Matrix& queries, const std::vector<int>& query_labels) {
    if (reference.cols() == 0) throw std::invalid_argument("knn: empty reference set");
    if (reference.cols() != ref_labels.size() || queries.cols() != query_labels.size()) {
        throw std::invalid_argument("knn: label count does not match column count");
    }
    if (reference.rows() != queries.rows()) {
        throw std::invalid_argument("knn: reference and query dimensions differ");
    }
    const std::vector<double> ref_norms = detail::column_norms_checked(reference, "knn");
    const std::vector<double> query_norms = detail::column_norms_checked(queries, "knn");

    std::size_t correct = 0;
    for (std::size_t q = 0; q < queries.cols(); ++q) {
        double best = -2.0;
        std::size_t best_idx = 0;
        for (std::size_t r = 0; r < reference.cols(); ++r) {
            double dot = 0.0;
            for (std::size_t i = 0; i < reference.rows(); ++i)
                dot += reference(i, r) * queries(i, q);
            const double sim = dot / (ref_norms[r] * query_norms[q]);
            if (sim > best) {
                best = sim;
                best_idx = r;
            }
        }
        if (ref_labels[best_idx] == query_labels[q]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(queries.cols());
}

/// Means of the off-diagonal same-class and cross-class entries of the
/// angle matrix. A split with no same-class pairs reports 0 intra.
inline std::pair<double, double> block_orthogonality(const Matrix& features,
                                                     const std::vector<int>& labels) {
    if (features.cols() != labels.size()) {
        throw std::invalid_argument("block_orthogonality: label count mismatch");
    }
    const Matrix angles = angle_matrix(features);
    double intra = 0.0, inter = 0.0;
    std::size_t intra_n = 0, inter_n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            if (labels[i] == labels[j]) {
                intra += angles(i, j);
                ++intra_n;
            } else {
                inter += angles(i, j);
                ++inter_n;
            }
        }
    }
    if (inter_n == 0) throw std::invalid_argument("block_orthogonality: need >= 2 classes");
    return {intra_n > 0 ? intra / static_cast<double>(intra_n) : 0.0,
            inter / static_cast<double>(inter_n)};
}

namespace detail {

inline void check_score_columns(const Matrix& scores, const char* who) {
    for (std::size_t j = 0; j < scores.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < scores.rows(); ++i) sum += scores(i, j);
        if (std::abs(sum - 1.0) > 1e-6) {
            throw DataError(std::string(who) + ": column " + std::to_string(j) +
                            " sums to " + format_g9(sum) + ", expected 1");
        }
    }
}

struct MaxScore {
    double value;
    std::size_t argmax;
};

inline MaxScore max_score(const Matrix& scores, std::size_t j) {
    MaxScore out{scores(0, j), 0};
    for (std::size_t i = 1; i < scores.rows(); ++i) {
        if (scores(i, j) > out.value) {
            out.value = scores(i, j);
            out.argmax = i;
        }
    }
    return out;
}

} // namespace detail

/// Fraction of columns whose argmax row equals the label. Works on logits or
/// probabilities alike; ties resolve toward the lowest row index.
inline double argmax_accuracy(const Matrix& scores, const std::vector<int>& labels) {
    if (scores.cols() != labels.size()) {
        throw std::invalid_argument("argmax_accuracy: label count mismatch");
    }
    if (labels.empty()) throw std::invalid_argument("argmax_accuracy: empty batch");
    std::size_t correct = 0;
    for (std::size_t j = 0; j < scores.cols(); ++j) {
        if (static_cast<int>(detail::max_score(scores, j).argmax) == labels[j]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Threshold sweep for open-set rejection. At threshold t a known sample
/// counts as accepted-and-correct when its max score exceeds t and its
/// argmax matches the label; a novel sample is a false positive when its max
/// score exceeds t. Score columns must sum to 1 (within 1e-6).
inline std::vector<NoveltyPoint> novelty_curve(const Matrix& known_scores,
                                               const std::vector<int>& known_labels,
                                               const Matrix& novel_scores,
                                               const std::vector<double>& thresholds) {
    if (known_scores.cols() != known_labels.size()) {
        throw std::invalid_argument("novelty_curve: label count mismatch");
    }
    if (known_scores.cols() == 0 || novel_scores.cols() == 0) {
        throw std::invalid_argument("novelty_curve: empty score set");
    }
    if (known_scores.rows() != novel_scores.rows()) {
        throw std::invalid_argument("novelty_curve: class-count mismatch between score sets");
    }
    detail::check_score_columns(known_scores, "novelty_curve");
    detail::check_score_columns(novel_scores, "novelty_curve");

    std::vector<detail::MaxScore> known(known_scores.cols());
    for (std::size_t j = 0; j < known_scores.cols(); ++j)
        known[j] = detail::max_score(known_scores, j);
    std::vector<double> novel(novel_scores.cols());
    for (std::size_t j = 0; j < novel_scores.cols(); ++j)
        novel[j] = detail::max_score(novel_scores, j).value;

    std::vector<NoveltyPoint> curve;
    curve.reserve(thresholds.size());
    for (double t : thresholds) {
        NoveltyPoint p;
        p.threshold = t;
        std::size_t accepted_correct = 0;
        for (std::size_t j = 0; j < known.size(); ++j) {
            if (known[j].value > t &&
                static_cast<int>(known[j].argmax) == known_labels[j]) {
                ++accepted_correct;
            }
        }
        std::size_t false_pos = 0;
        for (double v : novel) {
            if (v > t) ++false_pos;
        }
        p.known_accuracy = static_cast<double>(accepted_correct) /
                           static_cast<double>(known.size());
        p.false_positive_ratio = static_cast<double>(false_pos) /
                                 static_cast<double>(novel.size());
        curve.push_back(p);
    }
    return curve;
}

struct HistBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

/// Uniform-bin histogram over [lo, hi]; values are clamped into the range,
/// and hi lands in the last bin.
inline std::vector<HistBin> histogram(const std::vector<double>& values, std::size_t bins,
                                      double lo, double hi) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("histogram: hi must exceed lo");
    std::vector<HistBin> out(bins);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].lo = lo + width * static_cast<double>(b);
        out[b].hi = lo + width * static_cast<double>(b + 1);
    }
    for (double v : values) {
        const double clamped = std::clamp(v, lo, hi);
        std::size_t b = static_cast<std::size_t>((clamped - lo) / width);
        b = std::min(b, bins - 1);
        ++out[b].count;
    }
    return out;
}

/// Max score per column, the statistic novelty thresholds act on.
inline std::vector<double> max_scores(const Matrix& scores) {
    std::vector<double> out(scores.cols());
    for (std::size_t j = 0; j < scores.cols(); ++j)
        out[j] = detail::max_score(scores, j).value;
    return out;
}

} // namespace ole
