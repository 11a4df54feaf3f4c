#pragma once

// Self-contained gradient-verification suites: nuclear-norm subgradient and
// embedding-loss gradient against central finite differences, end-to-end
// network parameter gradients, and the zero-loss/zero-gradient geometry of
// block-orthogonal batches. Each suite draws its own well-conditioned random
// instances (resampling until the loss is locally smooth) so the finite
// differences are trustworthy at the pinned tolerances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ole/common.hpp"
#include "ole/matrix.hpp"
#include "ole/network.hpp"
#include "ole/ole_loss.hpp"
#include "ole/softmax_loss.hpp"
#include "ole/svd.hpp"

namespace ole {

constexpr double kNuclearGradTol = 1e-5;
constexpr double kOleGradTol = 1e-4;
constexpr double kNetworkGradTol = 1e-4;
constexpr double kProp1Tol = 1e-8;
constexpr double kFdStep = 1e-6;

struct SuiteResult {
    double worst = 0.0;
    bool ok = false;
};

struct Prop1Result {
    double worst_value = 0.0;
    double worst_grad = 0.0;
    bool ok = false;
};

namespace detail {

inline double fd_relative_error(const Matrix& fd, const Matrix& grad) {
    const double scale = std::max(frobenius_norm(fd) + frobenius_norm(grad), 1e-12);
    return frobenius_norm(fd - grad) / scale;
}

inline Matrix gradcheck_random_matrix(std::mt19937_64& rng, std::size_t rows,
                                      std::size_t cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

// Smallest singular value bounded away from zero and pairwise gaps open:
// the conditions under which the nuclear norm is differentiable and a
// central difference with step kFdStep is accurate.
inline bool singular_values_well_separated(const Matrix& m, double min_sv, double min_gap) {
    const auto sv = svd(m).singular_values;
    if (sv.back() < min_sv) return false;
    for (std::size_t i = 1; i < sv.size(); ++i) {
        if (sv[i - 1] - sv[i] < min_gap) return false;
    }
    return true;
}

// Local smoothness of the embedding loss at (x, labels): every class block
// and the batch are well separated spectrally, and no class sits near the
// clamp boundary.
inline bool ole_locally_smooth(const Matrix& x, const std::vector<int>& labels,
                               const OleConfig& cfg) {
    const double min_sv = 10.0 * std::max(cfg.sv_threshold, 1e-6);
    if (!singular_values_well_separated(x, min_sv, 1e-3)) return false;
    for (const auto& [cls, block] : partition_by_class(x, labels)) {
        if (!singular_values_well_separated(block, min_sv, 1e-3)) return false;
        if (std::abs(nuclear_norm(block) - cfg.delta_clamp) < 0.1) return false;
    }
    return true;
}

template <typename Loss>
Matrix fd_gradient(Matrix x, const Loss& loss) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double saved = x(i, j);
            x(i, j) = saved + kFdStep;
            const double up = loss(x);
            x(i, j) = saved - kFdStep;
            const double down = loss(x);
            x(i, j) = saved;
            g(i, j) = (up - down) / (2.0 * kFdStep);
        }
    }
    return g;
}

} // namespace detail

/// Nuclear-norm subgradient vs central finite differences on random
/// well-conditioned matrices. Pass: worst relative error <= kNuclearGradTol.
inline SuiteResult gradcheck_nuclear(std::uint64_t seed, std::size_t trials) {
    if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    auto rng = seeded_rng(seed, 0x9c001);
    std::uniform_int_distribution<std::size_t> dim(3, 7);
    SuiteResult result;
    for (std::size_t t = 0; t < trials; ++t) {
        Matrix a(1, 1);
        int attempts = 0;
        do {
            if (++attempts > 500) {
                throw std::runtime_error("gradcheck: no well-conditioned matrix found");
            }
            a = detail::gradcheck_random_matrix(rng, dim(rng), dim(rng));
        } while (!detail::singular_values_well_separated(a, 1e-3, 1e-3));

        const Matrix analytic = nuclear_subgradient(svd(a), 1e-6);
        const Matrix fd =
            detail::fd_gradient(a, [](const Matrix& m) { return nuclear_norm(m); });
        result.worst = std::max(result.worst, detail::fd_relative_error(fd, analytic));
    }
    result.ok = result.worst <= kNuclearGradTol;
    return result;
}

/// Embedding-loss gradient vs central finite differences on random batches
/// resampled until the loss is locally smooth. `corrupt` injects +1e-2 into
/// one analytic gradient entry of the first trial, a fault the suite must
/// catch. Pass: worst relative error <= kOleGradTol.
inline SuiteResult gradcheck_ole(std::uint64_t seed, std::size_t trials, bool corrupt = false) {
    if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    auto rng = seeded_rng(seed, 0x9c002);
    std::uniform_int_distribution<std::size_t> dims(3, 8);
    std::uniform_int_distribution<std::size_t> per_class(2, 6);
    std::uniform_int_distribution<int> classes(2, 4);
    const OleConfig cfg;
    SuiteResult result;
    for (std::size_t t = 0; t < trials; ++t) {
        Matrix x(1, 1);
        std::vector<int> labels;
        int attempts = 0;
        do {
            if (++attempts > 500) {
                throw std::runtime_error("gradcheck: no well-conditioned batch found");
            }
            const int c = classes(rng);
            const std::size_t n_per = per_class(rng);
            const std::size_t n = static_cast<std::size_t>(c) * n_per;
            x = detail::gradcheck_random_matrix(rng, dims(rng), n);
            labels.resize(n);
            for (std::size_t j = 0; j < n; ++j) labels[j] = static_cast<int>(j) % c;
        } while (!detail::ole_locally_smooth(x, labels, cfg));

        Matrix analytic = ole_backward(x, labels, cfg);
        if (corrupt && t == 0) analytic(0, 0) += 1e-2;
        const Matrix fd = detail::fd_gradient(
            x, [&labels, &cfg](const Matrix& m) { return ole_forward(m, labels, cfg); });
        result.worst = std::max(result.worst, detail::fd_relative_error(fd, analytic));
    }
    result.ok = result.worst <= kOleGradTol;
    return result;
}

/// Zero loss and zero gradient on constructed block-orthogonal batches whose
/// class norms clear the clamp. Pass: both worsts <= kProp1Tol.
inline Prop1Result gradcheck_prop1(std::uint64_t seed, std::size_t trials) {
    if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    auto rng = seeded_rng(seed, 0x9c003);
    std::uniform_int_distribution<int> classes(2, 5);
    std::uniform_int_distribution<std::size_t> extra_dims(0, 3);
    std::uniform_int_distribution<std::size_t> per_class(2, 5);
    std::uniform_real_distribution<double> coeff(1.0, 2.0);
    const OleConfig cfg;
    Prop1Result result;
    for (std::size_t t = 0; t < trials; ++t) {
        const int c = classes(rng);
        const std::size_t d = static_cast<std::size_t>(c) + extra_dims(rng);
        // Orthonormal directions, one per class.
        const Matrix q = svd(detail::gradcheck_random_matrix(rng, d, d)).u;
        std::vector<int> labels;
        std::vector<std::vector<double>> cols;
        for (int cls = 0; cls < c; ++cls) {
            const std::size_t n_per = per_class(rng);
            for (std::size_t s = 0; s < n_per; ++s) {
                // Rank-1 class block with Euclidean coefficient norm >= sqrt(2),
                // safely above the unit clamp.
                const double scale = coeff(rng);
                std::vector<double> col(d);
                for (std::size_t i = 0; i < d; ++i) col[i] = scale * q(i, cls);
                cols.push_back(std::move(col));
                labels.push_back(cls);
            }
        }
        Matrix x(d, cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j)
            for (std::size_t i = 0; i < d; ++i) x(i, j) = cols[j][i];

        const OleValueGrad vg = ole_value_and_grad(x, labels, cfg);
        result.worst_value = std::max(result.worst_value, std::abs(vg.value));
        result.worst_grad = std::max(result.worst_grad, frobenius_norm(vg.grad));
    }
    result.ok = result.worst_value <= kProp1Tol && result.worst_grad <= kProp1Tol;
    return result;
}

namespace detail {

// Margin conditions that make the full network loss locally smooth with
// batchnorm off: every pre-activation is clear of the relu kink, and the
// feature batch keeps the embedding loss smooth when lambda > 0.
inline bool network_locally_smooth(const NetworkParams& params, const Matrix& x,
                                   const std::vector<int>& labels, double lambda,
                                   const OleConfig& cfg) {
    Matrix h = x;
    for (std::size_t l = 0; l + 1 < params.dense.size(); ++l) {
        Matrix z = params.dense[l].w * h;
        for (std::size_t j = 0; j < z.cols(); ++j)
            for (std::size_t i = 0; i < z.rows(); ++i) {
                z(i, j) += params.dense[l].b(i, 0);
                if (std::abs(z(i, j)) < 1e-4) return false;
            }
        h = z;
        for (std::size_t j = 0; j < h.cols(); ++j)
            for (std::size_t i = 0; i < h.rows(); ++i) h(i, j) = std::max(0.0, h(i, j));
    }
    return lambda == 0.0 || ole_locally_smooth(h, labels, cfg);
}

} // namespace detail

/// End-to-end parameter gradients of the combined loss (batchnorm off) vs
/// central finite differences, for lambda in {0, 0.25}, `seeds_per_lambda`
/// instances each. Pass: worst per-tensor relative error <= kNetworkGradTol.
inline SuiteResult gradcheck_network(std::uint64_t seed, std::size_t seeds_per_lambda) {
    if (seeds_per_lambda < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.hidden_dims = {5};
    spec.feature_dim = 4;
    spec.class_count = 3;
    spec.use_batchnorm = false;
    const std::size_t n = 6;
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    const OleConfig cfg;

    SuiteResult result;
    std::uint64_t draw = 0;
    for (double lambda : {0.0, 0.25}) {
        for (std::size_t s = 0; s < seeds_per_lambda; ++s) {
            NetworkParams params;
            Matrix x(1, 1);
            int attempts = 0;
            do {
                if (++attempts > 500) {
                    throw std::runtime_error("gradcheck: no smooth network instance found");
                }
                auto rng = seeded_rng(seed, 0x9c004 + draw++);
                params = init_params(spec, rng());
                x = detail::gradcheck_random_matrix(rng, spec.input_dim, n);
            } while (!detail::network_locally_smooth(params, x, labels, lambda, cfg));

            const ForwardTrace trace = forward(std::as_const(params), x);
            const CombinedLoss loss =
                combined_loss(trace.features, trace.logits, labels, lambda, cfg);
            NetworkGradients grads =
                backward(params, trace, loss.feature_grad, loss.logit_grad);
            auto views = parameter_views(params, grads);

            auto loss_at = [&]() {
                const ForwardTrace t = forward(std::as_const(params), x);
                return combined_loss(t.features, t.logits, labels, lambda, cfg).total;
            };
            for (const ParamView& view : views) {
                Matrix fd(view.value->rows(), view.value->cols());
                for (std::size_t i = 0; i < fd.rows(); ++i) {
                    for (std::size_t j = 0; j < fd.cols(); ++j) {
                        const double saved = (*view.value)(i, j);
                        (*view.value)(i, j) = saved + kFdStep;
                        const double up = loss_at();
                        (*view.value)(i, j) = saved - kFdStep;
                        const double down = loss_at();
                        (*view.value)(i, j) = saved;
                        fd(i, j) = (up - down) / (2.0 * kFdStep);
                    }
                }
                result.worst =
                    std::max(result.worst, detail::fd_relative_error(fd, *view.grad));
            }
        }
    }
    result.ok = result.worst <= kNetworkGradTol;
    return result;
}

} // namespace ole
