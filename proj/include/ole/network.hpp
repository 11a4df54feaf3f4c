#pragma once

// Minimal multilayer perceptron with exact manual backpropagation. Batches
// are columns-as-samples throughout: input is d x N, deep features D x N,
// logits C x N.
//
// Architecture: input -> [dense -> batchnorm -> relu] for each hidden width
// and once more for the feature layer -> dense classifier. The feature
// layer's post-activation output is the attachment point for the embedding
// loss; backward() accepts its gradient separately and injects it there, so
// that gradient reaches every parameter up to the feature layer but never
// the classifier's weights.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ole/common.hpp"
#include "ole/matrix.hpp"

namespace ole {

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t feature_dim = 0;
    std::size_t class_count = 0;
    bool use_batchnorm = true;
};

inline void validate(const NetworkSpec& spec) {
    if (spec.input_dim < 1) throw ConfigError("NetworkSpec: input_dim must be >= 1");
    for (std::size_t w : spec.hidden_dims)
        if (w < 1) throw ConfigError("NetworkSpec: hidden widths must be >= 1");
    if (spec.feature_dim < 1) throw ConfigError("NetworkSpec: feature_dim must be >= 1");
    if (spec.class_count < 1) throw ConfigError("NetworkSpec: class_count must be >= 1");
}

/// Widths of the embedding layers: hidden widths then the feature layer.
inline std::vector<std::size_t> embedding_widths(const NetworkSpec& spec) {
    std::vector<std::size_t> w = spec.hidden_dims;
    w.push_back(spec.feature_dim);
    return w;
}

struct DenseParams {
    Matrix w; // out x in
    Matrix b; // out x 1
};

struct BatchNormParams {
    Matrix gamma;        // out x 1
    Matrix beta;         // out x 1
    Matrix running_mean; // out x 1
    Matrix running_var;  // out x 1, entries > 0
};

struct NetworkParams {
    NetworkSpec spec;
    /// Embedding layers in order, classifier last.
    std::vector<DenseParams> dense;
    /// One per embedding layer; empty when use_batchnorm is off.
    std::vector<BatchNormParams> bn;
};

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;

/// Xavier-uniform initialization: weights uniform in +-sqrt(6/(fan_in +
/// fan_out)), biases 0, batchnorm at identity (gamma 1, beta 0, running mean
/// 0, running variance 1). Deterministic per seed.
inline NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    NetworkParams p;
    p.spec = spec;

    std::size_t layer_index = 0;
    auto make_dense = [&](std::size_t in, std::size_t out) {
        DenseParams d;
        d.w = Matrix(out, in);
        d.b = Matrix(out, 1);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        auto rng = seeded_rng(seed, 0xd000 + layer_index);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < d.w.size(); ++i) d.w.data()[i] = dist(rng);
        ++layer_index;
        return d;
    };

    std::size_t fan_in = spec.input_dim;
    for (std::size_t width : embedding_widths(spec)) {
        p.dense.push_back(make_dense(fan_in, width));
        if (spec.use_batchnorm) {
            BatchNormParams b;
            b.gamma = Matrix(width, 1, 1.0);
            b.beta = Matrix(width, 1, 0.0);
            b.running_mean = Matrix(width, 1, 0.0);
            b.running_var = Matrix(width, 1, 1.0);
            p.bn.push_back(std::move(b));
        }
        fan_in = width;
    }
    p.dense.push_back(make_dense(fan_in, spec.class_count));
    return p;
}

enum class Phase { train, eval };

struct LayerTrace {
    Matrix input;   // in x N, input to the dense transform
    Matrix xhat;    // out x N, normalized pre-affine (batchnorm only)
    Matrix inv_std; // out x 1 (batchnorm only; batch or running stats per phase)
    Matrix post;    // out x N, layer output after relu
};

struct ForwardTrace {
    Phase phase = Phase::eval;
    std::vector<LayerTrace> layers; // embedding layers only
    Matrix features;                // D x N
    Matrix logits;                  // C x N
};

namespace detail {

// Per-layer running-statistic refresh computed during a train-phase forward;
// applied by the mutating wrapper so the core stays const.
struct BnRefresh {
    Matrix mean; // out x 1
    Matrix var;  // out x 1
};

inline ForwardTrace forward_core(const NetworkParams& params, const Matrix& input, Phase phase,
                                 std::vector<BnRefresh>* refresh) {
    validate(params.spec);
    if (input.rows() != params.spec.input_dim) {
        throw std::invalid_argument("forward: input has " + std::to_string(input.rows()) +
                                    " rows, spec wants " +
                                    std::to_string(params.spec.input_dim));
    }
    if (input.cols() < 1) {
        throw std::invalid_argument("forward: empty batch");
    }

    ForwardTrace t;
    t.phase = phase;
    const std::size_t n = input.cols();
    const std::size_t n_embed = params.dense.size() - 1;
    Matrix x = input;
    for (std::size_t l = 0; l < n_embed; ++l) {
        LayerTrace lt;
        lt.input = std::move(x);

        const DenseParams& d = params.dense[l];
        Matrix z = d.w * lt.input;
        const std::size_t out = z.rows();
        for (std::size_t i = 0; i < out; ++i)
            for (std::size_t j = 0; j < n; ++j) z(i, j) += d.b(i, 0);

        if (params.spec.use_batchnorm) {
            const BatchNormParams& bnp = params.bn[l];
            lt.inv_std = Matrix(out, 1);
            lt.xhat = Matrix(out, n);
            BnRefresh r;
            if (phase == Phase::train && refresh) {
                r.mean = Matrix(out, 1);
                r.var = Matrix(out, 1);
            }
            for (std::size_t i = 0; i < out; ++i) {
                double mean, var;
                if (phase == Phase::train) {
                    mean = 0.0;
                    for (std::size_t j = 0; j < n; ++j) mean += z(i, j);
                    mean /= static_cast<double>(n);
                    var = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double c = z(i, j) - mean;
                        var += c * c;
                    }
                    var /= static_cast<double>(n); // population variance
                    if (refresh) {
                        r.mean(i, 0) = mean;
                        r.var(i, 0) = var;
                    }
                } else {
                    mean = bnp.running_mean(i, 0);
                    var = bnp.running_var(i, 0);
                }
                const double inv = 1.0 / std::sqrt(var + kBnEpsilon);
                lt.inv_std(i, 0) = inv;
                const double g = bnp.gamma(i, 0);
                const double b = bnp.beta(i, 0);
                for (std::size_t j = 0; j < n; ++j) {
                    lt.xhat(i, j) = (z(i, j) - mean) * inv;
                    z(i, j) = g * lt.xhat(i, j) + b;
                }
            }
            if (phase == Phase::train && refresh) refresh->push_back(std::move(r));
        }

        for (std::size_t i = 0; i < z.size(); ++i)
            if (z.data()[i] < 0.0) z.data()[i] = 0.0;
        lt.post = std::move(z);
        x = lt.post;
        t.layers.push_back(std::move(lt));
    }

    t.features = std::move(x);
    const DenseParams& cls = params.dense.back();
    t.logits = cls.w * t.features;
    for (std::size_t i = 0; i < t.logits.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) t.logits(i, j) += cls.b(i, 0);
    return t;
}

} // namespace detail

/// Eval-phase forward: pure, uses running batchnorm statistics.
inline ForwardTrace forward(const NetworkParams& params, const Matrix& input) {
    return detail::forward_core(params, input, Phase::eval, nullptr);
}

/// Forward in either phase. Train phase normalizes with batch statistics and
/// folds them into the running buffers (m <- 0.9 m + 0.1 batch_moment).
inline ForwardTrace forward(NetworkParams& params, const Matrix& input, Phase phase) {
    if (phase == Phase::eval) return forward(std::as_const(params), input);
    std::vector<detail::BnRefresh> refresh;
    ForwardTrace t = detail::forward_core(params, input, Phase::train, &refresh);
    for (std::size_t l = 0; l < refresh.size(); ++l) {
        BatchNormParams& bnp = params.bn[l];
        for (std::size_t i = 0; i < bnp.running_mean.rows(); ++i) {
            bnp.running_mean(i, 0) = kBnMomentum * bnp.running_mean(i, 0) +
                                     (1.0 - kBnMomentum) * refresh[l].mean(i, 0);
            bnp.running_var(i, 0) = kBnMomentum * bnp.running_var(i, 0) +
                                    (1.0 - kBnMomentum) * refresh[l].var(i, 0);
        }
    }
    return t;
}

struct DenseGrads {
    Matrix w;
    Matrix b;
};

struct BnGrads {
    Matrix gamma;
    Matrix beta;
};

struct NetworkGradients {
    std::vector<DenseGrads> dense;
    std::vector<BnGrads> bn;
    /// d(loss)/d(input), useful for composing and for gradient checks.
    Matrix input_grad;
};

namespace detail {

inline Matrix row_sums(const Matrix& a) {
    Matrix out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) sum += a(i, j);
        out(i, 0) = sum;
    }
    return out;
}

} // namespace detail

/// Backpropagation through the trace. feature_grad (D x N) is the embedding
/// loss gradient injected at the feature layer; logit_grad (C x N) is the
/// classifier loss gradient. Works on both train and eval traces (an eval
/// trace treats batchnorm as a fixed affine map).
inline NetworkGradients backward(const NetworkParams& params, const ForwardTrace& trace,
                                 const Matrix& feature_grad, const Matrix& logit_grad) {
    const std::size_t n_embed = params.dense.size() - 1;
    if (trace.layers.size() != n_embed) {
        throw std::invalid_argument("backward: trace does not match network depth");
    }
    if (!logit_grad.same_shape(trace.logits) || !feature_grad.same_shape(trace.features)) {
        throw std::invalid_argument("backward: gradient shapes do not match trace");
    }
    const std::size_t n = trace.features.cols();

    NetworkGradients g;
    g.dense.resize(params.dense.size());
    g.bn.resize(params.bn.size());

    const DenseParams& cls = params.dense.back();
    g.dense.back().w = logit_grad * transpose(trace.features);
    g.dense.back().b = detail::row_sums(logit_grad);
    Matrix d_post = transpose(cls.w) * logit_grad + feature_grad;

    for (std::size_t l = n_embed; l-- > 0;) {
        const LayerTrace& lt = trace.layers[l];
        const std::size_t out = lt.post.rows();

        Matrix dy = std::move(d_post);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if (lt.post.data()[i] <= 0.0) dy.data()[i] = 0.0;

        Matrix dz;
        if (params.spec.use_batchnorm) {
            const BatchNormParams& bnp = params.bn[l];
            BnGrads& bg = g.bn[l];
            bg.gamma = Matrix(out, 1);
            bg.beta = Matrix(out, 1);
            dz = Matrix(out, n);
            for (std::size_t i = 0; i < out; ++i) {
                double sum_dy = 0.0, sum_dyx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    sum_dy += dy(i, j);
                    sum_dyx += dy(i, j) * lt.xhat(i, j);
                }
                bg.beta(i, 0) = sum_dy;
                bg.gamma(i, 0) = sum_dyx;
                const double gamma = bnp.gamma(i, 0);
                const double inv = lt.inv_std(i, 0);
                if (trace.phase == Phase::train) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        dz(i, j) = inv * inv_n * gamma *
                                   (static_cast<double>(n) * dy(i, j) - sum_dy -
                                    lt.xhat(i, j) * sum_dyx);
                    }
                } else {
                    for (std::size_t j = 0; j < n; ++j) dz(i, j) = dy(i, j) * gamma * inv;
                }
            }
        } else {
            dz = std::move(dy);
        }

        g.dense[l].w = dz * transpose(lt.input);
        g.dense[l].b = detail::row_sums(dz);
        d_post = transpose(params.dense[l].w) * dz;
    }
    g.input_grad = std::move(d_post);
    return g;
}

/// One optimizer-visible parameter tensor and its gradient. weight marks
/// dense weight matrices, the only tensors decayed when decay is restricted.
struct ParamView {
    Matrix* value = nullptr;
    const Matrix* grad = nullptr;
    bool weight = false;
};

/// Stable enumeration of trainable tensors: per embedding layer W, b then
/// gamma, beta when batchnorm is on; classifier W, b last. Running
/// statistics are buffers, not parameters, and are not listed.
inline std::vector<ParamView> parameter_views(NetworkParams& p, NetworkGradients& g) {
    std::vector<ParamView> views;
    const std::size_t n_embed = p.dense.size() - 1;
    for (std::size_t l = 0; l < n_embed; ++l) {
        views.push_back({&p.dense[l].w, &g.dense[l].w, true});
        views.push_back({&p.dense[l].b, &g.dense[l].b, false});
        if (p.spec.use_batchnorm) {
            views.push_back({&p.bn[l].gamma, &g.bn[l].gamma, false});
            views.push_back({&p.bn[l].beta, &g.bn[l].beta, false});
        }
    }
    views.push_back({&p.dense.back().w, &g.dense.back().w, true});
    views.push_back({&p.dense.back().b, &g.dense.back().b, false});
    return views;
}

// --------------------------------------------------------------------------
// Checkpoint file format (all integers little-endian):
//   u32 magic 0x4F4C4531, u32 version 1,
//   u32 input_dim, u32 hidden_count, u32*hidden_count hidden widths,
//   u32 feature_dim, u32 class_count, u8 use_batchnorm,
//   then tensors, each as u32 rows, u32 cols, rows*cols f64 row-major:
//   per embedding layer W, b [, gamma, beta, running_mean, running_var],
//   then classifier W, b.
// --------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointMagic = 0x4F4C4531u;
constexpr std::uint32_t kCheckpointVersion = 1u;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError(std::string("checkpoint: truncated while reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is, const char* what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw DataError(std::string("checkpoint: truncated while reading ") + what);
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

inline void write_tensor(std::ostream& os, const Matrix& m) {
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) write_f64(os, m.data()[i]);
}

inline Matrix read_tensor(std::istream& is, std::size_t want_rows, std::size_t want_cols,
                          const char* what) {
    const std::uint32_t rows = read_u32(is, what);
    const std::uint32_t cols = read_u32(is, what);
    if (rows != want_rows || cols != want_cols) {
        throw DataError(std::string("checkpoint: tensor ") + what + " is " +
                        std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                        std::to_string(want_rows) + "x" + std::to_string(want_cols));
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = read_f64(is, what);
    return m;
}

} // namespace detail

inline void save_checkpoint(const NetworkParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    detail::write_u32(os, kCheckpointMagic);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(params.spec.input_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(params.spec.hidden_dims.size()));
    for (std::size_t w : params.spec.hidden_dims)
        detail::write_u32(os, static_cast<std::uint32_t>(w));
    detail::write_u32(os, static_cast<std::uint32_t>(params.spec.feature_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(params.spec.class_count));
    const char bn_flag = params.spec.use_batchnorm ? 1 : 0;
    os.write(&bn_flag, 1);

    const std::size_t n_embed = params.dense.size() - 1;
    for (std::size_t l = 0; l < n_embed; ++l) {
        detail::write_tensor(os, params.dense[l].w);
        detail::write_tensor(os, params.dense[l].b);
        if (params.spec.use_batchnorm) {
            detail::write_tensor(os, params.bn[l].gamma);
            detail::write_tensor(os, params.bn[l].beta);
            detail::write_tensor(os, params.bn[l].running_mean);
            detail::write_tensor(os, params.bn[l].running_var);
        }
    }
    detail::write_tensor(os, params.dense.back().w);
    detail::write_tensor(os, params.dense.back().b);
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    if (detail::read_u32(is, "magic") != kCheckpointMagic) {
        throw DataError("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }

    NetworkSpec spec;
    spec.input_dim = detail::read_u32(is, "input_dim");
    const std::uint32_t hidden_count = detail::read_u32(is, "hidden_count");
    for (std::uint32_t i = 0; i < hidden_count; ++i)
        spec.hidden_dims.push_back(detail::read_u32(is, "hidden width"));
    spec.feature_dim = detail::read_u32(is, "feature_dim");
    spec.class_count = detail::read_u32(is, "class_count");
    char bn_flag = 0;
    if (!is.read(&bn_flag, 1)) throw DataError("checkpoint: truncated header");
    spec.use_batchnorm = bn_flag != 0;
    validate(spec);

    NetworkParams p;
    p.spec = spec;
    std::size_t fan_in = spec.input_dim;
    for (std::size_t width : embedding_widths(spec)) {
        DenseParams d;
        d.w = detail::read_tensor(is, width, fan_in, "dense weight");
        d.b = detail::read_tensor(is, width, 1, "dense bias");
        p.dense.push_back(std::move(d));
        if (spec.use_batchnorm) {
            BatchNormParams b;
            b.gamma = detail::read_tensor(is, width, 1, "bn gamma");
            b.beta = detail::read_tensor(is, width, 1, "bn beta");
            b.running_mean = detail::read_tensor(is, width, 1, "bn running mean");
            b.running_var = detail::read_tensor(is, width, 1, "bn running var");
            for (std::size_t i = 0; i < b.running_var.size(); ++i) {
                if (!(b.running_var.data()[i] > 0.0)) {
                    throw DataError("checkpoint: running variance must be positive");
                }
            }
            p.bn.push_back(std::move(b));
        }
        fan_in = width;
    }
    DenseParams cls;
    cls.w = detail::read_tensor(is, spec.class_count, fan_in, "classifier weight");
    cls.b = detail::read_tensor(is, spec.class_count, 1, "classifier bias");
    p.dense.push_back(std::move(cls));
    return p;
}

} // namespace ole
