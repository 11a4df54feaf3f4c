#pragma once

// Configuration-driven experiment harness: a flat key=value configuration
// type, dataset assembly, the training loop (softmax-only, embedding-only,
// or combined objectives), the lambda validation sweep, gradient-check
// driver, and checkpoint-based metrics export. All artifacts are headerless
// numeric CSVs (9 significant digits) re-readable by the data module.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ole/common.hpp"
#include "ole/data.hpp"
#include "ole/gradcheck.hpp"
#include "ole/matrix.hpp"
#include "ole/metrics.hpp"
#include "ole/network.hpp"
#include "ole/ole_loss.hpp"
#include "ole/optim.hpp"
#include "ole/softmax_loss.hpp"

namespace ole {

/// Flat experiment configuration; every field maps to one key=value setting
/// of the same name.
struct ExperimentConfig {
    // Dataset: kind "blobs" generates Gaussian blobs (train and test share
    // class centers); "csv" and "idx" load files. Test inputs are optional.
    std::string dataset = "blobs";
    std::size_t blob_dim = 16;
    int blob_classes = 3;
    std::size_t blob_train_per_class = 200;
    std::size_t blob_test_per_class = 50;
    double blob_spread = 0.1;
    std::string train_csv;
    std::string test_csv;
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;

    // Network.
    std::vector<std::size_t> hidden_widths = {100, 100, 100, 100};
    std::size_t feature_dim = 10;
    bool batchnorm = true;

    // Loss: mode in {softmax, ole, softmax+ole}; lambda weights the
    // embedding term (and scales the whole objective in ole mode).
    std::string mode = "softmax+ole";
    double lambda = 0.25;
    double delta_clamp = 1.0;
    double sv_threshold = 1e-6;

    // Optimizer in {sgd_nesterov, adam}; lr follows the step schedule
    // (x0.1 at 50%, x0.01 at 75% of epochs).
    std::string optimizer = "adam";
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    // Run shape.
    std::size_t epochs = 40;
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;
    std::size_t repeats = 1;
    std::string output_dir = "ole_out";
    // Validation rule: "auto" uses 1-NN cosine for ole mode, argmax
    // otherwise; "argmax"/"knn" force one.
    std::string eval = "auto";
    bool stratified = false;

    // gradcheck subcommand.
    std::size_t trials = 20;
    bool corrupt = false;

    // metrics subcommand.
    std::string checkpoint;

    // sweep subcommand.
    std::vector<double> sweep_lambdas = {0.0, 0.0625, 0.25, 0.5};
};

enum class LossMode { softmax_only, ole_only, combined };
enum class OptimizerKind { sgd_nesterov, adam };
enum class EvalRule { argmax, knn };

inline LossMode loss_mode(const ExperimentConfig& cfg) {
    if (cfg.mode == "softmax") return LossMode::softmax_only;
    if (cfg.mode == "ole") return LossMode::ole_only;
    if (cfg.mode == "softmax+ole") return LossMode::combined;
    throw ConfigError("config: mode must be softmax, ole, or softmax+ole, got '" + cfg.mode +
                      "'");
}

inline OptimizerKind optimizer_kind(const ExperimentConfig& cfg) {
    if (cfg.optimizer == "sgd_nesterov") return OptimizerKind::sgd_nesterov;
    if (cfg.optimizer == "adam") return OptimizerKind::adam;
    throw ConfigError("config: optimizer must be sgd_nesterov or adam, got '" + cfg.optimizer +
                      "'");
}

inline EvalRule eval_rule(const ExperimentConfig& cfg) {
    if (cfg.eval == "argmax") return EvalRule::argmax;
    if (cfg.eval == "knn") return EvalRule::knn;
    if (cfg.eval == "auto") {
        return loss_mode(cfg) == LossMode::ole_only ? EvalRule::knn : EvalRule::argmax;
    }
    throw ConfigError("config: eval must be auto, argmax, or knn, got '" + cfg.eval + "'");
}

// --------------------------------------------------------------------------
// Configuration parsing: defaults, then file settings, then overrides.
// --------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

inline double config_double(const std::string& value, const std::string& key) {
    double out = 0.0;
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config: " + key + ": expected a number, got '" + value + "'");
    }
    return out;
}

inline std::uint64_t config_u64(const std::string& value, const std::string& key) {
    std::uint64_t out = 0;
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config: " + key + ": expected a non-negative integer, got '" +
                          value + "'");
    }
    return out;
}

inline bool config_bool(const std::string& value, const std::string& key) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config: " + key + ": expected 0/1/true/false, got '" + value + "'");
}

template <typename T, typename Parse>
std::vector<T> config_list(const std::string& value, const std::string& key, Parse parse) {
    std::vector<T> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = value.find(',', start);
        const std::string item =
            trim(value.substr(start, comma == std::string::npos ? std::string::npos
                                                                : comma - start));
        if (item.empty()) throw ConfigError("config: " + key + ": empty list element");
        out.push_back(parse(item, key));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace detail

/// Applies one key=value setting; unknown keys and malformed values raise
/// ConfigError.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key,
                          const std::string& value) {
    using detail::config_bool;
    using detail::config_double;
    using detail::config_u64;
    auto as_size = [&](const std::string& v, const std::string& k) {
        return static_cast<std::size_t>(config_u64(v, k));
    };

    if (key == "dataset") cfg.dataset = value;
    else if (key == "blob_dim") cfg.blob_dim = as_size(value, key);
    else if (key == "blob_classes") cfg.blob_classes = static_cast<int>(config_u64(value, key));
    else if (key == "blob_train_per_class") cfg.blob_train_per_class = as_size(value, key);
    else if (key == "blob_test_per_class") cfg.blob_test_per_class = as_size(value, key);
    else if (key == "blob_spread") cfg.blob_spread = config_double(value, key);
    else if (key == "train_csv") cfg.train_csv = value;
    else if (key == "test_csv") cfg.test_csv = value;
    else if (key == "train_images") cfg.train_images = value;
    else if (key == "train_labels") cfg.train_labels = value;
    else if (key == "test_images") cfg.test_images = value;
    else if (key == "test_labels") cfg.test_labels = value;
    else if (key == "hidden_widths") cfg.hidden_widths = detail::config_list<std::size_t>(value, key, as_size);
    else if (key == "feature_dim") cfg.feature_dim = as_size(value, key);
    else if (key == "batchnorm") cfg.batchnorm = config_bool(value, key);
    else if (key == "mode") cfg.mode = value;
    else if (key == "lambda") cfg.lambda = config_double(value, key);
    else if (key == "delta_clamp") cfg.delta_clamp = config_double(value, key);
    else if (key == "sv_threshold") cfg.sv_threshold = config_double(value, key);
    else if (key == "optimizer") cfg.optimizer = value;
    else if (key == "lr") cfg.lr = config_double(value, key);
    else if (key == "momentum") cfg.momentum = config_double(value, key);
    else if (key == "weight_decay") cfg.weight_decay = config_double(value, key);
    else if (key == "epochs") cfg.epochs = as_size(value, key);
    else if (key == "batch_size") cfg.batch_size = as_size(value, key);
    else if (key == "seed") cfg.seed = config_u64(value, key);
    else if (key == "repeats") cfg.repeats = as_size(value, key);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "eval") cfg.eval = value;
    else if (key == "stratified") cfg.stratified = config_bool(value, key);
    else if (key == "trials") cfg.trials = as_size(value, key);
    else if (key == "corrupt") cfg.corrupt = config_bool(value, key);
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "sweep_lambdas") cfg.sweep_lambdas = detail::config_list<double>(value, key, config_double);
    else throw ConfigError("config: unknown key '" + key + "'");
}

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    std::istream& is, const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> settings;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + origin + " line " + std::to_string(lineno) +
                              ": expected key=value");
        }
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: " + origin + " line " + std::to_string(lineno) +
                              ": empty key");
        }
        settings.emplace_back(key, value);
    }
    return settings;
}

/// Defaults, then the optional config file, then --set overrides in order.
inline ExperimentConfig load_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("config: cannot open " + config_path);
        for (const auto& [key, value] : parse_config_text(is, config_path)) {
            apply_setting(cfg, key, value);
        }
    }
    for (const std::string& item : overrides) {
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("config: override '" + item + "' is not key=value");
        }
        apply_setting(cfg, detail::trim(item.substr(0, eq)),
                      detail::trim(item.substr(eq + 1)));
    }
    return cfg;
}

inline void validate_config(const ExperimentConfig& cfg) {
    const LossMode mode = loss_mode(cfg);
    optimizer_kind(cfg);
    eval_rule(cfg);
    if (mode != LossMode::softmax_only && cfg.lambda < 0.0) {
        throw ConfigError("config: lambda must be >= 0 when the mode includes ole");
    }
    if (cfg.repeats < 1) throw ConfigError("config: repeats must be >= 1");
    if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) {
        throw ConfigError("config: lr must be positive and finite");
    }
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
        throw ConfigError("config: momentum must be in [0, 1)");
    }
    if (cfg.weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (cfg.delta_clamp < 0.0) throw ConfigError("config: delta_clamp must be >= 0");
    if (cfg.sv_threshold < 0.0) throw ConfigError("config: sv_threshold must be >= 0");
    if (cfg.feature_dim < 1) throw ConfigError("config: feature_dim must be >= 1");
    for (std::size_t w : cfg.hidden_widths) {
        if (w < 1) throw ConfigError("config: hidden_widths entries must be >= 1");
    }
    if (cfg.output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
    if (cfg.trials < 1) throw ConfigError("config: trials must be >= 1");
    for (double l : cfg.sweep_lambdas) {
        if (l < 0.0) throw ConfigError("config: sweep_lambdas entries must be >= 0");
    }

    if (cfg.dataset == "blobs") {
        if (cfg.blob_dim < 2) throw ConfigError("config: blob_dim must be >= 2");
        if (cfg.blob_classes < 2) throw ConfigError("config: blob_classes must be >= 2");
        if (cfg.blob_train_per_class < 1) {
            throw ConfigError("config: blob_train_per_class must be >= 1");
        }
        if (cfg.blob_spread < 0.0) throw ConfigError("config: blob_spread must be >= 0");
    } else if (cfg.dataset == "csv") {
        if (cfg.train_csv.empty()) throw ConfigError("config: train_csv required for dataset=csv");
    } else if (cfg.dataset == "idx") {
        if (cfg.train_images.empty() || cfg.train_labels.empty()) {
            throw ConfigError("config: train_images and train_labels required for dataset=idx");
        }
        if (cfg.test_images.empty() != cfg.test_labels.empty()) {
            throw ConfigError("config: test_images and test_labels must be given together");
        }
    } else {
        throw ConfigError("config: dataset must be blobs, csv, or idx, got '" + cfg.dataset +
                          "'");
    }
}

// --------------------------------------------------------------------------
// Dataset assembly.
// --------------------------------------------------------------------------

struct ExperimentData {
    Dataset train;
    Dataset test; // empty labels when has_test is false
    bool has_test = false;
};

/// Builds the train (and optional test) datasets. Blobs draw train and test
/// from one generation so both share class centers; files load as given.
inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData data;
    if (cfg.dataset == "blobs") {
        const std::size_t per = cfg.blob_train_per_class + cfg.blob_test_per_class;
        const Dataset all = make_gaussian_blobs(cfg.blob_dim, cfg.blob_classes, per,
                                                cfg.blob_spread, cfg.seed);
        std::vector<std::size_t> train_idx, test_idx;
        for (int c = 0; c < cfg.blob_classes; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * per;
            for (std::size_t s = 0; s < per; ++s) {
                (s < cfg.blob_train_per_class ? train_idx : test_idx).push_back(base + s);
            }
        }
        auto [train_x, train_labels] = gather(all, train_idx);
        data.train.samples = std::move(train_x);
        data.train.labels = std::move(train_labels);
        data.train.class_count = cfg.blob_classes;
        if (!test_idx.empty()) {
            auto [test_x, test_labels] = gather(all, test_idx);
            data.test.samples = std::move(test_x);
            data.test.labels = std::move(test_labels);
            data.test.class_count = cfg.blob_classes;
            data.test.split = SplitTag::test;
            data.has_test = true;
        }
    } else if (cfg.dataset == "csv") {
        data.train = load_csv(cfg.train_csv);
        if (!cfg.test_csv.empty()) {
            data.test = load_csv(cfg.test_csv);
            data.test.split = SplitTag::test;
            data.has_test = true;
        }
    } else {
        data.train = load_idx(cfg.train_images, cfg.train_labels);
        if (!cfg.test_images.empty()) {
            data.test = load_idx(cfg.test_images, cfg.test_labels);
            data.test.split = SplitTag::test;
            data.has_test = true;
        }
    }
    validate(data.train);
    if (data.has_test) {
        validate(data.test);
        if (data.test.samples.rows() != data.train.samples.rows()) {
            throw DataError("dataset: train dimension " +
                            std::to_string(data.train.samples.rows()) +
                            " does not match test dimension " +
                            std::to_string(data.test.samples.rows()));
        }
    }
    return data;
}

// --------------------------------------------------------------------------
// Training.
// --------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double ls = 0.0;
    double lo = 0.0;
    double total = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
};

struct TrainedRun {
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    NetworkParams params;
};

struct RunRecord {
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    double test_accuracy = 0.0;
    MetricsReport report;
    NetworkParams params;
};

namespace detail {

inline std::vector<std::size_t> nonzero_columns(const Matrix& m) {
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j) * m(i, j);
        if (s > 0.0) kept.push_back(j);
    }
    return kept;
}

inline Matrix select_columns(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(m.rows(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, idx[j]);
    }
    return out;
}

} // namespace detail

/// Softmax probabilities per column, max-subtracted for stability.
inline Matrix softmax_scores(const Matrix& logits) {
    Matrix scores(logits.rows(), logits.cols());
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        double mx = logits(0, j);
        for (std::size_t i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            scores(i, j) = std::exp(logits(i, j) - mx);
            sum += scores(i, j);
        }
        for (std::size_t i = 0; i < logits.rows(); ++i) scores(i, j) /= sum;
    }
    return scores;
}

/// Accuracy of the model on eval_set under the configured rule. 1-NN uses
/// the reference set's embeddings; zero-norm embeddings have no cosine
/// direction, so zero reference columns are dropped and zero query columns
/// count as misclassified. A fully collapsed reference scores 0.
inline double evaluate_accuracy(const ExperimentConfig& cfg, const NetworkParams& params,
                                const Dataset& reference, const Dataset& eval_set) {
    const ForwardTrace et = forward(params, eval_set.samples);
    if (eval_rule(cfg) == EvalRule::argmax) {
        return argmax_accuracy(et.logits, eval_set.labels);
    }
    const ForwardTrace rt = forward(params, reference.samples);
    const std::vector<std::size_t> ref_kept = detail::nonzero_columns(rt.features);
    const std::vector<std::size_t> query_kept = detail::nonzero_columns(et.features);
    if (ref_kept.empty() || query_kept.empty()) return 0.0;
    std::vector<int> ref_labels, query_labels;
    for (std::size_t j : ref_kept) ref_labels.push_back(reference.labels[j]);
    for (std::size_t j : query_kept) query_labels.push_back(eval_set.labels[j]);
    const double kept_acc =
        knn_cosine_accuracy(detail::select_columns(rt.features, ref_kept), ref_labels,
                            detail::select_columns(et.features, query_kept), query_labels);
    return kept_acc * static_cast<double>(query_kept.size()) /
           static_cast<double>(eval_set.labels.size());
}

/// One full training run at a fixed seed. Losses are logged as per-sample
/// means over each epoch; in ole mode the classifier head receives no
/// gradient and L_s is logged for reference only.
inline TrainedRun train_single_run(const ExperimentConfig& cfg, const Dataset& train,
                                   const Dataset& val, std::uint64_t run_seed) {
    NetworkSpec spec;
    spec.input_dim = train.samples.rows();
    spec.hidden_dims = cfg.hidden_widths;
    spec.feature_dim = cfg.feature_dim;
    spec.class_count = static_cast<std::size_t>(train.class_count);
    spec.use_batchnorm = cfg.batchnorm;
    validate(spec);

    const LossMode mode = loss_mode(cfg);
    OleConfig ole_cfg;
    ole_cfg.delta_clamp = cfg.delta_clamp;
    ole_cfg.sv_threshold = cfg.sv_threshold;
    validate(ole_cfg);

    NetworkParams params = init_params(spec, run_seed);
    std::optional<SgdNesterov> sgd;
    std::optional<Adam> adam;
    if (optimizer_kind(cfg) == OptimizerKind::sgd_nesterov) {
        sgd.emplace(cfg.momentum, cfg.weight_decay);
    } else {
        adam.emplace(cfg.weight_decay);
    }

    BatchSampler sampler(train.labels, cfg.batch_size, run_seed, cfg.stratified);
    TrainedRun run;
    run.seed = run_seed;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = step_schedule(epoch, cfg.epochs, cfg.lr);
        sampler.start_epoch(epoch);
        double sum_ls = 0.0, sum_lo = 0.0, sum_total = 0.0;
        std::size_t seen = 0;
        for (auto batch = sampler.next_batch(); !batch.empty(); batch = sampler.next_batch()) {
            auto [x, labels] = gather(train, batch);
            const ForwardTrace trace = forward(params, x, Phase::train);

            double ls = 0.0, lo = 0.0, total = 0.0;
            Matrix logit_grad;
            Matrix feature_grad;
            if (mode == LossMode::ole_only) {
                const OleValueGrad vg = ole_value_and_grad(trace.features, labels, ole_cfg);
                lo = vg.value;
                ls = softmax_cross_entropy(trace.logits, labels).value;
                total = cfg.lambda * lo;
                feature_grad = cfg.lambda * vg.grad;
                logit_grad = Matrix(trace.logits.rows(), trace.logits.cols());
            } else {
                const double lambda =
                    mode == LossMode::softmax_only ? 0.0 : cfg.lambda;
                CombinedLoss cl =
                    combined_loss(trace.features, trace.logits, labels, lambda, ole_cfg);
                ls = cl.softmax_value;
                lo = cl.ole_value;
                total = cl.total;
                logit_grad = std::move(cl.logit_grad);
                feature_grad = std::move(cl.feature_grad);
            }

            NetworkGradients grads = backward(params, trace, feature_grad, logit_grad);
            auto views = parameter_views(params, grads);
            if (sgd) {
                sgd->step(views, lr);
            } else {
                adam->step(views, lr);
            }

            const double n = static_cast<double>(labels.size());
            sum_ls += ls * n;
            sum_lo += lo * n;
            sum_total += total * n;
            seen += labels.size();
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.ls = sum_ls / static_cast<double>(seen);
        rec.lo = sum_lo / static_cast<double>(seen);
        rec.total = sum_total / static_cast<double>(seen);
        rec.val_accuracy = evaluate_accuracy(cfg, params, train, val);
        rec.lr = lr;
        run.epochs.push_back(rec);
    }
    run.params = std::move(params);
    return run;
}

// --------------------------------------------------------------------------
// Artifact export.
// --------------------------------------------------------------------------

namespace detail {

inline void write_table(const std::string& path,
                        const std::vector<std::vector<double>>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) os << ',';
            os << format_g9(row[i]);
        }
        os << '\n';
    }
    if (!os) throw DataError("write failed: " + path);
}

inline void write_epochs_csv(const std::string& path, const std::vector<EpochRecord>& epochs) {
    std::vector<std::vector<double>> rows;
    rows.reserve(epochs.size());
    for (const EpochRecord& e : epochs) {
        rows.push_back({static_cast<double>(e.epoch), e.ls, e.lo, e.total, e.val_accuracy,
                        e.lr});
    }
    write_table(path, rows);
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        rows[i].resize(m.cols());
        for (std::size_t j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
    }
    write_table(path, rows);
}

inline void write_spectrum_csv(const std::string& path, const std::vector<double>& spectrum) {
    std::vector<std::vector<double>> rows;
    rows.reserve(spectrum.size());
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        rows.push_back({static_cast<double>(i), spectrum[i]});
    }
    write_table(path, rows);
}

inline void write_hist_csv(const std::string& path, const std::vector<HistBin>& bins) {
    std::vector<std::vector<double>> rows;
    rows.reserve(bins.size());
    for (const HistBin& b : bins) {
        rows.push_back({b.lo, b.hi, static_cast<double>(b.count)});
    }
    write_table(path, rows);
}

inline void write_novelty_csv(const std::string& path,
                              const std::vector<NoveltyPoint>& curve) {
    std::vector<std::vector<double>> rows;
    rows.reserve(curve.size());
    for (const NoveltyPoint& p : curve) {
        rows.push_back({p.threshold, p.known_accuracy, p.false_positive_ratio});
    }
    write_table(path, rows);
}

} // namespace detail

/// Embedded features of a dataset, columns sorted by (label, index) with
/// zero-norm columns dropped; `dropped` reports how many were removed.
struct FeatureSet {
    Matrix features; // D x M
    std::vector<int> labels;
};

inline FeatureSet embed_sorted(const NetworkParams& params, const Dataset& ds,
                               std::size_t* dropped = nullptr) {
    const ForwardTrace t = forward(params, ds.samples);
    std::vector<std::size_t> order(ds.labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&ds](std::size_t a, std::size_t b) {
        return ds.labels[a] < ds.labels[b];
    });
    std::vector<std::size_t> kept;
    for (std::size_t j : order) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.features.rows(); ++i)
            s += t.features(i, j) * t.features(i, j);
        if (s > 0.0) kept.push_back(j);
    }
    if (dropped) *dropped = order.size() - kept.size();

    FeatureSet out;
    out.features = Matrix(t.features.rows(), kept.size());
    out.labels.resize(kept.size());
    for (std::size_t j = 0; j < kept.size(); ++j) {
        out.labels[j] = ds.labels[kept[j]];
        for (std::size_t i = 0; i < t.features.rows(); ++i)
            out.features(i, j) = t.features(i, kept[j]);
    }
    return out;
}

namespace detail {

// Geometry metrics of an embedded set against a reference embedding.
inline MetricsReport geometry_report(const FeatureSet& reference, const FeatureSet& eval_set,
                                     std::size_t class_count) {
    if (eval_set.labels.empty()) {
        throw DataError("metrics: every feature embedding is zero");
    }
    MetricsReport report;
    report.angles = angle_matrix(eval_set.features);
    report.spectrum = spectrum(eval_set.features);
    report.energy_top_c = energy_top_c(eval_set.features, class_count);
    const std::set<int> distinct(eval_set.labels.begin(), eval_set.labels.end());
    if (distinct.size() >= 2) {
        const auto [intra, inter] = block_orthogonality(eval_set.features, eval_set.labels);
        report.mean_intra_angle = intra;
        report.mean_inter_angle = inter;
    }
    if (!reference.labels.empty()) {
        report.knn_accuracy = knn_cosine_accuracy(reference.features, reference.labels,
                                                  eval_set.features, eval_set.labels);
    }
    return report;
}

} // namespace detail

/// Trains `repeats` runs with seeds seed+0..seed+repeats-1 on fresh 90/10
/// train/validation splits, keeps the run with the best final validation
/// accuracy (ties to the lower seed), and writes its artifacts: metrics.csv,
/// angles.csv, spectrum.csv, features.csv, checkpoint.bin at output_dir plus
/// per-run metrics under run_<seed>/. Test metrics fall back to the best
/// run's validation split when the dataset has no test part.
inline RunRecord cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    const ExperimentData data = load_experiment_data(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);

    std::optional<TrainedRun> best;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t run_seed = cfg.seed + r;
        const auto [train, val] = split_train_val(data.train, 0.1, run_seed);
        TrainedRun run = train_single_run(cfg, train, val, run_seed);
        const double final_val = run.epochs.back().val_accuracy;
        log << "run seed " << run_seed << ": final val accuracy " << format_g9(final_val)
            << "\n";

        const fs::path run_dir = fs::path(cfg.output_dir) / ("run_" + std::to_string(run_seed));
        fs::create_directories(run_dir);
        detail::write_epochs_csv((run_dir / "metrics.csv").string(), run.epochs);

        if (!best || final_val > best->epochs.back().val_accuracy) {
            best = std::move(run);
        }
    }

    const auto [train, val] = split_train_val(data.train, 0.1, best->seed);
    const Dataset& eval_set = data.has_test ? data.test : val;

    RunRecord record;
    record.seed = best->seed;
    record.epochs = best->epochs;
    record.params = std::move(best->params);
    record.test_accuracy = evaluate_accuracy(cfg, record.params, train, eval_set);

    std::size_t dropped = 0;
    const FeatureSet reference = embed_sorted(record.params, train);
    const FeatureSet embedded = embed_sorted(record.params, eval_set, &dropped);
    if (dropped > 0) {
        log << "note: dropped " << dropped << " zero-norm feature columns from metrics\n";
    }
    record.report = detail::geometry_report(reference, embedded,
                                            static_cast<std::size_t>(data.train.class_count));

    const fs::path out(cfg.output_dir);
    detail::write_epochs_csv((out / "metrics.csv").string(), record.epochs);
    detail::write_matrix_csv((out / "angles.csv").string(), record.report.angles);
    detail::write_spectrum_csv((out / "spectrum.csv").string(), record.report.spectrum);
    Dataset feature_ds;
    feature_ds.samples = embedded.features;
    feature_ds.labels = embedded.labels;
    feature_ds.class_count = data.train.class_count;
    save_csv(feature_ds, (out / "features.csv").string());
    save_checkpoint(record.params, (out / "checkpoint.bin").string());

    log << "best seed " << record.seed << ": test accuracy "
        << format_g9(record.test_accuracy) << ", mean intra angle "
        << format_g9(record.report.mean_intra_angle) << ", mean inter angle "
        << format_g9(record.report.mean_inter_angle) << ", energy top-C "
        << format_g9(record.report.energy_top_c) << "\n";
    return record;
}

/// Final validation accuracies of `repeats` runs at one lambda, using the
/// configured mode on fresh 90/10 splits; the sweep's unit of work.
inline std::vector<double> sweep_accuracies(const ExperimentConfig& cfg, double lambda) {
    ExperimentConfig point = cfg;
    point.lambda = lambda;
    validate_config(point);
    const ExperimentData data = load_experiment_data(point);
    std::vector<double> accs;
    accs.reserve(point.repeats);
    for (std::size_t r = 0; r < point.repeats; ++r) {
        const std::uint64_t run_seed = point.seed + r;
        const auto [train, val] = split_train_val(data.train, 0.1, run_seed);
        const TrainedRun run = train_single_run(point, train, val, run_seed);
        accs.push_back(run.epochs.back().val_accuracy);
    }
    return accs;
}

struct SweepRow {
    double lambda = 0.0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
};

/// Mean and sample standard deviation of validation accuracy per lambda;
/// writes sweep.csv and reports the argmax lambda (ties to the earlier list
/// entry). With the default combined mode the lambda=0 row is exactly the
/// softmax baseline.
inline std::vector<SweepRow> cmd_sweep_lambda(const ExperimentConfig& cfg,
                                              const std::vector<double>& lambdas,
                                              std::ostream& log) {
    if (lambdas.empty()) throw ConfigError("sweep: need at least one lambda");
    for (double l : lambdas) {
        if (l < 0.0) throw ConfigError("sweep: lambda values must be >= 0");
    }
    validate_config(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);

    std::vector<SweepRow> rows;
    std::size_t best_idx = 0;
    for (double lambda : lambdas) {
        const std::vector<double> accs = sweep_accuracies(cfg, lambda);
        SweepRow row;
        row.lambda = lambda;
        for (double a : accs) row.mean_acc += a;
        row.mean_acc /= static_cast<double>(accs.size());
        if (accs.size() > 1) {
            double ss = 0.0;
            for (double a : accs) ss += (a - row.mean_acc) * (a - row.mean_acc);
            row.std_acc = std::sqrt(ss / static_cast<double>(accs.size() - 1));
        }
        log << "lambda " << format_g9(lambda) << ": mean val accuracy "
            << format_g9(row.mean_acc) << ", std " << format_g9(row.std_acc) << "\n";
        rows.push_back(row);
        if (row.mean_acc > rows[best_idx].mean_acc) best_idx = rows.size() - 1;
    }

    std::vector<std::vector<double>> table;
    table.reserve(rows.size());
    for (const SweepRow& r : rows) table.push_back({r.lambda, r.mean_acc, r.std_acc});
    detail::write_table((fs::path(cfg.output_dir) / "sweep.csv").string(), table);

    log << "best lambda: " << format_g9(rows[best_idx].lambda) << "\n";
    return rows;
}

struct GradcheckReport {
    SuiteResult nuclear;
    SuiteResult ole;
    SuiteResult network;
    Prop1Result prop1;
    bool ok = false;
};

/// Runs all gradient/geometry suites at cfg.trials instances each (network
/// suite at trials/4 seeds per lambda) and prints one line per suite plus
/// the overall verdict.
inline GradcheckReport cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    GradcheckReport report;
    report.nuclear = gradcheck_nuclear(cfg.seed, cfg.trials);
    log << "nuclear subgradient: worst relative error " << format_g9(report.nuclear.worst)
        << " (tolerance " << format_g9(kNuclearGradTol) << ") "
        << (report.nuclear.ok ? "PASS" : "FAIL") << "\n";

    report.ole = gradcheck_ole(cfg.seed, cfg.trials, cfg.corrupt);
    log << "embedding-loss gradient: worst relative error " << format_g9(report.ole.worst)
        << " (tolerance " << format_g9(kOleGradTol) << ") "
        << (report.ole.ok ? "PASS" : "FAIL") << "\n";

    report.network = gradcheck_network(cfg.seed, std::max<std::size_t>(1, cfg.trials / 4));
    log << "network gradient: worst relative error " << format_g9(report.network.worst)
        << " (tolerance " << format_g9(kNetworkGradTol) << ") "
        << (report.network.ok ? "PASS" : "FAIL") << "\n";

    report.prop1 = gradcheck_prop1(cfg.seed, cfg.trials);
    log << "block-orthogonal geometry: worst |value| " << format_g9(report.prop1.worst_value)
        << ", worst gradient norm " << format_g9(report.prop1.worst_grad) << " (tolerance "
        << format_g9(kProp1Tol) << ") " << (report.prop1.ok ? "PASS" : "FAIL") << "\n";

    report.ok =
        report.nuclear.ok && report.ole.ok && report.network.ok && report.prop1.ok;
    log << "gradcheck: " << (report.ok ? "PASS" : "FAIL") << "\n";
    return report;
}

/// Recomputes the full metrics report for a checkpoint on the configured
/// dataset (its test part when present, train otherwise). Samples whose
/// label is outside the checkpoint's class range count as novel and feed the
/// rejection curve. Writes angles.csv, spectrum.csv, features.csv, hist.csv,
/// and novelty.csv (when novel samples exist) to output_dir.
inline MetricsReport cmd_metrics(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    if (cfg.checkpoint.empty()) {
        throw ConfigError("metrics: checkpoint path required (key 'checkpoint')");
    }
    const NetworkParams params = load_checkpoint(cfg.checkpoint);
    const ExperimentData data = load_experiment_data(cfg);
    const Dataset& ds = data.has_test ? data.test : data.train;
    if (ds.samples.rows() != params.spec.input_dim) {
        throw DataError("metrics: dataset dimension " + std::to_string(ds.samples.rows()) +
                        " does not match checkpoint input dimension " +
                        std::to_string(params.spec.input_dim));
    }
    const int class_count = static_cast<int>(params.spec.class_count);

    std::vector<std::size_t> known_idx, novel_idx;
    for (std::size_t j = 0; j < ds.labels.size(); ++j) {
        (ds.labels[j] < class_count ? known_idx : novel_idx).push_back(j);
    }
    if (known_idx.empty()) {
        throw DataError("metrics: no samples with labels inside the checkpoint's class range");
    }
    Dataset known;
    {
        auto [x, labels] = gather(ds, known_idx);
        known.samples = std::move(x);
        known.labels = std::move(labels);
        known.class_count = class_count;
    }

    std::size_t dropped = 0;
    const FeatureSet embedded = embed_sorted(params, known, &dropped);
    if (dropped > 0) {
        log << "note: dropped " << dropped << " zero-norm feature columns from metrics\n";
    }

    MetricsReport report =
        detail::geometry_report(FeatureSet{}, embedded, static_cast<std::size_t>(class_count));

    // 1-NN accuracy over a deterministic 90/10 split of the known embeddings.
    if (embedded.labels.size() >= 2) {
        Dataset feature_ds;
        feature_ds.samples = embedded.features;
        feature_ds.labels = embedded.labels;
        feature_ds.class_count = class_count;
        const auto [ref_ds, query_ds] = split_train_val(feature_ds, 0.1, cfg.seed);
        report.knn_accuracy = knn_cosine_accuracy(ref_ds.samples, ref_ds.labels,
                                                  query_ds.samples, query_ds.labels);
    }

    const Matrix all_scores = softmax_scores(forward(params, ds.samples).logits);
    if (!novel_idx.empty()) {
        const Matrix known_scores = softmax_scores(forward(params, known.samples).logits);
        const Matrix novel_scores =
            softmax_scores(forward(params, gather(ds, novel_idx).first).logits);
        std::vector<double> thresholds;
        for (int i = 0; i <= 100; ++i) thresholds.push_back(static_cast<double>(i) / 100.0);
        report.novelty_curve =
            novelty_curve(known_scores, known.labels, novel_scores, thresholds);
    }

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);
    detail::write_matrix_csv((out / "angles.csv").string(), report.angles);
    detail::write_spectrum_csv((out / "spectrum.csv").string(), report.spectrum);
    Dataset feature_out;
    feature_out.samples = embedded.features;
    feature_out.labels = embedded.labels;
    feature_out.class_count = class_count;
    save_csv(feature_out, (out / "features.csv").string());
    detail::write_hist_csv((out / "hist.csv").string(),
                           histogram(max_scores(all_scores), 50, 0.0, 1.0));
    if (!report.novelty_curve.empty()) {
        detail::write_novelty_csv((out / "novelty.csv").string(), report.novelty_curve);
    }

    log << "samples: " << known_idx.size() << " known, " << novel_idx.size()
        << " novel; knn accuracy " << format_g9(report.knn_accuracy)
        << ", mean intra angle " << format_g9(report.mean_intra_angle)
        << ", mean inter angle " << format_g9(report.mean_inter_angle) << ", energy top-C "
        << format_g9(report.energy_top_c) << "\n";
    return report;
}

} // namespace ole
