// Experiment harness: configuration parsing, dataset assembly, trainer
// determinism and mode equivalences, artifact emission, and the CLI
// exit-code contract.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ole/cli.hpp"
#include "ole/experiment.hpp"

namespace fs = std::filesystem;
using namespace ole;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "ole_experiment_tests";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

// Small, fast blob setup shared by the trainer tests.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.blob_dim = 4;
    cfg.blob_classes = 3;
    cfg.blob_train_per_class = 20;
    cfg.blob_test_per_class = 5;
    cfg.hidden_widths = {8};
    cfg.feature_dim = 4;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 5;
    return cfg;
}

bool params_equal(const NetworkParams& a, const NetworkParams& b) {
    if (a.dense.size() != b.dense.size() || a.bn.size() != b.bn.size()) return false;
    for (std::size_t i = 0; i < a.dense.size(); ++i) {
        if (max_abs_diff(a.dense[i].w, b.dense[i].w) != 0.0) return false;
        if (max_abs_diff(a.dense[i].b, b.dense[i].b) != 0.0) return false;
    }
    for (std::size_t i = 0; i < a.bn.size(); ++i) {
        if (max_abs_diff(a.bn[i].gamma, b.bn[i].gamma) != 0.0) return false;
        if (max_abs_diff(a.bn[i].beta, b.bn[i].beta) != 0.0) return false;
        if (max_abs_diff(a.bn[i].running_mean, b.bn[i].running_mean) != 0.0) return false;
        if (max_abs_diff(a.bn[i].running_var, b.bn[i].running_var) != 0.0) return false;
    }
    return true;
}

TEST(ExperimentConfigTest, DefaultsAndSettings) {
    ExperimentConfig cfg;
    EXPECT_EQ(cfg.dataset, "blobs");
    EXPECT_EQ(cfg.mode, "softmax+ole");
    EXPECT_DOUBLE_EQ(cfg.delta_clamp, 1.0);
    EXPECT_DOUBLE_EQ(cfg.sv_threshold, 1e-6);
    EXPECT_DOUBLE_EQ(cfg.momentum, 0.9);
    EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-4);
    EXPECT_EQ(cfg.hidden_widths, (std::vector<std::size_t>{100, 100, 100, 100}));

    apply_setting(cfg, "lambda", "0.5");
    apply_setting(cfg, "hidden_widths", "32, 16");
    apply_setting(cfg, "batchnorm", "false");
    apply_setting(cfg, "stratified", "1");
    apply_setting(cfg, "sweep_lambdas", "0,0.25");
    apply_setting(cfg, "mode", "ole");
    EXPECT_DOUBLE_EQ(cfg.lambda, 0.5);
    EXPECT_EQ(cfg.hidden_widths, (std::vector<std::size_t>{32, 16}));
    EXPECT_FALSE(cfg.batchnorm);
    EXPECT_TRUE(cfg.stratified);
    EXPECT_EQ(cfg.sweep_lambdas, (std::vector<double>{0.0, 0.25}));
    EXPECT_EQ(cfg.mode, "ole");
}

TEST(ExperimentConfigTest, RejectsBadSettings) {
    ExperimentConfig cfg;
    EXPECT_THROW(apply_setting(cfg, "no_such_key", "1"), ConfigError);
    EXPECT_THROW(apply_setting(cfg, "lambda", "abc"), ConfigError);
    EXPECT_THROW(apply_setting(cfg, "epochs", "-3"), ConfigError);
    EXPECT_THROW(apply_setting(cfg, "epochs", "2.5"), ConfigError);
    EXPECT_THROW(apply_setting(cfg, "batchnorm", "maybe"), ConfigError);
    EXPECT_THROW(apply_setting(cfg, "hidden_widths", "32,,16"), ConfigError);
}

TEST(ExperimentConfigTest, FileParsingAndOverridePrecedence) {
    const fs::path path = temp_dir() / "settings.cfg";
    write_file(path, "# comment line\n"
                     "lambda = 0.125   # trailing comment\n"
                     "\n"
                     "epochs=7\n"
                     "mode = ole\n");
    const ExperimentConfig cfg =
        load_config(path.string(), {"epochs=9", "output_dir=somewhere"});
    EXPECT_DOUBLE_EQ(cfg.lambda, 0.125);
    EXPECT_EQ(cfg.epochs, 9u); // override beats the file
    EXPECT_EQ(cfg.mode, "ole");
    EXPECT_EQ(cfg.output_dir, "somewhere");
}

TEST(ExperimentConfigTest, FileErrorsNameTheLine) {
    const fs::path path = temp_dir() / "bad.cfg";
    write_file(path, "lambda=0.1\nnot a setting\n");
    try {
        load_config(path.string(), {});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    EXPECT_THROW(load_config((temp_dir() / "missing.cfg").string(), {}), ConfigError);
    EXPECT_THROW(load_config("", {"noequals"}), ConfigError);
}

TEST(ExperimentConfigTest, ValidationCatchesBadCombinations) {
    EXPECT_NO_THROW(validate_config(ExperimentConfig{}));

    ExperimentConfig cfg;
    cfg.mode = "nonsense";
    EXPECT_THROW(validate_config(cfg), ConfigError);

    cfg = ExperimentConfig{};
    cfg.lambda = -0.5;
    EXPECT_THROW(validate_config(cfg), ConfigError); // default mode includes ole
    cfg.mode = "softmax";
    EXPECT_NO_THROW(validate_config(cfg)); // lambda unused there

    cfg = ExperimentConfig{};
    cfg.repeats = 0;
    EXPECT_THROW(validate_config(cfg), ConfigError);

    cfg = ExperimentConfig{};
    cfg.momentum = 1.0;
    EXPECT_THROW(validate_config(cfg), ConfigError);

    cfg = ExperimentConfig{};
    cfg.dataset = "csv";
    EXPECT_THROW(validate_config(cfg), ConfigError); // train_csv missing

    cfg = ExperimentConfig{};
    cfg.dataset = "idx";
    cfg.train_images = "imgs";
    EXPECT_THROW(validate_config(cfg), ConfigError); // labels missing

    cfg.train_labels = "labels";
    cfg.test_images = "timgs"; // images without labels
    EXPECT_THROW(validate_config(cfg), ConfigError);

    cfg = ExperimentConfig{};
    cfg.dataset = "parquet";
    EXPECT_THROW(validate_config(cfg), ConfigError);

    cfg = ExperimentConfig{};
    cfg.eval = "vibes";
    EXPECT_THROW(validate_config(cfg), ConfigError);
}

TEST(ExperimentConfigTest, ModeAndEvalRuleMapping) {
    ExperimentConfig cfg;
    EXPECT_EQ(loss_mode(cfg), LossMode::combined);
    EXPECT_EQ(eval_rule(cfg), EvalRule::argmax);
    cfg.mode = "ole";
    EXPECT_EQ(loss_mode(cfg), LossMode::ole_only);
    EXPECT_EQ(eval_rule(cfg), EvalRule::knn); // auto follows the mode
    cfg.eval = "argmax";
    EXPECT_EQ(eval_rule(cfg), EvalRule::argmax);
    cfg.mode = "softmax";
    cfg.eval = "knn";
    EXPECT_EQ(eval_rule(cfg), EvalRule::knn);
}

TEST(ExperimentDataTest, BlobTrainAndTestShareCenters) {
    ExperimentConfig cfg = tiny_config();
    cfg.blob_spread = 0.0; // samples collapse onto the class centers
    const ExperimentData data = load_experiment_data(cfg);
    ASSERT_TRUE(data.has_test);
    EXPECT_EQ(data.train.samples.cols(), 60u);
    EXPECT_EQ(data.test.samples.cols(), 15u);
    EXPECT_EQ(data.train.class_count, 3);
    EXPECT_EQ(data.test.split, SplitTag::test);
    // With zero spread every sample equals its class center, so train and
    // test columns of the same class must match exactly.
    for (int c = 0; c < 3; ++c) {
        const std::size_t train_col = static_cast<std::size_t>(c) * 20;
        const std::size_t test_col = static_cast<std::size_t>(c) * 5;
        EXPECT_EQ(data.train.labels[train_col], c);
        EXPECT_EQ(data.test.labels[test_col], c);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_DOUBLE_EQ(data.train.samples(i, train_col),
                             data.test.samples(i, test_col));
        }
    }
}

TEST(ExperimentDataTest, NoTestSplitWhenCountIsZero) {
    ExperimentConfig cfg = tiny_config();
    cfg.blob_test_per_class = 0;
    const ExperimentData data = load_experiment_data(cfg);
    EXPECT_FALSE(data.has_test);
    EXPECT_EQ(data.train.samples.cols(), 60u);
}

TEST(ExperimentDataTest, CsvRoundTripAndDimensionMismatch) {
    const fs::path dir = temp_dir();
    ExperimentConfig gen = tiny_config();
    const ExperimentData blobs = load_experiment_data(gen);
    save_csv(blobs.train, (dir / "train.csv").string());
    save_csv(blobs.test, (dir / "test.csv").string());

    ExperimentConfig cfg;
    cfg.dataset = "csv";
    cfg.train_csv = (dir / "train.csv").string();
    cfg.test_csv = (dir / "test.csv").string();
    const ExperimentData loaded = load_experiment_data(cfg);
    EXPECT_TRUE(loaded.has_test);
    EXPECT_EQ(loaded.train.samples.rows(), 4u);
    EXPECT_EQ(loaded.train.samples.cols(), 60u);

    // A test file of different width is rejected.
    Dataset skinny;
    skinny.samples = Matrix(2, 3);
    skinny.labels = {0, 1, 0};
    skinny.class_count = 2;
    save_csv(skinny, (dir / "skinny.csv").string());
    cfg.test_csv = (dir / "skinny.csv").string();
    EXPECT_THROW(load_experiment_data(cfg), DataError);
}

TEST(TrainerTest, DeterministicAcrossInvocations) {
    const ExperimentConfig cfg = tiny_config();
    const ExperimentData data = load_experiment_data(cfg);
    const auto [train, val] = split_train_val(data.train, 0.1, cfg.seed);
    const TrainedRun a = train_single_run(cfg, train, val, cfg.seed);
    const TrainedRun b = train_single_run(cfg, train, val, cfg.seed);
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    for (std::size_t e = 0; e < a.epochs.size(); ++e) {
        EXPECT_EQ(a.epochs[e].ls, b.epochs[e].ls);
        EXPECT_EQ(a.epochs[e].lo, b.epochs[e].lo);
        EXPECT_EQ(a.epochs[e].total, b.epochs[e].total);
        EXPECT_EQ(a.epochs[e].val_accuracy, b.epochs[e].val_accuracy);
    }
    EXPECT_TRUE(params_equal(a.params, b.params));
}

TEST(TrainerTest, SoftmaxModeMatchesCombinedAtLambdaZero) {
    ExperimentConfig cfg = tiny_config();
    const ExperimentData data = load_experiment_data(cfg);
    const auto [train, val] = split_train_val(data.train, 0.1, cfg.seed);

    cfg.mode = "softmax";
    const TrainedRun softmax_run = train_single_run(cfg, train, val, cfg.seed);
    cfg.mode = "softmax+ole";
    cfg.lambda = 0.0;
    const TrainedRun combined_run = train_single_run(cfg, train, val, cfg.seed);

    ASSERT_EQ(softmax_run.epochs.size(), combined_run.epochs.size());
    for (std::size_t e = 0; e < softmax_run.epochs.size(); ++e) {
        EXPECT_EQ(softmax_run.epochs[e].ls, combined_run.epochs[e].ls);
        EXPECT_EQ(softmax_run.epochs[e].total, combined_run.epochs[e].total);
        EXPECT_EQ(softmax_run.epochs[e].val_accuracy, combined_run.epochs[e].val_accuracy);
    }
    EXPECT_TRUE(params_equal(softmax_run.params, combined_run.params));
}

TEST(TrainerTest, EpochRecordsAreContiguousAndScheduled) {
    ExperimentConfig cfg = tiny_config();
    cfg.epochs = 8;
    const ExperimentData data = load_experiment_data(cfg);
    const auto [train, val] = split_train_val(data.train, 0.1, cfg.seed);
    const TrainedRun run = train_single_run(cfg, train, val, cfg.seed);
    ASSERT_EQ(run.epochs.size(), 8u);
    for (std::size_t e = 0; e < 8; ++e) {
        EXPECT_EQ(run.epochs[e].epoch, e);
        EXPECT_DOUBLE_EQ(run.epochs[e].lr, step_schedule(e, 8, cfg.lr));
    }
    // The schedule drops at 50% and 75% of the run.
    EXPECT_DOUBLE_EQ(run.epochs[3].lr, cfg.lr);
    EXPECT_DOUBLE_EQ(run.epochs[4].lr, cfg.lr * 0.1);
    EXPECT_DOUBLE_EQ(run.epochs[6].lr, cfg.lr * 0.01);
}

TEST(TrainerTest, OleModeLogsBothLossesAndZeroLogitGradient) {
    ExperimentConfig cfg = tiny_config();
    cfg.mode = "ole";
    cfg.lambda = 1.0;
    const ExperimentData data = load_experiment_data(cfg);
    const auto [train, val] = split_train_val(data.train, 0.1, cfg.seed);
    const TrainedRun run = train_single_run(cfg, train, val, cfg.seed);
    for (const EpochRecord& e : run.epochs) {
        EXPECT_TRUE(std::isfinite(e.ls));
        EXPECT_TRUE(std::isfinite(e.lo));
        EXPECT_DOUBLE_EQ(e.total, e.lo); // lambda = 1, no softmax term
    }
    // The classifier head receives no gradient in ole mode: its weights
    // change only through weight decay, which scales columns uniformly.
    const ExperimentConfig cfg0 = [&] {
        ExperimentConfig c = cfg;
        c.weight_decay = 0.0;
        return c;
    }();
    const TrainedRun frozen = train_single_run(cfg0, train, val, cfg.seed);
    const NetworkParams fresh = init_params(
        [&] {
            NetworkSpec spec;
            spec.input_dim = train.samples.rows();
            spec.hidden_dims = cfg.hidden_widths;
            spec.feature_dim = cfg.feature_dim;
            spec.class_count = 3;
            spec.use_batchnorm = cfg.batchnorm;
            return spec;
        }(),
        cfg.seed);
    EXPECT_EQ(max_abs_diff(frozen.params.dense.back().w, fresh.dense.back().w), 0.0);
    EXPECT_EQ(max_abs_diff(frozen.params.dense.back().b, fresh.dense.back().b), 0.0);
}

TEST(CmdTrainTest, WritesAllArtifactsAndTheyReparse) {
    ExperimentConfig cfg = tiny_config();
    cfg.repeats = 2;
    cfg.output_dir = (temp_dir() / "train_art").string();
    fs::remove_all(cfg.output_dir);
    std::ostringstream log;
    const RunRecord record = cmd_train(cfg, log);

    const fs::path out(cfg.output_dir);
    for (const char* name : {"metrics.csv", "angles.csv", "spectrum.csv", "features.csv"}) {
        const auto table = read_numeric_table((out / name).string());
        EXPECT_FALSE(table.empty()) << name;
    }
    const auto metrics = read_numeric_table((out / "metrics.csv").string());
    ASSERT_EQ(metrics.size(), cfg.epochs);
    EXPECT_EQ(metrics[0].size(), 6u);
    for (std::size_t e = 0; e < metrics.size(); ++e) {
        EXPECT_DOUBLE_EQ(metrics[e][0], static_cast<double>(e));
    }

    const Dataset features = load_csv((out / "features.csv").string());
    EXPECT_EQ(features.samples.rows(), cfg.feature_dim);

    const NetworkParams params = load_checkpoint((out / "checkpoint.bin").string());
    EXPECT_EQ(params.spec.input_dim, cfg.blob_dim);
    EXPECT_TRUE(params_equal(params, record.params));

    for (std::uint64_t r = 0; r < cfg.repeats; ++r) {
        const fs::path run_dir = out / ("run_" + std::to_string(cfg.seed + r));
        EXPECT_TRUE(fs::exists(run_dir / "metrics.csv"));
    }
    EXPECT_NE(log.str().find("best seed"), std::string::npos);
}

TEST(CmdTrainTest, BestRunSelectionPrefersEarliestOnTies) {
    // Trivially separable blobs so several repeats reach the same validation
    // accuracy; the winner must be the first seed attaining the maximum.
    ExperimentConfig cfg = tiny_config();
    cfg.blob_spread = 0.01;
    cfg.epochs = 10;
    cfg.lr = 1e-2;
    cfg.repeats = 3;
    cfg.output_dir = (temp_dir() / "train_tie").string();
    fs::remove_all(cfg.output_dir);
    std::ostringstream log;
    const RunRecord record = cmd_train(cfg, log);

    double best = -1.0;
    std::uint64_t expected_seed = cfg.seed;
    for (std::uint64_t r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t seed = cfg.seed + r;
        const fs::path path =
            fs::path(cfg.output_dir) / ("run_" + std::to_string(seed)) / "metrics.csv";
        const auto table = read_numeric_table(path.string());
        const double final_val = table.back()[4];
        if (final_val > best) {
            best = final_val;
            expected_seed = seed;
        }
    }
    EXPECT_EQ(record.seed, expected_seed);
    EXPECT_EQ(record.epochs.back().val_accuracy, best);
}

TEST(CmdSweepTest, RowsMatchLambdasAndBaselineIsExact) {
    ExperimentConfig cfg = tiny_config();
    cfg.repeats = 2;
    cfg.output_dir = (temp_dir() / "sweep_art").string();
    fs::remove_all(cfg.output_dir);
    std::ostringstream log;
    const std::vector<SweepRow> rows = cmd_sweep_lambda(cfg, {0.0, 0.25}, log);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_DOUBLE_EQ(rows[0].lambda, 0.0);
    EXPECT_DOUBLE_EQ(rows[1].lambda, 0.25);

    // The lambda=0 row is the softmax baseline, bit for bit.
    ExperimentConfig softmax_cfg = cfg;
    softmax_cfg.mode = "softmax";
    const std::vector<double> base = sweep_accuracies(softmax_cfg, 0.0);
    double mean = 0.0;
    for (double a : base) mean += a;
    mean /= static_cast<double>(base.size());
    EXPECT_EQ(rows[0].mean_acc, mean);

    const auto table = read_numeric_table((fs::path(cfg.output_dir) / "sweep.csv").string());
    ASSERT_EQ(table.size(), 2u);
    EXPECT_EQ(table[0].size(), 3u);
}

TEST(CmdSweepTest, DeterministicFilesAndSingletonArgmax) {
    ExperimentConfig cfg = tiny_config();
    cfg.output_dir = (temp_dir() / "sweep_det").string();
    std::ostringstream log1, log2;
    cmd_sweep_lambda(cfg, {0.25}, log1);
    const std::string first = slurp(fs::path(cfg.output_dir) / "sweep.csv");
    cmd_sweep_lambda(cfg, {0.25}, log2);
    const std::string second = slurp(fs::path(cfg.output_dir) / "sweep.csv");
    EXPECT_EQ(first, second);
    EXPECT_NE(log1.str().find("best lambda: 0.25"), std::string::npos);
    EXPECT_THROW(cmd_sweep_lambda(cfg, {}, log1), ConfigError);
    EXPECT_THROW(cmd_sweep_lambda(cfg, {-0.1}, log1), ConfigError);
}

TEST(CmdGradcheckTest, PassesCleanAndCatchesCorruption) {
    ExperimentConfig cfg;
    cfg.trials = 4;
    cfg.seed = 11;
    std::ostringstream log;
    const GradcheckReport clean = cmd_gradcheck(cfg, log);
    EXPECT_TRUE(clean.ok);
    EXPECT_NE(log.str().find("gradcheck: PASS"), std::string::npos);

    cfg.corrupt = true;
    std::ostringstream log2;
    const GradcheckReport corrupted = cmd_gradcheck(cfg, log2);
    EXPECT_FALSE(corrupted.ok);
    EXPECT_FALSE(corrupted.ole.ok);
    EXPECT_TRUE(corrupted.nuclear.ok);
    EXPECT_NE(log2.str().find("gradcheck: FAIL"), std::string::npos);

    // Same seed and trials give the same worst errors.
    cfg.corrupt = false;
    std::ostringstream log3;
    const GradcheckReport again = cmd_gradcheck(cfg, log3);
    EXPECT_EQ(clean.nuclear.worst, again.nuclear.worst);
    EXPECT_EQ(clean.ole.worst, again.ole.worst);
    EXPECT_EQ(clean.network.worst, again.network.worst);
}

TEST(CmdMetricsTest, FreshInitCheckpointProducesWellFormedReport) {
    const fs::path dir = temp_dir() / "metrics_fresh";
    fs::remove_all(dir);
    fs::create_directories(dir);

    ExperimentConfig cfg = tiny_config();
    NetworkSpec spec;
    spec.input_dim = cfg.blob_dim;
    spec.hidden_dims = cfg.hidden_widths;
    spec.feature_dim = cfg.feature_dim;
    spec.class_count = 3;
    spec.use_batchnorm = cfg.batchnorm;
    const NetworkParams fresh = init_params(spec, 77);
    const fs::path ckpt = dir / "fresh.bin";
    save_checkpoint(fresh, ckpt.string());

    cfg.checkpoint = ckpt.string();
    cfg.output_dir = (dir / "out").string();
    std::ostringstream log;
    const MetricsReport report = cmd_metrics(cfg, log);
    EXPECT_TRUE(report.angles.all_finite());
    EXPECT_FALSE(report.spectrum.empty());

    const fs::path out(cfg.output_dir);
    const auto hist = read_numeric_table((out / "hist.csv").string());
    ASSERT_EQ(hist.size(), 50u);
    double total = 0.0;
    for (const auto& row : hist) {
        ASSERT_EQ(row.size(), 3u);
        total += row[2];
    }
    EXPECT_DOUBLE_EQ(total, 15.0); // one count per test sample
    EXPECT_FALSE(fs::exists(out / "novelty.csv")); // no novel labels here

    // Re-running writes identical bytes.
    const std::string angles_first = slurp(out / "angles.csv");
    std::ostringstream log2;
    cmd_metrics(cfg, log2);
    EXPECT_EQ(slurp(out / "angles.csv"), angles_first);
}

TEST(CmdMetricsTest, NoveltyCurveEmittedForOutOfRangeLabels) {
    const fs::path dir = temp_dir() / "metrics_novel";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Train on 2 classes, then evaluate a CSV that also contains label 2.
    ExperimentConfig train_cfg = tiny_config();
    train_cfg.blob_classes = 2;
    train_cfg.epochs = 2;
    train_cfg.output_dir = (dir / "train").string();
    std::ostringstream log;
    cmd_train(train_cfg, log);

    ExperimentConfig gen = tiny_config();
    const ExperimentData blobs = load_experiment_data(gen); // 3-class data
    save_csv(blobs.test, (dir / "eval.csv").string());

    ExperimentConfig cfg;
    cfg.dataset = "csv";
    cfg.train_csv = (dir / "eval.csv").string();
    cfg.checkpoint = (fs::path(train_cfg.output_dir) / "checkpoint.bin").string();
    cfg.output_dir = (dir / "out").string();
    std::ostringstream log2;
    const MetricsReport report = cmd_metrics(cfg, log2);
    EXPECT_FALSE(report.novelty_curve.empty());

    const auto curve = read_numeric_table((fs::path(cfg.output_dir) / "novelty.csv").string());
    ASSERT_EQ(curve.size(), 101u);
    EXPECT_EQ(curve[0].size(), 3u);
    EXPECT_DOUBLE_EQ(curve[0][0], 0.0);
    EXPECT_DOUBLE_EQ(curve[100][0], 1.0);
}

TEST(CmdMetricsTest, RequiresCheckpointAndMatchingDimensions) {
    ExperimentConfig cfg = tiny_config();
    std::ostringstream log;
    EXPECT_THROW(cmd_metrics(cfg, log), ConfigError); // no checkpoint given

    const fs::path dir = temp_dir() / "metrics_dim";
    fs::remove_all(dir);
    fs::create_directories(dir);
    NetworkSpec spec;
    spec.input_dim = 7; // does not match blob_dim = 4
    spec.hidden_dims = {8};
    spec.feature_dim = 4;
    spec.class_count = 3;
    const NetworkParams params = init_params(spec, 1);
    const fs::path ckpt = dir / "ckpt.bin";
    save_checkpoint(params, ckpt.string());
    cfg.checkpoint = ckpt.string();
    EXPECT_THROW(cmd_metrics(cfg, log), DataError);
}

TEST(CliTest, ExitCodeContract) {
    std::ostringstream out;
    EXPECT_EQ(cli::run({"--help"}, out), 0);
    EXPECT_NE(out.str().find("train"), std::string::npos);

    std::ostringstream out2;
    EXPECT_EQ(cli::run({"no_such_command"}, out2), 2);

    std::ostringstream out3;
    EXPECT_EQ(cli::run({}, out3), 2); // a subcommand is required

    // Config error: negative lambda in a mode that uses it.
    std::ostringstream out4;
    EXPECT_EQ(cli::run({"train", "--set", "lambda=-1"}, out4), 2);
    EXPECT_NE(out4.str().find("error:"), std::string::npos);

    // Data error: dataset file that does not exist.
    std::ostringstream out5;
    EXPECT_EQ(cli::run({"train", "--set", "dataset=csv", "--set",
                        "train_csv=/nonexistent/never.csv"},
                       out5),
              3);

    // Check failure: the corrupt hook must produce exit code 4.
    std::ostringstream out6;
    EXPECT_EQ(cli::run({"gradcheck", "--set", "trials=2", "--set", "corrupt=1"}, out6), 4);

    std::ostringstream out7;
    EXPECT_EQ(cli::run({"gradcheck", "--set", "trials=2"}, out7), 0);
}

TEST(CliTest, TrainSubcommandWithFlags) {
    const fs::path dir = temp_dir() / "cli_train";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path config = dir / "run.cfg";
    write_file(config, "blob_dim=4\nblob_classes=3\nblob_train_per_class=20\n"
                       "blob_test_per_class=5\nhidden_widths=8\nfeature_dim=4\n"
                       "epochs=2\nbatch_size=16\noutput_dir=ignored\n");
    std::ostringstream out;
    const int code = cli::run({"train", "--config", config.string(), "--out",
                               (dir / "result").string(), "--seed", "9"},
                              out);
    EXPECT_EQ(code, 0);
    EXPECT_TRUE(fs::exists(dir / "result" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir / "result" / "run_9" / "metrics.csv"));
}

} // namespace
