#pragma once

// Dataset ingestion and minibatch sampling: a synthetic Gaussian-blobs
// generator for controlled geometry experiments, the IDX binary image
// format, a labeled-vector CSV format, and a deterministic epoch sampler.
// Samples are columns: Dataset::samples is d x N with labels[j] the class
// of column j.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ole/common.hpp"
#include "ole/matrix.hpp"

namespace ole {

enum class SplitTag { train, val, test };

struct Dataset {
    Matrix samples; // d x N
    std::vector<int> labels;
    int class_count = 0;
    SplitTag split = SplitTag::train;
};

inline void validate(const Dataset& ds) {
    if (ds.samples.cols() != ds.labels.size()) {
        throw DataError("dataset: " + std::to_string(ds.labels.size()) + " labels for " +
                        std::to_string(ds.samples.cols()) + " samples");
    }
    if (ds.labels.empty()) throw DataError("dataset: empty");
    for (int l : ds.labels) {
        if (l < 0 || l >= ds.class_count) {
            throw DataError("dataset: label " + std::to_string(l) + " outside [0, " +
                            std::to_string(ds.class_count) + ")");
        }
    }
}

/// Synthetic blobs: class c is centered on a deterministic pseudo-random
/// unit direction scaled by 5, with isotropic Gaussian noise of standard
/// deviation `spread`. Samples are laid out class by class.
inline Dataset make_gaussian_blobs(std::size_t d, int class_count, std::size_t n_per_class,
                                   double spread, std::uint64_t seed) {
    if (d < 2) throw std::invalid_argument("make_gaussian_blobs: d must be >= 2");
    if (class_count < 2) throw std::invalid_argument("make_gaussian_blobs: C must be >= 2");
    if (n_per_class < 1) throw std::invalid_argument("make_gaussian_blobs: n_per_class must be >= 1");
    if (spread < 0.0) throw std::invalid_argument("make_gaussian_blobs: spread must be >= 0");

    Dataset ds;
    ds.class_count = class_count;
    const std::size_t n = static_cast<std::size_t>(class_count) * n_per_class;
    ds.samples = Matrix(d, n);
    ds.labels.resize(n);

    std::normal_distribution<double> unit(0.0, 1.0);
    auto center_rng = seeded_rng(seed, /*salt=*/0xcea7e5);
    auto noise_rng = seeded_rng(seed, /*salt=*/0x0015e);

    std::size_t col = 0;
    for (int c = 0; c < class_count; ++c) {
        std::vector<double> center(d);
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            center[i] = unit(center_rng);
            norm += center[i] * center[i];
        }
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < d; ++i) center[i] *= 5.0 / norm;

        for (std::size_t s = 0; s < n_per_class; ++s, ++col) {
            ds.labels[col] = c;
            for (std::size_t i = 0; i < d; ++i)
                ds.samples(i, col) = center[i] + spread * unit(noise_rng);
        }
    }
    return ds;
}

// --------------------------------------------------------------------------
// IDX binary format (big-endian): images file is u32 magic 0x00000803, u32
// count, u32 rows, u32 cols, then count*rows*cols unsigned bytes; labels
// file is u32 magic 0x00000801, u32 count, then count bytes. Pixels load as
// value/255, one flattened row-major image per column.
// --------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError("idx: truncated " + std::string(what) + " in " + path);
    }
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_u32_be(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803u;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801u;

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("idx: cannot open " + images_path);
    const std::uint32_t img_magic = detail::read_u32_be(imgs, images_path, "magic");
    if (img_magic != kIdxImagesMagic) {
        throw DataError("idx: magic mismatch in " + images_path + ": want 0x00000803");
    }
    const std::uint32_t n = detail::read_u32_be(imgs, images_path, "count");
    const std::uint32_t rows = detail::read_u32_be(imgs, images_path, "rows");
    const std::uint32_t cols = detail::read_u32_be(imgs, images_path, "cols");
    if (n == 0 || rows == 0 || cols == 0) {
        throw DataError("idx: zero dimension in " + images_path);
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("idx: cannot open " + labels_path);
    const std::uint32_t lab_magic = detail::read_u32_be(labs, labels_path, "magic");
    if (lab_magic != kIdxLabelsMagic) {
        throw DataError("idx: magic mismatch in " + labels_path + ": want 0x00000801");
    }
    const std::uint32_t n_labels = detail::read_u32_be(labs, labels_path, "count");
    if (n_labels != n) {
        throw DataError("idx: count mismatch: " + images_path + " has " + std::to_string(n) +
                        " images, " + labels_path + " has " + std::to_string(n_labels) +
                        " labels");
    }

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    Dataset ds;
    ds.samples = Matrix(pixels, n);
    ds.labels.resize(n);

    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t j = 0; j < n; ++j) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()),
                       static_cast<std::streamsize>(pixels))) {
            throw DataError("idx: truncated image data in " + images_path);
        }
        for (std::size_t i = 0; i < pixels; ++i)
            ds.samples(i, j) = static_cast<double>(buf[i]) / 255.0;
    }
    std::vector<unsigned char> lab_buf(n);
    if (!labs.read(reinterpret_cast<char*>(lab_buf.data()), static_cast<std::streamsize>(n))) {
        throw DataError("idx: truncated label data in " + labels_path);
    }
    int max_label = 0;
    for (std::uint32_t j = 0; j < n; ++j) {
        ds.labels[j] = static_cast<int>(lab_buf[j]);
        max_label = std::max(max_label, ds.labels[j]);
    }
    ds.class_count = max_label + 1;
    return ds;
}

/// Fixture writer: pixels are stored as round(value*255) clamped to [0,255],
/// so datasets whose values are exact multiples of 1/255 round-trip
/// byte-exactly. rows*cols must equal the sample dimension; labels < 256.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path, std::uint32_t rows, std::uint32_t cols) {
    if (static_cast<std::size_t>(rows) * cols != ds.samples.rows()) {
        throw std::invalid_argument("save_idx: rows*cols != sample dimension");
    }
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("idx: cannot open for writing: " + images_path);
    detail::write_u32_be(imgs, kIdxImagesMagic);
    detail::write_u32_be(imgs, static_cast<std::uint32_t>(ds.samples.cols()));
    detail::write_u32_be(imgs, rows);
    detail::write_u32_be(imgs, cols);
    for (std::size_t j = 0; j < ds.samples.cols(); ++j) {
        for (std::size_t i = 0; i < ds.samples.rows(); ++i) {
            const double v = std::clamp(ds.samples(i, j), 0.0, 1.0);
            const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
            imgs.write(reinterpret_cast<const char*>(&byte), 1);
        }
    }

    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("idx: cannot open for writing: " + labels_path);
    detail::write_u32_be(labs, kIdxLabelsMagic);
    detail::write_u32_be(labs, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
        if (l < 0 || l > 255) throw std::invalid_argument("save_idx: label out of byte range");
        const unsigned char byte = static_cast<unsigned char>(l);
        labs.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

// --------------------------------------------------------------------------
// CSV: "label,v1,...,vd" per line, '.' decimals, newline-separated. Every
// file this library emits is a rectangular numeric table readable by
// read_numeric_table.
// --------------------------------------------------------------------------

/// Reads a rectangular table of comma-separated numbers. Blank lines are
/// skipped; ragged or non-numeric rows raise a DataError naming the line.
inline std::vector<std::vector<double>> read_numeric_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string_view field(line.data() + start,
                                         (comma == std::string::npos ? line.size() : comma) -
                                             start);
            double value = 0.0;
            const auto [ptr, ec] =
                std::from_chars(field.data(), field.data() + field.size(), value);
            if (ec != std::errc() || ptr != field.data() + field.size()) {
                throw DataError("csv: line " + std::to_string(lineno) + " of " + path +
                                ": non-numeric field '" + std::string(field) + "'");
            }
            row.push_back(value);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError("csv: line " + std::to_string(lineno) + " of " + path +
                            ": expected " + std::to_string(rows.front().size()) +
                            " fields, got " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("csv: empty file: " + path);
    return rows;
}

inline Dataset load_csv(const std::string& path) {
    const auto rows = read_numeric_table(path);
    if (rows.front().size() < 2) {
        throw DataError("csv: " + path + ": rows need a label and at least one feature");
    }
    const std::size_t d = rows.front().size() - 1;
    Dataset ds;
    ds.samples = Matrix(d, rows.size());
    ds.labels.resize(rows.size());
    int max_label = 0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const double raw = rows[j][0];
        if (raw < 0.0 || raw != std::floor(raw)) {
            throw DataError("csv: row " + std::to_string(j + 1) + " of " + path +
                            ": label must be a non-negative integer, got " + format_g9(raw));
        }
        ds.labels[j] = static_cast<int>(raw);
        max_label = std::max(max_label, ds.labels[j]);
        for (std::size_t i = 0; i < d; ++i) ds.samples(i, j) = rows[j][i + 1];
    }
    ds.class_count = max_label + 1;
    return ds;
}

/// Writes "label,v1,...,vd" rows; features carry 9 significant digits, so
/// save -> load -> save is byte-stable.
inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("csv: cannot open for writing: " + path);
    for (std::size_t j = 0; j < ds.samples.cols(); ++j) {
        os << ds.labels[j];
        for (std::size_t i = 0; i < ds.samples.rows(); ++i)
            os << ',' << format_g9(ds.samples(i, j));
        os << '\n';
    }
    if (!os) throw DataError("csv: write failed: " + path);
}

// --------------------------------------------------------------------------
// Minibatch sampling.
// --------------------------------------------------------------------------

/// Deterministic epoch sampler: each epoch visits every index exactly once
/// in an order fixed by (seed, epoch); the last batch of an epoch may be
/// short. The stratified option interleaves classes round-robin (after an
/// in-class shuffle) so small-C runs see every class in nearly every batch;
/// the default is a plain uniform shuffle.
class BatchSampler {
public:
    BatchSampler(std::vector<int> labels, std::size_t batch_size, std::uint64_t seed,
                 bool stratified = false)
        : labels_(std::move(labels)), batch_size_(batch_size), seed_(seed),
          stratified_(stratified) {
        if (labels_.empty()) throw std::invalid_argument("BatchSampler: empty dataset");
        if (batch_size_ < 1) throw std::invalid_argument("BatchSampler: batch_size must be >= 1");
        start_epoch(0);
    }

    void start_epoch(std::size_t epoch) {
        epoch_ = epoch;
        cursor_ = 0;
        auto rng = seeded_rng(seed_, 0xba7c00000000ULL + epoch);
        order_.resize(labels_.size());
        if (!stratified_) {
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            std::shuffle(order_.begin(), order_.end(), rng);
            return;
        }
        std::map<int, std::vector<std::size_t>> per_class;
        for (std::size_t j = 0; j < labels_.size(); ++j) per_class[labels_[j]].push_back(j);
        std::vector<std::vector<std::size_t>> queues;
        for (auto& [cls, idx] : per_class) {
            std::shuffle(idx.begin(), idx.end(), rng);
            queues.push_back(std::move(idx));
        }
        order_.clear();
        std::size_t round = 0;
        bool any = true;
        while (any) {
            any = false;
            for (auto& q : queues) {
                if (round < q.size()) {
                    order_.push_back(q[round]);
                    any = true;
                }
            }
            ++round;
        }
    }

    /// Next slice of this epoch's permutation; empty when exhausted.
    std::vector<std::size_t> next_batch() {
        if (cursor_ >= order_.size()) return {};
        const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
        std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                       order_.begin() + static_cast<std::ptrdiff_t>(end));
        cursor_ = end;
        return batch;
    }

    bool epoch_done() const { return cursor_ >= order_.size(); }
    std::size_t epoch() const { return epoch_; }

private:
    std::vector<int> labels_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    bool stratified_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

/// Columns of the dataset selected by `idx`, with their labels.
inline std::pair<Matrix, std::vector<int>> gather(const Dataset& ds,
                                                  const std::vector<std::size_t>& idx) {
    Matrix x(ds.samples.rows(), idx.size());
    std::vector<int> labels(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        labels[j] = ds.labels[idx[j]];
        for (std::size_t i = 0; i < x.rows(); ++i) x(i, j) = ds.samples(i, idx[j]);
    }
    return {std::move(x), std::move(labels)};
}

/// Shuffles deterministically and carves the last `val_fraction` off as the
/// validation split.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                                   std::uint64_t seed) {
    validate(ds);
    const std::size_t n = ds.labels.size();
    if (n < 2) throw DataError("split_train_val: need at least 2 samples");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("split_train_val: fraction must be in (0, 1)");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = seeded_rng(seed, /*salt=*/0x5b117);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::size_t val_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * val_fraction));
    val_count = std::clamp<std::size_t>(val_count, 1, n - 1);

    const std::vector<std::size_t> train_idx(perm.begin(),
                                             perm.end() - static_cast<std::ptrdiff_t>(val_count));
    const std::vector<std::size_t> val_idx(perm.end() - static_cast<std::ptrdiff_t>(val_count),
                                           perm.end());
    auto [train_x, train_labels] = gather(ds, train_idx);
    auto [val_x, val_labels] = gather(ds, val_idx);

    Dataset train;
    train.samples = std::move(train_x);
    train.labels = std::move(train_labels);
    train.class_count = ds.class_count;
    train.split = SplitTag::train;
    Dataset val;
    val.samples = std::move(val_x);
    val.labels = std::move(val_labels);
    val.class_count = ds.class_count;
    val.split = SplitTag::val;
    return {std::move(train), std::move(val)};
}

} // namespace ole
