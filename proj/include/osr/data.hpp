#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osr/labels.hpp"
#include "osr/matrix.hpp"

namespace osr {

struct Dataset {
    Matrix features;
    std::vector<int> labels;
    std::string name;
    double feature_scale = 1.0;         // divisor already applied to raw values
    std::size_t image_rows = 0, image_cols = 0; // set when loaded from IDX images

    std::size_t size() const { return features.rows(); }
    std::vector<int> distinct_labels() const;
};

/// Loads an MNIST-style IDX image/label file pair. Pixels are scaled to [0,1]
/// and each image flattened row-major into one feature row.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset back to IDX bytes; inverse of load_idx.
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

/// Loads a rectangular numeric CSV. label_column is zero-based; the remaining
/// columns become features in file order.
Dataset load_csv(const std::string& path, std::size_t label_column, bool has_header);

/// Writes features plus a trailing "label" column.
void save_csv(const Dataset& data, const std::string& path, bool with_header);

enum class SplitMode { resplit, fixed_test };

struct SplitConfig {
    std::size_t k = 0;
    double train_fraction = 0.75;
    double val_fraction = 1.0 / 3.0; // of the known-class test instances
    std::uint64_t seed = 0;
    std::vector<int> known_ids; // optional override; empty = sample uniformly
};

/// Open-set partition. Known classes are renumbered 0..K-1 in ascending
/// original-id order; unknown-class instances appear only in test, relabeled
/// kUnknownLabel. Row index vectors reference the source dataset(s) so a
/// split is replayable without re-running any RNG.
struct OpenSetSplit {
    SplitMode mode = SplitMode::resplit;
    std::uint64_t seed = 0;
    std::vector<int> known_class_ids;   // original ids, ascending
    std::vector<int> unknown_class_ids; // original ids, ascending
    Dataset train, val, test;
    std::vector<std::size_t> train_rows, val_rows, test_rows;

    std::size_t k() const { return known_class_ids.size(); }
    /// Contiguous id for an original label, or kUnknownLabel.
    int remap_label(int original_id) const;
};

/// MS/Android protocol: choose K known classes, stratified 75/25 train/test
/// over the known classes, move a third of the known test instances to val,
/// send every unknown-class instance to test.
OpenSetSplit open_split(const Dataset& data, const SplitConfig& config);

/// MNIST protocol: a predefined train/test partition; unknown classes are
/// dropped from train and the test set is kept as it is. No validation part.
OpenSetSplit open_split_fixed(const Dataset& train_data, const Dataset& test_data,
                              const SplitConfig& config);

/// K isotropic Gaussian blobs at deterministically spaced centers (labels
/// 0..K-1), plus optional outlier classes at interstitial midpoints (labels
/// K..K+n_outlier_classes-1).
Dataset synth_blobs(std::size_t k, std::size_t n_per_class, std::size_t dim,
                    double center_spacing, double sigma, std::uint64_t seed,
                    std::size_t n_outlier_classes = 0);

/// How to reload the source dataset(s) of a split; stored in the manifest so
/// an experiment replays from the manifest alone.
struct DataSource {
    std::string format; // "idx" or "csv"
    std::string train_images, train_labels; // idx
    std::string test_images, test_labels;   // idx, fixed_test only
    std::string train_csv, test_csv;        // csv
    std::size_t label_column = 0;
    bool csv_header = false;

    Dataset load_train() const;
    Dataset load_test() const; // fixed_test only
};

/// Writes manifest.json plus {train,val,test}_rows.csv into dir.
void save_split(const OpenSetSplit& split, const DataSource& source, const std::string& dir);

/// Reloads the source data named in dir/manifest.json and re-selects the
/// stored rows.
OpenSetSplit load_split(const std::string& dir);

} // namespace osr
