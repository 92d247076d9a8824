#include "osr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "osr/errors.hpp"
#include "osr/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace osr {

namespace {

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;

std::uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw DataError(path + ": truncated while reading " + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::ifstream open_input(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in)
        throw DataError("cannot open " + path);
    return in;
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out)
        throw DataError("cannot write " + path);
    return out;
}

template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

} // namespace

std::vector<int> Dataset::distinct_labels() const {
    std::vector<int> ids = labels;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img = open_input(images_path, std::ios::binary);
    const std::uint32_t img_magic = read_be32(img, images_path, "magic");
    if (img_magic != kIdxImageMagic)
        throw DataError(images_path + ": bad IDX image magic " + std::to_string(img_magic) +
                        " (expected " + std::to_string(kIdxImageMagic) + ")");
    const std::uint32_t n_images = read_be32(img, images_path, "image count");
    const std::uint32_t rows = read_be32(img, images_path, "row count");
    const std::uint32_t cols = read_be32(img, images_path, "column count");

    std::ifstream lab = open_input(labels_path, std::ios::binary);
    const std::uint32_t lab_magic = read_be32(lab, labels_path, "magic");
    if (lab_magic != kIdxLabelMagic)
        throw DataError(labels_path + ": bad IDX label magic " + std::to_string(lab_magic) +
                        " (expected " + std::to_string(kIdxLabelMagic) + ")");
    const std::uint32_t n_labels = read_be32(lab, labels_path, "label count");
    if (n_images != n_labels)
        throw DataError("IDX count mismatch: " + std::to_string(n_images) + " images in " +
                        images_path + " vs " + std::to_string(n_labels) + " labels in " +
                        labels_path);

    Dataset data;
    data.name = fs::path(images_path).stem().string();
    data.feature_scale = 255.0;
    data.image_rows = rows;
    data.image_cols = cols;
    const std::size_t dim = std::size_t(rows) * cols;
    data.features = Matrix(n_images, dim);
    data.labels.resize(n_images);

    std::vector<unsigned char> pixel_buf(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!img.read(reinterpret_cast<char*>(pixel_buf.data()), std::streamsize(dim)))
            throw DataError(images_path + ": truncated at image " + std::to_string(i));
        double* row = data.features.row(i);
        for (std::size_t j = 0; j < dim; ++j)
            row[j] = pixel_buf[j] / 255.0;
    }
    std::vector<unsigned char> label_buf(n_labels);
    if (!lab.read(reinterpret_cast<char*>(label_buf.data()), std::streamsize(n_labels)))
        throw DataError(labels_path + ": truncated label data");
    for (std::uint32_t i = 0; i < n_labels; ++i)
        data.labels[i] = label_buf[i];
    return data;
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
    std::size_t rows = data.image_rows, cols = data.image_cols;
    if (rows == 0 || cols == 0) {
        rows = 1;
        cols = data.features.cols();
    }
    if (rows * cols != data.features.cols())
        throw DataError("save_idx: image dims " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " do not match feature width " +
                        std::to_string(data.features.cols()));

    std::ofstream img = open_output(images_path, std::ios::binary);
    write_be32(img, kIdxImageMagic);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    const double scale = data.feature_scale > 0 ? data.feature_scale : 255.0;
    std::vector<unsigned char> buf(data.features.cols());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.features.row(i);
        for (std::size_t j = 0; j < buf.size(); ++j) {
            const long v = std::lround(row[j] * scale);
            buf[j] = static_cast<unsigned char>(std::clamp(v, 0L, 255L));
        }
        img.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    }

    std::ofstream lab = open_output(labels_path, std::ios::binary);
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (int label : data.labels) {
        if (label < 0 || label > 255)
            throw DataError("save_idx: label " + std::to_string(label) + " out of byte range");
        const unsigned char b = static_cast<unsigned char>(label);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cells;
}

double parse_cell(const std::string& cell, std::size_t file_line, std::size_t column) {
    std::size_t begin = cell.find_first_not_of(" \t\r");
    if (begin == std::string::npos)
        throw DataError("csv parse error at row " + std::to_string(file_line) + " col " +
                        std::to_string(column) + ": empty cell");
    std::size_t end = cell.find_last_not_of(" \t\r") + 1;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data() + begin, cell.data() + end, value);
    if (ec != std::errc() || ptr != cell.data() + end)
        throw DataError("csv parse error at row " + std::to_string(file_line) + " col " +
                        std::to_string(column) + ": not a number: '" + cell + "'");
    return value;
}

} // namespace

Dataset load_csv(const std::string& path, std::size_t label_column, bool has_header) {
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t file_line = 0;
    if (has_header) {
        if (!std::getline(in, line))
            throw DataError(path + ": empty file");
        ++file_line;
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t n_cols = 0, n_rows = 0;
    while (std::getline(in, line)) {
        ++file_line;
        if (line.empty() && in.peek() == EOF)
            break; // trailing newline
        const std::vector<std::string> cells = split_line(line);
        if (n_cols == 0) {
            n_cols = cells.size();
            if (label_column >= n_cols)
                throw ConfigError(path + ": label column " + std::to_string(label_column) +
                                  " out of range for " + std::to_string(n_cols) + " columns");
        } else if (cells.size() != n_cols) {
            throw DataError("csv parse error at row " + std::to_string(file_line) + ": " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(n_cols));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const double v = parse_cell(cells[c], file_line, c + 1);
            if (c == label_column) {
                if (v != std::nearbyint(v))
                    throw DataError("csv parse error at row " + std::to_string(file_line) +
                                    " col " + std::to_string(c + 1) +
                                    ": label must be an integer, got '" + cells[c] + "'");
                labels.push_back(static_cast<int>(v));
            } else {
                values.push_back(v);
            }
        }
        ++n_rows;
    }
    if (n_rows == 0)
        throw DataError(path + ": no data rows");

    Dataset data;
    data.name = fs::path(path).stem().string();
    data.features = Matrix(n_rows, n_cols - 1);
    std::copy(values.begin(), values.end(), data.features.data());
    data.labels = std::move(labels);
    return data;
}

void save_csv(const Dataset& data, const std::string& path, bool with_header) {
    std::ofstream out = open_output(path);
    const std::size_t d = data.features.cols();
    if (with_header) {
        for (std::size_t j = 0; j < d; ++j)
            out << "f" << j << ",";
        out << "label\n";
    }
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), row[j]);
            out.write(buf, ptr - buf);
            out.put(',');
        }
        out << data.labels[i] << "\n";
    }
}

int OpenSetSplit::remap_label(int original_id) const {
    const auto it =
        std::lower_bound(known_class_ids.begin(), known_class_ids.end(), original_id);
    if (it != known_class_ids.end() && *it == original_id)
        return static_cast<int>(it - known_class_ids.begin());
    return kUnknownLabel;
}

namespace {

Dataset take_rows(const Dataset& src, const std::vector<std::size_t>& rows,
                  const OpenSetSplit& split, const char* part) {
    Dataset out;
    out.name = src.name + "/" + part;
    out.feature_scale = src.feature_scale;
    out.image_rows = src.image_rows;
    out.image_cols = src.image_cols;
    out.features = Matrix(rows.size(), src.features.cols());
    out.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= src.size())
            throw DataError(std::string("split ") + part + " row " + std::to_string(rows[i]) +
                            " out of range for dataset of " + std::to_string(src.size()));
        std::copy(src.features.row(rows[i]), src.features.row(rows[i]) + src.features.cols(),
                  out.features.row(i));
        out.labels[i] = split.remap_label(src.labels[rows[i]]);
    }
    return out;
}

std::vector<int> choose_known(const std::vector<int>& classes, const SplitConfig& config,
                              std::mt19937_64& rng) {
    if (config.k == 0)
        throw ConfigError("split: k must be >= 1");
    if (config.k >= classes.size())
        throw ConfigError("split: k = " + std::to_string(config.k) + " leaves no unknown class (" +
                          std::to_string(classes.size()) + " classes present)");
    std::vector<int> known;
    if (!config.known_ids.empty()) {
        known = config.known_ids;
        std::sort(known.begin(), known.end());
        if (known.size() != config.k ||
            std::adjacent_find(known.begin(), known.end()) != known.end())
            throw ConfigError("split: known_ids must be k distinct class ids");
        for (int id : known)
            if (!std::binary_search(classes.begin(), classes.end(), id))
                throw ConfigError("split: known id " + std::to_string(id) +
                                  " not present in dataset");
    } else {
        std::vector<int> pool = classes;
        fisher_yates(pool, rng);
        known.assign(pool.begin(), pool.begin() + std::ptrdiff_t(config.k));
        std::sort(known.begin(), known.end());
    }
    return known;
}

} // namespace

OpenSetSplit open_split(const Dataset& data, const SplitConfig& config) {
    if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0))
        throw ConfigError("split: train_fraction must be in (0,1)");
    if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0))
        throw ConfigError("split: val_fraction must be in [0,1)");

    const std::vector<int> classes = data.distinct_labels();
    std::mt19937_64 rng(derive_seed(config.seed, "split"));

    OpenSetSplit split;
    split.mode = SplitMode::resplit;
    split.seed = config.seed;
    split.known_class_ids = choose_known(classes, config, rng);
    for (int id : classes)
        if (!std::binary_search(split.known_class_ids.begin(), split.known_class_ids.end(), id))
            split.unknown_class_ids.push_back(id);

    // Stratified per known class: shuffle, 75/25 train/test, then a third of
    // the test share moves to val.
    for (int id : split.known_class_ids) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == id)
                rows.push_back(i);
        fisher_yates(rows, rng);
        const std::size_t n = rows.size();
        const std::size_t n_train = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(config.train_fraction * double(n))), 1, n);
        const std::size_t n_rest = n - n_train;
        const std::size_t n_val =
            static_cast<std::size_t>(std::llround(config.val_fraction * double(n_rest)));
        split.train_rows.insert(split.train_rows.end(), rows.begin(),
                                rows.begin() + std::ptrdiff_t(n_train));
        split.val_rows.insert(split.val_rows.end(), rows.begin() + std::ptrdiff_t(n_train),
                              rows.begin() + std::ptrdiff_t(n_train + n_val));
        split.test_rows.insert(split.test_rows.end(), rows.begin() + std::ptrdiff_t(n_train + n_val),
                               rows.end());
    }
    for (std::size_t i = 0; i < data.size(); ++i)
        if (split.remap_label(data.labels[i]) == kUnknownLabel)
            split.test_rows.push_back(i);

    std::sort(split.train_rows.begin(), split.train_rows.end());
    std::sort(split.val_rows.begin(), split.val_rows.end());
    std::sort(split.test_rows.begin(), split.test_rows.end());

    split.train = take_rows(data, split.train_rows, split, "train");
    split.val = take_rows(data, split.val_rows, split, "val");
    split.test = take_rows(data, split.test_rows, split, "test");
    return split;
}

OpenSetSplit open_split_fixed(const Dataset& train_data, const Dataset& test_data,
                              const SplitConfig& config) {
    if (train_data.features.cols() != test_data.features.cols())
        throw ConfigError("split: train and test feature widths disagree");

    const std::vector<int> train_classes = train_data.distinct_labels();
    std::mt19937_64 rng(derive_seed(config.seed, "split"));

    OpenSetSplit split;
    split.mode = SplitMode::fixed_test;
    split.seed = config.seed;
    split.known_class_ids = choose_known(train_classes, config, rng);

    std::vector<int> all_classes = train_classes;
    for (int id : test_data.distinct_labels())
        all_classes.push_back(id);
    std::sort(all_classes.begin(), all_classes.end());
    all_classes.erase(std::unique(all_classes.begin(), all_classes.end()), all_classes.end());
    for (int id : all_classes)
        if (!std::binary_search(split.known_class_ids.begin(), split.known_class_ids.end(), id))
            split.unknown_class_ids.push_back(id);

    for (std::size_t i = 0; i < train_data.size(); ++i)
        if (split.remap_label(train_data.labels[i]) != kUnknownLabel)
            split.train_rows.push_back(i);
    split.test_rows.resize(test_data.size());
    for (std::size_t i = 0; i < test_data.size(); ++i)
        split.test_rows[i] = i;

    split.train = take_rows(train_data, split.train_rows, split, "train");
    split.val = take_rows(train_data, split.val_rows, split, "val");
    split.test = take_rows(test_data, split.test_rows, split, "test");
    return split;
}

Dataset synth_blobs(std::size_t k, std::size_t n_per_class, std::size_t dim,
                    double center_spacing, double sigma, std::uint64_t seed,
                    std::size_t n_outlier_classes) {
    if (k == 0 || dim == 0 || n_per_class == 0)
        throw ConfigError("synth_blobs: k, dim, n_per_class must be >= 1");
    if (!(sigma > 0.0))
        throw ConfigError("synth_blobs: sigma must be > 0");

    // Known centers walk the axes: class j sits at spacing*(1 + j/dim) along
    // axis j%dim, so any two centers are at least `spacing` apart. Outlier
    // classes sit at midpoints between consecutive known centers.
    std::vector<std::vector<double>> centers;
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> c(dim, 0.0);
        c[j % dim] = center_spacing * double(1 + j / dim);
        centers.push_back(std::move(c));
    }
    for (std::size_t m = 0; m < n_outlier_classes; ++m) {
        std::vector<double> c(dim, 0.0);
        if (k == 1) {
            c[m % dim] = 0.5 * center_spacing * double(1 + m / dim);
        } else {
            const auto& a = centers[m % k];
            const auto& b = centers[(m + 1) % k];
            for (std::size_t j = 0; j < dim; ++j)
                c[j] = 0.5 * (a[j] + b[j]);
        }
        centers.push_back(std::move(c));
    }

    std::mt19937_64 rng(seed);
    const std::size_t n_classes = k + n_outlier_classes;
    Dataset data;
    data.name = "blobs";
    data.features = Matrix(n_classes * n_per_class, dim);
    data.labels.resize(n_classes * n_per_class);
    std::size_t row = 0;
    for (std::size_t cls = 0; cls < n_classes; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            double* r = data.features.row(row);
            for (std::size_t j = 0; j < dim; ++j)
                r[j] = normal_sample(rng, centers[cls][j], sigma);
            data.labels[row] = static_cast<int>(cls);
        }
    }
    return data;
}

namespace {

const char* mode_name(SplitMode mode) {
    return mode == SplitMode::resplit ? "resplit" : "fixed_test";
}

SplitMode mode_from_name(const std::string& name) {
    if (name == "resplit") return SplitMode::resplit;
    if (name == "fixed_test") return SplitMode::fixed_test;
    throw DataError("split manifest: unknown mode '" + name + "'");
}

template <typename T>
T manifest_field(const json& j, const char* name) {
    if (!j.contains(name))
        throw DataError(std::string("split manifest: missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw DataError(std::string("split manifest: invalid field '") + name + "'");
    }
}

void write_rows(const std::string& path, const std::vector<std::size_t>& rows) {
    std::ofstream out = open_output(path);
    out << "row\n";
    for (std::size_t r : rows)
        out << r << "\n";
}

std::vector<std::size_t> read_rows(const std::string& path) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line) || line != "row")
        throw DataError(path + ": expected 'row' header");
    std::vector<std::size_t> rows;
    std::size_t file_line = 1;
    while (std::getline(in, line)) {
        ++file_line;
        if (line.empty())
            continue;
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc() || ptr != line.data() + line.size())
            throw DataError(path + ": bad row index at line " + std::to_string(file_line));
        rows.push_back(v);
    }
    return rows;
}

} // namespace

Dataset DataSource::load_train() const {
    if (format == "idx")
        return load_idx(train_images, train_labels);
    if (format == "csv")
        return load_csv(train_csv, label_column, csv_header);
    throw DataError("data source: unknown format '" + format + "'");
}

Dataset DataSource::load_test() const {
    if (format == "idx")
        return load_idx(test_images, test_labels);
    if (format == "csv")
        return load_csv(test_csv, label_column, csv_header);
    throw DataError("data source: unknown format '" + format + "'");
}

void save_split(const OpenSetSplit& split, const DataSource& source, const std::string& dir) {
    fs::create_directories(dir);
    json j;
    j["format"] = "osr-split";
    j["format_version"] = 1;
    j["mode"] = mode_name(split.mode);
    j["seed"] = split.seed;
    j["k"] = split.k();
    j["known_class_ids"] = split.known_class_ids;
    j["unknown_class_ids"] = split.unknown_class_ids;
    j["counts"] = {{"train", split.train_rows.size()},
                   {"val", split.val_rows.size()},
                   {"test", split.test_rows.size()}};
    json src;
    src["format"] = source.format;
    if (source.format == "idx") {
        src["train_images"] = source.train_images;
        src["train_labels"] = source.train_labels;
        if (split.mode == SplitMode::fixed_test) {
            src["test_images"] = source.test_images;
            src["test_labels"] = source.test_labels;
        }
    } else {
        src["train_csv"] = source.train_csv;
        if (split.mode == SplitMode::fixed_test)
            src["test_csv"] = source.test_csv;
        src["label_column"] = source.label_column;
        src["csv_header"] = source.csv_header;
    }
    j["source"] = src;

    std::ofstream out = open_output((fs::path(dir) / "manifest.json").string());
    out << j.dump(2) << "\n";
    write_rows((fs::path(dir) / "train_rows.csv").string(), split.train_rows);
    write_rows((fs::path(dir) / "val_rows.csv").string(), split.val_rows);
    write_rows((fs::path(dir) / "test_rows.csv").string(), split.test_rows);
}

OpenSetSplit load_split(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in = open_input(manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(manifest_path + ": " + e.what());
    }
    if (manifest_field<std::string>(j, "format") != "osr-split")
        throw DataError(manifest_path + ": field 'format' is not 'osr-split'");
    if (manifest_field<int>(j, "format_version") != 1)
        throw DataError(manifest_path + ": unsupported field 'format_version'");

    OpenSetSplit split;
    split.mode = mode_from_name(manifest_field<std::string>(j, "mode"));
    split.seed = manifest_field<std::uint64_t>(j, "seed");
    split.known_class_ids = manifest_field<std::vector<int>>(j, "known_class_ids");
    split.unknown_class_ids = manifest_field<std::vector<int>>(j, "unknown_class_ids");

    const json jsrc = manifest_field<json>(j, "source");
    DataSource source;
    source.format = manifest_field<std::string>(jsrc, "format");
    if (source.format == "idx") {
        source.train_images = manifest_field<std::string>(jsrc, "train_images");
        source.train_labels = manifest_field<std::string>(jsrc, "train_labels");
        if (split.mode == SplitMode::fixed_test) {
            source.test_images = manifest_field<std::string>(jsrc, "test_images");
            source.test_labels = manifest_field<std::string>(jsrc, "test_labels");
        }
    } else if (source.format == "csv") {
        source.train_csv = manifest_field<std::string>(jsrc, "train_csv");
        if (split.mode == SplitMode::fixed_test)
            source.test_csv = manifest_field<std::string>(jsrc, "test_csv");
        source.label_column = manifest_field<std::size_t>(jsrc, "label_column");
        source.csv_header = manifest_field<bool>(jsrc, "csv_header");
    } else {
        throw DataError(manifest_path + ": unknown source format '" + source.format + "'");
    }

    split.train_rows = read_rows((fs::path(dir) / "train_rows.csv").string());
    split.val_rows = read_rows((fs::path(dir) / "val_rows.csv").string());
    split.test_rows = read_rows((fs::path(dir) / "test_rows.csv").string());

    const Dataset train_src = source.load_train();
    split.train = take_rows(train_src, split.train_rows, split, "train");
    split.val = take_rows(train_src, split.val_rows, split, "val");
    if (split.mode == SplitMode::fixed_test) {
        const Dataset test_src = source.load_test();
        split.test = take_rows(test_src, split.test_rows, split, "test");
    } else {
        split.test = take_rows(train_src, split.test_rows, split, "test");
    }
    return split;
}

} // namespace osr
