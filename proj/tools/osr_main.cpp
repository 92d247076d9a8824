// osr: open set recognition toolkit command line.
//
// Subcommands: blobs, split, train, eval, predict, compare. Every command is
// replayable: outputs are a pure function of flags (or --config file) + seed.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "osr/data.hpp"
#include "osr/errors.hpp"
#include "osr/eval.hpp"
#include "osr/openset.hpp"
#include "osr/rng.hpp"
#include "osr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw osr::DataError("cannot write " + path);
    return out;
}

// --- layer spec parsing ------------------------------------------------------
// "dense:64,batchnorm,relu,dropout:0.9" -> hidden layer stack.

std::vector<osr::LayerSpec> parse_layers(const std::string& text) {
    std::vector<osr::LayerSpec> layers;
    if (text.empty())
        return layers;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string::npos)
            end = text.size();
        const std::string token = text.substr(start, end - start);
        const std::size_t colon = token.find(':');
        const std::string kind = token.substr(0, colon);
        const std::string arg = colon == std::string::npos ? "" : token.substr(colon + 1);
        if (kind == "dense") {
            std::size_t width = 0;
            const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), width);
            if (ec != std::errc() || p != arg.data() + arg.size() || width == 0)
                throw osr::ConfigError("bad layer token '" + token + "': dense needs a width");
            layers.push_back(osr::LayerSpec::dense(width));
        } else if (kind == "relu") {
            layers.push_back(osr::LayerSpec::relu());
        } else if (kind == "batchnorm" || kind == "bn") {
            layers.push_back(osr::LayerSpec::batchnorm());
        } else if (kind == "dropout") {
            double keep = 0.0;
            const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), keep);
            if (ec != std::errc() || p != arg.data() + arg.size())
                throw osr::ConfigError("bad layer token '" + token + "': dropout needs keep_prob");
            layers.push_back(osr::LayerSpec::dropout(keep));
        } else {
            throw osr::ConfigError("bad layer token '" + token +
                                   "' (expected dense:W, relu, batchnorm, dropout:P)");
        }
        start = end + 1;
        if (end == text.size())
            break;
    }
    return layers;
}

// --- shared option blocks ----------------------------------------------------

struct SourceOptions {
    std::string format = "csv";
    std::string train_images, train_labels, test_images, test_labels;
    std::string train_csv, test_csv;
    std::size_t label_column = 0;
    bool csv_header = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--format", format, "Data format: csv or idx")
            ->check(CLI::IsMember({"csv", "idx"}));
        cmd->add_option("--train-images", train_images, "IDX image file (train)");
        cmd->add_option("--train-labels", train_labels, "IDX label file (train)");
        cmd->add_option("--test-images", test_images, "IDX image file (fixed test set)");
        cmd->add_option("--test-labels", test_labels, "IDX label file (fixed test set)");
        cmd->add_option("--train-csv", train_csv, "CSV file (train)");
        cmd->add_option("--test-csv", test_csv, "CSV file (fixed test set)");
        cmd->add_option("--label-col", label_column, "Zero-based label column for CSV");
        cmd->add_flag("--csv-header", csv_header, "CSV files start with a header row");
    }

    osr::DataSource to_source() const {
        osr::DataSource src;
        src.format = format;
        src.train_images = train_images;
        src.train_labels = train_labels;
        src.test_images = test_images;
        src.test_labels = test_labels;
        src.train_csv = train_csv;
        src.test_csv = test_csv;
        src.label_column = label_column;
        src.csv_header = csv_header;
        if (format == "idx" && (train_images.empty() || train_labels.empty()))
            throw osr::ConfigError("idx format needs --train-images and --train-labels");
        if (format == "csv" && train_csv.empty())
            throw osr::ConfigError("csv format needs --train-csv");
        return src;
    }

    bool has_test() const {
        return format == "idx" ? (!test_images.empty() && !test_labels.empty())
                               : !test_csv.empty();
    }
};

// --- subcommands --------------------------------------------------------------

struct BlobsCmd {
    std::size_t k = 4, n_per_class = 200, dim = 2, outliers = 0;
    double spacing = 10.0, sigma = 0.3;
    std::uint64_t seed = 0;
    std::string out;
    bool header = false;

    void run() const {
        const osr::Dataset data =
            osr::synth_blobs(k, n_per_class, dim, spacing, sigma, seed, outliers);
        osr::save_csv(data, out, header);
        std::cout << "wrote " << data.size() << " instances (" << k << " known + " << outliers
                  << " outlier classes) to " << out << "\n";
    }
};

struct SplitCmd {
    SourceOptions source;
    std::size_t k = 0;
    std::string mode = "resplit";
    double train_fraction = 0.75;
    double val_fraction = 1.0 / 3.0;
    std::uint64_t seed = 0;
    std::vector<int> known_ids;
    std::string out;

    void run() const {
        const osr::DataSource src = source.to_source();
        osr::SplitConfig config;
        config.k = k;
        config.train_fraction = train_fraction;
        config.val_fraction = val_fraction;
        config.seed = seed;
        config.known_ids = known_ids;

        osr::OpenSetSplit split;
        if (mode == "fixed-test") {
            if (!source.has_test())
                throw osr::ConfigError("fixed-test mode needs a test data source");
            split = osr::open_split_fixed(src.load_train(), src.load_test(), config);
        } else {
            split = osr::open_split(src.load_train(), config);
        }
        osr::save_split(split, src, out);
        std::cout << "split: " << split.k() << " known / " << split.unknown_class_ids.size()
                  << " unknown classes; train " << split.train.size() << ", val "
                  << split.val.size() << ", test " << split.test.size() << " -> " << out << "\n";
    }
};

struct TrainCmd {
    std::string split_dir, out;
    std::string regime = "ii";
    std::string layers = "dense:64,batchnorm,relu";
    std::size_t z_dim = 0; // 0 = K
    bool no_z_batchnorm = false;
    std::size_t iterations = 5000;
    std::size_t batch_size = 128;
    double lr = 1e-3, beta1 = 0.5, beta2 = 0.999, epsilon = 1e-8;
    double contamination = 0.01;
    std::uint64_t seed = 0;

    void write_curves(const std::vector<osr::CurvePoint>& curves, const std::string& path) const {
        std::ofstream csv = open_output(path);
        csv << "iter,intra,inter,ii,ce\n";
        for (std::size_t i = 0; i < curves.size(); ++i) {
            csv << (i + 1) << "," << fmt(curves[i].intra) << "," << fmt(curves[i].inter) << ","
                << fmt(curves[i].ii) << ","
                << fmt(curves[i].ce ? *curves[i].ce : std::nan("")) << "\n";
        }
    }

    void run() const {
        const osr::OpenSetSplit split = osr::load_split(split_dir);
        fs::create_directories(out);

        osr::NetworkConfig net;
        net.input_dim = split.train.features.cols();
        net.layers = parse_layers(layers);
        net.z_dim = z_dim == 0 ? split.k() : z_dim;
        net.z_batchnorm = !no_z_batchnorm;
        net.seed = osr::derive_seed(seed, "init");

        osr::TrainConfig config;
        config.regime = osr::regime_from_name(regime);
        if (config.regime != osr::TrainRegime::ii)
            net.ce_classes = split.k();
        config.iterations = iterations;
        config.batch_size = batch_size;
        config.adam = {lr, beta1, beta2, epsilon};
        config.contamination_ratio = contamination;
        config.seed = seed;

        try {
            const osr::TrainedModel model =
                osr::train(split.train.features, split.train.labels, net, config);
            osr::save_model(model, (fs::path(out) / "model.osr").string());
            write_curves(model.curves, (fs::path(out) / "curves.csv").string());
        } catch (const osr::TrainingDiverged& e) {
            write_curves(e.partial_curves, (fs::path(out) / "curves.csv").string());
            throw;
        }
        std::cout << "trained " << regime << " for " << iterations << " iterations -> " << out
                  << "\n";
    }
};

std::string cap_key(double cap) {
    return "auc_" + fmt(cap * 100.0);
}

struct EvalCmd {
    std::string model_path, split_dir, out;
    double cap = 0.1;

    void run() const {
        const osr::TrainedModel model = osr::load_model(model_path);
        const osr::OpenSetSplit split = osr::load_split(split_dir);
        if (split.test.features.cols() != model.network.config.input_dim)
            throw osr::Error("eval: split features have " +
                             std::to_string(split.test.features.cols()) +
                             " columns, model expects " +
                             std::to_string(model.network.config.input_dim));
        const osr::EvalReport report =
            osr::evaluate_open(model, split.test.features, split.test.labels, cap);
        fs::create_directories(out);

        json j;
        j["auc_100"] = report.auc_full;
        j[cap_key(cap)] = report.auc_at_cap;
        j["cap"] = report.cap;
        j["macro_p"] = report.macro_precision;
        j["macro_r"] = report.macro_recall;
        j["macro_f"] = report.macro_f1;
        j["k"] = report.labels.size() - 1;
        j["n_test"] = report.n_instances;
        json per_label = json::array();
        for (std::size_t i = 0; i < report.labels.size(); ++i) {
            const bool unknown = report.labels[i] == osr::kUnknownLabel;
            per_label.push_back({{"label", unknown ? "unknown" : std::to_string(report.labels[i])},
                                 {"precision", report.precision[i]},
                                 {"recall", report.recall[i]},
                                 {"f1", report.f1[i]}});
        }
        j["per_label"] = per_label;
        j["confusion"] = report.confusion;
        open_output((fs::path(out) / "report.json").string()) << j.dump(2) << "\n";

        std::ofstream csv = open_output((fs::path(out) / "report.csv").string());
        csv << "key,value\n";
        csv << "auc_100," << fmt(report.auc_full) << "\n";
        csv << cap_key(cap) << "," << fmt(report.auc_at_cap) << "\n";
        csv << "macro_p," << fmt(report.macro_precision) << "\n";
        csv << "macro_r," << fmt(report.macro_recall) << "\n";
        csv << "macro_f," << fmt(report.macro_f1) << "\n";
        for (std::size_t i = 0; i < report.labels.size(); ++i) {
            const std::string name = report.labels[i] == osr::kUnknownLabel
                                         ? "unknown"
                                         : std::to_string(report.labels[i]);
            csv << "precision_" << name << "," << fmt(report.precision[i]) << "\n";
            csv << "recall_" << name << "," << fmt(report.recall[i]) << "\n";
            csv << "f1_" << name << "," << fmt(report.f1[i]) << "\n";
        }

        const std::vector<double> scores = osr::outlier_scores(model, split.test.features);
        std::vector<bool> flags(split.test.labels.size());
        for (std::size_t i = 0; i < flags.size(); ++i)
            flags[i] = split.test.labels[i] == osr::kUnknownLabel;
        std::ofstream roc = open_output((fs::path(out) / "roc.csv").string());
        roc << "fpr,tpr,threshold\n";
        for (const osr::RocPoint& p : osr::roc_points(scores, flags))
            roc << fmt(p.fpr) << "," << fmt(p.tpr) << "," << fmt(p.threshold) << "\n";

        std::cout << "auc_100 " << fmt(report.auc_full) << "  " << cap_key(cap) << " "
                  << fmt(report.auc_at_cap) << "  macro_f " << fmt(report.macro_f1) << "\n";
    }
};

struct PredictCmd {
    std::string model_path, input, out;
    bool csv_header = false;

    void run() const {
        const osr::TrainedModel model = osr::load_model(model_path);
        std::ifstream in(input);
        if (!in)
            throw osr::DataError("cannot open " + input);
        std::ostream* dest = &std::cout;
        std::ofstream file;
        if (!out.empty()) {
            file = open_output(out);
            dest = &file;
        }
        *dest << "row,label,score";
        for (int id : model.class_means.class_ids)
            *dest << ",p_" << id;
        *dest << "\n";

        const std::size_t dim = model.network.config.input_dim;
        std::string line;
        std::size_t row = 0;
        if (csv_header)
            std::getline(in, line);
        while (std::getline(in, line)) {
            ++row;
            if (line.empty())
                continue;
            osr::Matrix x(1, dim);
            std::size_t col = 0;
            bool ok = true;
            std::size_t start = 0;
            while (start <= line.size() && ok) {
                std::size_t end = line.find(',', start);
                if (end == std::string::npos)
                    end = line.size();
                if (col >= dim) {
                    std::cerr << "row " << row << ": too many columns (expected " << dim
                              << "), skipped\n";
                    ok = false;
                    break;
                }
                double v = 0.0;
                const char* first = line.data() + start;
                const char* last = line.data() + end;
                const auto [p, ec] = std::from_chars(first, last, v);
                if (ec != std::errc() || p != last) {
                    std::cerr << "row " << row << ": bad number at column " << (col + 1)
                              << ", skipped\n";
                    ok = false;
                    break;
                }
                x(0, col++) = v;
                if (end == line.size())
                    break;
                start = end + 1;
            }
            if (!ok)
                continue;
            if (col != dim) {
                std::cerr << "row " << row << ": " << col << " columns, expected " << dim
                          << ", skipped\n";
                continue;
            }
            const osr::OpenPrediction pred = osr::predict_open(model, x);
            *dest << row << ",";
            if (pred.label == osr::kUnknownLabel)
                *dest << "unknown";
            else
                *dest << pred.label;
            *dest << "," << fmt(pred.score);
            for (double p : pred.probs)
                *dest << "," << fmt(p);
            *dest << "\n";
        }
    }
};

struct CompareCmd {
    std::vector<std::string> reports_a, reports_b;
    std::string out;

    static std::map<std::string, std::vector<double>> collect(
        const std::vector<std::string>& paths) {
        std::map<std::string, std::vector<double>> metrics;
        for (const std::string& path : paths) {
            std::ifstream in(path);
            if (!in)
                throw osr::DataError("cannot open " + path);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw osr::DataError(path + ": " + e.what());
            }
            for (const auto& [key, value] : j.items()) {
                if (!value.is_number() || key == "cap" || key == "n_test" || key == "k")
                    continue;
                metrics[key].push_back(value.get<double>());
            }
        }
        return metrics;
    }

    void run() const {
        if (reports_a.size() < 2 || reports_b.size() < 2)
            throw osr::ConfigError("compare: need at least 2 reports per side");
        const auto metrics_a = collect(reports_a);
        const auto metrics_b = collect(reports_b);

        std::vector<std::string> keys;
        for (const auto& [key, values] : metrics_a)
            if (metrics_b.count(key) && values.size() == reports_a.size() &&
                metrics_b.at(key).size() == reports_b.size())
                keys.push_back(key);
        if (keys.empty())
            throw osr::DataError("compare: no metric key present in both report sets");

        std::ostringstream table;
        table << "metric,mean_a,mean_b,t,p\n";
        for (const std::string& key : keys) {
            const std::vector<double>& a = metrics_a.at(key);
            const std::vector<double>& b = metrics_b.at(key);
            const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
            const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
            double t = 0.0, p = 1.0;
            bool degenerate_equal = true;
            for (double v : a) degenerate_equal &= v == a.front();
            for (double v : b) degenerate_equal &= v == b.front();
            if (degenerate_equal) {
                // No variance on either side: identical means give p = 1,
                // different means are trivially separated.
                if (a.front() != b.front()) {
                    t = a.front() > b.front() ? std::numeric_limits<double>::infinity()
                                              : -std::numeric_limits<double>::infinity();
                    p = 0.0;
                }
            } else {
                const osr::WelchResult w = osr::welch_t_test(a, b);
                t = w.t;
                p = w.p;
            }
            table << key << "," << fmt(mean_a) << "," << fmt(mean_b) << "," << fmt(t) << ","
                  << fmt(p) << "\n";
        }
        std::cout << table.str();
        if (!out.empty())
            open_output(out) << table.str();
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"open set recognition toolkit (ii-loss embeddings + outlier threshold)"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI/TOML file (sections per subcommand)");
    app.allow_config_extras(false);

    BlobsCmd blobs;
    CLI::App* blobs_cmd = app.add_subcommand("blobs", "Generate Gaussian blob data as CSV");
    blobs_cmd->add_option("--k", blobs.k, "Known classes");
    blobs_cmd->add_option("--n-per-class", blobs.n_per_class, "Instances per class");
    blobs_cmd->add_option("--dim", blobs.dim, "Feature dimension");
    blobs_cmd->add_option("--spacing", blobs.spacing, "Distance between centers");
    blobs_cmd->add_option("--sigma", blobs.sigma, "Per-feature standard deviation");
    blobs_cmd->add_option("--outlier-classes", blobs.outliers, "Interstitial outlier classes");
    blobs_cmd->add_option("--seed", blobs.seed, "RNG seed");
    blobs_cmd->add_flag("--header", blobs.header, "Write a header row");
    blobs_cmd->add_option("--out", blobs.out, "Output CSV path")->required();
    blobs_cmd->callback([&] { blobs.run(); });

    SplitCmd split;
    CLI::App* split_cmd = app.add_subcommand("split", "Create an open-set train/val/test split");
    split.source.attach(split_cmd);
    split_cmd->add_option("--k", split.k, "Number of known classes")->required();
    split_cmd->add_option("--mode", split.mode, "resplit (default) or fixed-test")
        ->check(CLI::IsMember({"resplit", "fixed-test"}));
    split_cmd->add_option("--train-fraction", split.train_fraction,
                          "Known-class share kept for training (resplit)");
    split_cmd->add_option("--val-fraction", split.val_fraction,
                          "Share of known-class test instances moved to val (resplit)");
    split_cmd->add_option("--seed", split.seed, "RNG seed");
    split_cmd->add_option("--known-ids", split.known_ids,
                          "Force these class ids as known (default: sample k at random)");
    split_cmd->add_option("--out", split.out, "Output directory")->required();
    split_cmd->callback([&] { split.run(); });

    TrainCmd train;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a split");
    train_cmd->add_option("--split", train.split_dir, "Split directory")->required();
    train_cmd->add_option("--out", train.out, "Output directory")->required();
    train_cmd->add_option("--regime", train.regime, "ii, ce, or ii+ce")
        ->check(CLI::IsMember({"ii", "ce", "ii+ce", "ii_ce"}));
    train_cmd->add_option("--layers", train.layers,
                          "Hidden stack, e.g. dense:64,batchnorm,relu,dropout:0.9");
    train_cmd->add_option("--z-dim", train.z_dim, "Embedding width (default: K)");
    train_cmd->add_flag("--no-z-batchnorm", train.no_z_batchnorm,
                        "Drop the batchnorm after the z-layer");
    train_cmd->add_option("--iterations", train.iterations, "Training iterations");
    train_cmd->add_option("--batch-size", train.batch_size, "Mini-batch size");
    train_cmd->add_option("--lr", train.lr, "Adam learning rate");
    train_cmd->add_option("--beta1", train.beta1, "Adam beta1");
    train_cmd->add_option("--beta2", train.beta2, "Adam beta2");
    train_cmd->add_option("--epsilon", train.epsilon, "Adam epsilon");
    train_cmd->add_option("--contamination", train.contamination,
                          "Contamination ratio for the threshold");
    train_cmd->add_option("--seed", train.seed, "Master seed (init/batch/dropout sub-seeds)");
    train_cmd->callback([&] { train.run(); });

    EvalCmd eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a split's test set");
    eval_cmd->add_option("--model", eval.model_path, "Model file")->required();
    eval_cmd->add_option("--split", eval.split_dir, "Split directory")->required();
    eval_cmd->add_option("--cap", eval.cap, "Partial-AUC FPR cap (default 0.1)");
    eval_cmd->add_option("--out", eval.out, "Output directory")->required();
    eval_cmd->callback([&] { eval.run(); });

    PredictCmd predict;
    CLI::App* predict_cmd = app.add_subcommand("predict", "Predict labels for CSV feature rows");
    predict_cmd->add_option("--model", predict.model_path, "Model file")->required();
    predict_cmd->add_option("--input", predict.input, "CSV of feature rows")->required();
    predict_cmd->add_flag("--csv-header", predict.csv_header, "Input starts with a header row");
    predict_cmd->add_option("--out", predict.out, "Output CSV (default stdout)");
    predict_cmd->callback([&] { predict.run(); });

    CompareCmd compare;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Welch t-tests between two report collections");
    compare_cmd->add_option("--a", compare.reports_a, "report.json files, side A")
        ->required()
        ->expected(-1);
    compare_cmd->add_option("--b", compare.reports_b, "report.json files, side B")
        ->required()
        ->expected(-1);
    compare_cmd->add_option("--out", compare.out, "Also write the table to this CSV");
    compare_cmd->callback([&] { compare.run(); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e); // --help
        app.exit(e);
        return 2;
    } catch (const osr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const osr::TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
