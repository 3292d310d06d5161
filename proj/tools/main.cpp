// Command-line front end: generate synthetic datasets, train the crystal-graph
// + layer-text efficiency model, evaluate/predict with a checkpoint, and build
// uncertainty-calibration tables from prediction files.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 data error,
// 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "solargeco/checkpoint.hpp"
#include "solargeco/config.hpp"
#include "solargeco/data.hpp"
#include "solargeco/errors.hpp"
#include "solargeco/metrics.hpp"
#include "solargeco/model.hpp"
#include "solargeco/trainer.hpp"

namespace fs = std::filesystem;
using namespace solargeco;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CliOptions {
    std::string config_path;
    bool has_seed = false;
    uint64_t seed = 0;
    std::string checkpoint;
    std::string split_part = "test";
    size_t bins = 10;
    std::string out;
    std::string predictions; // calibrate positional
};

RunConfig load_config(const CliOptions& opt) {
    RunConfig cfg;
    if (!opt.config_path.empty()) cfg = load_run_config(opt.config_path);
    return cfg;
}

fs::path resolve_into(const std::string& out_dir, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute() || out_dir.empty() || out_dir == ".") return p;
    return fs::path(out_dir) / p;
}

void ensure_parent(const fs::path& p) {
    const fs::path parent = p.parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

Dataset load_and_report(const RunConfig& cfg, bool require_pce, bool list_dropped) {
    Dataset data = load_dataset(cfg.devices_path, cfg.structures_path, require_pce);
    if (data.dropped_records > 0) {
        std::cerr << "dropped " << data.dropped_records
                  << " device record(s) with unresolved structure references\n";
        if (list_dropped)
            for (const std::string& id : data.dropped_ids)
                std::cerr << "  unresolved structure_ref for device '" << id << "'\n";
    }
    return data;
}

DatasetSplit obtain_split(const RunConfig& cfg, const Dataset& data, bool allow_create) {
    if (fs::exists(cfg.split_path)) return load_split(cfg.split_path);
    if (!allow_create)
        throw DataError("split file not found: " + cfg.split_path +
                        " (run the train command first or point data.split at one)");
    const DatasetSplit split = make_split(data.devices, cfg.split_policy, cfg.split_seed);
    ensure_parent(cfg.split_path);
    save_split(cfg.split_path, split);
    std::cout << "wrote split " << cfg.split_path << " (policy "
              << split_policy_name(split.policy) << ", train/val/test "
              << split.train.size() << "/" << split.val.size() << "/"
              << split.test.size() << ")\n";
    return split;
}

const std::vector<std::string>& split_part(const DatasetSplit& split,
                                           const std::string& name) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    throw ConfigError("--split must be one of train, val, test (got '" + name + "')");
}

// --- subcommands -----------------------------------------------------------

int cmd_generate(CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    if (opt.has_seed) cfg.synth.seed = opt.seed;

    const SyntheticData synth = generate_synthetic(cfg.synth);

    const fs::path devices = resolve_into(opt.out, cfg.devices_path);
    const fs::path structures = resolve_into(opt.out, cfg.structures_path);
    const fs::path truth = resolve_into(opt.out, cfg.ground_truth_path);
    for (const fs::path& p : {devices, structures, truth}) ensure_parent(p);

    write_devices_jsonl(devices.string(), synth.devices);
    write_structures_jsonl(structures.string(), synth.structures);
    write_ground_truth_csv(truth.string(), synth.ground_truth);

    std::cout << "wrote " << synth.devices.size() << " devices -> " << devices.string()
              << "\nwrote " << synth.structures.size() << " structures -> "
              << structures.string() << "\nwrote " << synth.ground_truth.size()
              << " ground-truth rows -> " << truth.string() << "\n";
    return 0;
}

int cmd_train(CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    if (opt.has_seed) cfg.train.seed = opt.seed;
    if (!opt.checkpoint.empty()) cfg.checkpoint_path = opt.checkpoint;
    if (!opt.out.empty()) cfg.log_path = opt.out;
    cfg.validate();

    const Dataset data = load_and_report(cfg, /*require_pce=*/true, false);
    const DatasetSplit split = obtain_split(cfg, data, /*allow_create=*/true);

    std::vector<std::string> corpus;
    corpus.reserve(split.train.size() * 4);
    {
        std::unordered_map<std::string, const DeviceRecord*> by_id;
        for (const DeviceRecord& r : data.devices) by_id.emplace(r.device_id, &r);
        for (const std::string& id : split.train) {
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw DataError("split references unknown device '" + id + "'");
            for (const std::string& layer : it->second->layers) corpus.push_back(layer);
        }
    }
    const Vocabulary vocab = Vocabulary::build(corpus, cfg.min_count);
    std::cout << "vocabulary: " << vocab.size() << " tokens\n";

    const PreparedDataset prep =
        prepare_dataset(data, cfg.model.graph, vocab, cfg.model.max_tokens);
    SolarGeco model(cfg.model, vocab.size(), cfg.train.seed);
    std::cout << "model " << model_variant_name(cfg.model.variant) << " ("
              << head_variant_name(cfg.model.head) << " head), "
              << model.params().total_values() << " parameters, seed "
              << cfg.train.seed << "\n";

    const TrainingLog log = train_model(model, prep, split, cfg.train,
                                        [](const std::string& line) {
                                            std::cout << line << "\n";
                                        });

    ensure_parent(cfg.log_path);
    write_training_log(cfg.log_path, log);
    ensure_parent(cfg.checkpoint_path);
    save_checkpoint(cfg.checkpoint_path, model.params(),
                    checkpoint_manifest(cfg.model, vocab));

    const EpochStats& best = log.epochs.at(log.best_epoch - 1);
    std::cout << "best " << format_epoch_line(best) << "\n"
              << (log.stopped_early ? "stopped early\n" : "")
              << "wrote training log -> " << cfg.log_path << "\n"
              << "wrote checkpoint -> " << cfg.checkpoint_path << "\n";
    return 0;
}

struct RestoredModel {
    ModelConfig model_cfg;
    Vocabulary vocab = Vocabulary();
    std::unique_ptr<SolarGeco> model;
};

RestoredModel restore_model(const std::string& checkpoint_path) {
    const Checkpoint ckpt = read_checkpoint(checkpoint_path);
    RestoredModel rm;
    std::vector<std::string> tokens;
    parse_checkpoint_manifest(ckpt.config_json, rm.model_cfg, tokens);
    rm.model_cfg.validate();
    rm.vocab = Vocabulary::from_tokens(std::move(tokens));
    rm.model = std::make_unique<SolarGeco>(rm.model_cfg, rm.vocab.size(), /*seed=*/0);
    restore_params(ckpt, rm.model->params());
    return rm;
}

int cmd_eval(CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    RestoredModel rm = restore_model(opt.checkpoint);

    const Dataset data = load_and_report(cfg, /*require_pce=*/true, false);
    const DatasetSplit split = obtain_split(cfg, data, /*allow_create=*/false);
    const std::vector<std::string>& ids = split_part(split, opt.split_part);
    if (ids.empty())
        throw ContractError("split part '" + opt.split_part + "' is empty");

    const PreparedDataset prep =
        prepare_dataset(data, rm.model_cfg.graph, rm.vocab, rm.model_cfg.max_tokens);
    const std::vector<PredictionRow> rows =
        predict_ids(*rm.model, prep, ids, cfg.train.batch_size);

    std::vector<double> y, mu, sigma;
    for (const PredictionRow& r : rows) {
        y.push_back(r.y_true);
        mu.push_back(r.mu);
        sigma.push_back(r.sigma);
    }
    const MetricsReport report = compute_metrics(y, mu, sigma);

    const std::string stem = opt.out.empty() ? "eval" : opt.out;
    const fs::path metrics_path = stem + ".metrics.json";
    const fs::path preds_path = stem + ".predictions.csv";
    ensure_parent(metrics_path);
    const std::string json = metrics_to_json(report);
    std::ofstream mf(metrics_path, std::ios::binary);
    if (!mf) throw DataError("cannot open for writing: " + metrics_path.string());
    mf << json;
    mf.close();
    write_predictions_csv(preds_path.string(), rows);

    std::cout << json << "wrote metrics -> " << metrics_path.string()
              << "\nwrote predictions -> " << preds_path.string() << "\n";
    return 0;
}

int cmd_predict(CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    RestoredModel rm = restore_model(opt.checkpoint);

    const Dataset data = load_and_report(cfg, /*require_pce=*/false, true);
    const PreparedDataset prep =
        prepare_dataset(data, rm.model_cfg.graph, rm.vocab, rm.model_cfg.max_tokens);

    std::vector<std::string> ids;
    ids.reserve(data.devices.size());
    for (const DeviceRecord& r : data.devices) ids.push_back(r.device_id);
    const std::vector<PredictionRow> rows =
        predict_ids(*rm.model, prep, ids, cfg.train.batch_size);

    const std::string out = opt.out.empty() ? "predictions.csv" : opt.out;
    ensure_parent(out);
    write_predict_only_csv(out, rows);
    std::cout << "wrote " << rows.size() << " predictions -> " << out << "\n";
    return 0;
}

int cmd_calibrate(CliOptions& opt) {
    const std::vector<PredictionRow> rows = read_predictions_csv(opt.predictions);
    std::vector<double> y, mu, sigma;
    for (const PredictionRow& r : rows) {
        y.push_back(r.y_true);
        mu.push_back(r.mu);
        sigma.push_back(r.sigma);
    }
    const std::vector<CalibrationBin> bins = calibration_table(y, mu, sigma, opt.bins);
    const double coverage = picp(y, mu, sigma);

    const std::string out = opt.out.empty() ? "calibration.csv" : opt.out;
    ensure_parent(out);
    write_calibration_csv(out, bins, coverage);

    std::printf("picp_95 %.6f over %zu rows, %zu bins\n", coverage, rows.size(),
                bins.size());
    std::cout << "wrote calibration table -> " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Crystal-graph + layer-text model of solar-cell power-conversion "
        "efficiency with predictive uncertainty"};
    app.require_subcommand(1);

    CliOptions opt;

    auto add_common = [&](CLI::App* sub, bool with_seed) {
        sub->add_option("--config", opt.config_path, "key=value run configuration file");
        if (with_seed)
            sub->add_option("--seed", opt.seed, "override the relevant seed")
                ->each([&](const std::string&) { opt.has_seed = true; });
    };

    CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
    add_common(gen, true);
    gen->add_option("--out", opt.out, "directory for the generated files");

    CLI::App* train = app.add_subcommand("train", "fit the model and save a checkpoint");
    add_common(train, true);
    train->add_option("--checkpoint", opt.checkpoint, "checkpoint output path");
    train->add_option("--out", opt.out, "training log output path");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split part");
    add_common(eval, false);
    eval->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate")
        ->required();
    eval->add_option("--split", opt.split_part, "train, val, or test (default test)");
    eval->add_option("--out", opt.out,
                     "output stem for <stem>.metrics.json and <stem>.predictions.csv");

    CLI::App* predict =
        app.add_subcommand("predict", "predict (mu, sigma) for every listed device");
    add_common(predict, false);
    predict->add_option("--checkpoint", opt.checkpoint, "checkpoint to use")->required();
    predict->add_option("--out", opt.out, "predictions CSV path");

    CLI::App* calibrate = app.add_subcommand(
        "calibrate", "sigma-binned calibration table from a predictions CSV");
    calibrate->add_option("predictions", opt.predictions,
                          "CSV with device_id,y_true,mu,sigma columns")
        ->required();
    calibrate->add_option("--bins", opt.bins, "number of quantile bins (default 10)");
    calibrate->add_option("--out", opt.out, "calibration CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(opt);
        if (train->parsed()) return cmd_train(opt);
        if (eval->parsed()) return cmd_eval(opt);
        if (predict->parsed()) return cmd_predict(opt);
        if (calibrate->parsed()) return cmd_calibrate(opt);
        std::cerr << "no subcommand selected\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const GeometryError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) { // includes ParseError
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DomainError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
