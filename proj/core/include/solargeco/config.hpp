#pragma once

#include <array>
#include <string>
#include <vector>

#include "solargeco/data.hpp"
#include "solargeco/model.hpp"

namespace solargeco {

/// Seeds used for mean +/- std reporting when no --seed is given.
inline constexpr std::array<uint64_t, 3> kCanonicalSeeds = {17, 42, 271};

struct TrainSettings {
    double lr_main = 1e-4;
    double lr_text_multiplier = 1.0; // text-branch lr = lr_main * this
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    size_t warmup_epochs = 10;
    size_t total_epochs = 200;
    size_t patience = 30; // early-stopping patience, epochs
    size_t batch_size = 16;
    uint64_t seed = 42; // init + shuffle + dropout streams
};

/// Everything a run needs, parsed from a flat key=value file with dotted
/// section keys (data., split., text., model., graph., train., synth.).
struct RunConfig {
    std::string devices_path = "devices.jsonl";
    std::string structures_path = "structures.jsonl";
    std::string ground_truth_path = "ground_truth.csv";
    std::string split_path = "split.json";
    std::string checkpoint_path = "model.ckpt";
    std::string log_path = "training_log.csv";

    SplitPolicy split_policy = SplitPolicy::random_80_10_10;
    uint64_t split_seed = 42;
    size_t min_count = 1; // vocabulary frequency threshold

    ModelConfig model;
    TrainSettings train;
    SyntheticSpec synth;

    void validate() const; // ConfigError on inconsistency
};

/// Parses `key = value` lines; '#' starts a comment; blank lines are skipped.
/// Unknown keys and unparsable values raise ConfigError naming the key.
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Applies one key=value assignment (the same keys the file accepts).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// JSON manifest stored inside checkpoints so eval/predict can rebuild the
/// exact architecture and vocabulary without the original config file.
std::string checkpoint_manifest(const ModelConfig& model, const Vocabulary& vocab);
void parse_checkpoint_manifest(const std::string& manifest, ModelConfig& model,
                               std::vector<std::string>& vocab_tokens);

} // namespace solargeco
