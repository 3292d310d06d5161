#include "solargeco/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "solargeco/errors.hpp"

namespace solargeco {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " +
                      expected);
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) bad_value(key, value, "a real number");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, value, "a real number");
    }
}

size_t parse_count(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size() || v < 0) bad_value(key, value, "a nonnegative integer");
        return static_cast<size_t>(v);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, value, "a nonnegative integer");
    }
}

uint64_t parse_seed(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) bad_value(key, value, "an unsigned integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, value, "an unsigned integer");
    }
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(key, value, "a boolean (true/false)");
}

std::vector<size_t> parse_count_list(const std::string& key, const std::string& value) {
    std::vector<size_t> out;
    std::string item;
    std::istringstream ss(value);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(key, value, "a comma-separated integer list");
        out.push_back(parse_count(key, item));
    }
    if (out.empty()) bad_value(key, value, "a comma-separated integer list");
    return out;
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    if (train.warmup_epochs >= train.total_epochs)
        throw ConfigError("train.warmup_epochs (" + std::to_string(train.warmup_epochs) +
                          ") must be below train.total_epochs (" +
                          std::to_string(train.total_epochs) + ")");
    if (train.patience < 1) throw ConfigError("train.patience must be at least 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (train.lr_main <= 0.0) throw ConfigError("train.lr_main must be positive");
    if (train.lr_text_multiplier < 0.0)
        throw ConfigError("train.lr_text_multiplier must be nonnegative");
    if (train.weight_decay < 0.0) throw ConfigError("train.weight_decay must be nonnegative");
    if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) ||
        !(train.beta2 >= 0.0 && train.beta2 < 1.0))
        throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
    if (train.eps <= 0.0) throw ConfigError("train.eps must be positive");
    if (min_count < 1) throw ConfigError("text.min_count must be at least 1");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    // data/paths
    if (key == "data.devices") { cfg.devices_path = value; return; }
    if (key == "data.structures") { cfg.structures_path = value; return; }
    if (key == "data.ground_truth") { cfg.ground_truth_path = value; return; }
    if (key == "data.split") { cfg.split_path = value; return; }
    if (key == "data.checkpoint") { cfg.checkpoint_path = value; return; }
    if (key == "data.log") { cfg.log_path = value; return; }
    // split
    if (key == "split.policy") { cfg.split_policy = split_policy_from_string(value); return; }
    if (key == "split.seed") { cfg.split_seed = parse_seed(key, value); return; }
    // text
    if (key == "text.min_count") { cfg.min_count = parse_count(key, value); return; }
    if (key == "text.self_attention") {
        cfg.model.text_self_attention = parse_flag(key, value);
        return;
    }
    // model
    if (key == "model.variant") { cfg.model.variant = model_variant_from_string(value); return; }
    if (key == "model.head") { cfg.model.head = head_variant_from_string(value); return; }
    if (key == "model.d_node") { cfg.model.d_node = parse_count(key, value); return; }
    if (key == "model.d_bert") { cfg.model.d_bert = parse_count(key, value); return; }
    if (key == "model.d_model") { cfg.model.d_model = parse_count(key, value); return; }
    if (key == "model.heads") { cfg.model.heads = parse_count(key, value); return; }
    if (key == "model.fusion_layers") { cfg.model.fusion_layers = parse_count(key, value); return; }
    if (key == "model.conv_layers") { cfg.model.conv_layers = parse_count(key, value); return; }
    if (key == "model.max_tokens") { cfg.model.max_tokens = parse_count(key, value); return; }
    if (key == "model.mlp_dims") { cfg.model.mlp_dims = parse_count_list(key, value); return; }
    if (key == "model.dropout") { cfg.model.dropout = parse_real(key, value); return; }
    if (key == "model.sigma2_min") { cfg.model.sigma2_min = parse_real(key, value); return; }
    if (key == "model.norm_eps") { cfg.model.norm_eps = parse_real(key, value); return; }
    if (key == "model.freeze_graph_encoder") {
        cfg.model.freeze_graph_encoder = parse_flag(key, value);
        return;
    }
    if (key == "model.freeze_text_encoder") {
        cfg.model.freeze_text_encoder = parse_flag(key, value);
        return;
    }
    // graph
    if (key == "graph.cutoff") { cfg.model.graph.cutoff = parse_real(key, value); return; }
    if (key == "graph.max_neighbors") { cfg.model.graph.max_neighbors = parse_count(key, value); return; }
    if (key == "graph.d_min") { cfg.model.graph.d_min = parse_real(key, value); return; }
    if (key == "graph.d_max") { cfg.model.graph.d_max = parse_real(key, value); return; }
    if (key == "graph.num_centers") { cfg.model.graph.num_centers = parse_count(key, value); return; }
    if (key == "graph.width") { cfg.model.graph.width = parse_real(key, value); return; }
    // train
    if (key == "train.lr_main") { cfg.train.lr_main = parse_real(key, value); return; }
    if (key == "train.lr_text_multiplier") { cfg.train.lr_text_multiplier = parse_real(key, value); return; }
    if (key == "train.weight_decay") { cfg.train.weight_decay = parse_real(key, value); return; }
    if (key == "train.beta1") { cfg.train.beta1 = parse_real(key, value); return; }
    if (key == "train.beta2") { cfg.train.beta2 = parse_real(key, value); return; }
    if (key == "train.eps") { cfg.train.eps = parse_real(key, value); return; }
    if (key == "train.warmup_epochs") { cfg.train.warmup_epochs = parse_count(key, value); return; }
    if (key == "train.total_epochs") { cfg.train.total_epochs = parse_count(key, value); return; }
    if (key == "train.patience") { cfg.train.patience = parse_count(key, value); return; }
    if (key == "train.batch_size") { cfg.train.batch_size = parse_count(key, value); return; }
    if (key == "train.seed") { cfg.train.seed = parse_seed(key, value); return; }
    // synth
    if (key == "synth.num_devices") { cfg.synth.num_devices = parse_count(key, value); return; }
    if (key == "synth.seed") { cfg.synth.seed = parse_seed(key, value); return; }
    if (key == "synth.num_structures") { cfg.synth.num_structures = parse_count(key, value); return; }
    if (key == "synth.num_configs") { cfg.synth.num_configs = parse_count(key, value); return; }
    if (key == "synth.base_pce") { cfg.synth.base_pce = parse_real(key, value); return; }
    if (key == "synth.struct_scale") { cfg.synth.struct_scale = parse_real(key, value); return; }
    if (key == "synth.quality_scale") { cfg.synth.quality_scale = parse_real(key, value); return; }
    if (key == "synth.interaction_scale") { cfg.synth.interaction_scale = parse_real(key, value); return; }
    if (key == "synth.noise_min") { cfg.synth.noise_min = parse_real(key, value); return; }
    if (key == "synth.noise_max") { cfg.synth.noise_max = parse_real(key, value); return; }

    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream ss(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        set_config_value(cfg, key, value);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

std::string checkpoint_manifest(const ModelConfig& model, const Vocabulary& vocab) {
    nlohmann::json j;
    j["variant"] = model_variant_name(model.variant);
    j["head"] = head_variant_name(model.head);
    j["d_node"] = model.d_node;
    j["d_bert"] = model.d_bert;
    j["d_model"] = model.d_model;
    j["heads"] = model.heads;
    j["fusion_layers"] = model.fusion_layers;
    j["conv_layers"] = model.conv_layers;
    j["max_tokens"] = model.max_tokens;
    j["mlp_dims"] = model.mlp_dims;
    j["dropout"] = model.dropout;
    j["sigma2_min"] = model.sigma2_min;
    j["norm_eps"] = model.norm_eps;
    j["freeze_graph_encoder"] = model.freeze_graph_encoder;
    j["freeze_text_encoder"] = model.freeze_text_encoder;
    j["text_self_attention"] = model.text_self_attention;
    j["graph"] = {{"cutoff", model.graph.cutoff},
                  {"max_neighbors", model.graph.max_neighbors},
                  {"d_min", model.graph.d_min},
                  {"d_max", model.graph.d_max},
                  {"num_centers", model.graph.num_centers},
                  {"width", model.graph.width}};
    j["vocab"] = vocab.tokens();
    return j.dump();
}

void parse_checkpoint_manifest(const std::string& manifest, ModelConfig& model,
                               std::vector<std::string>& vocab_tokens) {
    try {
        const nlohmann::json j = nlohmann::json::parse(manifest);
        model.variant = model_variant_from_string(j.at("variant").get<std::string>());
        model.head = head_variant_from_string(j.at("head").get<std::string>());
        model.d_node = j.at("d_node").get<size_t>();
        model.d_bert = j.at("d_bert").get<size_t>();
        model.d_model = j.at("d_model").get<size_t>();
        model.heads = j.at("heads").get<size_t>();
        model.fusion_layers = j.at("fusion_layers").get<size_t>();
        model.conv_layers = j.at("conv_layers").get<size_t>();
        model.max_tokens = j.at("max_tokens").get<size_t>();
        model.mlp_dims = j.at("mlp_dims").get<std::vector<size_t>>();
        model.dropout = j.at("dropout").get<double>();
        model.sigma2_min = j.at("sigma2_min").get<double>();
        model.norm_eps = j.at("norm_eps").get<double>();
        model.freeze_graph_encoder = j.at("freeze_graph_encoder").get<bool>();
        model.freeze_text_encoder = j.at("freeze_text_encoder").get<bool>();
        model.text_self_attention = j.at("text_self_attention").get<bool>();
        const nlohmann::json& g = j.at("graph");
        model.graph.cutoff = g.at("cutoff").get<double>();
        model.graph.max_neighbors = g.at("max_neighbors").get<size_t>();
        model.graph.d_min = g.at("d_min").get<double>();
        model.graph.d_max = g.at("d_max").get<double>();
        model.graph.num_centers = g.at("num_centers").get<size_t>();
        model.graph.width = g.at("width").get<double>();
        vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint manifest: ") + e.what());
    }
}

} // namespace solargeco
