#include "solargeco/model.hpp"

#include <cmath>

namespace solargeco {

HeadVariant head_variant_from_string(const std::string& name) {
    if (name == "gaussian_nll" || name == "nll") return HeadVariant::gaussian_nll;
    if (name == "mse") return HeadVariant::mse;
    throw ConfigError("unknown head variant '" + name + "' (expected gaussian_nll or mse)");
}

const char* head_variant_name(HeadVariant v) {
    return v == HeadVariant::gaussian_nll ? "gaussian_nll" : "mse";
}

ModelVariant model_variant_from_string(const std::string& name) {
    if (name == "solar_geco" || name == "full") return ModelVariant::solar_geco;
    if (name == "concat_mlp") return ModelVariant::concat_mlp;
    if (name == "text_mlp") return ModelVariant::text_mlp;
    throw ConfigError("unknown model variant '" + name +
                      "' (expected solar_geco, concat_mlp, or text_mlp)");
}

const char* model_variant_name(ModelVariant v) {
    switch (v) {
    case ModelVariant::solar_geco: return "solar_geco";
    case ModelVariant::concat_mlp: return "concat_mlp";
    default: return "text_mlp";
    }
}

void ModelConfig::validate() const {
    if (mlp_dims.empty()) throw ConfigError("mlp_dims must not be empty");
    const size_t out = mlp_dims.back();
    if (head == HeadVariant::gaussian_nll && out != 2) {
        throw ConfigError("gaussian_nll head needs mlp_dims ending in 2 (mean and deviation), got " +
                          std::to_string(out));
    }
    if (head == HeadVariant::mse && out != 1) {
        throw ConfigError("mse head needs mlp_dims ending in 1, got " + std::to_string(out));
    }
    if (heads == 0 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) +
                          " must be divisible by heads " + std::to_string(heads));
    }
    if (variant == ModelVariant::solar_geco && fusion_layers == 0) {
        throw ConfigError("the full model needs fusion_layers >= 1 (use variant concat_mlp "
                          "for the no-fusion baseline)");
    }
    if (!(sigma2_min > 0.0)) throw ConfigError("sigma2_min must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
    if (graph.num_centers == 0) throw ConfigError("graph.num_centers must be positive");
}

Tensor nll_loss(Tape& tape, Tensor mu, Tensor sigma, std::span<const double> targets) {
    const size_t b = targets.size();
    if (b == 0) throw ContractError("nll_loss: empty batch");
    if (mu.numel() != b || sigma.numel() != b) {
        throw DimensionError("nll_loss: " + std::to_string(b) + " targets vs mu " +
                             shape_str(mu.shape()) + ", sigma " + shape_str(sigma.shape()));
    }
    for (double s : sigma.values()) {
        if (!(s > 0.0)) throw ContractError("nll_loss: sigma must be positive, got " +
                                            std::to_string(s));
    }
    Tensor y = tape.constant({b, 1}, std::vector<double>(targets.begin(), targets.end()));
    Tensor r = tape.sub(y, mu);
    Tensor s2 = tape.mul(sigma, sigma);
    Tensor per = tape.add(tape.log(s2), tape.div(tape.mul(r, r), s2));
    return tape.scale(tape.mean(per), 0.5);
}

Tensor mse_loss(Tape& tape, Tensor mu, std::span<const double> targets) {
    const size_t b = targets.size();
    if (b == 0) throw ContractError("mse_loss: empty batch");
    if (mu.numel() != b) {
        throw DimensionError("mse_loss: " + std::to_string(b) + " targets vs mu " +
                             shape_str(mu.shape()));
    }
    Tensor y = tape.constant({b, 1}, std::vector<double>(targets.begin(), targets.end()));
    Tensor r = tape.sub(y, mu);
    return tape.mean(tape.mul(r, r));
}

double nll_value(std::span<const PredictionDistribution> preds,
                 std::span<const double> targets) {
    if (preds.empty() || preds.size() != targets.size()) {
        throw ContractError("nll_value: mismatched or empty inputs");
    }
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (!(preds[i].sigma > 0.0)) throw ContractError("nll_value: sigma must be positive");
        const double s2 = preds[i].sigma * preds[i].sigma;
        const double r = targets[i] - preds[i].mu;
        acc += std::log(s2) + r * r / s2;
    }
    return 0.5 * acc / static_cast<double>(preds.size());
}

double mse_value(std::span<const PredictionDistribution> preds,
                 std::span<const double> targets) {
    if (preds.empty() || preds.size() != targets.size()) {
        throw ContractError("mse_value: mismatched or empty inputs");
    }
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const double r = targets[i] - preds[i].mu;
        acc += r * r;
    }
    return acc / static_cast<double>(preds.size());
}

SolarGeco::SolarGeco(ModelConfig cfg, size_t vocab_size, uint64_t init_seed)
    : cfg_(std::move(cfg)), vocab_size_(vocab_size) {
    cfg_.validate();
    Rng rng(mix_keys(init_seed, /*stream=*/1));

    if (cfg_.variant != ModelVariant::text_mlp) {
        const GraphEncoderConfig gcfg{cfg_.d_node, cfg_.conv_layers, cfg_.graph.num_centers};
        init_graph_encoder_params(store_, gcfg, rng);
    }
    const TextEncoderConfig tcfg{cfg_.d_bert, cfg_.max_tokens, cfg_.text_self_attention};
    init_text_encoder_params(store_, tcfg, vocab_size_, rng);
    if (cfg_.variant != ModelVariant::text_mlp) {
        const FusionConfig fcfg{cfg_.d_node,        cfg_.d_bert, cfg_.d_model,
                                cfg_.heads,         cfg_.effective_fusion_layers(),
                                cfg_.dropout,       cfg_.norm_eps};
        init_fusion_params(store_, fcfg, rng);
    }

    size_t width = cfg_.mlp_input_width();
    for (size_t k = 0; k < cfg_.mlp_dims.size(); ++k) {
        const std::string p = "head.l" + std::to_string(k);
        const size_t next = cfg_.mlp_dims[k];
        store_.create(p + ".w", {width, next}, glorot_uniform(rng, width, next));
        store_.create(p + ".b", {next}, std::vector<double>(next, 0.0));
        width = next;
    }
    store_.create("head.target_mean", {1}, {0.0}).trainable = false;
    store_.create("head.target_scale", {1}, {1.0}).trainable = false;

    for (const auto& p : store_.all()) {
        if (cfg_.freeze_graph_encoder && p->name.rfind("graph.", 0) == 0) p->trainable = false;
        if (cfg_.freeze_text_encoder && p->name.rfind("text.", 0) == 0) p->trainable = false;
    }
}

Tensor SolarGeco::device_vector(Tape& tape, const DeviceBatch& batch, size_t i,
                                bool training) {
    const PreparedDevice& dev = *batch.devices[i];
    const TextEncoderConfig tcfg{cfg_.d_bert, cfg_.max_tokens, cfg_.text_self_attention};
    Tensor h_text = encode_layers(tape, dev.layer_tokens, store_, tcfg); // 4 x d_bert

    if (cfg_.variant == ModelVariant::text_mlp) {
        return tape.mean_axis0(h_text); // 1 x d_bert
    }

    if (!dev.graph) throw ContractError("device '" + dev.device_id + "' has no crystal graph");
    const GraphEncoderConfig gcfg{cfg_.d_node, cfg_.conv_layers, cfg_.graph.num_centers};
    Tensor h_graph = encode_graph(tape, *dev.graph, store_, gcfg); // n_i x d_node

    const size_t pad = batch.max_atoms - dev.num_atoms;
    if (pad > 0) {
        const std::array<Tensor, 2> parts{h_graph, tape.zeros({pad, cfg_.d_node})};
        h_graph = tape.concat_rows(parts);
    }
    const std::vector<double> mask = batch.node_mask(i);

    const FusionConfig fcfg{cfg_.d_node,  cfg_.d_bert,
                            cfg_.d_model, cfg_.heads,
                            cfg_.effective_fusion_layers(),
                            cfg_.dropout, cfg_.norm_eps};
    auto [g, t] = fusion_stack(tape, h_graph, h_text, store_, fcfg, mask, training);

    Tensor v_graph = tape.masked_mean_axis0(g, mask); // 1 x d_model
    Tensor v_text = tape.mean_axis0(t);               // 1 x d_model
    const std::array<Tensor, 2> vec{v_graph, v_text};
    return tape.concat_cols(vec); // 1 x 2*d_model
}

SolarGeco::Output SolarGeco::forward(Tape& tape, const DeviceBatch& batch, bool training) {
    if (batch.devices.empty()) throw ContractError("forward: empty batch");
    std::vector<Tensor> rows;
    rows.reserve(batch.devices.size());
    for (size_t i = 0; i < batch.devices.size(); ++i) {
        rows.push_back(device_vector(tape, batch, i, training));
    }
    Tensor h = tape.concat_rows(rows); // B x width

    for (size_t k = 0; k < cfg_.mlp_dims.size(); ++k) {
        const std::string p = "head.l" + std::to_string(k);
        h = tape.add(tape.matmul(h, tape.param(store_.at(p + ".w"))),
                     tape.param(store_.at(p + ".b")));
        if (k + 1 < cfg_.mlp_dims.size()) h = tape.relu(h);
    }

    Tensor mean_t = tape.param(store_.at("head.target_mean"));
    Tensor scale_t = tape.param(store_.at("head.target_scale"));

    Output out;
    out.mu = tape.add(tape.mul(tape.slice_cols(h, 0, 1), scale_t), mean_t);
    if (cfg_.head == HeadVariant::gaussian_nll) {
        Tensor s_raw = tape.slice_cols(h, 1, 1);
        out.sigma = tape.add_const(tape.mul(tape.softplus(s_raw), scale_t),
                                   std::sqrt(cfg_.sigma2_min));
    } else {
        out.sigma = tape.constant({batch.devices.size(), 1},
                                  std::vector<double>(batch.devices.size(),
                                                      std::sqrt(cfg_.sigma2_min)));
    }
    return out;
}

void SolarGeco::set_target_stats(double mean, double scale) {
    if (!std::isfinite(mean) || !std::isfinite(scale) || scale <= 0.0)
        throw ContractError("set_target_stats: scale must be a positive finite number");
    store_.at("head.target_mean").value = {mean};
    store_.at("head.target_scale").value = {scale};
}

double SolarGeco::target_mean() const { return store_.at("head.target_mean").value[0]; }
double SolarGeco::target_scale() const { return store_.at("head.target_scale").value[0]; }

Tensor SolarGeco::loss(Tape& tape, const Output& out, std::span<const double> targets) const {
    if (cfg_.head == HeadVariant::gaussian_nll) {
        return nll_loss(tape, out.mu, out.sigma, targets);
    }
    return mse_loss(tape, out.mu, targets);
}

std::vector<PredictionDistribution> SolarGeco::predict(const DeviceBatch& batch,
                                                       uint64_t dropout_stream) {
    Tape tape(dropout_stream);
    Output out = forward(tape, batch, /*training=*/false);
    const auto mu = out.mu.values();
    const auto sigma = out.sigma.values();
    std::vector<PredictionDistribution> preds(batch.devices.size());
    for (size_t i = 0; i < preds.size(); ++i) preds[i] = {mu[i], sigma[i]};
    return preds;
}

} // namespace solargeco
