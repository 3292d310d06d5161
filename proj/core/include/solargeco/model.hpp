#pragma once

#include <span>
#include <vector>

#include "solargeco/attention.hpp"
#include "solargeco/data.hpp"
#include "solargeco/graph_encoder.hpp"
#include "solargeco/text_encoder.hpp"

namespace solargeco {

enum class HeadVariant { gaussian_nll, mse };
enum class ModelVariant {
    solar_geco, // graph + text + co-attention fusion
    concat_mlp, // both branches, pooled and concatenated, no fusion layers
    text_mlp    // text branch only
};

HeadVariant head_variant_from_string(const std::string& name);
const char* head_variant_name(HeadVariant v);
ModelVariant model_variant_from_string(const std::string& name);
const char* model_variant_name(ModelVariant v);

struct ModelConfig {
    GraphConfig graph;
    size_t d_node = 64;
    size_t d_bert = 64;
    size_t d_model = 64;
    size_t heads = 4;
    size_t fusion_layers = 3;
    size_t conv_layers = 3;
    size_t max_tokens = 32;
    std::vector<size_t> mlp_dims = {128, 64, 2}; // hidden widths, then output width
    double dropout = 0.2;
    double sigma2_min = 1e-6; // variance floor; sigma = softplus(s_raw) + sqrt(sigma2_min)
    double norm_eps = 1e-5;
    HeadVariant head = HeadVariant::gaussian_nll;
    ModelVariant variant = ModelVariant::solar_geco;
    bool freeze_graph_encoder = false;
    bool freeze_text_encoder = false;
    bool text_self_attention = true;

    size_t effective_fusion_layers() const {
        return variant == ModelVariant::concat_mlp ? 0 : fusion_layers;
    }
    size_t mlp_input_width() const {
        return variant == ModelVariant::text_mlp ? d_bert : 2 * d_model;
    }
    void validate() const; // ConfigError on inconsistency
};

struct PredictionDistribution {
    double mu = 0.0;
    double sigma = 0.0; // >= sqrt(sigma2_min)
};

/// Gaussian NLL, constant term dropped: (1/2B) sum(log sigma_i^2 + (y_i - mu_i)^2 / sigma_i^2).
Tensor nll_loss(Tape& tape, Tensor mu, Tensor sigma, std::span<const double> targets);
Tensor mse_loss(Tape& tape, Tensor mu, std::span<const double> targets);
double nll_value(std::span<const PredictionDistribution> preds, std::span<const double> targets);
double mse_value(std::span<const PredictionDistribution> preds, std::span<const double> targets);

/// The assembled model: graph encoder + text encoder + co-attention fusion +
/// masked average pooling + MLP head predicting (mu, sigma). The two ablation
/// baselines reuse the same machinery via ModelConfig::variant.
class SolarGeco {
public:
    /// Registers and initializes all parameters; the creation order (graph
    /// encoder, text encoder, fusion, head) plus the seed fix the exact
    /// initial values.
    SolarGeco(ModelConfig cfg, size_t vocab_size, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    size_t vocab_size() const { return vocab_size_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    /// The head predicts standardized values; outputs are rescaled as
    /// mu = mean + scale * mu_hat and sigma = scale * softplus(s_raw) +
    /// sqrt(sigma2_min). Stored as frozen parameters (defaults 0, 1), so
    /// checkpoints carry them. Typically set to the training-target mean and
    /// standard deviation before fitting.
    void set_target_stats(double mean, double scale);
    double target_mean() const;
    double target_scale() const;

    struct Output {
        Tensor mu;    // B x 1
        Tensor sigma; // B x 1; constant floor under the mse head
    };

    Output forward(Tape& tape, const DeviceBatch& batch, bool training);
    Tensor loss(Tape& tape, const Output& out, std::span<const double> targets) const;

    /// Eval-mode forward on a private tape.
    std::vector<PredictionDistribution> predict(const DeviceBatch& batch,
                                                uint64_t dropout_stream = 0);

private:
    ModelConfig cfg_;
    size_t vocab_size_;
    ParamStore store_;

    Tensor device_vector(Tape& tape, const DeviceBatch& batch, size_t i, bool training);
};

} // namespace solargeco
