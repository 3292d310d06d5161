#pragma once

#include <span>
#include <string>

#include "solargeco/optim.hpp"
#include "solargeco/tensor.hpp"

namespace solargeco {

/// Scaled dot-product attention: softmax_rows(Q K^T / sqrt(d_k)) V, with
/// masked key columns receiving exactly zero weight. Empty key_mask means all
/// keys are valid. attn_dropout > 0 in training mode drops attention weights.
/// If weights_out is non-null it receives the (post-dropout) weight matrix.
Tensor attention(Tape& tape, Tensor q, Tensor k, Tensor v,
                 std::span<const double> key_mask, double attn_dropout = 0.0,
                 bool training = false, Tensor* weights_out = nullptr);

struct MultiHeadConfig {
    size_t d_model = 64;
    size_t heads = 4; // d_k = d_v = d_model / heads
};

/// Registers one multi-head block under `prefix`: per head i the projections
/// "{prefix}.h{i}.{wq,wk,wv}" (d_model x d_k) plus "{prefix}.wo"
/// (heads*d_k x d_model).
void init_multihead_params(ParamStore& store, const std::string& prefix,
                           const MultiHeadConfig& cfg, Rng& rng);

/// Heads run scaled dot-product attention on their own projections; outputs
/// are concatenated and passed through the output projection.
Tensor multi_head(Tape& tape, Tensor q_in, Tensor k_in, Tensor v_in, ParamStore& store,
                  const std::string& prefix, const MultiHeadConfig& cfg,
                  std::span<const double> key_mask, double attn_dropout = 0.0,
                  bool training = false);

struct FusionConfig {
    size_t d_node = 64; // graph branch input width
    size_t d_bert = 64; // text branch input width
    size_t d_model = 64;
    size_t heads = 4;
    size_t layers = 3; // 0 disables fusion: input projections only
    double dropout = 0.2;
    double norm_eps = 1e-5;
};

/// Registers the fusion stack: input projections "fusion.in_graph"
/// (d_node x d_model) and "fusion.in_text" (d_bert x d_model), then per layer
/// l four attention blocks "fusion.l{l}.{graph_self,text_self,graph_cross,
/// text_cross}" each with "norm_{gain,bias}".
void init_fusion_params(ParamStore& store, const FusionConfig& cfg, Rng& rng);

/// One fusion layer. Per branch, post-norm self-attention
///   H' = norm(H + MHA(H, H, H));
/// then bidirectional cross-attention where BOTH branches read the other
/// branch's post-self-attention tensor:
///   G_out = norm(G' + MHA(G', T', T')),  T_out = norm(T' + MHA(T', G', G')).
/// node_mask marks valid (1) vs padded (0) graph rows; it masks graph keys in
/// graph self-attention and in the text branch's cross-attention.
std::pair<Tensor, Tensor> fusion_layer(Tape& tape, Tensor h_graph, Tensor h_text,
                                       ParamStore& store, const std::string& prefix,
                                       const FusionConfig& cfg,
                                       std::span<const double> node_mask, bool training);

/// Input projections followed by `layers` fusion layers.
std::pair<Tensor, Tensor> fusion_stack(Tape& tape, Tensor h_graph_raw, Tensor h_text_raw,
                                       ParamStore& store, const FusionConfig& cfg,
                                       std::span<const double> node_mask, bool training);

/// Debug dump of an attention-weight matrix as CSV rows.
void write_attention_csv(const std::string& path, const Tensor& weights);

} // namespace solargeco
