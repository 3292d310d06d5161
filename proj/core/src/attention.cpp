#include "solargeco/attention.hpp"

#include <cmath>
#include <fstream>
#include <vector>

namespace solargeco {

Tensor attention(Tape& tape, Tensor q, Tensor k, Tensor v,
                 std::span<const double> key_mask, double attn_dropout, bool training,
                 Tensor* weights_out) {
    if (q.cols() != k.cols()) {
        throw DimensionError("attention: query width " + std::to_string(q.cols()) +
                             " != key width " + std::to_string(k.cols()));
    }
    if (k.rows() != v.rows()) {
        throw DimensionError("attention: " + std::to_string(k.rows()) + " keys vs " +
                             std::to_string(v.rows()) + " value rows");
    }
    Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                               1.0 / std::sqrt(static_cast<double>(q.cols())));
    Tensor weights = key_mask.empty() ? tape.softmax_rows(scores)
                                      : tape.softmax_rows_masked(scores, key_mask);
    if (attn_dropout > 0.0) weights = tape.dropout(weights, attn_dropout, training);
    if (weights_out) *weights_out = weights;
    return tape.matmul(weights, v);
}

void init_multihead_params(ParamStore& store, const std::string& prefix,
                           const MultiHeadConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
        throw ConfigError("multi-head block '" + prefix + "': d_model " +
                          std::to_string(cfg.d_model) + " is not divisible by heads " +
                          std::to_string(cfg.heads));
    }
    const size_t d_k = cfg.d_model / cfg.heads;
    for (size_t i = 0; i < cfg.heads; ++i) {
        const std::string h = prefix + ".h" + std::to_string(i);
        store.create(h + ".wq", {cfg.d_model, d_k}, glorot_uniform(rng, cfg.d_model, d_k));
        store.create(h + ".wk", {cfg.d_model, d_k}, glorot_uniform(rng, cfg.d_model, d_k));
        store.create(h + ".wv", {cfg.d_model, d_k}, glorot_uniform(rng, cfg.d_model, d_k));
    }
    store.create(prefix + ".wo", {cfg.heads * d_k, cfg.d_model},
                 glorot_uniform(rng, cfg.heads * d_k, cfg.d_model));
}

Tensor multi_head(Tape& tape, Tensor q_in, Tensor k_in, Tensor v_in, ParamStore& store,
                  const std::string& prefix, const MultiHeadConfig& cfg,
                  std::span<const double> key_mask, double attn_dropout, bool training) {
    std::vector<Tensor> heads;
    heads.reserve(cfg.heads);
    for (size_t i = 0; i < cfg.heads; ++i) {
        const std::string h = prefix + ".h" + std::to_string(i);
        Tensor qi = tape.matmul(q_in, tape.param(store.at(h + ".wq")));
        Tensor ki = tape.matmul(k_in, tape.param(store.at(h + ".wk")));
        Tensor vi = tape.matmul(v_in, tape.param(store.at(h + ".wv")));
        heads.push_back(attention(tape, qi, ki, vi, key_mask, attn_dropout, training));
    }
    Tensor concat = tape.concat_cols(heads);
    return tape.matmul(concat, tape.param(store.at(prefix + ".wo")));
}

namespace {
const char* kBlockNames[4] = {"graph_self", "text_self", "graph_cross", "text_cross"};
} // namespace

void init_fusion_params(ParamStore& store, const FusionConfig& cfg, Rng& rng) {
    store.create("fusion.in_graph", {cfg.d_node, cfg.d_model},
                 glorot_uniform(rng, cfg.d_node, cfg.d_model));
    store.create("fusion.in_text", {cfg.d_bert, cfg.d_model},
                 glorot_uniform(rng, cfg.d_bert, cfg.d_model));
    const MultiHeadConfig mh{cfg.d_model, cfg.heads};
    for (size_t l = 0; l < cfg.layers; ++l) {
        for (const char* block : kBlockNames) {
            const std::string p = "fusion.l" + std::to_string(l) + "." + block;
            init_multihead_params(store, p, mh, rng);
            store.create(p + ".norm_gain", {cfg.d_model}, std::vector<double>(cfg.d_model, 1.0));
            store.create(p + ".norm_bias", {cfg.d_model}, std::vector<double>(cfg.d_model, 0.0));
        }
    }
}

namespace {

// norm(residual + dropout(sublayer)) with the block's own gain/bias.
Tensor add_norm(Tape& tape, Tensor residual, Tensor sublayer, ParamStore& store,
                const std::string& block_prefix, const FusionConfig& cfg, bool training) {
    Tensor dropped = cfg.dropout > 0.0 ? tape.dropout(sublayer, cfg.dropout, training)
                                       : sublayer;
    return tape.layer_norm(tape.add(residual, dropped),
                           tape.param(store.at(block_prefix + ".norm_gain")),
                           tape.param(store.at(block_prefix + ".norm_bias")), cfg.norm_eps);
}

} // namespace

std::pair<Tensor, Tensor> fusion_layer(Tape& tape, Tensor h_graph, Tensor h_text,
                                       ParamStore& store, const std::string& prefix,
                                       const FusionConfig& cfg,
                                       std::span<const double> node_mask, bool training) {
    const MultiHeadConfig mh{cfg.d_model, cfg.heads};
    const std::span<const double> no_mask;

    const std::string gs = prefix + ".graph_self";
    Tensor g_self = multi_head(tape, h_graph, h_graph, h_graph, store, gs, mh, node_mask,
                               cfg.dropout, training);
    Tensor g1 = add_norm(tape, h_graph, g_self, store, gs, cfg, training);

    const std::string ts = prefix + ".text_self";
    Tensor t_self = multi_head(tape, h_text, h_text, h_text, store, ts, mh, no_mask,
                               cfg.dropout, training);
    Tensor t1 = add_norm(tape, h_text, t_self, store, ts, cfg, training);

    // Both cross blocks read the same post-self-attention tensors.
    const std::string gc = prefix + ".graph_cross";
    Tensor g_cross = multi_head(tape, g1, t1, t1, store, gc, mh, no_mask, cfg.dropout,
                                training);
    Tensor g2 = add_norm(tape, g1, g_cross, store, gc, cfg, training);

    const std::string tc = prefix + ".text_cross";
    Tensor t_cross = multi_head(tape, t1, g1, g1, store, tc, mh, node_mask, cfg.dropout,
                                training);
    Tensor t2 = add_norm(tape, t1, t_cross, store, tc, cfg, training);

    return {g2, t2};
}

std::pair<Tensor, Tensor> fusion_stack(Tape& tape, Tensor h_graph_raw, Tensor h_text_raw,
                                       ParamStore& store, const FusionConfig& cfg,
                                       std::span<const double> node_mask, bool training) {
    Tensor hg = tape.matmul(h_graph_raw, tape.param(store.at("fusion.in_graph")));
    Tensor ht = tape.matmul(h_text_raw, tape.param(store.at("fusion.in_text")));
    for (size_t l = 0; l < cfg.layers; ++l) {
        std::tie(hg, ht) = fusion_layer(tape, hg, ht, store,
                                        "fusion.l" + std::to_string(l), cfg, node_mask,
                                        training);
    }
    return {hg, ht};
}

void write_attention_csv(const std::string& path, const Tensor& weights) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open attention dump for writing: " + path);
    const auto vals = weights.values();
    const size_t m = weights.rows(), n = weights.cols();
    os.precision(17);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (j) os << ',';
            os << vals[i * n + j];
        }
        os << '\n';
    }
    if (!os) throw DataError("failed writing attention dump: " + path);
}

} // namespace solargeco
