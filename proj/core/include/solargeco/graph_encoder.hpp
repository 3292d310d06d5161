#pragma once

#include "solargeco/crystal_graph.hpp"
#include "solargeco/optim.hpp"
#include "solargeco/tensor.hpp"

namespace solargeco {

struct GraphEncoderConfig {
    size_t d_node = 64;
    size_t num_conv_layers = 3;
    size_t d_edge = 40; // must match GraphConfig::num_centers
};

/// Registers the encoder parameters: an atom embedding table indexed by
/// atomic number plus, per convolution layer, gate/filter weights over the
/// concatenated [h_i; h_j; e_ij] (width 2*d_node + d_edge) and their biases.
/// Names are "graph.embed" and "graph.conv{l}.{w_gate,b_gate,w_filter,b_filter}".
void init_graph_encoder_params(ParamStore& store, const GraphEncoderConfig& cfg, Rng& rng);

/// Per-atom features after the convolution stack (no pooling):
///   h_i <- h_i + sum_j sigmoid(z_ij W_gate + b_gate) ⊙ softplus(z_ij W_filter + b_filter)
/// with z_ij = [h_i; h_j; e_ij]. Initial h rows are embedding lookups by
/// atomic number. A graph with no edges passes embeddings through unchanged.
Tensor encode_graph(Tape& tape, const CrystalGraph& g, ParamStore& store,
                    const GraphEncoderConfig& cfg);

} // namespace solargeco
