#include "solargeco/graph_encoder.hpp"

#include <array>

#include "solargeco/elements.hpp"

namespace solargeco {

void init_graph_encoder_params(ParamStore& store, const GraphEncoderConfig& cfg, Rng& rng) {
    const size_t rows = kMaxAtomicNumber + 1; // index by atomic number, row 0 unused
    store.create("graph.embed", {rows, cfg.d_node}, glorot_uniform(rng, rows, cfg.d_node));
    const size_t z_width = 2 * cfg.d_node + cfg.d_edge;
    for (size_t l = 0; l < cfg.num_conv_layers; ++l) {
        const std::string p = "graph.conv" + std::to_string(l);
        store.create(p + ".w_gate", {z_width, cfg.d_node},
                     glorot_uniform(rng, z_width, cfg.d_node));
        store.create(p + ".b_gate", {cfg.d_node}, std::vector<double>(cfg.d_node, 0.0));
        store.create(p + ".w_filter", {z_width, cfg.d_node},
                     glorot_uniform(rng, z_width, cfg.d_node));
        store.create(p + ".b_filter", {cfg.d_node}, std::vector<double>(cfg.d_node, 0.0));
    }
}

Tensor encode_graph(Tape& tape, const CrystalGraph& g, ParamStore& store,
                    const GraphEncoderConfig& cfg) {
    if (g.num_atoms == 0) throw ContractError("encode_graph: graph has no atoms");
    if (g.d_edge != cfg.d_edge) {
        throw DimensionError("encode_graph: graph edge features have width " +
                             std::to_string(g.d_edge) + " but the encoder expects " +
                             std::to_string(cfg.d_edge));
    }

    Tensor embed = tape.param(store.at("graph.embed"));
    Tensor h = tape.gather_rows(embed, g.atomic_numbers);
    if (g.num_edges() == 0 || cfg.num_conv_layers == 0) return h;

    Tensor edge_feats = tape.constant({g.num_edges(), g.d_edge}, g.edge_features);
    for (size_t l = 0; l < cfg.num_conv_layers; ++l) {
        const std::string p = "graph.conv" + std::to_string(l);
        Tensor h_src = tape.gather_rows(h, g.edge_src);
        Tensor h_dst = tape.gather_rows(h, g.edge_dst);
        const std::array<Tensor, 3> parts{h_src, h_dst, edge_feats};
        Tensor z = tape.concat_cols(parts);
        Tensor gate = tape.sigmoid(
            tape.add(tape.matmul(z, tape.param(store.at(p + ".w_gate"))),
                     tape.param(store.at(p + ".b_gate"))));
        Tensor filt = tape.softplus(
            tape.add(tape.matmul(z, tape.param(store.at(p + ".w_filter"))),
                     tape.param(store.at(p + ".b_filter"))));
        Tensor msg = tape.mul(gate, filt);
        h = tape.add(h, tape.segment_sum_rows(msg, g.edge_src, g.num_atoms));
    }
    return h;
}

} // namespace solargeco
