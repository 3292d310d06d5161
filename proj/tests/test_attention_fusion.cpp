#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "solargeco/attention.hpp"
#include "solargeco/crystal_graph.hpp"
#include "solargeco/errors.hpp"
#include "solargeco/graph_encoder.hpp"
#include "solargeco/rng.hpp"
#include "solargeco/structure.hpp"

using namespace solargeco;

namespace {

std::vector<double> randu(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

} // namespace

TEST_CASE("attention equals the hand-computed softmax combination") {
    // single query, two keys, d_k = 1: weights softmax([q*k1, q*k2] / 1)
    Tape t;
    Tensor q = t.constant({1, 1}, {2.0});
    Tensor k = t.constant({2, 1}, {0.0, std::log(2.0) / 2.0});
    Tensor v = t.constant({2, 1}, {10.0, 30.0});
    Tensor out = t.constant({1, 1}, {0.0});
    Tensor weights;
    out = attention(t, q, k, v, {}, 0.0, false, &weights);
    // logits {0, log 2} -> weights {1/3, 2/3}
    CHECK(weights.values()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(weights.values()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(out.values()[0] ==
          doctest::Approx(10.0 / 3.0 + 2.0 * 30.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("attention rows are convex combinations; masked keys get zero") {
    Tape t;
    const size_t nq = 3, nk = 5, dk = 4;
    Tensor q = t.constant({nq, dk}, randu(nq * dk, 1));
    Tensor k = t.constant({nk, dk}, randu(nk * dk, 2));
    Tensor v = t.constant({nk, 2}, randu(nk * 2, 3));
    const std::vector<double> mask = {1, 0, 1, 1, 0};
    Tensor weights;
    (void)attention(t, q, k, v, mask, 0.0, false, &weights);
    REQUIRE(weights.rows() == nq);
    REQUIRE(weights.cols() == nk);
    for (size_t r = 0; r < nq; ++r) {
        double sum = 0.0;
        for (size_t c = 0; c < nk; ++c) {
            const double w = weights.values()[r * nk + c];
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
        CHECK(weights.values()[r * nk + 1] == 0.0);
        CHECK(weights.values()[r * nk + 4] == 0.0);
    }
}

TEST_CASE("attention applies the 1/sqrt(d_k) scaling") {
    // with d_k = 4 and q = k = [1,1,1,1] vs zero key: logit gap = 4 / 2 = 2
    Tape t;
    Tensor q = t.constant({1, 4}, {1, 1, 1, 1});
    Tensor k = t.constant({2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
    Tensor v = t.constant({2, 1}, {1.0, 0.0});
    Tensor weights;
    (void)attention(t, q, k, v, {}, 0.0, false, &weights);
    const double want = std::exp(2.0) / (std::exp(2.0) + 1.0);
    CHECK(weights.values()[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("attention gradient check") {
    const size_t nq = 2, nk = 3, dk = 3;
    const std::vector<double> kv = randu(nk * dk, 12);
    const std::vector<double> vv = randu(nk * dk, 13);
    auto expr = [&](Tape& t, Tensor q) {
        Tensor k = t.constant({nk, dk}, kv);
        Tensor v = t.constant({nk, dk}, vv);
        const std::vector<double> mask = {1, 1, 0};
        Tensor out = attention(t, q, k, v, mask);
        Tensor w = t.constant({nq, dk}, randu(nq * dk, 14));
        return t.sum(t.mul(out, w));
    };
    const fdcheck::Report r = fdcheck::check_expr({nq, dk}, randu(nq * dk, 11), expr);
    CAPTURE(r.worst.element);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("multi_head shapes, determinism, and masked-key invariance") {
    MultiHeadConfig cfg;
    cfg.d_model = 12;
    cfg.heads = 3;
    ParamStore store;
    Rng rng(5);
    init_multihead_params(store, "blk", cfg, rng);
    CHECK(store.contains("blk.h0.wq"));
    CHECK(store.contains("blk.h2.wv"));
    CHECK(store.contains("blk.wo"));
    CHECK(store.at("blk.wo").shape == Shape{12, 12});
    CHECK(store.at("blk.h0.wq").shape == Shape{12, 4});

    const std::vector<double> qv = randu(2 * 12, 31);
    std::vector<double> kv = randu(4 * 12, 32);
    const std::vector<double> mask = {1, 0, 1, 1};

    auto run = [&](const std::vector<double>& keys) {
        Tape t;
        Tensor q = t.constant({2, 12}, qv);
        Tensor k = t.constant({4, 12}, keys);
        Tensor out = multi_head(t, q, k, k, store, "blk", cfg, mask);
        REQUIRE(out.rows() == 2);
        REQUIRE(out.cols() == 12);
        return std::vector<double>(out.values().begin(), out.values().end());
    };
    const std::vector<double> base = run(kv);
    CHECK(run(kv) == base); // deterministic

    // perturbing a masked key row must not change anything
    for (size_t c = 0; c < 12; ++c) kv[1 * 12 + c] += 5.0;
    const std::vector<double> perturbed = run(kv);
    for (size_t i = 0; i < base.size(); ++i) {
        CHECK(perturbed[i] == doctest::Approx(base[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(
        (void)init_multihead_params(store, "bad",
                                    MultiHeadConfig{.d_model = 10, .heads = 3}, rng),
        ConfigError);
}

TEST_CASE("multi_head parameter gradients") {
    MultiHeadConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    ParamStore store;
    Rng rng(6);
    init_multihead_params(store, "blk", cfg, rng);
    const std::vector<double> qv = randu(3 * 8, 41);
    const std::vector<double> kv = randu(2 * 8, 42);
    auto loss = [&](Tape& t) {
        Tensor q = t.constant({3, 8}, qv);
        Tensor k = t.constant({2, 8}, kv);
        Tensor out = multi_head(t, q, k, k, store, "blk", cfg, {});
        Tensor w = t.constant({3, 8}, randu(24, 43));
        return t.sum(t.mul(out, w));
    };
    Rng probe_rng(7);
    const fdcheck::Report r = fdcheck::check_params(store, loss, probe_rng, 60);
    CAPTURE(r.worst.param);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("fusion stack shapes and padded-row inertness") {
    FusionConfig cfg;
    cfg.d_node = 6;
    cfg.d_bert = 5;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.dropout = 0.0;
    ParamStore store;
    Rng rng(9);
    init_fusion_params(store, cfg, rng);
    CHECK(store.contains("fusion.in_graph"));
    CHECK(store.contains("fusion.l1.text_cross.h1.wk"));

    const size_t n_nodes = 4;
    std::vector<double> gv = randu(n_nodes * cfg.d_node, 51);
    const std::vector<double> tv = randu(4 * cfg.d_bert, 52);
    const std::vector<double> node_mask = {1, 1, 1, 0}; // last row is padding

    auto run = [&](const std::vector<double>& graph_rows) {
        Tape t;
        Tensor g = t.constant({n_nodes, cfg.d_node}, graph_rows);
        Tensor x = t.constant({4, cfg.d_bert}, tv);
        auto [go, to] = fusion_stack(t, g, x, store, cfg, node_mask, false);
        REQUIRE(go.rows() == n_nodes);
        REQUIRE(go.cols() == cfg.d_model);
        REQUIRE(to.rows() == 4);
        REQUIRE(to.cols() == cfg.d_model);
        std::vector<double> all(go.values().begin(), go.values().end());
        all.insert(all.end(), to.values().begin(), to.values().end());
        return all;
    };

    const std::vector<double> base = run(gv);
    // padded graph row must not influence valid graph rows or the text branch
    for (size_t c = 0; c < cfg.d_node; ++c) gv[3 * cfg.d_node + c] = 7.25 + 0.3 * c;
    const std::vector<double> changed = run(gv);
    for (size_t i = 0; i < 3 * cfg.d_model; ++i) { // valid graph rows
        CHECK(changed[i] == doctest::Approx(base[i]).epsilon(1e-11));
    }
    for (size_t i = n_nodes * cfg.d_model; i < base.size(); ++i) { // text rows
        CHECK(changed[i] == doctest::Approx(base[i]).epsilon(1e-11));
    }
}

TEST_CASE("zero fusion layers reduces to the input projections") {
    FusionConfig cfg;
    cfg.d_node = 3;
    cfg.d_bert = 4;
    cfg.d_model = 5;
    cfg.heads = 1;
    cfg.layers = 0;
    ParamStore store;
    Rng rng(13);
    init_fusion_params(store, cfg, rng);
    CHECK_FALSE(store.contains("fusion.l0.graph_self.h0.wq"));

    Tape t;
    const std::vector<double> gv = randu(2 * 3, 61);
    const std::vector<double> tv = randu(4 * 4, 62);
    Tensor g = t.constant({2, 3}, gv);
    Tensor x = t.constant({4, 4}, tv);
    const std::vector<double> node_mask = {1, 1};
    auto [go, to] = fusion_stack(t, g, x, store, cfg, node_mask, false);

    Tensor manual_g = t.matmul(g, t.param(store.at("fusion.in_graph")));
    Tensor manual_t = t.matmul(x, t.param(store.at("fusion.in_text")));
    for (size_t i = 0; i < 2 * 5; ++i) {
        CHECK(go.values()[i] == doctest::Approx(manual_g.values()[i]).epsilon(1e-14));
    }
    for (size_t i = 0; i < 4 * 5; ++i) {
        CHECK(to.values()[i] == doctest::Approx(manual_t.values()[i]).epsilon(1e-14));
    }
}

TEST_CASE("fusion parameter gradients (with dropout active)") {
    FusionConfig cfg;
    cfg.d_node = 4;
    cfg.d_bert = 4;
    cfg.d_model = 6;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.dropout = 0.15;
    ParamStore store;
    Rng rng(17);
    init_fusion_params(store, cfg, rng);

    const std::vector<double> gv = randu(3 * 4, 71);
    const std::vector<double> tv = randu(4 * 4, 72);
    const std::vector<double> node_mask = {1, 1, 0};
    auto loss = [&](Tape& t) {
        Tensor g = t.constant({3, 4}, gv);
        Tensor x = t.constant({4, 4}, tv);
        auto [go, to] = fusion_stack(t, g, x, store, cfg, node_mask, true);
        Tensor wg = t.constant({3, 6}, randu(18, 73));
        Tensor wt = t.constant({4, 6}, randu(24, 74));
        return t.add(t.sum(t.mul(go, wg)), t.sum(t.mul(to, wt)));
    };
    Rng probe_rng(19);
    const fdcheck::Report r = fdcheck::check_params(store, loss, probe_rng, 80, 1e-5,
                                                    /*stream=*/55);
    CAPTURE(r.worst.param);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("graph encoder: shapes, no-edge passthrough, gradients") {
    GraphEncoderConfig cfg;
    cfg.d_node = 6;
    cfg.num_conv_layers = 2;
    cfg.d_edge = 5;

    CrystalStructure s;
    s.lattice = lattice_from_params(4.1, 4.1, 4.1, 90, 90, 90);
    s.frac_coords = {{0, 0, 0}, {0.5, 0.5, 0.5}};
    s.atomic_numbers = {55, 17};
    s.formula = "CsCl";
    GraphConfig gcfg;
    gcfg.cutoff = 5.0;
    gcfg.max_neighbors = 8;
    gcfg.num_centers = cfg.d_edge;
    const CrystalGraph g = build_graph(s, gcfg);
    REQUIRE(g.num_edges() > 0);

    ParamStore store;
    Rng rng(23);
    init_graph_encoder_params(store, cfg, rng);
    CHECK(store.contains("graph.embed"));
    CHECK(store.contains("graph.conv1.w_filter"));
    CHECK(store.at("graph.conv0.w_gate").shape ==
          Shape{2 * cfg.d_node + cfg.d_edge, cfg.d_node});

    Tape t;
    Tensor h = encode_graph(t, g, store, cfg);
    CHECK(h.rows() == 2);
    CHECK(h.cols() == cfg.d_node);

    // no edges: embeddings pass through unchanged
    CrystalGraph empty;
    empty.num_atoms = 2;
    empty.atomic_numbers = {55, 17};
    empty.d_edge = cfg.d_edge;
    Tape t2;
    Tensor h0 = encode_graph(t2, empty, store, cfg);
    const Param& emb = store.at("graph.embed");
    for (size_t i = 0; i < 2; ++i) {
        const size_t z = s.atomic_numbers[i];
        for (size_t c = 0; c < cfg.d_node; ++c) {
            CHECK(h0.values()[i * cfg.d_node + c] ==
                  doctest::Approx(emb.value[z * cfg.d_node + c]).epsilon(1e-14));
        }
    }

    auto loss = [&](Tape& tp) {
        Tensor out = encode_graph(tp, g, store, cfg);
        Tensor w = tp.constant({2, cfg.d_node}, randu(2 * cfg.d_node, 81));
        return tp.sum(tp.mul(out, w));
    };
    Rng probe_rng(29);
    const fdcheck::Report r = fdcheck::check_params(store, loss, probe_rng, 60);
    CAPTURE(r.worst.param);
    CHECK(r.max_rel_err < 1e-4);
}
