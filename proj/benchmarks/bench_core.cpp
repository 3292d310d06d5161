// Micro-benchmarks for the hot paths: tape matmul (forward and
// forward+backward), the co-attention fusion stack, periodic neighbor-list
// construction, and whole-model forward / training steps on a synthetic
// batch. Run with --benchmark_filter=<regex> to select a subset.

#include <benchmark/benchmark.h>

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "solargeco/attention.hpp"
#include "solargeco/crystal_graph.hpp"
#include "solargeco/data.hpp"
#include "solargeco/model.hpp"
#include "solargeco/optim.hpp"
#include "solargeco/rng.hpp"
#include "solargeco/structure.hpp"
#include "solargeco/tensor.hpp"

namespace {

using namespace solargeco;

std::vector<double> random_values(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, 0.5);
    return v;
}

// Random triclinic cell at roughly 30 A^3 per atom (perovskite-like density).
CrystalStructure random_structure(size_t num_atoms, uint64_t seed) {
    Rng rng(seed);
    const double side = std::cbrt(30.0 * static_cast<double>(num_atoms));
    CrystalStructure s;
    s.lattice = lattice_from_params(side, 0.94 * side, 1.07 * side, 84.0, 95.0, 78.0);
    s.formula = "bench";
    for (size_t i = 0; i < num_atoms; ++i) {
        s.frac_coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        s.atomic_numbers.push_back(static_cast<uint32_t>(1 + rng.below(82)));
    }
    validate_structure(s);
    return s;
}

// Shared synthetic world for the whole-model benchmarks, built once.
struct BenchWorld {
    Dataset data;
    Vocabulary vocab;
    ModelConfig cfg;
    std::unique_ptr<PreparedDataset> prep;
    DeviceBatch batch;

    BenchWorld() {
        SyntheticSpec spec;
        spec.num_devices = 128;
        spec.num_structures = 8;
        spec.num_configs = 40;
        spec.seed = 7;
        SyntheticData synth = generate_synthetic(spec);
        for (auto& [ref, cell] : synth.structures) data.structures.emplace(ref, std::move(cell));
        data.devices = std::move(synth.devices);

        std::vector<std::string> corpus;
        for (const DeviceRecord& r : data.devices)
            for (const std::string& layer : r.layers) corpus.push_back(layer);
        vocab = Vocabulary::build(corpus, 1);

        cfg.graph.cutoff = 6.0;
        cfg.graph.d_max = 6.0;
        prep = std::make_unique<PreparedDataset>(
            prepare_dataset(data, cfg.graph, vocab, cfg.max_tokens));

        std::vector<std::string> ids;
        for (size_t i = 0; i < 16; ++i) ids.push_back(data.devices[i].device_id);
        batch = build_batch(*prep, ids);
    }
};

const BenchWorld& world() {
    static BenchWorld w;
    return w;
}

void BM_matmul_forward(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0));
    const std::vector<double> a = random_values(n * n, 11);
    const std::vector<double> b = random_values(n * n, 13);
    for (auto _ : state) {
        Tape tape;
        const Tensor out = tape.matmul(tape.constant({n, n}, a), tape.constant({n, n}, b));
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_matmul_forward)->Arg(32)->Arg(64)->Arg(128);

void BM_matmul_train(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0));
    const std::vector<double> a = random_values(n * n, 11);
    const std::vector<double> b = random_values(n * n, 13);
    for (auto _ : state) {
        Tape tape;
        const Tensor ta = tape.leaf({n, n}, a, true);
        const Tensor tb = tape.leaf({n, n}, b, true);
        const Tensor loss = tape.sum(tape.matmul(ta, tb));
        tape.backward(loss);
        benchmark::DoNotOptimize(ta.grad().data());
    }
}
BENCHMARK(BM_matmul_train)->Arg(32)->Arg(64)->Arg(128);

void BM_fusion_stack(benchmark::State& state) {
    const bool training = state.range(0) != 0;
    FusionConfig fc; // library defaults: d 64, 4 heads, 3 layers
    const size_t atoms = 40, tokens = 12;
    ParamStore store;
    Rng rng(21);
    init_fusion_params(store, fc, rng);
    const std::vector<double> h_graph = random_values(atoms * fc.d_node, 31);
    const std::vector<double> h_text = random_values(tokens * fc.d_bert, 37);
    const std::vector<double> node_mask(atoms, 1.0);
    for (auto _ : state) {
        Tape tape(/*dropout_stream=*/99);
        const Tensor g = tape.leaf({atoms, fc.d_node}, h_graph, true);
        const Tensor t = tape.constant({tokens, fc.d_bert}, h_text);
        const auto [g_out, t_out] = fusion_stack(tape, g, t, store, fc, node_mask, training);
        if (training) {
            tape.backward(tape.add(tape.sum(g_out), tape.sum(t_out)));
            store.zero_grad();
        }
        benchmark::DoNotOptimize(g_out.values().data());
        benchmark::DoNotOptimize(t_out.values().data());
    }
}
BENCHMARK(BM_fusion_stack)->Arg(0)->Arg(1)->ArgNames({"train"});

void BM_build_graph(benchmark::State& state) {
    const size_t atoms = static_cast<size_t>(state.range(0));
    const CrystalStructure s = random_structure(atoms, 5);
    GraphConfig gc;
    gc.cutoff = 6.0;
    gc.d_max = 6.0;
    for (auto _ : state) {
        const CrystalGraph g = build_graph(s, gc);
        benchmark::DoNotOptimize(g.edges.data());
    }
}
BENCHMARK(BM_build_graph)->Arg(8)->Arg(40)->Arg(160);

void BM_model_forward(benchmark::State& state) {
    const BenchWorld& w = world();
    SolarGeco model(w.cfg, w.vocab.size(), 3);
    for (auto _ : state) {
        const std::vector<PredictionDistribution> preds = model.predict(w.batch);
        benchmark::DoNotOptimize(preds.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(w.batch.size()));
}
BENCHMARK(BM_model_forward)->Unit(benchmark::kMillisecond);

void BM_model_train_step(benchmark::State& state) {
    const BenchWorld& w = world();
    SolarGeco model(w.cfg, w.vocab.size(), 3);
    model.set_target_stats(13.0, 3.0);
    AdamWConfig oc;
    oc.lr = 1e-3;
    AdamW opt(model.params(), oc);
    uint64_t stream = 1;
    for (auto _ : state) {
        Tape tape(stream++);
        const SolarGeco::Output out = model.forward(tape, w.batch, /*training=*/true);
        const Tensor loss = model.loss(tape, out, w.batch.targets);
        tape.backward(loss);
        opt.step();
        model.params().zero_grad();
        benchmark::DoNotOptimize(loss.scalar());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(w.batch.size()));
}
BENCHMARK(BM_model_train_step)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
