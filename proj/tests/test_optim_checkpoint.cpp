#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "solargeco/checkpoint.hpp"
#include "solargeco/errors.hpp"
#include "solargeco/optim.hpp"
#include "solargeco/rng.hpp"

using namespace solargeco;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("solargeco_test_" + name);
}

// Independent reference for decoupled-weight-decay Adam with bias correction.
struct RefAdam {
    double lr, b1, b2, eps, wd;
    std::vector<double> m, v;
    uint64_t t = 0;

    void step(std::vector<double>& x, const std::vector<double>& g,
              double lr_scale = 1.0) {
        if (m.empty()) {
            m.assign(x.size(), 0.0);
            v.assign(x.size(), 0.0);
        }
        ++t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            x[i] -= lr * lr_scale * (mh / (std::sqrt(vh) + eps) + wd * x[i]);
        }
    }
};

} // namespace

TEST_CASE("ParamStore registration order, lookup, zero_grad") {
    ParamStore store;
    Param& a = store.create("alpha", {2, 2}, {1, 2, 3, 4});
    Param& b = store.create("beta", {3}, {5, 6, 7});
    CHECK(store.size() == 2);
    CHECK(store.total_values() == 7);
    CHECK(store.all()[0]->name == "alpha");
    CHECK(store.all()[1]->name == "beta");
    CHECK(&store.at("alpha") == &a);
    CHECK(store.find("gamma") == nullptr);
    CHECK(store.contains("beta"));
    CHECK_THROWS_AS((void)store.at("gamma"), ContractError);
    CHECK_THROWS_AS((void)store.create("alpha", {1}, {0.0}), ContractError);
    CHECK_THROWS_AS((void)store.create("bad", {2, 2}, {1.0}), DimensionError);

    CHECK(a.grad.size() == 4); // allocated zero-filled on creation
    a.grad = {1, 1, 1, 1};
    b.grad = {2, 2, 2};
    store.zero_grad();
    for (double g : store.at("alpha").grad) CHECK(g == 0.0);
    for (double g : store.at("beta").grad) CHECK(g == 0.0);
}

TEST_CASE("AdamW matches a hand-rolled reference over several steps") {
    const std::vector<double> x0 = {0.5, -1.25, 2.0, 0.0, -0.75};
    for (double wd : {0.0, 0.02}) {
        CAPTURE(wd);
        ParamStore store;
        Param& p = store.create("w", {5}, x0);
        AdamWConfig cfg;
        cfg.lr = 1e-2;
        cfg.beta1 = 0.9;
        cfg.beta2 = 0.999;
        cfg.eps = 1e-8;
        cfg.weight_decay = wd;
        AdamW opt(store, cfg);
        RefAdam ref{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, wd, {}, {}, 0};
        std::vector<double> xref = x0;

        Rng rng(404);
        for (int s = 0; s < 9; ++s) {
            std::vector<double> g(5);
            for (double& v : g) v = rng.normal() * 0.3;
            p.grad = g;
            opt.step();
            ref.step(xref, g);
            store.zero_grad();
            for (size_t i = 0; i < 5; ++i) {
                CHECK(p.value[i] == doctest::Approx(xref[i]).epsilon(1e-14));
            }
        }
        CHECK(opt.steps_taken() == 9);
    }
}

TEST_CASE("AdamW first-step magnitude is about the learning rate") {
    ParamStore store;
    Param& p = store.create("w", {2}, {0.0, 0.0});
    AdamW opt(store, AdamWConfig{.lr = 5e-3, .beta1 = 0.9, .beta2 = 0.999,
                                 .eps = 1e-8, .weight_decay = 0.0});
    p.grad = {4.0, -1e-3}; // magnitude should not matter
    opt.step();
    CHECK(p.value[0] == doctest::Approx(-5e-3).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(5e-3).epsilon(1e-4));
}

TEST_CASE("AdamW skips frozen parameters and honors lr_scale") {
    ParamStore store;
    Param& live = store.create("live", {2}, {1.0, -1.0});
    Param& slow = store.create("slow", {2}, {1.0, -1.0});
    slow.lr_scale = 0.5;
    Param& frozen = store.create("frozen", {2}, {1.0, -1.0});
    frozen.trainable = false;

    AdamW opt(store, AdamWConfig{.lr = 1e-2, .beta1 = 0.9, .beta2 = 0.999,
                                 .eps = 1e-8, .weight_decay = 0.01});
    live.grad = {0.7, -0.2};
    slow.grad = {0.7, -0.2};
    frozen.grad = {0.7, -0.2};
    opt.step();

    CHECK(frozen.value[0] == 1.0);
    CHECK(frozen.value[1] == -1.0);
    const double d_live = live.value[0] - 1.0;
    const double d_slow = slow.value[0] - 1.0;
    CHECK(d_live != 0.0);
    CHECK(d_slow == doctest::Approx(0.5 * d_live).epsilon(1e-12));
}

TEST_CASE("set_lr changes subsequent step sizes") {
    ParamStore store;
    Param& p = store.create("w", {1}, {0.0});
    AdamW opt(store, AdamWConfig{.lr = 1e-2, .beta1 = 0.0, .beta2 = 0.0,
                                 .eps = 1e-12, .weight_decay = 0.0});
    p.grad = {1.0};
    opt.step();
    const double first = -p.value[0];
    CHECK(first == doctest::Approx(1e-2).epsilon(1e-6));
    opt.set_lr(1e-3);
    CHECK(opt.lr() == 1e-3);
    const double before = p.value[0];
    p.grad = {1.0};
    opt.step();
    CHECK(before - p.value[0] == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("glorot_uniform bounds, determinism, spread") {
    const size_t fan_in = 24, fan_out = 8;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(99);
    const std::vector<double> v = glorot_uniform(rng, fan_in, fan_out);
    REQUIRE(v.size() == fan_in * fan_out);
    double mn = 1e9, mx = -1e9, mean = 0.0;
    for (double x : v) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    CHECK(mn >= -limit);
    CHECK(mx <= limit);
    CHECK(mx > 0.5 * limit);   // actually spreads over the interval
    CHECK(mn < -0.5 * limit);
    CHECK(std::fabs(mean) < 0.25 * limit);

    Rng rng2(99);
    CHECK(glorot_uniform(rng2, fan_in, fan_out) == v);
}

TEST_CASE("checkpoint round-trips config and parameters exactly") {
    const fs::path path = temp_file("roundtrip.ckpt");
    ParamStore store;
    store.create("enc.weight", {3, 2}, {0.1, -0.2, 0.3, -0.4, 1e-300, 12345.6789});
    store.create("enc.bias", {2}, {-1.5, 2.5});
    store.create("scalar", {1}, {42.0});
    const std::string config = R"({"d_model":16,"note":"µ-head"})";

    save_checkpoint(path.string(), store, config);
    const Checkpoint ckpt = read_checkpoint(path.string());
    CHECK(ckpt.config_json == config);
    REQUIRE(ckpt.params.size() == 3);
    CHECK(ckpt.params[0].name == "enc.weight");
    CHECK(ckpt.params[0].shape == Shape{3, 2});
    CHECK(ckpt.params[0].value[4] == 1e-300);
    CHECK(ckpt.params[2].value[0] == 42.0);

    ParamStore fresh;
    fresh.create("enc.weight", {3, 2}, std::vector<double>(6, 0.0));
    fresh.create("enc.bias", {2}, {0.0, 0.0});
    fresh.create("scalar", {1}, {0.0});
    restore_params(ckpt, fresh);
    CHECK(fresh.at("enc.weight").value == store.at("enc.weight").value);
    CHECK(fresh.at("scalar").value[0] == 42.0);
    fs::remove(path);
}

TEST_CASE("checkpoint restore rejects mismatches") {
    const fs::path path = temp_file("mismatch.ckpt");
    ParamStore store;
    store.create("a", {2}, {1.0, 2.0});
    store.create("b", {2}, {3.0, 4.0});
    save_checkpoint(path.string(), store, "{}");
    const Checkpoint ckpt = read_checkpoint(path.string());

    SUBCASE("parameter count differs") {
        ParamStore small;
        small.create("a", {2}, {0.0, 0.0});
        CHECK_THROWS_AS(restore_params(ckpt, small), DataError);
    }
    SUBCASE("name missing from model") {
        ParamStore renamed;
        renamed.create("a", {2}, {0.0, 0.0});
        renamed.create("c", {2}, {0.0, 0.0});
        CHECK_THROWS_AS(restore_params(ckpt, renamed), DataError);
    }
    SUBCASE("shape differs") {
        ParamStore reshaped;
        reshaped.create("a", {2}, {0.0, 0.0});
        reshaped.create("b", {1, 2}, {0.0, 0.0});
        CHECK_THROWS_AS(restore_params(ckpt, reshaped), DataError);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint reader rejects damaged files") {
    CHECK_THROWS_AS((void)read_checkpoint("/nonexistent/nowhere.ckpt"), DataError);

    const fs::path path = temp_file("damaged.ckpt");
    {
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fputs("NOPE----garbage", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS((void)read_checkpoint(path.string()), ParseError);

    // truncated: valid header then cut off mid-parameter
    ParamStore store;
    store.create("w", {64}, std::vector<double>(64, 1.0));
    save_checkpoint(path.string(), store, "{}");
    const auto full = fs::file_size(path);
    fs::resize_file(path, full - 100);
    CHECK_THROWS_AS((void)read_checkpoint(path.string()), ParseError);
    fs::remove(path);
}
