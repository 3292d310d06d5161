#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "solargeco/rng.hpp"
#include "solargeco/tensor.hpp"

namespace solargeco {

/// Owns every trainable tensor of a model. Parameters keep registration
/// order, which fixes both optimizer iteration order and checkpoint layout,
/// so runs with the same seed are bit-for-bit reproducible.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Param& create(const std::string& name, Shape shape, std::vector<double> init);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Param* find(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    size_t size() const { return params_.size(); }
    size_t total_values() const;

    void zero_grad();

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, size_t> index_;
};

// Glorot/Xavier uniform draw on [-limit, limit], limit = sqrt(6/(fan_in+fan_out)).
std::vector<double> glorot_uniform(Rng& rng, size_t fan_in, size_t fan_out);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay:
///   param <- param - lr_eff * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
/// where lr_eff = lr * param.lr_scale. Parameters with trainable=false are
/// skipped entirely (no moment updates, no decay).
class AdamW {
public:
    AdamW(ParamStore& params, AdamWConfig config);

    void step();
    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    uint64_t steps_taken() const { return t_; }

private:
    ParamStore& params_;
    AdamWConfig config_;
    uint64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace solargeco
