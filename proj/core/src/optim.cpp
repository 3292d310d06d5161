#include "solargeco/optim.hpp"

#include <algorithm>
#include <cmath>

namespace solargeco {

Param& ParamStore::create(const std::string& name, Shape shape, std::vector<double> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    if (shape_numel(shape) != init.size()) {
        throw DimensionError("parameter '" + name + "': shape " + shape_str(shape) +
                             " requires " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(init.size()));
    }
    auto p = std::make_unique<Param>();
    p->name = name;
    p->shape = std::move(shape);
    p->value = std::move(init);
    p->grad.assign(p->value.size(), 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *params_[it->second];
}

Param* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<double> glorot_uniform(Rng& rng, size_t fan_in, size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return v;
}

AdamW::AdamW(ParamStore& params, AdamWConfig config) : params_(params), config_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        const size_t n = params_.all()[i]->value.size();
        m_[i].assign(n, 0.0);
        v_[i].assign(n, 0.0);
    }
}

void AdamW::step() {
    if (m_.size() != params_.size()) {
        throw ContractError("optimizer state does not match parameter store size");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_.all()[i];
        if (!p.trainable) continue;
        const double lr_eff = config_.lr * p.lr_scale;
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p.value[j] -= lr_eff * (m_hat / (std::sqrt(v_hat) + config_.eps) +
                                    config_.weight_decay * p.value[j]);
        }
    }
}

} // namespace solargeco
