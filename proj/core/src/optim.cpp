#include "dvlm/optim.hpp"

#include <cmath>

#include "dvlm/errors.hpp"

namespace dvlm {

void OptimizerConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 must be in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 must be in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be positive");
}

Parameter::Parameter(std::string name, Tensor tensor) : name_(std::move(name)), tensor_(std::move(tensor)) {
    tensor_.set_requires_grad(true);
}

void Parameter::set_frozen(bool frozen) {
    frozen_ = frozen;
    tensor_.set_requires_grad(!frozen);
}

Parameter& ParamStore::add(const std::string& name, Tensor tensor) {
    if (index_.count(name)) {
        throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
    }
    auto p = std::make_shared<Parameter>(name, std::move(tensor));
    index_[name] = p;
    order_.push_back(p);
    return *order_.back();
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second.get();
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second.get();
}

Parameter& ParamStore::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return *p;
}

size_t ParamStore::total_scalars() const {
    size_t n = 0;
    for (const auto& p : order_) n += p->tensor().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : order_) p->tensor().zero_grad();
}

void adamw_step(ParamStore& params, const OptimizerConfig& config) {
    config.validate();
    for (auto& sp : params.all()) {
        Parameter& p = *sp;
        if (p.frozen()) continue;
        if (!p.tensor().has_grad()) {
            throw OptimizerError("adamw_step: trainable parameter '" + p.name() + "' has no gradient");
        }
        auto& state = p.optimizer_state();
        if (!state) {
            state.emplace();
            state->m.assign(p.tensor().numel(), 0.0);
            state->v.assign(p.tensor().numel(), 0.0);
        }
        state->step += 1;
        const double b1 = config.beta1, b2 = config.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state->step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state->step));
        auto& theta = p.tensor().mutable_data();
        const auto& g = p.tensor().grad();
        for (size_t i = 0; i < theta.size(); ++i) {
            state->m[i] = b1 * state->m[i] + (1.0 - b1) * g[i];
            state->v[i] = b2 * state->v[i] + (1.0 - b2) * g[i] * g[i];
            double mhat = state->m[i] / bc1;
            double vhat = state->v[i] / bc2;
            theta[i] -= config.learning_rate *
                        (mhat / (std::sqrt(vhat) + config.epsilon) + config.weight_decay * theta[i]);
        }
    }
}

}  // namespace dvlm
