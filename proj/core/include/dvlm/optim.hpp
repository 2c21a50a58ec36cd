#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dvlm/tensor.hpp"

namespace dvlm {

struct OptimizerConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.05;

    void validate() const;
};

// First/second moment buffers plus the per-parameter step counter.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

// Named, shaped tensor with a trainable/frozen flag. Freezing clears the
// requires_grad flag on the underlying tensor, so gradients for frozen
// parameters are dropped at the source and optimizer state stays untouched.
class Parameter {
public:
    Parameter(std::string name, Tensor tensor);

    const std::string& name() const { return name_; }
    Tensor& tensor() { return tensor_; }
    const Tensor& tensor() const { return tensor_; }
    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen);

    std::optional<AdamState>& optimizer_state() { return opt_; }
    const std::optional<AdamState>& optimizer_state() const { return opt_; }

private:
    std::string name_;
    Tensor tensor_;
    bool frozen_ = false;
    std::optional<AdamState> opt_;
};

// Ordered collection of uniquely named parameters; the order is the
// registration order and is what checkpoints serialize.
class ParamStore {
public:
    Parameter& add(const std::string& name, Tensor tensor);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    size_t size() const { return order_.size(); }
    std::vector<std::shared_ptr<Parameter>>& all() { return order_; }
    const std::vector<std::shared_ptr<Parameter>>& all() const { return order_; }

    size_t total_scalars() const;
    void zero_grad();

private:
    std::vector<std::shared_ptr<Parameter>> order_;
    std::map<std::string, std::shared_ptr<Parameter>> index_;
};

// One AdamW step (bias-corrected moments, decoupled weight decay) over every
// non-frozen parameter. Each trainable parameter must carry a populated grad;
// a missing grad raises OptimizerError naming the parameter. Frozen parameters
// are untouched, including their step counters.
void adamw_step(ParamStore& params, const OptimizerConfig& config);

}  // namespace dvlm
