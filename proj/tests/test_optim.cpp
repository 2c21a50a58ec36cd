#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dvlm/errors.hpp"
#include "dvlm/optim.hpp"

using namespace dvlm;

namespace {

// Hand-stepped scalar AdamW oracle, independent of the implementation.
double adamw_scalar_oracle(double theta, double g, long step, double lr, double b1, double b2,
                           double eps, double wd) {
    static double m = 0.0, v = 0.0;
    if (step == 1) m = v = 0.0;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, static_cast<double>(step)));
    double vhat = v / (1 - std::pow(b2, static_cast<double>(step)));
    return theta - lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
}

}  // namespace

TEST_CASE("optimizer config validation") {
    OptimizerConfig cfg;
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = OptimizerConfig{};
    cfg.weight_decay = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = OptimizerConfig{};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("adamw single step matches the hand-stepped oracle") {
    ParamStore store;
    Parameter& p = store.add("w", Tensor::scalar(1.0));
    p.tensor().accumulate_grad({0.5});

    OptimizerConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.weight_decay = 0.05;
    adamw_step(store, cfg);

    double expect = adamw_scalar_oracle(1.0, 0.5, 1, 1e-5, 0.9, 0.999, 1e-8, 0.05);
    CHECK(p.tensor().data()[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(p.tensor().data()[0] == doctest::Approx(0.9999895).epsilon(1e-7));
    CHECK(p.optimizer_state()->step == 1);
}

TEST_CASE("adamw is a fixed point at zero gradient without decay") {
    ParamStore store;
    Parameter& p = store.add("w", Tensor::from_data({3}, {1.0, -2.0, 0.5}));
    p.tensor().accumulate_grad({0.0, 0.0, 0.0});
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    auto before = p.tensor().data();
    adamw_step(store, cfg);
    CHECK(p.tensor().data() == before);
}

TEST_CASE("frozen parameters are untouched bytes and state") {
    ParamStore store;
    Parameter& frozen = store.add("frozen", Tensor::from_data({2}, {1.5, -0.5}));
    Parameter& live = store.add("live", Tensor::from_data({2}, {1.0, 1.0}));
    frozen.set_frozen(true);
    live.tensor().accumulate_grad({0.1, 0.2});

    auto before = frozen.tensor().data();
    OptimizerConfig cfg;
    adamw_step(store, cfg);
    CHECK(frozen.tensor().data() == before);
    CHECK(!frozen.optimizer_state().has_value());
    CHECK(live.optimizer_state()->step == 1);
    CHECK(live.tensor().data() != std::vector<double>{1.0, 1.0});
}

TEST_CASE("missing gradient on a trainable parameter names it") {
    ParamStore store;
    store.add("abstractor.proj1.weight", Tensor::scalar(1.0));
    OptimizerConfig cfg;
    CHECK_THROWS_WITH_AS(adamw_step(store, cfg), doctest::Contains("abstractor.proj1.weight"),
                         OptimizerError);
}

TEST_CASE("step counters advance only for updated parameters") {
    ParamStore store;
    Parameter& a = store.add("a", Tensor::scalar(1.0));
    Parameter& b = store.add("b", Tensor::scalar(2.0));
    OptimizerConfig cfg;

    a.tensor().accumulate_grad({0.3});
    b.tensor().accumulate_grad({0.3});
    adamw_step(store, cfg);
    CHECK(a.optimizer_state()->step == 1);
    CHECK(b.optimizer_state()->step == 1);

    b.set_frozen(true);
    a.tensor().zero_grad();
    a.tensor().accumulate_grad({0.3});
    adamw_step(store, cfg);
    CHECK(a.optimizer_state()->step == 2);
    CHECK(b.optimizer_state()->step == 1);
}

TEST_CASE("duplicate parameter names are rejected") {
    ParamStore store;
    store.add("w", Tensor::scalar(0.0));
    CHECK_THROWS_AS(store.add("w", Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("freezing clears requires_grad so gradients are dropped at source") {
    ParamStore store;
    Parameter& p = store.add("w", Tensor::scalar(2.0));
    p.set_frozen(true);
    Tensor loss = mul(p.tensor(), p.tensor());
    backward(loss);
    CHECK(!p.tensor().has_grad());
}
