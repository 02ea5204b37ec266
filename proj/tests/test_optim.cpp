#include <doctest.h>

#include <cmath>

#include "tabrec/optim.hpp"

using namespace tabrec;

TEST_CASE("adamw leaves parameters alone for zero gradient and zero decay") {
    std::vector<Tensor> params = {Tensor::full({3}, 2.0f, true)};
    params[0].grad();  // zero-filled
    AdamWState state(AdamWConfig{.lr = 0.1f, .weight_decay = 0.0f});
    REQUIRE(!adamw_step(params, state).has_value());
    for (int i = 0; i < 3; ++i) CHECK(params[0].data()[i] == doctest::Approx(2.0f));
}

TEST_CASE("adamw first step with unit gradient moves by about -lr") {
    // Hand evaluation at step 1: m_hat = g, v_hat = g^2, delta = -lr*g/(|g|+eps).
    std::vector<Tensor> params = {Tensor::scalar(0.5f, true)};
    params[0].grad()[0] = 1.0f;
    AdamWState state(AdamWConfig{.lr = 0.1f, .beta1 = 0.9f, .beta2 = 0.999f, .eps = 1e-8f, .weight_decay = 0.0f});
    REQUIRE(!adamw_step(params, state).has_value());
    CHECK(params[0].data()[0] == doctest::Approx(0.4f).epsilon(1e-5));
    CHECK(state.step == 1);
}

TEST_CASE("decoupled weight decay shrinks parameters by lr*wd*p under zero gradient") {
    std::vector<Tensor> params = {Tensor::scalar(4.0f, true)};
    params[0].grad();
    AdamWState state(AdamWConfig{.lr = 0.1f, .weight_decay = 0.1f});
    REQUIRE(!adamw_step(params, state).has_value());
    CHECK(params[0].data()[0] == doctest::Approx(4.0f - 0.1f * 0.1f * 4.0f));
}

TEST_CASE("nan gradient aborts the step with a diagnostic") {
    std::vector<Tensor> params = {Tensor::scalar(1.0f, true)};
    params[0].grad()[0] = std::nanf("");
    AdamWState state;
    auto err = adamw_step(params, state);
    REQUIRE(err.has_value());
    CHECK(err->find("non-finite") != std::string::npos);
    CHECK(params[0].data()[0] == 1.0f);
    CHECK(state.step == 0);
}

TEST_CASE("clip_grad_norm rescales to the requested global norm") {
    std::vector<Tensor> params = {Tensor::zeros({2}, true)};
    params[0].grad() = {3.0f, 4.0f};
    const double norm = clip_grad_norm(params, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(params[0].grad()[0] == doctest::Approx(0.6f));
    CHECK(params[0].grad()[1] == doctest::Approx(0.8f));
}

TEST_CASE("cosine schedule with linear warmup") {
    LrSchedule s{.base_lr = 2.0f, .warmup_steps = 10, .total_steps = 110};
    CHECK(lr_at(s, 0) == doctest::Approx(0.0f));
    CHECK(lr_at(s, 10) == doctest::Approx(2.0f));
    CHECK(lr_at(s, 10 + 50) == doctest::Approx(1.0f));  // cosine midpoint
    CHECK(lr_at(s, 110) == doctest::Approx(0.0f));
    CHECK(lr_at(s, 200) == 0.0f);  // clamped past the end
    CHECK_THROWS_AS(lr_at(LrSchedule{.base_lr = 1.0f, .warmup_steps = 5, .total_steps = 5}, 0), std::invalid_argument);
}
