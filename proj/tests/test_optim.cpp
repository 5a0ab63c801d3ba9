#include <catch_amalgamated.hpp>

#include <cmath>

#include "hclff/optim.hpp"

using hclff::AdamState;
using hclff::ScheduleConfig;
using hclff::Tensor;
using Catch::Approx;

TEST_CASE("adam first step moves by -lr for unit gradient", "[optim]") {
    Tensor<double> theta({1}, {0.0});
    Tensor<double> grad({1}, {1.0});
    AdamState<double> state(theta.shape);
    hclff::adam_step(theta, grad, state, 0.1);
    CHECK(theta[0] == Approx(-0.1).epsilon(1e-7));
    CHECK(state.step_count == 1);
}

TEST_CASE("adam with zero gradient and no decay leaves the parameter", "[optim]") {
    Tensor<double> theta({3}, {1.0, -2.0, 0.5});
    AdamState<double> state(theta.shape);
    state.first_moment.data = {0.3, 0.3, 0.3};
    state.second_moment.data = {0.2, 0.2, 0.2};
    const auto before = theta.data;
    Tensor<double> zero({3});
    hclff::adam_step(theta, zero, state, 0.0);
    CHECK(theta.data == before);
    // moments decay toward zero
    CHECK(state.first_moment[0] == Approx(0.27));
    CHECK(state.second_moment[0] == Approx(0.1998));
}

TEST_CASE("adam matches a hand-unrolled two-step recurrence", "[optim]") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
    Tensor<double> theta({1}, {0.25});
    Tensor<double> grad({1}, {g});
    AdamState<double> state(theta.shape);
    hclff::adam_step(theta, grad, state, lr);
    hclff::adam_step(theta, grad, state, lr);

    double m = 0, v = 0, x = 0.25;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        x -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK(theta[0] == Approx(x).epsilon(1e-12));
}

TEST_CASE("decoupled weight decay shrinks the parameter directly", "[optim]") {
    Tensor<double> theta({1}, {2.0});
    Tensor<double> zero({1});
    AdamState<double> state(theta.shape);
    state.weight_decay = 0.1;
    hclff::adam_step(theta, zero, state, 0.5);
    CHECK(theta[0] == Approx(2.0 - 0.5 * 0.1 * 2.0));

    // coupled decay feeds the moments instead
    Tensor<double> theta2({1}, {2.0});
    AdamState<double> state2(theta2.shape);
    state2.weight_decay = 0.1;
    state2.decoupled_decay = false;
    hclff::adam_step(theta2, zero, state2, 0.5);
    CHECK(state2.first_moment[0] == Approx(0.1 * 0.1 * 2.0));
}

TEST_CASE("adam rejects mismatched shapes", "[optim]") {
    Tensor<double> theta({2});
    Tensor<double> grad({3});
    AdamState<double> state(theta.shape);
    CHECK_THROWS_AS(hclff::adam_step(theta, grad, state, 0.1), hclff::argument_error);
}

TEST_CASE("cosine learning rate endpoints and midpoint", "[optim]") {
    ScheduleConfig cfg;
    cfg.total_epochs = 101;
    cfg.warmup_epochs = 50;
    CHECK(hclff::cosine_lr(0, cfg) == Approx(8e-2));
    CHECK(hclff::cosine_lr(100, cfg) == Approx(2e-4));
    CHECK(hclff::cosine_lr(50, cfg) == Approx(0.0401).epsilon(1e-9));
    CHECK_THROWS_AS(hclff::cosine_lr(101, cfg), hclff::argument_error);
    CHECK_THROWS_AS(hclff::cosine_lr(-1, cfg), hclff::argument_error);
}

TEST_CASE("temperature schedule endpoints", "[optim]") {
    ScheduleConfig cfg;
    cfg.total_epochs = 150;
    CHECK(hclff::tau_schedule(0, cfg) == Approx(0.8));
    CHECK(hclff::tau_schedule(100, cfg) == Approx(0.2));
    CHECK(hclff::tau_schedule(149, cfg) == Approx(0.08));
}

TEST_CASE("both schedules are monotone non-increasing", "[optim]") {
    ScheduleConfig cfg;
    cfg.total_epochs = 137;
    cfg.warmup_epochs = 40;
    double prev_lr = 1e300, prev_tau = 1e300;
    for (int e = 0; e < cfg.total_epochs; ++e) {
        const double lr = hclff::cosine_lr(e, cfg);
        const double tau = hclff::tau_schedule(e, cfg);
        CHECK(lr <= prev_lr + 1e-15);
        CHECK(tau <= prev_tau + 1e-15);
        prev_lr = lr;
        prev_tau = tau;
    }
}

TEST_CASE("schedule config invariants", "[optim]") {
    ScheduleConfig bad;
    bad.total_epochs = 10;
    bad.lr_min = 1.0;
    CHECK_THROWS_AS(bad.validate(), hclff::argument_error);
    ScheduleConfig bad2;
    bad2.total_epochs = 10;
    bad2.warmup_epochs = 20;
    CHECK_THROWS_AS(bad2.validate(), hclff::argument_error);
    ScheduleConfig bad3;
    bad3.total_epochs = 10;
    bad3.warmup_epochs = 5;
    bad3.tau_end = 0.9;
    CHECK_THROWS_AS(bad3.validate(), hclff::argument_error);
}
