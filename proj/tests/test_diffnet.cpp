#include <algorithm>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "taet/model.hpp"
#include "taet/optimizer.hpp"

using namespace taet;
using taet::testing::random_matrix;
using taet::testing::random_model;

TEST_CASE("tensor validates shapes") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
    Tensor t = Tensor::matrix(2, 3, 1.5);
    CHECK(t.size() == 6);
    CHECK(t(1, 2) == 1.5);
    CHECK(t.shape_string() == "[2x3]");
}

TEST_CASE("model spec validation") {
    CHECK_THROWS_AS(init_model({0, {4}, 3, Activation::relu}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_model({4, {0}, 3, Activation::relu}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_model({4, {4}, 0, Activation::relu}, 1), std::invalid_argument);
}

TEST_CASE("parameter count of [10,64,64,5]") {
    const Model m = init_model({10, {64, 64}, 5, Activation::relu}, 3);
    CHECK(m.parameter_count() == 10 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
    CHECK(m.flat_parameters().size() == m.parameter_count());
}

TEST_CASE("init is seeded and bounded") {
    const ModelSpec spec{6, {8}, 3, Activation::relu};
    const Model a = init_model(spec, 9);
    CHECK(a == init_model(spec, 9));
    CHECK_FALSE(a == init_model(spec, 10));
    for (const auto& layer : a.layers()) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim()));
        for (double w : layer.weight.data()) CHECK(std::abs(w) <= bound);
        for (double b : layer.bias.data()) CHECK(b == 0.0);
    }
}

TEST_CASE("forward matches a hand-computed network") {
    // 2 -> 2 (relu) -> 2
    Layer l1{Tensor({2, 2}, {1.0, -1.0, 0.5, 2.0}), Tensor({2}, {0.0, -1.0})};
    Layer l2{Tensor({2, 2}, {1.0, 1.0, -1.0, 3.0}), Tensor({2}, {0.5, 0.0})};
    const Model m({2, {2}, 2, Activation::relu}, {l1, l2});
    const Tensor x({1, 2}, {1.0, 2.0});
    // hidden pre = [1-2, 0.5+4-1] = [-1, 3.5] -> relu [0, 3.5]
    const Tensor z = forward(m, x);
    CHECK(z(0, 0) == 0.0 + 3.5 + 0.5);
    CHECK(z(0, 1) == 0.0 + 10.5 + 0.0);
}

TEST_CASE("forward rejects mismatched input width") {
    const Model m = init_model({3, {4}, 2, Activation::relu}, 1);
    CHECK_THROWS_AS(forward(m, Tensor::matrix(2, 4)), std::invalid_argument);
}

TEST_CASE("non-finite inputs are reported with the layer index") {
    const Model m = init_model({2, {3}, 2, Activation::relu}, 1);
    Tensor x = Tensor::matrix(1, 2);
    x[0] = std::numeric_limits<double>::infinity();
    try {
        forward(m, x);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
}

TEST_CASE("linear model gradient is the closed form (softmax - onehot) x") {
    std::mt19937_64 rng(5);
    const Model m = random_model({3, {}, 4, Activation::relu}, rng);
    const Tensor x = random_matrix(1, 3, rng);
    const std::vector<Label> y{2};
    const auto g = loss_and_grads(m, x, y, loss::CrossEntropy{});
    const Tensor z = forward(m, x);
    double zmax = z[0];
    for (double v : z.data()) zmax = std::max(zmax, v);
    std::vector<double> p(4);
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += p[c] = std::exp(z[c] - zmax);
    for (std::size_t c = 0; c < 4; ++c) {
        const double d = p[c] / s - (c == 2 ? 1.0 : 0.0);
        CHECK(g.param_grads[0].bias[c] == doctest::Approx(d).epsilon(1e-12));
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(g.param_grads[0].weight(c, j) == doctest::Approx(d * x[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("gradients match central differences for every loss") {
    std::mt19937_64 rng(17);
    testing::GradCheck check;
    for (int trial = 0; trial < 6; ++trial) {
        const ModelSpec spec{4, {5, 3}, 3, Activation::relu};
        const Model m = random_model(spec, rng);
        const Tensor x = random_matrix(6, 4, rng);
        const auto y = testing::random_labels(6, 3, rng);
        const LossSelector losses[] = {loss::CrossEntropy{}, loss::BalancedSoftmax{{{50, 10, 5}, 1.0}},
                                       loss::Hierarchical{}};
        testing::gradient_check(m, x, y, losses[trial % 3], check);
    }
    std::sort(check.errors.begin(), check.errors.end());
    CHECK(check.errors.back() < 1e-3);
    CHECK(check.errors[check.errors.size() / 2] < 1e-4);
}

TEST_CASE("gradient request controls what is computed") {
    const Model m = init_model({3, {4}, 2, Activation::relu}, 2);
    const Tensor x = Tensor::matrix(2, 3, 0.5);
    const std::vector<Label> y{0, 1};
    const auto only_inputs = loss_and_grads(m, x, y, loss::CrossEntropy{}, {.params = false, .inputs = true});
    CHECK(only_inputs.param_grads.empty());
    CHECK(only_inputs.input_grads.same_shape(x));
    const auto only_params = loss_and_grads(m, x, y, loss::CrossEntropy{}, {.params = true, .inputs = false});
    CHECK(only_params.input_grads.empty());
    CHECK(only_params.param_grads.size() == 2);
}

TEST_CASE("predicted classes break ties toward the lowest index") {
    const Tensor z({2, 3}, {1.0, 2.0, 2.0, 5.0, 5.0, 5.0});
    CHECK(predicted_classes(z) == std::vector<Label>{1, 0});
}

TEST_CASE("sgd update matches the hand recurrence") {
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.5, 0.25};
    std::vector<double> v{0.1, 0.0};
    sgd_update(p, g, v, 0.1, 0.9, 0.01);
    const double v0 = 0.9 * 0.1 + 0.5 + 0.01 * 1.0;
    const double v1 = 0.0 + 0.25 + 0.01 * -2.0;
    CHECK(v[0] == v0);
    CHECK(v[1] == v1);
    CHECK(p[0] == 1.0 - 0.1 * v0);
    CHECK(p[1] == -2.0 - 0.1 * v1);
}

TEST_CASE("step decay schedule") {
    const LrSchedule s{0.1, {75, 90}, 10.0};
    CHECK(lr_at_epoch(s, 0) == 0.1);
    CHECK(lr_at_epoch(s, 74) == 0.1);
    CHECK(lr_at_epoch(s, 75) == 0.1 / 10.0);
    CHECK(lr_at_epoch(s, 90) == 0.1 / 100.0);
    CHECK_THROWS_AS((LrSchedule{0.1, {50, 20}, 10.0}.validate()), std::invalid_argument);
}
