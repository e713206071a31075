#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "taet/losses.hpp"

using namespace taet;

namespace {

ClassLossVector vec(std::vector<double> losses) {
    const std::size_t n = losses.size();
    return {std::move(losses), std::vector<bool>(n, true), std::vector<std::size_t>(n, 1)};
}

}  // namespace

TEST_CASE("cross entropy of uniform logits is log C") {
    const Tensor z = Tensor::matrix(2, 4, 3.0);
    CHECK(cross_entropy(z, std::vector<Label>{0, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("cross entropy is stable for large logits") {
    const Tensor z({1, 2}, {1000.0, 0.0});
    CHECK(cross_entropy(z, std::vector<Label>{0}) == doctest::Approx(0.0).epsilon(1e-300));
    CHECK(cross_entropy(z, std::vector<Label>{1}) == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("cross entropy input errors") {
    CHECK_THROWS_AS(cross_entropy(Tensor::matrix(1, 3), std::vector<Label>{3}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(Tensor::matrix(2, 3), std::vector<Label>{0}), std::invalid_argument);
}

TEST_CASE("balanced softmax with tau 0 or uniform counts equals cross entropy") {
    std::mt19937_64 rng(3);
    const Tensor z = testing::random_matrix(8, 4, rng, -3, 3);
    const auto y = testing::random_labels(8, 4, rng);
    const double ce = cross_entropy(z, y);
    CHECK(std::abs(balanced_softmax_loss(z, y, {{100, 10, 3, 1}, 0.0}) - ce) <= 1e-12);
    CHECK(std::abs(balanced_softmax_loss(z, y, {{7, 7, 7, 7}, 1.0}) - ce) <= 1e-12);
}

TEST_CASE("balanced softmax logit shift spans log IR") {
    const BslConfig cfg{{1000, 100}, 1.0};
    const auto shift = cfg.logit_shift();
    CHECK(shift[0] - shift[1] == doctest::Approx(std::log(10.0)).epsilon(1e-15));
    CHECK_THROWS_AS((BslConfig{{5, 0}, 1.0}.validate(2)), std::invalid_argument);
}

TEST_CASE("balanced softmax hand value") {
    const Tensor z({1, 2}, {0.0, 0.0});
    CHECK(balanced_softmax_loss(z, std::vector<Label>{1}, {{9, 1}, 1.0}) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-15));
    CHECK_THROWS_AS(balanced_softmax_loss(z, std::vector<Label>{1}, {{9, 0}, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(balanced_softmax_loss(z, std::vector<Label>{1}, {{9, 1, 1}, 1.0}), std::invalid_argument);
}

TEST_CASE("cross entropy hand values") {
    CHECK(cross_entropy(Tensor({1, 2}, {0.0, 0.0}), std::vector<Label>{0}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double p1 = std::exp(2.0) / (std::exp(2.0) + 1.0);
    const Tensor z({2, 2}, {1.0, 0.0, 0.0, 2.0});
    CHECK(cross_entropy(z, std::vector<Label>{0, 1}) ==
          doctest::Approx((-std::log(p0) - std::log(p1)) / 2.0).epsilon(1e-14));
    CHECK(cross_entropy(Tensor({1, 2}, {1000.0, 0.0}), std::vector<Label>{0}) < 1e-9);
}

TEST_CASE("class losses are per-class means with absent classes masked") {
    const std::vector<double> ps{1.0, 3.0, 2.0};
    const std::vector<Label> y{0, 0, 1};
    const auto v = class_losses(ps, y, 3);
    CHECK(v.per_class_loss[0] == 2.0);
    CHECK(v.per_class_loss[1] == 2.0);
    CHECK(v.present == std::vector<bool>{true, true, false});
    CHECK(v.present_count() == 2);
    const auto single = class_losses(std::vector<double>{1.0}, std::vector<Label>{2}, 3);
    CHECK(single.present_count() == 1);
}

TEST_CASE("bcl, hdl, rcel hand values") {
    const auto v = vec({1.0, 3.0});
    CHECK(bcl(v) == 2.0);
    CHECK(hdl(v) == 1.0);
    CHECK(rcel(v) == 0.625);
    CHECK(bcl(vec({4.2})) == 4.2);
    CHECK(hdl(vec({4.2})) == 0.0);
}

TEST_CASE("equal class losses: hdl zero, rcel 1/S") {
    for (std::size_t s = 1; s <= 7; ++s) {
        const auto v = vec(std::vector<double>(s, 0.7));
        CHECK(hdl(v) == 0.0);
        CHECK(rcel(v) == 1.0 / static_cast<double>(s));
        CHECK(bcl(v) == 0.7);
    }
}

TEST_CASE("rcel edge cases") {
    CHECK(rcel(vec({0.0, 0.0})) == 0.0);
    CHECK(rcel(vec({10.0, 1e-9})) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("hel composition and the operating point") {
    const auto v = vec({1.0, 3.0});
    const HelWeights w{0.1, 0.1, 0.1};
    CHECK(hel(v, w) == 0.1 * 2.0 + 0.1 * 1.0 + 0.1 * 0.625);
    CHECK(std::abs(hel(v, w) - 0.3625) <= 1e-15);
    CHECK(hel(v, {0.4, 0.0, 0.0}) == 0.4 * 2.0);
    CHECK_THROWS_AS((HelWeights{-0.1, 0.1, 0.1}.validate()), std::invalid_argument);
}

TEST_CASE("hel class gradient matches finite differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = vec({u(rng), u(rng), u(rng), u(rng)});
        v.present[trial % 4] = trial % 3 == 0 ? false : true;
        const HelWeights w{0.3, 0.7, 1.1};
        const auto g = hel_class_gradient(v, w);
        for (std::size_t c = 0; c < 4; ++c) {
            if (!v.present[c]) {
                CHECK(g[c] == 0.0);
                continue;
            }
            const double h = 1e-6;
            auto up = v;
            auto dn = v;
            up.per_class_loss[c] += h;
            dn.per_class_loss[c] -= h;
            CHECK(g[c] == doctest::Approx((hel(up, w) - hel(dn, w)) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("losses are permutation equivariant") {
    std::mt19937_64 rng(19);
    const Tensor z = testing::random_matrix(9, 3, rng, -2, 2);
    const auto y = testing::random_labels(9, 3, rng);
    const std::vector<std::size_t> perm{2, 0, 1};  // new class k = old class perm[k]
    Tensor zp = z;
    std::vector<Label> yp(y.size());
    for (std::size_t n = 0; n < 9; ++n) {
        for (std::size_t k = 0; k < 3; ++k) zp(n, k) = z(n, perm[k]);
        for (std::size_t k = 0; k < 3; ++k) {
            if (perm[k] == static_cast<std::size_t>(y[n])) yp[n] = static_cast<Label>(k);
        }
    }
    const std::vector<std::size_t> counts{40, 9, 3};
    const std::vector<std::size_t> counts_p{counts[2], counts[0], counts[1]};
    CHECK(evaluate_loss(loss::Hierarchical{}, zp, yp).value ==
          doctest::Approx(evaluate_loss(loss::Hierarchical{}, z, y).value).epsilon(1e-14));
    CHECK(balanced_softmax_loss(zp, yp, {counts_p, 1.0}) ==
          doctest::Approx(balanced_softmax_loss(z, y, {counts, 1.0})).epsilon(1e-14));
}

TEST_CASE("evaluate_loss gradient matches finite differences on logits") {
    std::mt19937_64 rng(23);
    const Tensor z = testing::random_matrix(7, 4, rng, -2, 2);
    const auto y = testing::random_labels(7, 4, rng);
    const LossSelector losses[] = {loss::CrossEntropy{}, loss::BalancedSoftmax{{{30, 12, 5, 2}, 1.0}},
                                   loss::Hierarchical{{0.1, 0.1, 0.1}}};
    for (const auto& l : losses) {
        const auto e = evaluate_loss(l, z, y);
        for (std::size_t i = 0; i < z.size(); ++i) {
            Tensor up = z;
            Tensor dn = z;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            const double fd = (evaluate_loss(l, up, y, false).value - evaluate_loss(l, dn, y, false).value) / 2e-6;
            CHECK(testing::relative_error(e.logit_grad[i], fd) < 1e-6);
        }
    }
}
