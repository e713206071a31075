#include <random>

#include "doctest.h"
#include "support.hpp"
#include "taet/metrics.hpp"

using namespace taet;

TEST_CASE("balanced accuracy matches a brute-force recall loop") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t c = 2 + trial % 6;
        const auto truth = testing::random_labels(50 + trial, c, rng);
        const auto pred = testing::random_labels(50 + trial, c, rng);
        const auto cm = confusion_from_predictions(truth, pred, c);
        CHECK(balanced_accuracy(cm) == testing::mean_of(testing::recall_loop(truth, pred, c)));
    }
}

TEST_CASE("balanced vs standard accuracy on an imbalanced set") {
    // 90 head samples all right, 10 tail samples all wrong.
    std::vector<Label> truth(100, 0);
    std::vector<Label> pred(100, 0);
    for (int i = 90; i < 100; ++i) truth[i] = 1;
    const auto cm = confusion_from_predictions(truth, pred, 2);
    CHECK(standard_accuracy(cm) == 0.9);
    CHECK(balanced_accuracy(cm) == 0.5);
}

TEST_CASE("empty classes are excluded") {
    const std::vector<Label> truth{0, 0, 2};
    const std::vector<Label> pred{0, 1, 2};
    const auto cm = confusion_from_predictions(truth, pred, 3);
    const auto r = per_class_recall(cm);
    CHECK_FALSE(r[1].has_value());
    CHECK(balanced_accuracy(cm) == (0.5 + 1.0) / 2.0);
    CHECK_THROWS_AS(balanced_accuracy(ConfusionMatrix(2)), std::invalid_argument);
}

TEST_CASE("tail mean over the last k classes") {
    const std::vector<std::optional<double>> v{0.9, 0.8, std::nullopt, 0.2};
    CHECK(tail_mean(v, 2) == 0.2);
    CHECK(tail_mean(v, 3) == (0.8 + 0.2) / 2.0);
}

TEST_CASE("zero-budget attack: robustness equals accuracy") {
    std::mt19937_64 rng(2);
    const Dataset data = gen_gaussian_mixture({3, 4, 2.0, 30}, 1);
    const Model m = testing::random_model({4, {6}, 3, Activation::relu}, rng);
    AttackConfig zero;
    zero.epsilon = 0.0;
    const std::vector<AttackSpec> attacks{{"PGD", zero, 1}, {"FGSM", FgsmConfig{0.0, 0.0, 1.0}, 0}};
    const auto r = report(m, data, attacks);
    CHECK(r.attacks[0].balanced_robustness == r.balanced_accuracy);
    CHECK(r.attacks[1].balanced_robustness == r.balanced_accuracy);
    CHECK(r.attacks[0].cm == r.clean_cm);
    CHECK(r.tail_k == 1);
}

TEST_CASE("report json carries the confusion matrices") {
    std::mt19937_64 rng(3);
    const Dataset data = gen_gaussian_mixture({2, 2, 2.0, 10}, 1);
    const Model m = testing::random_model({2, {3}, 2, Activation::relu}, rng);
    const auto r = report(m, data, {}, 1);
    const std::string j = report_to_json(r);
    CHECK(j.find("\"balanced_accuracy\"") != std::string::npos);
    CHECK(j.find("\"test_distribution\": \"balanced\"") != std::string::npos);
    CHECK(j == report_to_json(report(m, data, {}, 1)));
}
