#include <cmath>
#include <vector>

#include "doctest.h"
#include "taet/efficiency.hpp"

using namespace taet;

namespace {

TimeModel paper_inputs() { return TimeModel::from_ratios(40, 60, 10, 0.139, 0.619); }

}  // namespace

TEST_CASE("published acceleration inputs give eta ~ 0.608") {
    // (40*0.139 + 60*(1+6.19)) / (100*(1+6.19)), evaluated by hand.
    const double hand = (40 * 0.139 + 60 * 7.19) / (100 * 7.19);
    CHECK(predict_eta(paper_inputs()) == doctest::Approx(hand).epsilon(1e-15));
    CHECK(std::abs(predict_eta(paper_inputs()) - 0.608) < 0.005);
}

TEST_CASE("no CE stage means no savings") {
    CHECK(predict_eta(TimeModel::from_ratios(0, 100, 10, 0.139, 0.619)) == 1.0);
    CHECK(predict_eta_consistent(TimeModel::from_ratios(0, 100, 10, 0.139, 0.619)) == 1.0);
}

TEST_CASE("pure CE limit") {
    const auto tm = TimeModel::from_ratios(100, 0, 10, 0.139, 0.619);
    CHECK(predict_eta_consistent(tm) == 0.139);
    // The literal form scales the CE term once more by 1/(1+kappa*gamma).
    CHECK(predict_eta(tm) == doctest::Approx(0.139 / 7.19).epsilon(1e-15));
}

TEST_CASE("consistent eta lies strictly between rho and 1") {
    for (int n_ce = 1; n_ce < 100; ++n_ce) {
        const auto tm = TimeModel::from_ratios(n_ce, 100 - n_ce, 10, 0.139, 0.619);
        CHECK(predict_eta_consistent(tm) > 0.139);
        CHECK(predict_eta_consistent(tm) < 1.0);
    }
}

TEST_CASE("eta decreases with more CE epochs") {
    double prev_lit = 2.0;
    double prev_con = 2.0;
    for (int n_ce = 0; n_ce <= 100; n_ce += 5) {
        const auto tm = TimeModel::from_ratios(n_ce, 100 - n_ce, 10, 0.139, 0.619);
        CHECK(predict_eta(tm) < prev_lit);
        CHECK(predict_eta_consistent(tm) < prev_con);
        prev_lit = predict_eta(tm);
        prev_con = predict_eta_consistent(tm);
    }
}

TEST_CASE("rho and gamma from phase costs") {
    const PhaseCosts c{2.0, 3.0, 1.0};
    const auto tm = TimeModel::from_costs(4, 6, 10, c);
    CHECK(tm.rho == 5.0 / (5.0 + 10 * 3.0));
    CHECK(tm.gamma_time == 3.0 / 5.0);
    CHECK(tm.n_total == 10);
    CHECK_THROWS_AS(TimeModel::from_costs(4, 6, 10, {0.0, 0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(TimeModel::from_ratios(-1, 6, 10, 0.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(TimeModel::from_ratios(0, 0, 10, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("zero-step attack makes both stages cost the same") {
    const PhaseCosts c{2.0, 3.0, 1.0};
    CHECK(predicted_step_seconds(c, 0, Stage::adv) == predicted_step_seconds(c, 0, Stage::ce));
    CHECK(predicted_step_seconds(c, 10, Stage::adv) == 5.0 + 10 * 3.0);
}

TEST_CASE("measured ratio from epoch timings") {
    std::vector<EpochRecord> r;
    for (int e = 0; e < 4; ++e) r.push_back({e, Stage::ce, 0, 0, 0, 0.1, 1.0});
    for (int e = 4; e < 10; ++e) r.push_back({e, Stage::adv, 0, 0, 0, 0.1, 5.0});
    CHECK(*measured_ratio_from_epochs(r) == doctest::Approx((4 * 1.0 + 6 * 5.0) / (10 * 5.0)));
    r.resize(4);
    CHECK_FALSE(measured_ratio_from_epochs(r).has_value());
}

TEST_CASE("memory model arithmetic") {
    MemoryModel cifar;
    CHECK(cifar.m_delta() == 1572864ull);
    CHECK(predict_memory_saving(cifar, 0.4) == 0.4 * 1572864.0);
    CHECK(predict_memory_saving(cifar, 0.0) == 0.0);
    CHECK(memory_difference(cifar, Stage::ce) == -1572864);
    CHECK(memory_difference(cifar, Stage::adv) == 0);
    MemoryModel unit;
    unit.b = unit.c = unit.h = unit.w = 1;
    unit.d = 4;
    CHECK(unit.m_delta() == 4);
    CHECK_THROWS_AS(predict_memory_saving(cifar, 1.5), std::invalid_argument);
}

TEST_CASE("phase cost measurement is positive and ordered") {
    const Dataset data = gen_gaussian_mixture({3, 4, 2.0, 100}, 1);
    const Model m = init_model({4, {16}, 3, Activation::relu}, 1);
    AttackConfig atk;
    const auto meas = measure_phase_costs(m, data, atk, 3, 64);
    CHECK(meas.costs.forward > 0.0);
    CHECK(meas.costs.backward > 0.0);
    CHECK(meas.costs.backward_adv > 0.0);
    CHECK(meas.probes == 3);
    const auto tm = TimeModel::from_costs(2, 3, 10, meas.costs);
    CHECK(tm.rho > 0.0);
    CHECK(tm.rho <= 1.0);
    CHECK(predicted_step_seconds(meas.costs, 10, Stage::adv) >= predicted_step_seconds(meas.costs, 10, Stage::ce));
    CHECK_THROWS_AS(measure_phase_costs(m, data, atk, 2, 64), std::invalid_argument);
}

TEST_CASE("efficiency json names the published figures") {
    EfficiencyReport r;
    r.time_model = paper_inputs();
    r.eta = predict_eta(r.time_model);
    r.ce_fraction = 0.4;
    r.xi_bytes = predict_memory_saving(r.memory, 0.4);
    const auto j = efficiency_to_json(r);
    CHECK(j.find("1629.42") != std::string::npos);
    CHECK(j.find("\"m_delta_bytes\": 1572864") != std::string::npos);
}
