#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "scrip/equilibrium.hpp"
#include "scrip/steady_state.hpp"

using namespace scrip;
using nlohmann::json;

namespace {

AgentType paper() { return AgentType{0.08, 0.01, 1.0, 0.97, 1.0, 1.0}; }

SystemSpec paper_spec(double m) { return SystemSpec{{paper()}, {1.0}, 10000, m}; }

const json& expected() {
    static const json j = [] {
        std::ifstream in(std::string(SCRIP_TEST_DATA) + "/expected_values.json");
        return json::parse(in);
    }();
    return j;
}

bool crashes(const SystemSpec& spec) {
    return find_equilibrium(spec).status == EquilibriumStatus::crash;
}

}  // namespace

TEST_CASE("rates of a saturated symmetric market") {
    const AgentType t{0.08, 1.0, 1.0, 0.97, 1.0, 1.0};
    const SystemSpec spec{{t}, {1.0}, 100, 1.0};
    const MoneyDistribution everyone_has_one{{{0.0, 1.0, 0.0, 0.0, 0.0, 0.0}}};
    const auto r = mean_field_rates(spec, uniform_profile(1, 5), everyone_has_one);
    CHECK(r.p_s[0] == doctest::Approx(0.01 * (1 - std::exp(-99.0))));
    CHECK(r.p_e[0] == doctest::Approx(1.0 / 99));
    CHECK_FALSE(r.starved);
}

TEST_CASE("rates of a dead market") {
    const SystemSpec spec{{paper()}, {1.0}, 100, 0.0};
    const MoneyDistribution frozen{{{1.0}}};
    const auto r = mean_field_rates(spec, uniform_profile(1, 0), frozen);
    CHECK(r.p_e[0] == 0.0);
    CHECK(r.p_s[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rates stay below the raw pick probability") {
    const auto spec = apply_sybils(paper_spec(3.0), 0.3, 4);
    const StrategyProfile p{{30, 20}};
    const auto r = mean_field_rates(spec, p, solve_mstar(spec, p).mstar);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(r.p_s[t] >= 0.0);
        CHECK(r.p_s[t] <= 1e-4 + 1e-15);
        CHECK(r.p_e[t] >= 0.0);
        CHECK(r.p_e[t] <= 1.0);
    }
    CHECK(r.p_e[1] == doctest::Approx(5 * r.p_e[0]).epsilon(1e-3));
}

TEST_CASE("baseline equilibrium") {
    const auto& e = expected()["baseline_m4"];
    const auto r = find_equilibrium(paper_spec(4.0));
    REQUIRE(r.status == EquilibriumStatus::converged);
    CHECK(r.profile.thresholds[0] == e["threshold"].get<int>());
    const double tol = e["rel_tol"];
    CHECK(r.rates.p_s[0] == doctest::Approx(e["p_s"].get<double>()).epsilon(e["p_s_rel_tol"].get<double>()));
    CHECK(r.rates.p_e[0] == doctest::Approx(e["p_e"].get<double>()).epsilon(tol));
    CHECK(r.per_type_utility[0] == doctest::Approx(e["utility"].get<double>()).epsilon(tol));
    CHECK(r.welfare_per_agent == doctest::Approx(e["welfare_per_agent"].get<double>()).epsilon(tol));
    CHECK(r.welfare_rate == doctest::Approx(10000 * r.welfare_per_agent));
    CHECK(r.epsilon <= r.epsilon_target);
    CHECK(r.epsilon_target == doctest::Approx(1e-4));
    CHECK_FALSE(r.cap_binding);
    CHECK_FALSE(r.multiple_equilibria);
    // one more best-response pass changes nothing
    REQUIRE(r.best_responses.size() == 1);
    CHECK(r.best_responses[0].threshold == r.profile.thresholds[0]);
    CHECK(social_welfare(paper_spec(4.0), r) == doctest::Approx(r.welfare_rate));
}

TEST_CASE("regression thresholds across m") {
    for (const auto& row : expected()["thresholds_by_m"]) {
        const double m = row[0];
        const auto r = find_equilibrium(paper_spec(m));
        INFO("m = " << m);
        REQUIRE(r.status == EquilibriumStatus::converged);
        CHECK(r.profile.thresholds[0] == row[1].get<int>());
    }
}

TEST_CASE("crash boundary") {
    const auto& b = expected()["crash_boundary"];
    CHECK_FALSE(crashes(paper_spec(b["last_converged"])));
    CHECK(crashes(paper_spec(b["first_crash"])));
    CHECK(crashes(paper_spec(10.5)));
    CHECK(crashes(paper_spec(0.0)));
    const auto r = find_equilibrium(paper_spec(10.5));
    CHECK(r.profile.all_zero());
    CHECK(r.welfare_rate == 0.0);
}

TEST_CASE("sybils move the crash") {
    const auto& b = expected()["sybil_crash_boundary"];
    const double f = b["fraction"];
    const int s = b["sybils"];
    CHECK_FALSE(crashes(apply_sybils(paper_spec(b["last_converged"]), f, s)));
    CHECK(crashes(apply_sybils(paper_spec(b["first_crash"]), f, s)));
    CHECK(crashes(apply_sybils(paper_spec(9.5), 0.2, 1)));
    CHECK_FALSE(crashes(paper_spec(9.5)));
}

TEST_CASE("crashes never recover as m grows") {
    bool crashed = false;
    for (int i = 0; i <= 60; ++i) {
        const double m = 8.0 + 0.05 * i;
        const bool c = crashes(paper_spec(m));
        if (crashed) CHECK(c);
        crashed = crashed || c;
    }
    CHECK(crashed);
}

TEST_CASE("thresholds fall and welfare rises with m") {
    int prev_k = kDefaultMaxThreshold + 1;
    double prev_w = 0.0;
    for (int i = 1; i <= 20; ++i) {
        const double m = 0.45 * i;  // up to 9.0
        const auto r = find_equilibrium(paper_spec(m));
        INFO("m = " << m);
        REQUIRE(r.status == EquilibriumStatus::converged);
        CHECK(r.profile.thresholds[0] <= prev_k);
        CHECK(r.welfare_rate > prev_w);
        prev_k = r.profile.thresholds[0];
        prev_w = r.welfare_rate;
    }
}

TEST_CASE("splitting a type changes nothing") {
    const auto whole = find_equilibrium(paper_spec(4.0));
    const SystemSpec split{{paper(), paper()}, {0.5, 0.5}, 10000, 4.0};
    const auto halves = find_equilibrium(split);
    REQUIRE(halves.status == EquilibriumStatus::converged);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(halves.profile.thresholds[t] == whole.profile.thresholds[0]);
        CHECK(halves.rates.p_s[t] == doctest::Approx(whole.rates.p_s[0]).epsilon(1e-9));
        CHECK(halves.rates.p_e[t] == doctest::Approx(whole.rates.p_e[0]).epsilon(1e-9));
        CHECK(halves.per_type_utility[t] == doctest::Approx(whole.per_type_utility[0]).epsilon(1e-9));
    }
    CHECK(halves.welfare_rate == doctest::Approx(whole.welfare_rate).epsilon(1e-9));
    CHECK(std::abs(halves.lambda - whole.lambda) <= 1e-9 * whole.lambda);
}

TEST_CASE("sybil crossovers at fraction 0.1") {
    const auto& e = expected()["sybil_crossovers"];
    const double f = e["fraction"];
    const auto base = find_equilibrium(paper_spec(4.0));
    int welfare_from = -1, plain_from = -1;
    for (int s = 1; s <= 12; ++s) {
        const auto r = find_equilibrium(apply_sybils(paper_spec(4.0), f, s));
        REQUIRE(r.status == EquilibriumStatus::converged);
        if (welfare_from < 0 && r.welfare_rate > base.welfare_rate) welfare_from = s;
        if (plain_from < 0 && r.per_type_utility[0] > base.per_type_utility[0]) plain_from = s;
        // sybil holders earn more per job offer
        CHECK(r.rates.p_e[1] > r.rates.p_e[0]);
    }
    CHECK(welfare_from == e["welfare_from"].get<int>());
    CHECK(plain_from == e["non_sybil_utility_from"].get<int>());
}

TEST_CASE("sybils hurt at m = 2 and help at m = 4") {
    const auto w = [](double m, bool sybils) {
        const auto spec = sybils ? apply_sybils(paper_spec(m), 0.2, 1) : paper_spec(m);
        return find_equilibrium(spec).welfare_rate;
    };
    CHECK(w(2.0, true) < 0.9 * w(2.0, false));
    CHECK(w(4.0, true) > w(4.0, false));
}

TEST_CASE("unit view of populations") {
    const auto plain = units_of(paper_spec(4.0));
    REQUIRE(plain.classes.size() == 1);
    CHECK(plain.classes[0].units == 10000);
    CHECK(plain.unit_count() == 10000);
    CHECK(plain.total_money == 40000);
    CHECK(plain.request_weight() == doctest::Approx(10000));

    const auto cs = make_collusion_spec(paper_spec(4.0), 4, 0.5);
    const auto u = units_of(cs);
    REQUIRE(u.classes.size() == 2);
    CHECK(u.classes[0].group_size == 1);
    CHECK(u.classes[0].units == 5000);
    CHECK(u.classes[1].group_size == 4);
    CHECK(u.classes[1].units == 1250);
    CHECK(u.classes[1].chi() == 4.0);
    CHECK(u.classes[1].market_rho() + u.classes[1].internal_rho() == doctest::Approx(4.0));
    CHECK(u.n == 10000);
    CHECK(u.mean_money_per_unit() == doctest::Approx(40000.0 / 6250));
}

TEST_CASE("groups of one are the baseline") {
    const auto base = find_equilibrium(paper_spec(4.0));
    const auto c = find_collusion_equilibrium(make_collusion_spec(paper_spec(4.0), 1, 0.5));
    REQUIRE(c.equilibrium.status == EquilibriumStatus::converged);
    CHECK(c.group_threshold == base.profile.thresholds[0]);
    CHECK(c.independent_threshold == base.profile.thresholds[0]);
    CHECK(c.colluder_utility == doctest::Approx(base.per_type_utility[0]).epsilon(1e-9));
    CHECK(c.independent_utility == doctest::Approx(base.per_type_utility[0]).epsilon(1e-9));
    CHECK(c.internal_fraction == 0.0);
}

TEST_CASE("pairs of colluders") {
    const auto& e = expected()["collusion_c2"];
    const auto c = find_collusion_equilibrium(
        make_collusion_spec(paper_spec(4.0), 2, e["colluding_fraction"].get<double>()));
    REQUIRE(c.equilibrium.status == EquilibriumStatus::converged);
    CHECK(c.has_groups);
    CHECK(c.has_independents);
    CHECK(c.group_threshold == e["group_threshold"].get<int>());
    CHECK(c.independent_threshold == e["independent_threshold"].get<int>());
    const double tol = e["rel_tol"];
    CHECK(c.colluder_utility == doctest::Approx(e["colluder_utility"].get<double>()).epsilon(tol));
    CHECK(c.independent_utility == doctest::Approx(e["independent_utility"].get<double>()).epsilon(tol));
    CHECK(c.internal_fraction == doctest::Approx(0.01));
    // every agent's p_e rises
    const auto base = find_equilibrium(paper_spec(4.0));
    CHECK(c.equilibrium.rates.p_e[0] > base.rates.p_e[0]);
}

TEST_CASE("collusion in small groups helps everyone") {
    const auto base = find_equilibrium(paper_spec(4.0)).per_type_utility[0];
    for (int c = 2; c <= 6; ++c) {
        const auto r = find_collusion_equilibrium(make_collusion_spec(paper_spec(4.0), c, 0.5));
        INFO("c = " << c);
        REQUIRE(r.equilibrium.status == EquilibriumStatus::converged);
        CHECK(r.colluder_utility > base);
        CHECK(r.independent_utility > base);
    }
}

TEST_CASE("result json") {
    const auto r = find_equilibrium(paper_spec(4.0));
    const auto j = result_to_json(r);
    CHECK(j["status"] == "converged");
    CHECK(j["thresholds"][0] == 26);
    CHECK(j.contains("lambda"));
    CHECK(j.contains("epsilon"));
    CHECK(j.contains("iterations"));
    CHECK(j.contains("welfare_rate"));
    CHECK(to_string(EquilibriumStatus::crash) == "crash");
    CHECK(to_string(EquilibriumStatus::max_iter) == "max_iter");
}
