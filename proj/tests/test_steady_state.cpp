#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "scrip/steady_state.hpp"

using namespace scrip;

namespace {

AgentType with_omega(double omega) { return AgentType{0.08, omega / 4.0, 1.0, 0.97, 0.25, 1.0}; }

SystemSpec one_type(double omega, std::int64_t n, double m) {
    return SystemSpec{{with_omega(omega)}, {1.0}, n, m};
}

// Direct M* by bisection on lambda, long double, no log-space tricks.
std::vector<std::vector<long double>> oracle_mstar(const std::vector<double>& omega,
                                                   const std::vector<double>& f,
                                                   const std::vector<int>& k, double m) {
    auto build = [&](long double lambda) {
        std::vector<std::vector<long double>> M(omega.size());
        for (std::size_t t = 0; t < omega.size(); ++t) {
            long double z = 0;
            std::vector<long double> w(k[t] + 1);
            for (int i = 0; i <= k[t]; ++i) z += (w[i] = std::pow((long double)lambda * omega[t], i));
            for (auto& x : w) x = x / z * f[t];
            M[t] = w;
        }
        return M;
    };
    auto mean = [](const std::vector<std::vector<long double>>& M) {
        long double s = 0;
        for (const auto& row : M)
            for (std::size_t i = 0; i < row.size(); ++i) s += i * row[i];
        return s;
    };
    long double lo = 1e-6, hi = 1e6;
    for (int it = 0; it < 300; ++it) {
        const long double mid = std::sqrt(lo * hi);
        (mean(build(mid)) < m ? lo : hi) = mid;
    }
    return build(std::sqrt(lo * hi));
}

// Stationary vector of the explicit chain by lazy power iteration.
std::vector<double> power_stationary(const SparseTransitionMatrix& P) {
    const std::size_t S = P.rows.size();
    std::vector<double> pi(S, 1.0 / S), next(S);
    for (int it = 0; it < 1'000'000; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t x = 0; x < S; ++x) {
            next[x] += 0.5 * pi[x];
            for (auto [y, p] : P.rows[x]) next[y] += 0.5 * pi[x] * p;
        }
        double change = 0.0;
        for (std::size_t x = 0; x < S; ++x) change += std::abs(next[x] - pi[x]);
        pi.swap(next);
        if (change < 1e-16) break;
    }
    return pi;
}

}  // namespace

TEST_CASE("reference distribution q") {
    auto q = compute_q(one_type(1.0, 10, 1.0), uniform_profile(1, 2));
    REQUIRE(q.mass[0].size() == 3);
    for (double x : q.mass[0]) CHECK(x == doctest::Approx(1.0 / 3));

    q = compute_q(one_type(2.0, 10, 0.5), uniform_profile(1, 1));
    CHECK(q.mass[0][0] == doctest::Approx(1.0 / 3));
    CHECK(q.mass[0][1] == doctest::Approx(2.0 / 3));

    SystemSpec two{{with_omega(1.0), with_omega(3.0)}, {0.5, 0.5}, 10, 0.5};
    q = compute_q(two, StrategyProfile{{1, 1}});
    CHECK(q.mass[0][0] == doctest::Approx(1.0 / 6));
    CHECK(q.mass[0][1] == doctest::Approx(1.0 / 6));
    CHECK(q.mass[1][0] == doctest::Approx(1.0 / 6));
    CHECK(q.mass[1][1] == doctest::Approx(3.0 / 6));

    CHECK(omega_vector(two)[1] == doctest::Approx(3.0));
}

TEST_CASE("symmetric M*") {
    auto s = solve_mstar(one_type(1.0, 10, 1.0), uniform_profile(1, 2));
    CHECK(s.solve.lambda == doctest::Approx(1.0));
    for (double x : s.mstar.mass[0]) CHECK(x == doctest::Approx(1.0 / 3));

    s = solve_mstar(one_type(1.0, 10, 0.5), uniform_profile(1, 1));
    CHECK(s.solve.lambda == doctest::Approx(1.0));
    CHECK(s.mstar.mass[0][0] == doctest::Approx(0.5));
}

TEST_CASE("M* with a quadratic moment constraint") {
    const auto s = solve_mstar(one_type(1.0, 10, 1.5), uniform_profile(1, 2));
    const double lambda = (1.0 + std::sqrt(13.0)) / 2.0;
    CHECK(lambda * lambda - lambda - 3.0 == doctest::Approx(0.0));
    CHECK(s.solve.lambda == doctest::Approx(lambda).epsilon(1e-9));
    CHECK(s.mstar.mass[0][0] == doctest::Approx(1.0 / (1 + lambda + lambda * lambda)).epsilon(1e-9));
    CHECK(s.mstar.mass[0][0] == doctest::Approx(0.11625).epsilon(1e-4));

    // coarse grid over lambda lands on the same root
    double best = 0.0, gap = 1e9;
    for (double l = 0.5; l < 5.0; l += 1e-5) {
        const double mean = (l + 2 * l * l) / (1 + l + l * l);
        if (std::abs(mean - 1.5) < gap) {
            gap = std::abs(mean - 1.5);
            best = l;
        }
    }
    CHECK(best == doctest::Approx(lambda).epsilon(1e-4));
}

TEST_CASE("M* matches a direct solver on random instances") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int types = 1 + trial % 3;
        SystemSpec spec;
        spec.n = 100;
        StrategyProfile p;
        std::vector<double> omega, f;
        std::vector<int> k;
        int left = 100;
        double capacity = 0;
        for (int t = 0; t < types; ++t) {
            const int c = t + 1 == types ? left : 1 + static_cast<int>(gen() % (left - (types - t - 1)));
            left -= c;
            spec.types.push_back(with_omega(0.2 + 1.5 * u(gen)));
            spec.fractions.push_back(c / 100.0);
            p.thresholds.push_back(1 + static_cast<int>(gen() % 12));
            omega.push_back(spec.types.back().omega());
            f.push_back(spec.fractions.back());
            k.push_back(p.thresholds.back());
            capacity += c * k.back();
        }
        spec.m = std::floor((0.05 + 0.9 * u(gen)) * capacity) / 100.0;
        const auto got = solve_mstar(spec, p).mstar;
        const auto want = oracle_mstar(omega, f, k, spec.m);
        for (std::size_t t = 0; t < want.size(); ++t)
            for (std::size_t i = 0; i < want[t].size(); ++i)
                CHECK(got.mass[t][i] == doctest::Approx(static_cast<double>(want[t][i])).epsilon(1e-8));
        CHECK(got.mean_money() == doctest::Approx(spec.m).epsilon(1e-10));
    }
}

TEST_CASE("mean money of the M* family rises with lambda") {
    const std::vector<double> omega{0.3, 1.0, 4.0};
    const std::vector<double> f{0.2, 0.5, 0.3};
    const std::vector<int> k{64, 5, 20};
    double prev = -1.0;
    for (double e = -6.0; e <= 6.0; e += 0.01) {
        const double m = mstar_mean_money(omega, f, k, std::pow(10.0, e));
        CHECK(std::isfinite(m));
        CHECK(m >= prev);
        prev = m;
    }
    CHECK(prev <= 0.2 * 64 + 0.5 * 5 + 0.3 * 20 + 1e-9);
}

TEST_CASE("infeasible money supply") {
    CHECK_THROWS_AS(solve_mstar(one_type(1.0, 10, 2.0), uniform_profile(1, 2)), InfeasibleError);
    CHECK_THROWS_AS(solve_mstar(one_type(1.0, 10, 0.5), uniform_profile(1, 0)), InfeasibleError);
    CHECK_NOTHROW(solve_mstar(one_type(1.0, 10, 0.0), uniform_profile(1, 0)));
}

TEST_CASE("high thresholds stay finite") {
    const auto s = solve_mstar(one_type(0.01, 10000, 60.0), uniform_profile(1, 64));
    for (double x : s.mstar.mass[0]) CHECK(std::isfinite(x));
    CHECK(s.mstar.mean_money() == doctest::Approx(60.0).epsilon(1e-10));
}

TEST_CASE("a type that can never work holds nothing") {
    AgentType idle{0.08, 0.0, 1.0, 0.97, 1.0, 1.0};
    SystemSpec spec{{idle, with_omega(1.0)}, {0.5, 0.5}, 10, 1.0};
    const auto s = solve_mstar(spec, StrategyProfile{{5, 5}});
    CHECK(s.mstar.mass[0][0] == doctest::Approx(0.5));
    for (std::size_t i = 1; i < s.mstar.mass[0].size(); ++i) CHECK(s.mstar.mass[0][i] == 0.0);
    CHECK(s.mstar.mean_money() == doctest::Approx(1.0));
}

TEST_CASE("relative entropy") {
    MoneyDistribution p{{{0.5, 0.5, 0.0}}};
    MoneyDistribution q{{{0.25, 0.25, 0.5}}};
    CHECK(relative_entropy(p, q) == doctest::Approx(std::log(2.0)));
    CHECK(relative_entropy(q, q) == doctest::Approx(0.0));
}

TEST_CASE("exact stationary: identical pair") {
    SystemSpec spec{{with_omega(1.0), with_omega(1.0)}, {0.5, 0.5}, 2, 1.0};
    const auto chain = exact_stationary(spec, StrategyProfile{{2, 2}});
    REQUIRE(chain.states.size() == 3);
    for (double p : chain.probability) CHECK(p == doctest::Approx(1.0 / 3));
}

TEST_CASE("exact stationary: weights 4, 2, 1") {
    SystemSpec spec{{with_omega(2.0), with_omega(1.0)}, {0.5, 0.5}, 2, 1.0};
    const auto chain = exact_stationary(spec, StrategyProfile{{2, 2}});
    const std::vector<int> a{2, 0}, b{1, 1}, c{0, 2};
    CHECK(chain.probability[chain.index_of(a)] == doctest::Approx(4.0 / 7));
    CHECK(chain.probability[chain.index_of(b)] == doctest::Approx(2.0 / 7));
    CHECK(chain.probability[chain.index_of(c)] == doctest::Approx(1.0 / 7));
}

TEST_CASE("exact stationary: one dollar among three") {
    SystemSpec spec{{with_omega(0.5)}, {1.0}, 3, 1.0 / 3};
    const StrategyProfile p{{1}};
    const auto chain = exact_stationary(spec, p);
    REQUIRE(chain.states.size() == 3);
    const auto pi = power_stationary(build_transition_matrix(spec, p, chain));
    double l1 = 0.0;
    for (std::size_t x = 0; x < 3; ++x) {
        CHECK(chain.probability[x] == doctest::Approx(1.0 / 3));
        l1 += std::abs(pi[x] - chain.probability[x]);
    }
    CHECK(l1 <= 1e-8);
}

TEST_CASE("transition matrix rows are stochastic and balanced") {
    SystemSpec spec{{AgentType{0.08, 0.3, 1, 0.97, 0.7, 1.4}, AgentType{0.08, 0.6, 1, 0.97, 1.3, 1.4},
                     AgentType{0.08, 0.2, 1, 0.97, 1.0, 1.4}},
                    {1.0 / 3, 1.0 / 3, 1.0 / 3},
                    3,
                    4.0 / 3};
    const StrategyProfile p{{2, 3, 2}};
    const auto chain = exact_stationary(spec, p);
    const auto P = build_transition_matrix(spec, p, chain);
    for (std::size_t x = 0; x < chain.states.size(); ++x) {
        double row = 0.0;
        for (auto [y, v] : P.rows[x]) {
            row += v;
            CHECK(chain.probability[x] * v ==
                  doctest::Approx(chain.probability[y] * P.at(y, x)).epsilon(1e-12));
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("equal omega gives the uniform distribution") {
    // same beta*chi/rho, different beta and rho
    SystemSpec spec{{AgentType{0.08, 0.2, 1, 0.97, 0.5, 1.0}, AgentType{0.08, 0.6, 1, 0.97, 1.5, 1.0},
                     AgentType{0.08, 0.4, 1, 0.97, 1.0, 1.0}},
                    {1.0 / 3, 1.0 / 3, 1.0 / 3},
                    3,
                    1.0};
    const StrategyProfile p{{3, 3, 3}};
    const auto chain = exact_stationary(spec, p);
    for (double x : chain.probability) CHECK(x == doctest::Approx(1.0 / chain.states.size()));
    const auto q = compute_q(spec, p);
    for (std::size_t i = 0; i <= 3; ++i) {
        CHECK(q.mass[1][i] == doctest::Approx(q.mass[0][i]));
        CHECK(q.mass[2][i] == doctest::Approx(q.mass[0][i]));
    }
}

TEST_CASE("unequal chi breaks the product form") {
    // three agents: the pick chi_j / sum(chi) over the able set does not factor
    SystemSpec spec{{AgentType{0.08, 0.5, 1, 0.97, 1.0, 1.0}, AgentType{0.08, 0.5, 1, 0.97, 1.0, 3.0},
                     AgentType{0.08, 0.5, 1, 0.97, 1.0, 1.0}},
                    {1.0 / 3, 1.0 / 3, 1.0 / 3},
                    3,
                    2.0 / 3};
    const StrategyProfile p{{2, 2, 2}};
    const auto chain = exact_stationary(spec, p);
    const auto pi = power_stationary(build_transition_matrix(spec, p, chain));
    double l1 = 0.0;
    for (std::size_t x = 0; x < pi.size(); ++x) l1 += std::abs(pi[x] - chain.probability[x]);
    CHECK(l1 > 1e-3);
}

TEST_CASE("exact enumeration limits") {
    SystemSpec nine{{with_omega(1.0)}, {1.0}, 9, 1.0};
    CHECK_THROWS_AS(exact_stationary(nine, uniform_profile(1, 2)), StateSpaceTooLargeError);
    SystemSpec tight{{with_omega(1.0)}, {1.0}, 2, 2.0};
    CHECK_THROWS_AS(exact_stationary(tight, uniform_profile(1, 1)), InfeasibleError);
    AgentType idle{0.08, 0.0, 1.0, 0.97, 1.0, 1.0};
    SystemSpec stuck{{idle, with_omega(1.0)}, {0.5, 0.5}, 2, 0.5};
    CHECK_THROWS_AS(exact_stationary(stuck, StrategyProfile{{1, 1}}), NonErgodicError);
}

TEST_CASE("monotonicity: identity") {
    SystemSpec spec{{with_omega(0.7), with_omega(1.3)}, {0.4, 0.6}, 10, 2.0};
    const StrategyProfile p{{4, 5}};
    const auto d = monotonicity_check(spec, p, p);
    CHECK(d.zero_delta == doctest::Approx(0.0));
    CHECK(d.threshold_delta == doctest::Approx(0.0));
    CHECK_THROWS_AS(monotonicity_check(spec, p, StrategyProfile{{3, 5}}), ValidationError);
}

TEST_CASE("monotonicity: one type, k from 2 to 3") {
    const auto spec = one_type(1.0, 10, 1.0);
    const auto d = monotonicity_check(spec, uniform_profile(1, 2), uniform_profile(1, 3));
    // k=3: mean one dollar requires 2 l^3 + l^2 - 1 = 0
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (2 * mid * mid * mid + mid * mid - 1 < 0 ? lo : hi) = mid;
    }
    const double l = lo;
    const double z = 1 + l + l * l + l * l * l;
    CHECK(d.zero_delta == doctest::Approx(1 / z - 1.0 / 3).epsilon(1e-9));
    CHECK(d.threshold_delta == doctest::Approx(l * l * l / z - 1.0 / 3).epsilon(1e-9));
    CHECK(d.zero_delta > 0.0);
    CHECK(d.threshold_delta < 0.0);
}

TEST_CASE("monotonicity holds for a single type") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        const int k = 1 + static_cast<int>(gen() % 20);
        const double m = std::max(1.0, std::floor(u(gen) * k * 100)) / 100.0;
        const auto spec = one_type(0.05 + 3 * u(gen), 100, m);
        const auto d = monotonicity_check(spec, uniform_profile(1, k),
                                          uniform_profile(1, k + 1 + static_cast<int>(gen() % 4)));
        CHECK(d.zero_delta >= -1e-9);
        CHECK(d.threshold_delta <= 1e-9);
    }
}

TEST_CASE("monotonicity fails for two types") {
    // Raising the low threshold of type 1 adds a level that soaks up its
    // mass, so its own zero-dollar mass falls faster than the other rises.
    SystemSpec spec{{with_omega(0.479643), with_omega(0.701018)}, {0.494, 0.506}, 1000, 4.571};
    const StrategyProfile p{{10, 1}}, raised{{10, 2}};
    const auto d = monotonicity_check(spec, p, raised);
    const auto a = oracle_mstar({0.479643, 0.701018}, {0.494, 0.506}, {10, 1}, 4.571);
    const auto b = oracle_mstar({0.479643, 0.701018}, {0.494, 0.506}, {10, 2}, 4.571);
    const double oracle_delta = static_cast<double>((b[0][0] + b[1][0]) - (a[0][0] + a[1][0]));
    CHECK(d.zero_delta == doctest::Approx(oracle_delta).epsilon(1e-8));
    CHECK(d.zero_delta < -0.07);
    CHECK(d.threshold_delta <= 1e-9);
}

TEST_CASE("distribution csv") {
    std::ostringstream os;
    write_distribution_csv(os, MoneyDistribution{{{0.25, 0.75}, {0.5}}});
    CHECK(os.str() == "type_index,money_level,mass\n0,0,0.25\n0,1,0.75\n1,0,0.5\n");
}
