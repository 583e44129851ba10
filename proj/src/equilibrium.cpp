#include "scrip/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scrip/steady_state.hpp"

namespace scrip {

std::string to_string(EquilibriumStatus status) {
    switch (status) {
        case EquilibriumStatus::converged: return "converged";
        case EquilibriumStatus::crash: return "crash";
        case EquilibriumStatus::max_iter: return "max_iter";
    }
    return "unknown";
}

std::int64_t UnitSystem::unit_count() const {
    std::int64_t total = 0;
    for (const auto& c : classes) total += c.units;
    return total;
}

std::vector<double> UnitSystem::fractions() const {
    const double total = static_cast<double>(unit_count());
    std::vector<double> f;
    for (const auto& c : classes) f.push_back(static_cast<double>(c.units) / total);
    return f;
}

std::vector<double> UnitSystem::omegas() const {
    std::vector<double> w;
    for (const auto& c : classes) w.push_back(c.omega());
    return w;
}

double UnitSystem::mean_money_per_unit() const {
    return static_cast<double>(total_money) / static_cast<double>(unit_count());
}

double UnitSystem::request_weight() const {
    double total = 0.0;
    for (const auto& c : classes) total += static_cast<double>(c.agents()) * c.member.rho;
    return total;
}

UnitSystem units_of(const SystemSpec& spec) {
    UnitSystem s;
    s.n = spec.n;
    s.total_money = spec.total_money();
    for (std::size_t t = 0; t < spec.type_count(); ++t)
        s.classes.push_back(UnitClass{spec.types[t], 1, 0.0, spec.agents_of(t)});
    return s;
}

UnitSystem units_of(const CollusionSpec& spec) {
    UnitSystem s;
    s.n = spec.n;
    s.total_money = spec.total_money();
    if (spec.independents > 0) s.classes.push_back(UnitClass{spec.base, 1, 0.0, spec.independents});
    if (spec.groups > 0)
        s.classes.push_back(UnitClass{spec.base, spec.group_size, spec.beta_int, spec.groups});
    return s;
}

UnitRates unit_rates(const UnitSystem& system, const StrategyProfile& profile,
                     const MoneyDistribution& mstar) {
    const auto f = system.fractions();
    const std::size_t k = system.classes.size();
    const double norm = system.request_weight();

    double p_pay = 0.0;
    double volunteers = 0.0;
    for (std::size_t u = 0; u < k; ++u) {
        const auto& c = system.classes[u];
        const auto& row = mstar.mass[u];
        const double has_money = 1.0 - row.front() / f[u];
        const double below_threshold = 1.0 - row.back() / f[u];
        p_pay += static_cast<double>(c.units) * c.market_rho() / norm * has_money;
        if (profile.thresholds[u] > 0)
            volunteers += static_cast<double>(c.units) * c.able_weight() * below_threshold;
    }

    UnitRates out;
    out.rates.p_s.resize(k);
    out.rates.p_e.resize(k);
    out.p_internal.resize(k);
    out.rates.starved = volunteers <= 0.0 && p_pay > 0.0;
    for (std::size_t u = 0; u < k; ++u) {
        const auto& c = system.classes[u];
        const double w = c.able_weight();
        const double others = std::max(volunteers - w, 0.0);
        out.rates.p_e[u] = volunteers > 0.0 ? p_pay * w / std::max(volunteers - w, c.chi()) : 0.0;
        out.rates.p_s[u] = c.market_rho() / norm * (1.0 - std::exp(-others));
        out.p_internal[u] = c.internal_rho() / norm;
    }
    return out;
}

RateEstimates mean_field_rates(const SystemSpec& spec, const StrategyProfile& profile,
                               const MoneyDistribution& mstar) {
    return unit_rates(units_of(spec), profile, mstar).rates;
}

namespace {

MdpSolution best_response(const UnitSystem& s, std::size_t u, const UnitRates& r, int k_max) {
    const auto& c = s.classes[u];
    if (c.group_size == 1)
        return solve_agent_mdp(c.member, {r.rates.p_s[u], r.rates.p_e[u]}, s.n, k_max);
    const GroupRates g{r.p_internal[u], r.rates.p_s[u], r.rates.p_e[u]};
    return solve_group_mdp(GroupChain{c.group_size, c.beta_int}, c.member, g, s.n, k_max);
}

std::vector<double> policy_values(const UnitSystem& s, std::size_t u, const UnitRates& r, int k) {
    const auto& c = s.classes[u];
    if (c.group_size == 1) return threshold_values(c.member, {r.rates.p_s[u], r.rates.p_e[u]}, s.n, k);
    const GroupRates g{r.p_internal[u], r.rates.p_s[u], r.rates.p_e[u]};
    return group_threshold_values(c.member, g, s.n, k);
}

std::vector<MdpSolution> best_responses(const UnitSystem& s, const UnitRates& r, int k_max) {
    std::vector<MdpSolution> out;
    for (std::size_t u = 0; u < s.classes.size(); ++u) out.push_back(best_response(s, u, r, k_max));
    return out;
}

StrategyProfile thresholds_of(const std::vector<MdpSolution>& best) {
    StrategyProfile p;
    for (const auto& b : best) p.thresholds.push_back(b.threshold);
    return p;
}

// Largest per-member gain from switching to the best response, over every
// money level the class can occupy.
double deviation_gain(const UnitSystem& s, std::size_t u, const UnitRates& r, int k,
                      const MdpSolution& best) {
    const auto values = policy_values(s, u, r, k);
    double gain = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) gain = std::max(gain, best.values[i] - values[i]);
    return gain / s.classes[u].group_size;
}

UnitRates average(const UnitRates& a, const UnitRates& b) {
    UnitRates out = a;
    for (std::size_t u = 0; u < a.rates.p_s.size(); ++u) {
        out.rates.p_s[u] = 0.5 * (a.rates.p_s[u] + b.rates.p_s[u]);
        out.rates.p_e[u] = 0.5 * (a.rates.p_e[u] + b.rates.p_e[u]);
        out.p_internal[u] = 0.5 * (a.p_internal[u] + b.p_internal[u]);
    }
    out.rates.starved = a.rates.starved && b.rates.starved;
    return out;
}

struct Pass {
    EquilibriumStatus status = EquilibriumStatus::max_iter;
    StrategyProfile profile;
    StrategyProfile previous;
    int iterations = 0;
    bool damping_used = false;
    double epsilon = 0.0;
    MStarSolution mstar;
    UnitRates rates;
    std::vector<MdpSolution> best;
};

Pass iterate(const UnitSystem& s, StrategyProfile profile, int k_max, double eps, int max_iter) {
    const auto omegas = s.omegas();
    const auto f = s.fractions();
    const double mean = s.mean_money_per_unit();

    Pass pass;
    pass.previous = profile;
    UnitRates last_rates;
    bool have_last = false;
    for (int it = 1; it <= max_iter; ++it) {
        pass.iterations = it;
        if (profile.all_zero()) {
            pass.status = EquilibriumStatus::crash;
            pass.profile = profile;
            return pass;
        }
        MStarSolution ms;
        try {
            ms = solve_mstar(omegas, f, profile.thresholds, mean);
        } catch (const InfeasibleError&) {
            // Thresholds only fall from here on, so no profile can hold the money.
            pass.status = EquilibriumStatus::crash;
            pass.profile = profile;
            return pass;
        }
        auto rates = unit_rates(s, profile, ms.mstar);
        auto best = best_responses(s, rates, k_max);
        auto next = thresholds_of(best);

        double gap = 0.0;
        for (std::size_t u = 0; u < s.classes.size(); ++u)
            gap = std::max(gap, deviation_gain(s, u, rates, profile.thresholds[u], best[u]));

        const bool cycling = it > 1 && next == pass.previous;
        const bool last = it == max_iter;
        // An exact fixed point ends the search; an epsilon-equilibrium is
        // accepted only once the iteration stops making progress.
        if (next == profile || ((cycling || last) && gap <= eps)) {
            pass.status = EquilibriumStatus::converged;
            pass.profile = profile;
            pass.epsilon = gap;
            pass.mstar = std::move(ms);
            pass.rates = std::move(rates);
            pass.best = std::move(best);
            return pass;
        }
        if (cycling) {
            if (pass.damping_used || !have_last) {
                pass.status = EquilibriumStatus::max_iter;
                pass.profile = profile;
                pass.previous = next;
                return pass;
            }
            pass.damping_used = true;
            next = thresholds_of(best_responses(s, average(rates, last_rates), k_max));
        }
        last_rates = std::move(rates);
        have_last = true;
        pass.previous = profile;
        profile = std::move(next);
    }
    pass.status = EquilibriumStatus::max_iter;
    pass.profile = profile;
    return pass;
}

void fill_outcome(const UnitSystem& s, const Pass& pass, EquilibriumResult& r) {
    r.status = pass.status;
    r.profile = pass.profile;
    r.previous_profile = pass.previous;
    r.iterations = pass.iterations;
    r.damping_used = pass.damping_used;
    const std::size_t k = s.classes.size();
    r.per_type_utility.assign(k, 0.0);
    r.utility_at_zero.assign(k, 0.0);
    r.rates.p_s.assign(k, 0.0);
    r.rates.p_e.assign(k, 0.0);
    r.p_internal.assign(k, 0.0);
    if (pass.status != EquilibriumStatus::converged) {
        if (pass.status == EquilibriumStatus::crash) r.profile = uniform_profile(k, 0);
        return;
    }
    r.mstar = pass.mstar.mstar;
    r.lambda = pass.mstar.solve.lambda;
    r.rates = pass.rates.rates;
    r.p_internal = pass.rates.p_internal;
    r.epsilon = pass.epsilon;
    r.best_responses = pass.best;
    for (std::size_t u = 0; u < k; ++u) {
        const auto values = policy_values(s, u, pass.rates, r.profile.thresholds[u]);
        const auto& row = r.mstar.mass[u];
        const double f = std::accumulate(row.begin(), row.end(), 0.0);
        double expected = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i) expected += row[i] / f * values[i];
        const double c = s.classes[u].group_size;
        r.per_type_utility[u] = expected / c;
        r.utility_at_zero[u] = values.front() / c;
        r.discounted_welfare += expected * static_cast<double>(s.classes[u].units);
        if (pass.best[u].cap_binding) r.cap_binding = true;
    }
    r.welfare_rate = social_welfare(s, r);
    r.welfare_per_agent = r.welfare_rate / static_cast<double>(s.n);
}

}  // namespace

double social_welfare(const UnitSystem& s, const EquilibriumResult& result) {
    if (result.status != EquilibriumStatus::converged || result.profile.all_zero()) {
        // Groups still trade internally at threshold 0, but a crash means no market.
        return 0.0;
    }
    const auto f = s.fractions();
    double willing = 0.0;
    double willing_alpha = 0.0;
    for (std::size_t u = 0; u < s.classes.size(); ++u) {
        if (result.profile.thresholds[u] == 0) continue;
        const auto& c = s.classes[u];
        const double w = static_cast<double>(c.units) * c.able_weight() *
                         (1.0 - result.mstar.mass[u].back() / f[u]);
        willing += w;
        willing_alpha += w * c.member.alpha;
    }
    const double satisfier_alpha = willing > 0.0 ? willing_alpha / willing : 0.0;
    double per_round = 0.0;
    for (std::size_t u = 0; u < s.classes.size(); ++u) {
        const auto& c = s.classes[u];
        const double units = static_cast<double>(c.units);
        const double has_money = 1.0 - result.mstar.mass[u].front() / f[u];
        per_round += units * result.rates.p_s[u] * has_money * (c.member.gamma - satisfier_alpha);
        per_round += units * result.p_internal[u] * (c.member.gamma - c.member.alpha);
    }
    return per_round * static_cast<double>(s.n);  // n rounds per unit of time
}

double social_welfare(const SystemSpec& spec, const EquilibriumResult& result) {
    return social_welfare(units_of(spec), result);
}

EquilibriumResult find_equilibrium(const UnitSystem& s, const EquilibriumOptions& options) {
    if (s.classes.empty()) throw ValidationError("population has no decision units");
    if (options.k_max < 1) throw ValidationError("K_max must be >= 1");
    if (options.max_iter < 1) throw ValidationError("max_iter must be >= 1");
    double gamma_max = 0.0;
    for (const auto& c : s.classes) gamma_max = std::max(gamma_max, c.member.gamma);
    const double eps = options.epsilon >= 0.0 ? options.epsilon : 1e-4 * gamma_max;

    EquilibriumResult r;
    r.epsilon_target = eps;
    const std::size_t k = s.classes.size();
    const auto top = iterate(s, uniform_profile(k, options.k_max), options.k_max, eps, options.max_iter);
    fill_outcome(s, top, r);

    if (options.bottom_start) {
        const int floor_start =
            std::min(options.k_max, static_cast<int>(std::floor(s.mean_money_per_unit())) + 1);
        const auto bottom =
            iterate(s, uniform_profile(k, floor_start), options.k_max, eps, options.max_iter);
        r.bottom_status = bottom.status;
        r.bottom_profile = bottom.status == EquilibriumStatus::crash ? uniform_profile(k, 0)
                                                                     : bottom.profile;
        r.multiple_equilibria = bottom.status == EquilibriumStatus::converged &&
                                top.status == EquilibriumStatus::converged &&
                                !(bottom.profile == top.profile);
    }
    return r;
}

EquilibriumResult find_equilibrium(const SystemSpec& spec, const EquilibriumOptions& options) {
    return find_equilibrium(units_of(validate_spec(spec)), options);
}

CollusionResult find_collusion_equilibrium(const CollusionSpec& spec,
                                           const EquilibriumOptions& options) {
    const auto system = units_of(spec);
    CollusionResult out;
    out.equilibrium = find_equilibrium(system, options);
    const auto& e = out.equilibrium;
    // units_of puts independents first and groups last.
    if (spec.independents > 0) {
        out.has_independents = true;
        out.independent_threshold = e.profile.thresholds.front();
        out.independent_utility = e.per_type_utility.front();
    }
    if (spec.groups > 0) {
        const std::size_t u = system.classes.size() - 1;
        out.has_groups = true;
        out.group_threshold = e.profile.thresholds[u];
        out.colluder_utility = e.per_type_utility[u];
        if (e.status == EquilibriumStatus::converged) {
            const double market = system.classes[u].market_rho() / system.request_weight();
            const double all = e.p_internal[u] + market;
            out.internal_fraction = all > 0.0 ? e.p_internal[u] / all : 0.0;
        }
    }
    return out;
}

nlohmann::json result_to_json(const EquilibriumResult& r) {
    nlohmann::json j;
    j["status"] = to_string(r.status);
    j["thresholds"] = r.profile.thresholds;
    j["lambda"] = r.lambda;
    j["p_s"] = r.rates.p_s;
    j["p_e"] = r.rates.p_e;
    j["p_internal"] = r.p_internal;
    j["starved"] = r.rates.starved;
    j["welfare_rate"] = r.welfare_rate;
    j["welfare_per_agent"] = r.welfare_per_agent;
    j["discounted_welfare"] = r.discounted_welfare;
    j["per_type_utility"] = r.per_type_utility;
    j["utility_at_zero"] = r.utility_at_zero;
    j["epsilon"] = r.epsilon;
    j["epsilon_target"] = r.epsilon_target;
    j["iterations"] = r.iterations;
    j["cap_binding"] = r.cap_binding;
    j["damping_used"] = r.damping_used;
    j["multiple_equilibria"] = r.multiple_equilibria;
    j["bottom_status"] = to_string(r.bottom_status);
    j["bottom_thresholds"] = r.bottom_profile.thresholds;
    j["previous_thresholds"] = r.previous_profile.thresholds;
    return j;
}

}  // namespace scrip
