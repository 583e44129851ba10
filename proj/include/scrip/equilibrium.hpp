#pragma once

// Mean-field rates, best-response iteration over threshold profiles, crash
// detection and welfare accounting.
//
// Every population is handled as a list of decision units. A plain type is
// a class of single agents; a collusive group is one unit of c members that
// pools money and volunteers as a block.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "scrip/agent_mdp.hpp"
#include "scrip/model.hpp"

namespace scrip {

enum class EquilibriumStatus { converged, crash, max_iter };

std::string to_string(EquilibriumStatus status);

struct UnitClass {
    AgentType member;
    int group_size = 1;
    double beta_int = 0.0;
    std::int64_t units = 0;

    std::int64_t agents() const { return units * group_size; }
    double chi() const { return member.chi * group_size; }
    /// Expected selection weight of a willing unit.
    double able_weight() const { return member.beta * chi(); }
    /// Request weight of the unit that reaches the market.
    double market_rho() const { return member.rho * group_size * (1.0 - beta_int); }
    /// Request weight of the unit that a group-mate can serve.
    double internal_rho() const { return member.rho * group_size * beta_int; }
    double omega() const { return able_weight() / market_rho(); }
};

struct UnitSystem {
    std::vector<UnitClass> classes;
    std::int64_t n = 0;            // real agents
    std::int64_t total_money = 0;

    std::int64_t unit_count() const;
    std::vector<double> fractions() const;
    std::vector<double> omegas() const;
    double mean_money_per_unit() const;
    /// Sum of rho over all real agents.
    double request_weight() const;
};

UnitSystem units_of(const SystemSpec& spec);
/// Independents first (if any), then groups (if any).
UnitSystem units_of(const CollusionSpec& spec);

struct UnitRates {
    RateEstimates rates;
    std::vector<double> p_internal;  // per class, zero for single agents
};

UnitRates unit_rates(const UnitSystem& system, const StrategyProfile& profile,
                     const MoneyDistribution& mstar);

/// Rates of every type for a plain population:
/// p_e = P_pay*beta*chi / max(V - beta*chi, chi),
/// p_s = rho/(n*rho_bar) * (1 - exp(-(V - beta*chi))).
RateEstimates mean_field_rates(const SystemSpec& spec, const StrategyProfile& profile,
                               const MoneyDistribution& mstar);

struct EquilibriumOptions {
    int k_max = kDefaultMaxThreshold;
    double epsilon = -1.0;  // negative: 1e-4 * gamma_max
    int max_iter = 500;
    bool bottom_start = true;
};

struct EquilibriumResult {
    EquilibriumStatus status = EquilibriumStatus::max_iter;
    StrategyProfile profile;
    MoneyDistribution mstar;
    double lambda = 0.0;
    RateEstimates rates;
    std::vector<double> p_internal;
    std::vector<double> per_type_utility;  // per agent, steady-state average of discounted value
    std::vector<double> utility_at_zero;   // per agent, value holding no money
    double welfare_rate = 0.0;             // utils per unit time, whole population
    double welfare_per_agent = 0.0;
    double discounted_welfare = 0.0;       // sum of per_type_utility over agents
    double epsilon = 0.0;                  // largest per-member gain from deviating, any money level
    double epsilon_target = 0.0;
    int iterations = 0;
    bool cap_binding = false;
    bool damping_used = false;
    bool multiple_equilibria = false;
    StrategyProfile bottom_profile;        // fixed point reached from below
    EquilibriumStatus bottom_status = EquilibriumStatus::max_iter;
    StrategyProfile previous_profile;      // second-to-last profile visited
    std::vector<MdpSolution> best_responses;
};

/// Monotone best-response iteration from the all-K_max profile, plus a
/// separate upward pass from the lowest feasible uniform profile.
EquilibriumResult find_equilibrium(const UnitSystem& system, const EquilibriumOptions& options = {});
EquilibriumResult find_equilibrium(const SystemSpec& spec, const EquilibriumOptions& options = {});

/// Welfare of a result in utils per unit time for the whole population.
double social_welfare(const UnitSystem& system, const EquilibriumResult& result);
double social_welfare(const SystemSpec& spec, const EquilibriumResult& result);

struct CollusionResult {
    EquilibriumResult equilibrium;
    int group_threshold = 0;
    int independent_threshold = 0;
    double colluder_utility = 0.0;     // per member
    double independent_utility = 0.0;  // per agent
    /// Fraction of all requests by colluders that are served inside groups.
    double internal_fraction = 0.0;
    bool has_groups = false;
    bool has_independents = false;
};

CollusionResult find_collusion_equilibrium(const CollusionSpec& spec,
                                           const EquilibriumOptions& options = {});

nlohmann::json result_to_json(const EquilibriumResult& result);

}  // namespace scrip
