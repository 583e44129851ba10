#pragma once

// Domain types for a scrip economy: agent types, populations, threshold
// profiles and money distributions, plus the sybil and collusion rewrites.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace scrip {

inline constexpr int kDefaultMaxThreshold = 64;

class ScripError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public ScripError {
public:
    using ScripError::ScripError;
};

/// Behavioral type (alpha, beta, gamma, delta, rho, chi) of a standard agent.
struct AgentType {
    double alpha = 0.0;  // cost of performing a job
    double beta = 0.0;   // probability of being able to satisfy a request
    double gamma = 1.0;  // benefit of a satisfied request
    double delta = 0.9;  // discount per unit of time
    double rho = 1.0;    // relative request rate
    double chi = 1.0;    // relative selection weight

    /// Likelihood weight beta*chi/rho used by the steady-state distribution.
    double omega() const { return beta * chi / rho; }

    bool operator==(const AgentType&) const = default;
};

void validate_type(const AgentType& type);

/// Population (T, f, n, m).
struct SystemSpec {
    std::vector<AgentType> types;
    std::vector<double> fractions;
    std::int64_t n = 0;
    double m = 0.0;

    std::size_t type_count() const { return types.size(); }
    /// Number of agents of type t (f_t * n, integral after validation).
    std::int64_t agents_of(std::size_t t) const;
    /// Total scrip in circulation (m * n, integral after validation).
    std::int64_t total_money() const;
    double gamma_max() const;
};

/// Returns the spec unchanged if every invariant holds, otherwise throws
/// ValidationError naming the first violation.
SystemSpec validate_spec(SystemSpec spec);

/// One threshold per type: volunteer iff money < k_t.
struct StrategyProfile {
    std::vector<int> thresholds;

    bool operator==(const StrategyProfile&) const = default;
    bool all_zero() const;
    int max_threshold() const;
};

void validate_profile(const SystemSpec& spec, const StrategyProfile& profile,
                      int k_max = kDefaultMaxThreshold);

StrategyProfile uniform_profile(std::size_t types, int k);

/// Fraction of the whole population of type t holding i dollars. Each row
/// covers levels 0..k_t.
struct MoneyDistribution {
    std::vector<std::vector<double>> mass;

    std::size_t type_count() const { return mass.size(); }
    double type_mass(std::size_t t) const;
    double total_mass() const;
    double mean_money() const;
    /// Sum over types of the mass at zero dollars.
    double mass_at_zero() const;
    /// Sum over types of the mass at the top level of each row.
    double mass_at_top() const;
    double at(std::size_t t, std::size_t level) const;
};

/// Squared-difference 2-norm over (type, level), padding short rows with 0.
double l2_distance(const MoneyDistribution& a, const MoneyDistribution& b);

/// Per-type event probabilities per round.
struct RateEstimates {
    std::vector<double> p_s;  // paid, satisfiable own request
    std::vector<double> p_e;  // earn a dollar given volunteering
    bool starved = false;     // no willing-and-able volunteers exist
};

/// Replaces the sub-population `target_fraction` of all agents, taken from
/// type `type_index`, with a copy whose chi is scaled by (1 + sybils). The
/// rewritten types are appended; the remainder of the original type keeps
/// its slot (and is dropped if empty).
SystemSpec apply_sybils(const SystemSpec& spec, double target_fraction, int sybils,
                        std::size_t type_index = 0);

/// Folds types with identical parameters into one entry.
SystemSpec merge_equal_types(const SystemSpec& spec);

/// Internal-satisfaction probability of a group of c same-type agents: at
/// least one of the other c-1 members can do the job.
double internal_satisfaction_probability(double beta, int group_size);

struct CollusionSpec {
    AgentType base;
    int group_size = 1;
    std::int64_t groups = 0;
    std::int64_t independents = 0;
    double beta_int = 0.0;
    std::int64_t n = 0;
    double m = 0.0;

    std::int64_t colluders() const { return groups * group_size; }
    std::int64_t total_money() const;
};

/// Groups `colluding_fraction` of a single-type population into as many
/// groups of `group_size` as fit; leftover agents stay independent.
CollusionSpec make_collusion_spec(const SystemSpec& spec, int group_size,
                                  double colluding_fraction = 1.0);

// --- config ---------------------------------------------------------------

AgentType type_from_json(const nlohmann::json& j);
nlohmann::json type_to_json(const AgentType& type);

/// Reads {"n", "m", "types": [{alpha, beta, gamma, delta, rho, chi, fraction}]}
/// and validates it.
SystemSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const SystemSpec& spec);

/// Loads a config file and validates the "system" block.
SystemSpec load_spec(const std::filesystem::path& path);

}  // namespace scrip
