#pragma once

// Steady-state money distributions: the reference distribution q, the
// relative-entropy minimizer M*, exact product-form stationary
// distributions of small systems, and the threshold monotonicity law.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "scrip/model.hpp"

namespace scrip {

class InfeasibleError : public ScripError {
public:
    using ScripError::ScripError;
};

class DegenerateReferenceError : public ScripError {
public:
    using ScripError::ScripError;
};

class NonErgodicError : public ScripError {
public:
    using ScripError::ScripError;
};

class StateSpaceTooLargeError : public ScripError {
public:
    using ScripError::ScripError;
};

std::vector<double> omega_vector(const SystemSpec& spec);

/// q^t_i = omega_t^i / sum_t sum_{j<=k_t} omega_t^j.
MoneyDistribution compute_q(const SystemSpec& spec, const StrategyProfile& profile);

struct LambdaSolve {
    double lambda = 1.0;
    double residual = 0.0;  // achieved mean money minus target
    int iterations = 0;
};

struct MStarSolution {
    MoneyDistribution mstar;
    LambdaSolve solve;
};

inline constexpr double kMStarTolerance = 1e-10;

/// Minimizer of D(M || q) subject to per-type mass f_t and mean money m.
/// Throws InfeasibleError when m >= sum_t f_t k_t (no money-absorbing state).
MStarSolution solve_mstar(const SystemSpec& spec, const StrategyProfile& profile);

/// Same program on raw weights; `mean_money` is money per population member.
MStarSolution solve_mstar(std::span<const double> omegas, std::span<const double> fractions,
                          std::span<const int> thresholds, double mean_money);

/// Mean money of the M* family at multiplier lambda (no feasibility checks).
double mstar_mean_money(std::span<const double> omegas, std::span<const double> fractions,
                        std::span<const int> thresholds, double lambda);

/// D(p || q) with natural log; terms with p = 0 contribute 0.
double relative_entropy(const MoneyDistribution& p, const MoneyDistribution& q);

// --- exact small systems ----------------------------------------------------

struct ExactChainState {
    std::vector<int> allocation;  // dollars held by each agent
    double weight = 0.0;          // prod_i omega_i^{x_i}
};

struct ExactStationary {
    std::vector<int> agent_type;  // type index of each agent
    std::vector<ExactChainState> states;
    std::vector<double> probability;

    std::size_t index_of(std::span<const int> allocation) const;
};

inline constexpr std::size_t kMaxExactAgents = 8;
inline constexpr std::size_t kMaxExactStates = 1'000'000;

/// Enumerates allocations of m*n dollars consistent with the thresholds and
/// returns pi_x = w_x / Z.
ExactStationary exact_stationary(const SystemSpec& spec, const StrategyProfile& profile);

/// One-round transition matrix of the exact chain, row-stochastic, in the
/// state order of `chain`. Rows hold (column, probability) pairs.
struct SparseTransitionMatrix {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;

    double at(std::size_t from, std::size_t to) const;
};

SparseTransitionMatrix build_transition_matrix(const SystemSpec& spec,
                                               const StrategyProfile& profile,
                                               const ExactStationary& chain);

// --- monotonicity -------------------------------------------------------------

struct MonotonicityDelta {
    double zero_delta = 0.0;       // M_0' - M_0, expected >= 0
    double threshold_delta = 0.0;  // M_k' - M_k, expected <= 0
};

MonotonicityDelta monotonicity_check(const SystemSpec& spec, const StrategyProfile& profile,
                                     const StrategyProfile& raised);

/// CSV with header type_index,money_level,mass (type-major, level-minor).
void write_distribution_csv(std::ostream& os, const MoneyDistribution& d);

}  // namespace scrip
