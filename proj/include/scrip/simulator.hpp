#pragma once

// Monte Carlo execution of the round protocol. One round: a requester is
// drawn in proportion to rho; if it can pay, every other willing agent is
// able with probability beta and one able agent is picked in proportion to
// chi to do the job for a dollar.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "scrip/equilibrium.hpp"
#include "scrip/model.hpp"

namespace scrip {

/// Counter-based generator: draw j of stream s is fmix64(key_s + j*golden),
/// so each purpose has its own reproducible sequence.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t seed, std::uint64_t stream);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()();

    double uniform();                          // [0, 1)
    std::uint64_t below(std::uint64_t bound);  // [0, bound)
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t position() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

enum class RngStream : std::uint64_t { init = 1, requester, ability, volunteer, internal, chain };

struct SimOptions {
    std::int64_t rounds = 0;   // total rounds including warmup
    std::int64_t warmup = -1;  // negative: 100 * n
    std::uint64_t seed = 1;
    bool trace = false;              // record ||M - M*|| every trace_every rounds
    std::int64_t trace_every = 0;    // 0: n
    bool track_units = false;        // per-unit money occupancy
};

struct ClassCounts {
    std::int64_t requests = 0;         // all requests by members of the class
    std::int64_t market_requests = 0;  // requests that went to the market
    std::int64_t satisfiable = 0;      // market requests with a willing, able volunteer
    std::int64_t paid = 0;             // satisfiable requests the requester could pay for
    std::int64_t jobs = 0;             // jobs worked
    std::int64_t internal = 0;         // requests served inside a group
    double willing_unit_rounds = 0.0;  // time integral of willing units
    double reward = 0.0;               // undiscounted utility, all members
    double discounted_reward = 0.0;    // discounted from the warmup boundary
};

struct SimReport {
    std::int64_t rounds = 0;
    std::int64_t warmup = 0;
    std::uint64_t seed = 0;
    std::int64_t n = 0;
    std::vector<int> thresholds;
    std::vector<int> group_size;
    std::vector<std::int64_t> units;
    std::vector<ClassCounts> counts;
    MoneyDistribution empirical;  // time-average fraction of units per (class, level)
    std::optional<MoneyDistribution> reference;
    std::vector<std::pair<std::int64_t, double>> trace;
    double mean_trace_distance = 0.0;
    std::int64_t final_total_money = 0;
    /// Time spent by each unit at each money level (track_units only).
    std::vector<std::vector<double>> unit_occupancy;

    std::int64_t measured_rounds() const { return rounds - warmup; }
    double p_s(std::size_t c) const;
    double p_e(std::size_t c) const;
    /// Per agent per unit of time.
    double average_utility(std::size_t c) const;
    double discounted_utility(std::size_t c) const;
    double distance_to_reference() const;
};

SimReport run_units(const UnitSystem& system, const StrategyProfile& profile,
                    const SimOptions& options);

SimReport run_rounds(const SystemSpec& spec, const StrategyProfile& profile, std::int64_t rounds,
                     std::uint64_t seed, std::int64_t warmup = -1);
SimReport run_rounds(const SystemSpec& spec, const StrategyProfile& profile,
                     const SimOptions& options);

/// Profile thresholds follow units_of(spec): independents first, then groups.
SimReport run_with_groups(const CollusionSpec& spec, const StrategyProfile& profile,
                          std::int64_t rounds, std::uint64_t seed, std::int64_t warmup = -1);
SimReport run_with_groups(const CollusionSpec& spec, const StrategyProfile& profile,
                          const SimOptions& options);

/// Paid over satisfiable market requests of a class; empty when nothing
/// was satisfiable.
std::optional<double> measure_satisfaction(const SimReport& report, std::size_t class_index);

struct TaggedAgentCounts {
    std::int64_t satisfiable = 0;
    std::int64_t paid = 0;
    std::int64_t earned = 0;
};

/// One agent with pinned per-round probabilities: a satisfiable request
/// with p_s, otherwise a job offer with p_e, volunteering below k.
TaggedAgentCounts simulate_tagged_agent(double p_s, double p_e, int k, std::int64_t rounds,
                                        std::uint64_t seed);

/// Per-class rows: class_index,group_size,units,threshold,requests,market_requests,
/// satisfiable,paid,jobs,internal,p_s,p_e,satisfaction,average_utility,discounted_utility
void write_report_csv(std::ostream& os, const SimReport& report);
/// round,distance
void write_trace_csv(std::ostream& os, const SimReport& report);

}  // namespace scrip
