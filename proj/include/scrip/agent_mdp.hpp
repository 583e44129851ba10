#pragma once

// Single-agent and collusive-group decision problems. Money levels form a
// birth-death chain; the agent picks when to volunteer.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "scrip/model.hpp"

namespace scrip {

class InternalConsistencyError : public ScripError {
public:
    using ScripError::ScripError;
};

/// Stationary money distribution of one agent playing threshold k with
/// earn/spend ratio r.
struct AgentChain {
    double r = 1.0;
    int k = 0;
    std::vector<double> pi;  // levels 0..k
};

AgentChain agent_chain(double r, int k);

/// Limit fraction of satisfiable requests that the agent can pay for:
/// (r - r^{k+1}) / (1 - r^{k+1}), or k/(k+1) when r = 1.
double satisfaction_fraction(double r, int k);

struct AgentRates {
    double p_s = 0.0;  // per-round probability of a satisfiable own request
    double p_e = 0.0;  // per-round probability of earning while volunteering
};

struct MdpSolution {
    std::vector<double> values;     // expected discounted utility at money 0..K_max
    std::vector<bool> volunteers;   // volunteer decision per level
    int threshold = 0;
    double per_round_discount = 0.0;
    bool cap_binding = false;       // threshold == K_max
    int iterations = 0;             // value-iteration sweeps
};

/// Optimal volunteering policy by value iteration, refined by exact policy
/// evaluation. Indifference resolves to not volunteering.
MdpSolution solve_agent_mdp(const AgentType& type, AgentRates rates, std::int64_t n,
                            int k_max = kDefaultMaxThreshold);

/// Exact discounted values of the threshold-k policy at levels 0..k.
std::vector<double> threshold_values(const AgentType& type, AgentRates rates, std::int64_t n,
                                     int k);

/// Value at money 0 of the threshold-k policy.
double utility_of_threshold(const AgentType& type, AgentRates rates, std::int64_t n, int k);

// --- collusive groups ---------------------------------------------------------

struct GroupChain {
    int group_size = 1;
    double beta_int = 0.0;
};

GroupChain make_group_chain(const AgentType& member, int group_size);

/// Per-round event probabilities of a whole group.
struct GroupRates {
    double p_internal = 0.0;  // a member request some other member can serve
    double p_spend = 0.0;     // a member request that must go to the market
    double p_earn = 0.0;      // the group earns a dollar while volunteering
};

/// Splits c member requests into internal and market shares.
GroupRates group_rates(const GroupChain& group, AgentRates member, double group_p_earn);

/// Group decision problem: volunteer below the threshold, and for requests
/// that can be served internally choose between paying alpha inside and
/// spending a dollar outside.
MdpSolution solve_group_mdp(const GroupChain& group, const AgentType& member, GroupRates rates,
                            std::int64_t n, int k_max = kDefaultMaxThreshold);

/// Exact group values of threshold policy k at levels 0..k.
std::vector<double> group_threshold_values(const AgentType& member, GroupRates rates,
                                           std::int64_t n, int k);

/// CSV with header money_level,value,volunteers.
void write_policy_csv(std::ostream& os, const MdpSolution& solution);

}  // namespace scrip
