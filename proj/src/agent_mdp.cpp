#include "scrip/agent_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "scrip/csv.hpp"

namespace scrip {

namespace {

constexpr double kValueTolerance = 1e-10;
constexpr int kMaxSweeps = 5'000'000;
constexpr int kMaxPolicyRounds = 200;

void check_probability(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) {
        std::ostringstream os;
        os << what << " must lie in [0,1] (got " << p << ")";
        throw ValidationError(os.str());
    }
}

double per_round_discount(const AgentType& type, std::int64_t n) {
    if (n <= 0) throw ValidationError("agent count must be positive");
    return std::pow(type.delta, 1.0 / static_cast<double>(n));
}

// Birth-death decision problem shared by individuals (p_internal = 0) and
// groups. Levels 0..top; volunteering moves up, spending moves down.
struct MoneyChain {
    double discount = 0.0;
    double alpha = 0.0;
    double gamma = 0.0;
    double p_spend = 0.0;
    double p_internal = 0.0;
    double p_earn = 0.0;
    int top = 0;
};

struct Policy {
    std::vector<bool> volunteer;      // per level
    std::vector<bool> serve_inside;   // internal request handled inside the group
};

struct LevelDynamics {
    double down = 0.0;
    double up = 0.0;
    double reward = 0.0;
};

LevelDynamics dynamics(const MoneyChain& c, int i, bool volunteer, bool inside) {
    LevelDynamics d;
    if (i >= 1) {
        d.down += c.p_spend;
        d.reward += c.p_spend * c.gamma;
    }
    if (c.p_internal > 0.0) {
        if (inside || i == 0) {
            d.reward += c.p_internal * (c.gamma - c.alpha);
        } else {
            d.down += c.p_internal;
            d.reward += c.p_internal * c.gamma;
        }
    }
    if (volunteer && i < c.top) {
        d.up += c.p_earn;
        d.reward -= c.p_earn * c.alpha;
    }
    return d;
}

// Value of one level with its self-loop folded in.
double backed_up(const MoneyChain& c, const std::vector<double>& v, int i, const LevelDynamics& d) {
    double num = d.reward;
    if (d.down > 0.0) num += c.discount * d.down * v[static_cast<std::size_t>(i - 1)];
    if (d.up > 0.0) num += c.discount * d.up * v[static_cast<std::size_t>(i + 1)];
    const double self = 1.0 - d.down - d.up;
    return num / (1.0 - c.discount * self);
}

// Exact policy evaluation: tridiagonal system solved by the Thomas algorithm.
std::vector<double> evaluate(const MoneyChain& c, const Policy& p) {
    const std::size_t n = static_cast<std::size_t>(c.top) + 1;
    std::vector<double> lower(n, 0.0), diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto d = dynamics(c, static_cast<int>(i), p.volunteer[i], p.serve_inside[i]);
        diag[i] = 1.0 - c.discount * (1.0 - d.down - d.up);
        if (i > 0) lower[i] = -c.discount * d.down;
        if (i + 1 < n) upper[i] = -c.discount * d.up;
        rhs[i] = d.reward;
    }
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    std::vector<double> v(n);
    v[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) v[i] = (rhs[i] - upper[i] * v[i + 1]) / diag[i];
    return v;
}

Policy greedy(const MoneyChain& c, const std::vector<double>& v) {
    double scale = 1.0;
    for (double x : v) scale = std::max(scale, std::abs(x));
    const double tie = 1e-12 * scale;
    const std::size_t n = v.size();
    Policy p{std::vector<bool>(n, false), std::vector<bool>(n, true)};
    for (std::size_t i = 0; i < n; ++i) {
        if (i + 1 < n && c.p_earn > 0.0)
            p.volunteer[i] = c.discount * (v[i + 1] - v[i]) - c.alpha > tie;
        if (i >= 1 && c.p_internal > 0.0)
            p.serve_inside[i] = c.discount * (v[i] - v[i - 1]) - c.alpha > tie;
    }
    return p;
}

MdpSolution solve_chain(const MoneyChain& c) {
    const std::size_t n = static_cast<std::size_t>(c.top) + 1;
    std::vector<double> v(n, 0.0), next(n, 0.0);
    int sweeps = 0;
    for (; sweeps < kMaxSweeps; ++sweeps) {
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int level = static_cast<int>(i);
            double best = -std::numeric_limits<double>::infinity();
            for (int vol = 0; vol <= (level < c.top ? 1 : 0); ++vol) {
                for (int inside = 1; inside >= ((c.p_internal > 0.0 && level > 0) ? 0 : 1); --inside) {
                    const auto d = dynamics(c, level, vol == 1, inside == 1);
                    best = std::max(best, backed_up(c, v, level, d));
                }
            }
            next[i] = best;
            change = std::max(change, std::abs(best - v[i]));
        }
        v.swap(next);
        if (change <= kValueTolerance) break;
    }

    Policy policy = greedy(c, v);
    for (int round = 0; round < kMaxPolicyRounds; ++round) {
        v = evaluate(c, policy);
        Policy improved = greedy(c, v);
        if (improved.volunteer == policy.volunteer && improved.serve_inside == policy.serve_inside)
            break;
        policy = std::move(improved);
    }

    MdpSolution s;
    s.values = std::move(v);
    s.volunteers = policy.volunteer;
    s.per_round_discount = c.discount;
    s.iterations = sweeps;
    int k = 0;
    while (k < c.top && policy.volunteer[static_cast<std::size_t>(k)]) ++k;
    for (std::size_t i = static_cast<std::size_t>(k); i < n; ++i)
        if (policy.volunteer[i])
            throw InternalConsistencyError("optimal policy is not a threshold policy");
    s.threshold = k;
    s.cap_binding = k == c.top;
    return s;
}

MoneyChain individual_chain(const AgentType& type, AgentRates rates, std::int64_t n, int top) {
    check_probability(rates.p_s, "p_s");
    check_probability(rates.p_e, "p_e");
    if (rates.p_s + rates.p_e > 1.0 + 1e-12)
        throw ValidationError("p_s + p_e must not exceed 1 (one event per round)");
    MoneyChain c;
    c.discount = per_round_discount(type, n);
    c.alpha = type.alpha;
    c.gamma = type.gamma;
    c.p_spend = rates.p_s;
    c.p_earn = rates.p_e;
    c.top = top;
    return c;
}

MoneyChain group_chain(const AgentType& member, GroupRates rates, std::int64_t n, int top) {
    check_probability(rates.p_internal, "p_internal");
    check_probability(rates.p_spend, "p_spend");
    check_probability(rates.p_earn, "p_earn");
    if (rates.p_internal + rates.p_spend + rates.p_earn > 1.0 + 1e-12)
        throw ValidationError("group event probabilities must not exceed 1");
    MoneyChain c;
    c.discount = per_round_discount(member, n);
    c.alpha = member.alpha;
    c.gamma = member.gamma;
    c.p_spend = rates.p_spend;
    c.p_internal = rates.p_internal;
    c.p_earn = rates.p_earn;
    c.top = top;
    return c;
}

}  // namespace

AgentChain agent_chain(double r, int k) {
    if (!(r >= 0.0)) throw ValidationError("earn/spend ratio must be >= 0");
    if (k < 0) throw ValidationError("threshold must be >= 0");
    AgentChain chain{r, k, std::vector<double>(static_cast<std::size_t>(k) + 1, 0.0)};
    if (r == 0.0) {
        chain.pi[0] = 1.0;
        return chain;
    }
    // Normalize r^i against the largest term to stay finite for r > 1.
    const double lr = std::log(r);
    const double peak = r > 1.0 ? k * lr : 0.0;
    double z = 0.0;
    for (int i = 0; i <= k; ++i) z += std::exp(i * lr - peak);
    for (int i = 0; i <= k; ++i) chain.pi[static_cast<std::size_t>(i)] = std::exp(i * lr - peak) / z;
    return chain;
}

double satisfaction_fraction(double r, int k) {
    if (!(r >= 0.0)) throw ValidationError("earn/spend ratio must be >= 0");
    if (k < 0) throw ValidationError("threshold must be >= 0");
    if (k == 0 || r == 0.0) return 0.0;
    if (r == 1.0) return static_cast<double>(k) / (k + 1.0);
    if (std::abs(r - 1.0) < 1e-6) return 1.0 - agent_chain(r, k).pi[0];
    if (r < 1.0) {
        const double top = std::pow(r, k + 1);
        return (r - top) / (1.0 - top);
    }
    // Divide through by r^{k+1}.
    const double inv = 1.0 / r;
    return (std::pow(inv, k) - 1.0) / (std::pow(inv, k + 1) - 1.0);
}

MdpSolution solve_agent_mdp(const AgentType& type, AgentRates rates, std::int64_t n, int k_max) {
    if (k_max < 0) throw ValidationError("K_max must be >= 0");
    return solve_chain(individual_chain(type, rates, n, k_max));
}

std::vector<double> threshold_values(const AgentType& type, AgentRates rates, std::int64_t n,
                                     int k) {
    if (k < 0) throw ValidationError("threshold must be >= 0");
    const auto chain = individual_chain(type, rates, n, k);
    const std::size_t levels = static_cast<std::size_t>(k) + 1;
    Policy p{std::vector<bool>(levels, true), std::vector<bool>(levels, true)};
    p.volunteer[levels - 1] = false;
    return evaluate(chain, p);
}

double utility_of_threshold(const AgentType& type, AgentRates rates, std::int64_t n, int k) {
    return threshold_values(type, rates, n, k).front();
}

GroupChain make_group_chain(const AgentType& member, int group_size) {
    return GroupChain{group_size, internal_satisfaction_probability(member.beta, group_size)};
}

GroupRates group_rates(const GroupChain& group, AgentRates member, double group_p_earn) {
    const double requests = group.group_size * member.p_s;
    return GroupRates{requests * group.beta_int, requests * (1.0 - group.beta_int), group_p_earn};
}

MdpSolution solve_group_mdp(const GroupChain& group, const AgentType& member, GroupRates rates,
                            std::int64_t n, int k_max) {
    if (group.group_size < 1) throw ValidationError("group size must be >= 1");
    if (!(group.beta_int >= 0.0 && group.beta_int < 1.0))
        throw ValidationError("internal satisfaction probability must lie in [0,1)");
    if (k_max < 0) throw ValidationError("K_max must be >= 0");
    return solve_chain(group_chain(member, rates, n, k_max));
}

std::vector<double> group_threshold_values(const AgentType& member, GroupRates rates,
                                           std::int64_t n, int k) {
    if (k < 0) throw ValidationError("threshold must be >= 0");
    const auto chain = group_chain(member, rates, n, k);
    const std::size_t levels = static_cast<std::size_t>(k) + 1;
    Policy p{std::vector<bool>(levels, true), std::vector<bool>(levels, true)};
    p.volunteer[levels - 1] = false;
    return evaluate(chain, p);
}

void write_policy_csv(std::ostream& os, const MdpSolution& s) {
    os << "money_level,value,volunteers\n";
    for (std::size_t i = 0; i < s.values.size(); ++i)
        csv::write_row(os, {std::to_string(i), csv::number(s.values[i]),
                            s.volunteers[i] ? "true" : "false"});
}

}  // namespace scrip
