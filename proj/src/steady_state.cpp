#include "scrip/steady_state.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "scrip/csv.hpp"

namespace scrip {

namespace {

constexpr double kLogLambdaLo = -27.631021115928547;  // log(1e-12)
constexpr double kLogLambdaHi = 27.631021115928547;   // log(1e12)
constexpr int kMaxBisection = 200;

double log_sum_exp(const std::vector<double>& xs) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : xs) hi = std::max(hi, x);
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - hi);
    return hi + std::log(s);
}

// Row of M* for one type: f * (lambda*omega)^i / sum_j (lambda*omega)^j.
std::vector<double> mstar_row(double omega, double fraction, int k, double log_lambda) {
    std::vector<double> row(static_cast<std::size_t>(k) + 1, 0.0);
    if (omega <= 0.0 || k == 0) {
        row[0] = fraction;
        return row;
    }
    const double step = log_lambda + std::log(omega);
    std::vector<double> logw(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) logw[i] = static_cast<double>(i) * step;
    const double z = log_sum_exp(logw);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = fraction * std::exp(logw[i] - z);
    return row;
}

double mean_at(std::span<const double> omegas, std::span<const double> fractions,
               std::span<const int> thresholds, double log_lambda) {
    double mean = 0.0;
    for (std::size_t t = 0; t < omegas.size(); ++t) {
        const auto row = mstar_row(omegas[t], fractions[t], thresholds[t], log_lambda);
        for (std::size_t i = 1; i < row.size(); ++i) mean += static_cast<double>(i) * row[i];
    }
    return mean;
}

}  // namespace

std::vector<double> omega_vector(const SystemSpec& spec) {
    std::vector<double> out;
    out.reserve(spec.types.size());
    for (const auto& t : spec.types) out.push_back(t.omega());
    return out;
}

MoneyDistribution compute_q(const SystemSpec& spec, const StrategyProfile& profile) {
    validate_profile(spec, profile, std::numeric_limits<int>::max());
    const auto omegas = omega_vector(spec);
    if (std::all_of(omegas.begin(), omegas.end(), [](double w) { return w <= 0.0; }))
        throw DegenerateReferenceError("every omega_t is zero: no agent can ever earn");

    std::vector<double> logw;
    for (std::size_t t = 0; t < omegas.size(); ++t) {
        logw.push_back(0.0);
        if (omegas[t] <= 0.0) continue;
        for (int i = 1; i <= profile.thresholds[t]; ++i)
            logw.push_back(static_cast<double>(i) * std::log(omegas[t]));
    }
    const double log_z = log_sum_exp(logw);

    MoneyDistribution q;
    for (std::size_t t = 0; t < omegas.size(); ++t) {
        std::vector<double> row(static_cast<std::size_t>(profile.thresholds[t]) + 1, 0.0);
        row[0] = std::exp(-log_z);
        if (omegas[t] > 0.0)
            for (std::size_t i = 1; i < row.size(); ++i)
                row[i] = std::exp(static_cast<double>(i) * std::log(omegas[t]) - log_z);
        q.mass.push_back(std::move(row));
    }
    return q;
}

double mstar_mean_money(std::span<const double> omegas, std::span<const double> fractions,
                        std::span<const int> thresholds, double lambda) {
    return mean_at(omegas, fractions, thresholds, std::log(lambda));
}

MStarSolution solve_mstar(std::span<const double> omegas, std::span<const double> fractions,
                          std::span<const int> thresholds, double mean_money) {
    if (omegas.size() != fractions.size() || omegas.size() != thresholds.size())
        throw ValidationError("solve_mstar: mismatched type arrays");
    if (mean_money < 0.0) throw ValidationError("solve_mstar: negative mean money");

    MStarSolution out;
    if (mean_money == 0.0) {
        for (std::size_t t = 0; t < omegas.size(); ++t) {
            std::vector<double> row(static_cast<std::size_t>(thresholds[t]) + 1, 0.0);
            row[0] = fractions[t];
            out.mstar.mass.push_back(std::move(row));
        }
        out.solve = LambdaSolve{0.0, 0.0, 0};
        return out;
    }

    double capacity = 0.0;
    for (std::size_t t = 0; t < omegas.size(); ++t)
        if (omegas[t] > 0.0) capacity += fractions[t] * thresholds[t];
    if (mean_money >= capacity) {
        std::ostringstream os;
        os.precision(12);
        os << "mean money " << mean_money << " >= threshold capacity " << capacity
           << ": no money-absorbing state";
        throw InfeasibleError(os.str());
    }

    double lo = kLogLambdaLo;
    double hi = kLogLambdaHi;
    // Widen the bracket for targets hugging either end of the feasible range.
    while (mean_at(omegas, fractions, thresholds, hi) < mean_money && hi < 700.0) hi += kLogLambdaHi;
    while (mean_at(omegas, fractions, thresholds, lo) > mean_money && lo > -700.0) lo -= kLogLambdaHi;

    double x = 0.5 * (lo + hi);
    double residual = mean_at(omegas, fractions, thresholds, x) - mean_money;
    int it = 0;
    for (; it < kMaxBisection && std::abs(residual) > 1e-2 * kMStarTolerance; ++it) {
        if (residual < 0.0) lo = x;
        else hi = x;
        x = 0.5 * (lo + hi);
        residual = mean_at(omegas, fractions, thresholds, x) - mean_money;
    }
    if (std::abs(residual) > kMStarTolerance) {
        std::ostringstream os;
        os.precision(12);
        os << "lambda bisection stalled with residual " << residual;
        throw InfeasibleError(os.str());
    }

    for (std::size_t t = 0; t < omegas.size(); ++t)
        out.mstar.mass.push_back(mstar_row(omegas[t], fractions[t], thresholds[t], x));
    out.solve = LambdaSolve{std::exp(x), residual, it};
    return out;
}

MStarSolution solve_mstar(const SystemSpec& spec, const StrategyProfile& profile) {
    validate_profile(spec, profile, std::numeric_limits<int>::max());
    const auto omegas = omega_vector(spec);
    return solve_mstar(omegas, spec.fractions, profile.thresholds, spec.m);
}

double relative_entropy(const MoneyDistribution& p, const MoneyDistribution& q) {
    double d = 0.0;
    for (std::size_t t = 0; t < p.type_count(); ++t) {
        for (std::size_t i = 0; i < p.mass[t].size(); ++i) {
            const double pi = p.mass[t][i];
            if (pi <= 0.0) continue;
            const double qi = q.at(t, i);
            if (qi <= 0.0) return std::numeric_limits<double>::infinity();
            d += pi * std::log(pi / qi);
        }
    }
    return d;
}

// --- exact small systems ----------------------------------------------------

namespace {

struct AgentLayout {
    std::vector<int> type;
    std::vector<int> cap;
};

AgentLayout layout_agents(const SystemSpec& spec, const StrategyProfile& profile) {
    AgentLayout a;
    for (std::size_t t = 0; t < spec.types.size(); ++t)
        for (std::int64_t c = 0; c < spec.agents_of(t); ++c) {
            a.type.push_back(static_cast<int>(t));
            a.cap.push_back(profile.thresholds[t]);
        }
    return a;
}

}  // namespace

std::size_t ExactStationary::index_of(std::span<const int> allocation) const {
    auto less = [](const ExactChainState& s, std::span<const int> x) {
        return std::lexicographical_compare(s.allocation.begin(), s.allocation.end(), x.begin(),
                                            x.end());
    };
    auto it = std::lower_bound(states.begin(), states.end(), allocation, less);
    if (it == states.end() || !std::equal(it->allocation.begin(), it->allocation.end(),
                                          allocation.begin(), allocation.end()))
        throw ScripError("allocation is not a state of the chain");
    return static_cast<std::size_t>(it - states.begin());
}

ExactStationary exact_stationary(const SystemSpec& spec, const StrategyProfile& profile) {
    validate_profile(spec, profile, std::numeric_limits<int>::max());
    if (static_cast<std::size_t>(spec.n) > kMaxExactAgents)
        throw StateSpaceTooLargeError("exact enumeration supports at most 8 agents");
    const auto layout = layout_agents(spec, profile);
    const std::int64_t money = spec.total_money();
    const std::size_t n = layout.type.size();

    std::int64_t capacity = 0;
    for (int c : layout.cap) capacity += c;
    if (capacity < money) throw InfeasibleError("thresholds cannot hold the money supply");

    ExactStationary out;
    out.agent_type = layout.type;

    // Lexicographic enumeration of bounded compositions of `money`.
    std::vector<std::int64_t> suffix_cap(n + 1, 0);
    for (std::size_t i = n; i-- > 0;) suffix_cap[i] = suffix_cap[i + 1] + layout.cap[i];
    std::vector<int> x(n, 0);
    auto recurse = [&](auto&& self, std::size_t i, std::int64_t left) -> void {
        if (i + 1 == n) {
            x[i] = static_cast<int>(left);
            if (out.states.size() >= kMaxExactStates)
                throw StateSpaceTooLargeError("exact state space exceeds 10^6 states");
            out.states.push_back(ExactChainState{x, 0.0});
            return;
        }
        const std::int64_t lo = std::max<std::int64_t>(0, left - suffix_cap[i + 1]);
        const std::int64_t hi = std::min<std::int64_t>(layout.cap[i], left);
        for (std::int64_t v = lo; v <= hi; ++v) {
            x[i] = static_cast<int>(v);
            self(self, i + 1, left - v);
        }
    };
    recurse(recurse, 0, money);

    if (out.states.size() > 1)
        for (std::size_t i = 0; i < n; ++i)
            if (spec.types[static_cast<std::size_t>(layout.type[i])].beta <= 0.0)
                throw NonErgodicError("an agent with beta = 0 can never earn: chain is reducible");

    std::vector<double> logw(out.states.size(), 0.0);
    for (std::size_t s = 0; s < out.states.size(); ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            const int xi = out.states[s].allocation[i];
            if (xi == 0) continue;
            logw[s] += xi * std::log(spec.types[static_cast<std::size_t>(layout.type[i])].omega());
        }
    }
    const double log_z = log_sum_exp(logw);
    out.probability.resize(out.states.size());
    for (std::size_t s = 0; s < out.states.size(); ++s) {
        out.states[s].weight = std::exp(logw[s]);
        out.probability[s] = std::exp(logw[s] - log_z);
    }
    return out;
}

double SparseTransitionMatrix::at(std::size_t from, std::size_t to) const {
    for (const auto& [col, p] : rows.at(from))
        if (col == to) return p;
    return 0.0;
}

SparseTransitionMatrix build_transition_matrix(const SystemSpec& spec,
                                               const StrategyProfile& profile,
                                               const ExactStationary& chain) {
    const std::size_t n = chain.agent_type.size();
    std::vector<double> rho(n), beta(n), chi(n);
    std::vector<int> cap(n);
    double rho_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = spec.types[static_cast<std::size_t>(chain.agent_type[i])];
        rho[i] = t.rho;
        beta[i] = t.beta;
        chi[i] = t.chi;
        cap[i] = profile.thresholds[static_cast<std::size_t>(chain.agent_type[i])];
        rho_total += t.rho;
    }

    SparseTransitionMatrix m;
    m.rows.resize(chain.states.size());
    std::vector<int> y(n);
    for (std::size_t s = 0; s < chain.states.size(); ++s) {
        const auto& x = chain.states[s].allocation;
        std::map<std::size_t, double> row;
        for (std::size_t req = 0; req < n; ++req) {
            const double p_req = rho[req] / rho_total;
            if (x[req] == 0) {
                row[s] += p_req;
                continue;
            }
            std::vector<std::size_t> willing;
            for (std::size_t j = 0; j < n; ++j)
                if (j != req && x[j] < cap[j]) willing.push_back(j);
            const std::size_t subsets = std::size_t{1} << willing.size();
            for (std::size_t mask = 0; mask < subsets; ++mask) {
                double p_set = p_req;
                double weight = 0.0;
                for (std::size_t b = 0; b < willing.size(); ++b) {
                    const std::size_t j = willing[b];
                    if (mask & (std::size_t{1} << b)) {
                        p_set *= beta[j];
                        weight += chi[j];
                    } else {
                        p_set *= 1.0 - beta[j];
                    }
                }
                if (p_set == 0.0) continue;
                if (mask == 0) {
                    row[s] += p_set;
                    continue;
                }
                for (std::size_t b = 0; b < willing.size(); ++b) {
                    if (!(mask & (std::size_t{1} << b))) continue;
                    const std::size_t j = willing[b];
                    y = x;
                    y[req] -= 1;
                    y[j] += 1;
                    row[chain.index_of(y)] += p_set * chi[j] / weight;
                }
            }
        }
        m.rows[s].assign(row.begin(), row.end());
    }
    return m;
}

MonotonicityDelta monotonicity_check(const SystemSpec& spec, const StrategyProfile& profile,
                                     const StrategyProfile& raised) {
    validate_profile(spec, raised, std::numeric_limits<int>::max());
    for (std::size_t t = 0; t < profile.thresholds.size(); ++t)
        if (raised.thresholds.at(t) < profile.thresholds[t])
            throw ValidationError("raised profile must dominate the base profile");
    const auto base = solve_mstar(spec, profile).mstar;
    const auto up = solve_mstar(spec, raised).mstar;
    return MonotonicityDelta{up.mass_at_zero() - base.mass_at_zero(),
                             up.mass_at_top() - base.mass_at_top()};
}

void write_distribution_csv(std::ostream& os, const MoneyDistribution& d) {
    os << "type_index,money_level,mass\n";
    for (std::size_t t = 0; t < d.type_count(); ++t)
        for (std::size_t i = 0; i < d.mass[t].size(); ++i)
            csv::write_row(os, {std::to_string(t), std::to_string(i), csv::number(d.mass[t][i])});
}

}  // namespace scrip
