#include "scrip/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "scrip/csv.hpp"
#include "scrip/steady_state.hpp"

namespace scrip {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(mix64(seed) ^ (stream * kGolden))) {}

CounterRng::result_type CounterRng::operator()() { return mix64(key_ + (++counter_) * kGolden); }

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::below(std::uint64_t bound) {
    const auto wide = static_cast<unsigned __int128>((*this)()) * bound;
    return static_cast<std::uint64_t>(wide >> 64);
}

namespace {

CounterRng stream(std::uint64_t seed, RngStream s) {
    return CounterRng(seed, static_cast<std::uint64_t>(s));
}

class Engine {
public:
    Engine(const UnitSystem& system, const StrategyProfile& profile, const SimOptions& options)
        : sys_(system), k_(profile.thresholds), opt_(options),
          init_(stream(options.seed, RngStream::init)),
          requester_(stream(options.seed, RngStream::requester)),
          ability_(stream(options.seed, RngStream::ability)),
          volunteer_(stream(options.seed, RngStream::volunteer)),
          internal_(stream(options.seed, RngStream::internal)) {
        const std::size_t c = sys_.classes.size();
        if (k_.size() != c) throw ValidationError("profile length must match the number of classes");
        for (int k : k_)
            if (k < 0) throw ValidationError("thresholds must be >= 0");
        if (opt_.warmup < 0) opt_.warmup = 100 * sys_.n;
        if (opt_.rounds <= opt_.warmup) throw ValidationError("rounds must exceed warmup");
        if (opt_.trace_every <= 0) opt_.trace_every = sys_.n;
        for (const auto& cl : sys_.classes)
            discount_.push_back(std::pow(cl.member.delta, 1.0 / static_cast<double>(sys_.n)));
        factor_.assign(sys_.classes.size(), 1.0);

        std::int64_t unit_at = 0;
        std::int64_t agent_at = 0;
        double weight = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const auto& cl = sys_.classes[i];
            unit_offset_.push_back(unit_at);
            agent_offset_.push_back(agent_at);
            unit_at += cl.units;
            agent_at += cl.agents();
            weight += static_cast<double>(cl.agents()) * cl.member.rho;
            request_cdf_.push_back(weight);
        }
        units_ = unit_at;
        if (agent_at != sys_.n) throw ValidationError("class sizes must add up to n");
        unit_class_.resize(static_cast<std::size_t>(units_));
        for (std::size_t i = 0; i < c; ++i)
            for (std::int64_t u = 0; u < sys_.classes[i].units; ++u)
                unit_class_[static_cast<std::size_t>(unit_offset_[i] + u)] = i;
        allocate();
    }

    SimReport run() {
        SimReport report;
        report.rounds = opt_.rounds;
        report.warmup = opt_.warmup;
        report.seed = opt_.seed;
        report.n = sys_.n;
        report.thresholds = k_;
        for (const auto& cl : sys_.classes) {
            report.group_size.push_back(cl.group_size);
            report.units.push_back(cl.units);
        }
        counts_.assign(sys_.classes.size(), ClassCounts{});
        try {
            report.reference = solve_mstar(sys_.omegas(), sys_.fractions(), k_,
                                           sys_.mean_money_per_unit()).mstar;
        } catch (const InfeasibleError&) {
        }

        double trace_sum = 0.0;
        for (std::int64_t t = 0; t < opt_.rounds; ++t) {
            if (t == opt_.warmup) start_measuring();
            const bool measured = t >= opt_.warmup;
            if (measured) {
                for (std::size_t c = 0; c < willing_.size(); ++c)
                    counts_[c].willing_unit_rounds += static_cast<double>(willing_[c].size());
                if (opt_.trace && report.reference && (t - opt_.warmup) % opt_.trace_every == 0) {
                    const double d = l2_distance(snapshot(), *report.reference);
                    report.trace.emplace_back(t, d);
                    trace_sum += d;
                }
            }
            round(t, measured);
            if (measured)
                for (std::size_t c = 0; c < factor_.size(); ++c) factor_[c] *= discount_[c];
#ifndef NDEBUG
            if (t % sys_.n == 0 && total_money() != sys_.total_money)
                throw ScripError("scrip was created or destroyed");
#endif
        }
        finish(report);
        if (!report.trace.empty()) trace_sum /= static_cast<double>(report.trace.size());
        report.mean_trace_distance = trace_sum;
        return report;
    }

private:
    void allocate() {
        const std::int64_t per_agent = sys_.total_money / sys_.n;
        std::vector<std::int64_t> agent_money(static_cast<std::size_t>(sys_.n), per_agent);
        std::int64_t extra = sys_.total_money - per_agent * sys_.n;
        // Partial Fisher-Yates: the first `extra` entries get one more dollar.
        std::vector<std::int64_t> order(static_cast<std::size_t>(sys_.n));
        std::iota(order.begin(), order.end(), 0);
        for (std::int64_t i = 0; i < extra; ++i) {
            const auto j = i + static_cast<std::int64_t>(init_.below(static_cast<std::uint64_t>(sys_.n - i)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            ++agent_money[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        }
        money_.assign(static_cast<std::size_t>(units_), 0);
        for (std::size_t c = 0; c < sys_.classes.size(); ++c) {
            const int size = sys_.classes[c].group_size;
            for (std::int64_t a = 0; a < sys_.classes[c].agents(); ++a)
                money_[static_cast<std::size_t>(unit_offset_[c] + a / size)] +=
                    agent_money[static_cast<std::size_t>(agent_offset_[c] + a)];
        }

        const std::size_t classes = sys_.classes.size();
        top_.assign(classes, 0);
        for (std::int64_t u = 0; u < units_; ++u) {
            const auto c = unit_class_[static_cast<std::size_t>(u)];
            top_[c] = std::max<std::int64_t>(top_[c], money_[static_cast<std::size_t>(u)]);
        }
        willing_.assign(classes, {});
        position_.assign(static_cast<std::size_t>(units_), -1);
        level_count_.assign(classes, {});
        level_time_.assign(classes, {});
        level_since_.assign(classes, {});
        for (std::size_t c = 0; c < classes; ++c) {
            top_[c] = std::max<std::int64_t>(top_[c], k_[c]);
            const auto levels = static_cast<std::size_t>(top_[c]) + 1;
            level_count_[c].assign(levels, 0);
            level_time_[c].assign(levels, 0.0);
            level_since_[c].assign(levels, 0);
        }
        for (std::int64_t u = 0; u < units_; ++u) {
            const auto c = unit_class_[static_cast<std::size_t>(u)];
            ++level_count_[c][static_cast<std::size_t>(money_[static_cast<std::size_t>(u)])];
            if (money_[static_cast<std::size_t>(u)] < k_[c]) add_willing(u, c);
        }
        if (opt_.track_units) {
            occupancy_.assign(static_cast<std::size_t>(units_), {});
            unit_since_.assign(static_cast<std::size_t>(units_), 0);
            for (std::int64_t u = 0; u < units_; ++u)
                occupancy_[static_cast<std::size_t>(u)].assign(
                    static_cast<std::size_t>(top_[unit_class_[static_cast<std::size_t>(u)]]) + 1, 0.0);
        }
    }

    void start_measuring() {
        for (std::size_t c = 0; c < level_time_.size(); ++c) {
            std::fill(level_time_[c].begin(), level_time_[c].end(), 0.0);
            std::fill(level_since_[c].begin(), level_since_[c].end(), opt_.warmup);
        }
        for (auto& row : occupancy_) std::fill(row.begin(), row.end(), 0.0);
        std::fill(unit_since_.begin(), unit_since_.end(), opt_.warmup);
    }

    void add_willing(std::int64_t u, std::size_t c) {
        position_[static_cast<std::size_t>(u)] = static_cast<std::int64_t>(willing_[c].size());
        willing_[c].push_back(u);
    }

    void remove_willing(std::int64_t u, std::size_t c) {
        auto& list = willing_[c];
        const auto at = position_[static_cast<std::size_t>(u)];
        const auto last = list.back();
        list[static_cast<std::size_t>(at)] = last;
        position_[static_cast<std::size_t>(last)] = at;
        list.pop_back();
        position_[static_cast<std::size_t>(u)] = -1;
    }

    // Level occupancy is integrated lazily: a level's count is charged for
    // the rounds since it last changed, up to and including round t.
    void charge_level(std::size_t c, std::size_t level, std::int64_t t) {
        if (t < opt_.warmup) return;
        auto& since = level_since_[c][level];
        level_time_[c][level] += static_cast<double>(level_count_[c][level]) * static_cast<double>(t + 1 - since);
        since = t + 1;
    }

    void set_money(std::int64_t u, std::int64_t value, std::int64_t t) {
        const auto c = unit_class_[static_cast<std::size_t>(u)];
        auto& held = money_[static_cast<std::size_t>(u)];
        const auto from = static_cast<std::size_t>(held);
        const auto to = static_cast<std::size_t>(value);
        charge_level(c, from, t);
        charge_level(c, to, t);
        --level_count_[c][from];
        ++level_count_[c][to];
        if (opt_.track_units && t >= opt_.warmup) {
            auto& since = unit_since_[static_cast<std::size_t>(u)];
            occupancy_[static_cast<std::size_t>(u)][from] += static_cast<double>(t + 1 - since);
            since = t + 1;
        }
        const bool was = held < k_[c];
        held = value;
        const bool is = held < k_[c];
        if (was && !is) remove_willing(u, c);
        if (!was && is) add_willing(u, c);
    }

    void round(std::int64_t t, bool measured) {
        // (1) requester, in proportion to rho.
        const double pick = requester_.uniform() * request_cdf_.back();
        std::size_t rc = 0;
        while (rc + 1 < request_cdf_.size() && pick >= request_cdf_[rc]) ++rc;
        const auto& rcl = sys_.classes[rc];
        const auto agent = static_cast<std::int64_t>(requester_.below(static_cast<std::uint64_t>(rcl.agents())));
        const std::int64_t ru = unit_offset_[rc] + agent / rcl.group_size;
        auto& rcount = counts_[rc];
        if (measured) ++rcount.requests;

        // (2) a group-mate may serve the request at cost alpha.
        if (rcl.group_size > 1 && money_[static_cast<std::size_t>(ru)] <= k_[rc] &&
            internal_.bernoulli(rcl.beta_int)) {
            if (measured) {
                ++rcount.internal;
                const double r = rcl.member.gamma - rcl.member.alpha;
                rcount.reward += r;
                rcount.discounted_reward += factor_[rc] * r;
            }
            return;
        }
        if (measured) ++rcount.market_requests;

        // (3) willing agents outside the requester's unit, each able w.p. beta.
        const bool can_pay = money_[static_cast<std::size_t>(ru)] >= 1;
        const bool requester_willing = position_[static_cast<std::size_t>(ru)] >= 0;
        eligible_.assign(sys_.classes.size(), 0);
        for (std::size_t c = 0; c < sys_.classes.size(); ++c) {
            auto agents = static_cast<std::int64_t>(willing_[c].size()) * sys_.classes[c].group_size;
            if (c == rc && requester_willing) agents -= rcl.group_size;
            eligible_[c] = agents;
        }
        if (!can_pay) {
            // Only whether someone could have served the request matters.
            double none = 1.0;
            for (std::size_t c = 0; c < sys_.classes.size(); ++c)
                none *= std::pow(1.0 - sys_.classes[c].member.beta, static_cast<double>(eligible_[c]));
            if (measured && ability_.uniform() >= none) ++rcount.satisfiable;
            return;
        }
        weight_.assign(sys_.classes.size(), 0.0);
        double total = 0.0;
        for (std::size_t c = 0; c < sys_.classes.size(); ++c) {
            if (eligible_[c] == 0) continue;
            std::binomial_distribution<std::int64_t> able(eligible_[c], sys_.classes[c].member.beta);
            weight_[c] = static_cast<double>(able(ability_)) * sys_.classes[c].member.chi;
            total += weight_[c];
        }
        if (total <= 0.0) return;
        if (measured) {
            ++rcount.satisfiable;
            ++rcount.paid;
        }

        // (4) one able volunteer in proportion to chi.
        const double v = volunteer_.uniform() * total;
        std::size_t vc = 0;
        double acc = weight_[0];
        while (vc + 1 < weight_.size() && v >= acc) acc += weight_[++vc];
        while (weight_[vc] <= 0.0) --vc;  // guards against rounding at the top end
        const auto& pool = willing_[vc];
        std::int64_t vu;
        do {
            vu = pool[static_cast<std::size_t>(volunteer_.below(pool.size()))];
        } while (vu == ru);

        set_money(ru, money_[static_cast<std::size_t>(ru)] - 1, t);
        set_money(vu, money_[static_cast<std::size_t>(vu)] + 1, t);
        if (measured) {
            auto& vcount = counts_[vc];
            ++vcount.jobs;
            rcount.reward += rcl.member.gamma;
            rcount.discounted_reward += factor_[rc] * rcl.member.gamma;
            const double cost = sys_.classes[vc].member.alpha;
            vcount.reward -= cost;
            vcount.discounted_reward -= factor_[vc] * cost;
        }
    }

    MoneyDistribution snapshot() const {
        MoneyDistribution d;
        const double units = static_cast<double>(units_);
        for (const auto& row : level_count_) {
            std::vector<double> mass;
            for (auto count : row) mass.push_back(static_cast<double>(count) / units);
            d.mass.push_back(std::move(mass));
        }
        return d;
    }

    std::int64_t total_money() const { return std::accumulate(money_.begin(), money_.end(), std::int64_t{0}); }

    void finish(SimReport& report) {
        const std::int64_t end = opt_.rounds - 1;
        const double span = static_cast<double>(opt_.rounds - opt_.warmup) * static_cast<double>(units_);
        for (std::size_t c = 0; c < level_count_.size(); ++c) {
            std::vector<double> mass;
            for (std::size_t l = 0; l < level_count_[c].size(); ++l) {
                charge_level(c, l, end);
                mass.push_back(level_time_[c][l] / span);
            }
            report.empirical.mass.push_back(std::move(mass));
        }
        if (opt_.track_units) {
            for (std::int64_t u = 0; u < units_; ++u) {
                const auto i = static_cast<std::size_t>(u);
                occupancy_[i][static_cast<std::size_t>(money_[i])] +=
                    static_cast<double>(opt_.rounds - unit_since_[i]);
            }
            report.unit_occupancy = std::move(occupancy_);
        }
        report.counts = counts_;
        report.final_total_money = total_money();
    }

    const UnitSystem& sys_;
    std::vector<int> k_;
    SimOptions opt_;
    CounterRng init_, requester_, ability_, volunteer_, internal_;
    std::vector<double> discount_, factor_;

    std::int64_t units_ = 0;
    std::vector<std::int64_t> unit_offset_, agent_offset_;
    std::vector<double> request_cdf_;
    std::vector<std::size_t> unit_class_;
    std::vector<std::int64_t> money_;
    std::vector<std::int64_t> top_;
    std::vector<std::vector<std::int64_t>> willing_;
    std::vector<std::int64_t> position_;
    std::vector<std::vector<std::int64_t>> level_count_;
    std::vector<std::vector<double>> level_time_;
    std::vector<std::vector<std::int64_t>> level_since_;
    std::vector<std::vector<double>> occupancy_;
    std::vector<std::int64_t> unit_since_;
    std::vector<ClassCounts> counts_;
    std::vector<std::int64_t> eligible_;
    std::vector<double> weight_;
};

}  // namespace

double SimReport::p_s(std::size_t c) const {
    return static_cast<double>(counts.at(c).satisfiable) /
           (static_cast<double>(units.at(c)) * static_cast<double>(measured_rounds()));
}

double SimReport::p_e(std::size_t c) const {
    const auto& k = counts.at(c);
    return k.willing_unit_rounds > 0.0 ? static_cast<double>(k.jobs) / k.willing_unit_rounds : 0.0;
}

double SimReport::average_utility(std::size_t c) const {
    const double agents = static_cast<double>(units.at(c) * group_size.at(c));
    const double time = static_cast<double>(measured_rounds()) / static_cast<double>(n);
    return counts.at(c).reward / agents / time;
}

double SimReport::discounted_utility(std::size_t c) const {
    return counts.at(c).discounted_reward / static_cast<double>(units.at(c) * group_size.at(c));
}

double SimReport::distance_to_reference() const {
    return reference ? l2_distance(empirical, *reference) : std::nan("");
}

SimReport run_units(const UnitSystem& system, const StrategyProfile& profile,
                    const SimOptions& options) {
    if (system.classes.empty()) throw ValidationError("population has no decision units");
    return Engine(system, profile, options).run();
}

SimReport run_rounds(const SystemSpec& spec, const StrategyProfile& profile,
                     const SimOptions& options) {
    const auto valid = validate_spec(spec);
    validate_profile(valid, profile, std::numeric_limits<int>::max());
    return run_units(units_of(valid), profile, options);
}

SimReport run_rounds(const SystemSpec& spec, const StrategyProfile& profile, std::int64_t rounds,
                     std::uint64_t seed, std::int64_t warmup) {
    SimOptions o;
    o.rounds = rounds;
    o.seed = seed;
    o.warmup = warmup;
    return run_rounds(spec, profile, o);
}

SimReport run_with_groups(const CollusionSpec& spec, const StrategyProfile& profile,
                          const SimOptions& options) {
    return run_units(units_of(spec), profile, options);
}

SimReport run_with_groups(const CollusionSpec& spec, const StrategyProfile& profile,
                          std::int64_t rounds, std::uint64_t seed, std::int64_t warmup) {
    SimOptions o;
    o.rounds = rounds;
    o.seed = seed;
    o.warmup = warmup;
    return run_with_groups(spec, profile, o);
}

std::optional<double> measure_satisfaction(const SimReport& report, std::size_t c) {
    const auto& k = report.counts.at(c);
    if (k.satisfiable == 0) return std::nullopt;
    return static_cast<double>(k.paid) / static_cast<double>(k.satisfiable);
}

TaggedAgentCounts simulate_tagged_agent(double p_s, double p_e, int k, std::int64_t rounds,
                                        std::uint64_t seed) {
    if (!(p_s >= 0.0 && p_e >= 0.0 && p_s + p_e <= 1.0))
        throw ValidationError("p_s, p_e must be probabilities with p_s + p_e <= 1");
    if (k < 0) throw ValidationError("threshold must be >= 0");
    auto rng = stream(seed, RngStream::chain);
    TaggedAgentCounts out;
    int money = 0;
    for (std::int64_t t = 0; t < rounds; ++t) {
        const double u = rng.uniform();
        if (u < p_s) {
            ++out.satisfiable;
            if (money >= 1) {
                ++out.paid;
                --money;
            }
        } else if (u < p_s + p_e && money < k) {
            ++out.earned;
            ++money;
        }
    }
    return out;
}

void write_report_csv(std::ostream& os, const SimReport& r) {
    os << "class_index,group_size,units,threshold,requests,market_requests,satisfiable,paid,jobs,"
          "internal,p_s,p_e,satisfaction,average_utility,discounted_utility\n";
    for (std::size_t c = 0; c < r.counts.size(); ++c) {
        const auto& k = r.counts[c];
        const auto sat = measure_satisfaction(r, c);
        csv::write_row(os, {std::to_string(c), std::to_string(r.group_size[c]),
                            std::to_string(r.units[c]), std::to_string(r.thresholds[c]),
                            std::to_string(k.requests), std::to_string(k.market_requests),
                            std::to_string(k.satisfiable), std::to_string(k.paid),
                            std::to_string(k.jobs), std::to_string(k.internal),
                            csv::number(r.p_s(c)), csv::number(r.p_e(c)),
                            sat ? csv::number(*sat) : std::string(),
                            csv::number(r.average_utility(c)), csv::number(r.discounted_utility(c))});
    }
}

void write_trace_csv(std::ostream& os, const SimReport& r) {
    os << "round,distance\n";
    for (const auto& [t, d] : r.trace) csv::write_row(os, {std::to_string(t), csv::number(d)});
}

}  // namespace scrip
