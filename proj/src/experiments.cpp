#include "scrip/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <map>
#include <sstream>

#include "scrip/agent_mdp.hpp"
#include "scrip/csv.hpp"
#include "scrip/simulator.hpp"
#include "scrip/steady_state.hpp"

namespace scrip {

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

using csv::number;

std::string integer(std::int64_t v) { return std::to_string(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

std::vector<double> read_grid(const nlohmann::json& sweep) {
    if (sweep.contains("grid")) return sweep.at("grid").get<std::vector<double>>();
    if (!sweep.contains("from")) return {};
    const double from = sweep.at("from").get<double>();
    const double to = sweep.at("to").get<double>();
    const double step = sweep.at("step").get<double>();
    if (!(step > 0.0)) throw ValidationError("sweep step must be positive");
    std::vector<double> grid;
    const auto count = static_cast<std::int64_t>(std::floor((to - from) / step + 1e-9));
    for (std::int64_t i = 0; i <= count; ++i) {
        // Round to 12 significant digits so 0.1 steps land on decimal values.
        grid.push_back(std::stod(number(from + static_cast<double>(i) * step)));
    }
    return grid;
}

void require_grid(const ExperimentConfig& c, const std::vector<std::string>& variables) {
    if (std::find(variables.begin(), variables.end(), c.sweep_variable) == variables.end()) {
        std::string allowed;
        for (const auto& v : variables) allowed += (allowed.empty() ? "" : " | ") + v;
        throw ValidationError("sweep.variable must be " + allowed + " (got '" + c.sweep_variable + "')");
    }
    if (c.grid.empty()) throw ValidationError("sweep grid must not be empty");
    if (!std::is_sorted(c.grid.begin(), c.grid.end()))
        throw ValidationError("sweep grid must be sorted ascending");
}

const AgentType& single_type(const ExperimentConfig& c) {
    if (c.system.types.size() != 1) throw ValidationError("this command needs a single-type system");
    return c.system.types.front();
}

SystemSpec with_m(SystemSpec spec, double m) {
    spec.m = m;
    return validate_spec(std::move(spec));
}

int as_int(double v, const char* what) {
    if (std::abs(v - std::round(v)) > 1e-9) throw ValidationError(std::string(what) + " must be integral");
    return static_cast<int>(std::llround(v));
}

std::string threshold_list(const StrategyProfile& p) { return csv::join(p.thresholds); }

StrategyProfile profile_or_equilibrium(const ExperimentConfig& c) {
    if (c.profile) {
        validate_profile(c.system, *c.profile, std::numeric_limits<int>::max());
        return *c.profile;
    }
    auto r = find_equilibrium(c.system, c.equilibrium);
    if (r.status != EquilibriumStatus::converged)
        throw ScripError("no profile given and the equilibrium search ended with status " +
                         to_string(r.status));
    return r.profile;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

SimOptions sim_options(const ExperimentConfig& c, std::uint64_t seed, bool trace) {
    if (c.rounds <= 0) throw ValidationError("rounds must be positive for simulation");
    SimOptions o;
    o.seed = seed;
    o.warmup = c.warmup;
    o.trace = trace;
    o.rounds = c.rounds + (c.warmup < 0 ? 100 * c.system.n : c.warmup);
    return o;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.scenario = j.value("scenario", std::string());
    if (!j.contains("system")) throw ValidationError("config needs a \"system\" block");
    c.system = spec_from_json(j.at("system"));
    if (j.contains("profile")) c.profile = StrategyProfile{j.at("profile").get<std::vector<int>>()};
    if (j.contains("rates")) {
        RateEstimates r;
        r.p_s = j.at("rates").at("p_s").get<std::vector<double>>();
        r.p_e = j.at("rates").at("p_e").get<std::vector<double>>();
        if (r.p_s.size() != c.system.types.size() || r.p_e.size() != c.system.types.size())
            throw ValidationError("rates need one p_s and one p_e per type");
        c.rates = r;
    }
    if (j.contains("equilibrium")) {
        const auto& e = j.at("equilibrium");
        c.equilibrium.k_max = e.value("k_max", c.equilibrium.k_max);
        if (e.contains("epsilon") && !e.at("epsilon").is_null())
            c.equilibrium.epsilon = e.at("epsilon").get<double>();
        c.equilibrium.max_iter = e.value("max_iter", c.equilibrium.max_iter);
    }
    if (j.contains("sweep")) {
        c.sweep_variable = j.at("sweep").value("variable", std::string());
        c.grid = read_grid(j.at("sweep"));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ValidationError("seeds must not be empty");
    c.rounds = j.value("rounds", std::int64_t{0});
    c.warmup = j.value("warmup", std::int64_t{-1});
    c.p_s = j.value("p_s", c.p_s);
    if (j.contains("sybils")) {
        const auto& s = j.at("sybils");
        if (s.contains("fractions")) c.sybil_fractions = s.at("fractions").get<std::vector<double>>();
        if (s.contains("counts")) c.sybil_counts = s.at("counts").get<std::vector<int>>();
    }
    if (j.contains("collusion")) {
        c.group_size = j.at("collusion").value("group_size", 1);
        c.colluding_fraction = j.at("collusion").value("colluding_fraction", 1.0);
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return config_from_json(nlohmann::json::parse(text.str(), nullptr, true, true));
}

// --- steady-state / best-response / equilibrium ------------------------------

CommandOutput cmd_steady_state(const ExperimentConfig& c, const RunContext&) {
    if (!c.profile) throw ValidationError("steady-state needs a \"profile\"");
    validate_profile(c.system, *c.profile, std::numeric_limits<int>::max());
    const auto sol = solve_mstar(c.system, *c.profile);
    Table t{"steady_state", {"type_index", "money_level", "mass"}, {}};
    for (std::size_t ty = 0; ty < sol.mstar.mass.size(); ++ty)
        for (std::size_t i = 0; i < sol.mstar.mass[ty].size(); ++i)
            t.rows.push_back({integer(static_cast<std::int64_t>(ty)), integer(static_cast<std::int64_t>(i)),
                              number(sol.mstar.mass[ty][i])});
    CommandOutput out{{t}, {}};
    out.summary["lambda"] = sol.solve.lambda;
    out.summary["residual"] = sol.solve.residual;
    out.summary["mean_money"] = sol.mstar.mean_money();
    out.summary["thresholds"] = c.profile->thresholds;
    return out;
}

CommandOutput cmd_best_response(const ExperimentConfig& c, const RunContext&) {
    RateEstimates rates;
    if (c.rates) {
        rates = *c.rates;
    } else {
        if (!c.profile) throw ValidationError("best-response needs \"rates\" or a \"profile\"");
        validate_profile(c.system, *c.profile, std::numeric_limits<int>::max());
        rates = mean_field_rates(c.system, *c.profile, solve_mstar(c.system, *c.profile).mstar);
    }
    Table t{"best_response", {"type_index", "money_level", "value", "volunteers"}, {}};
    CommandOutput out;
    out.summary["thresholds"] = nlohmann::json::array();
    out.summary["cap_binding"] = nlohmann::json::array();
    for (std::size_t ty = 0; ty < c.system.types.size(); ++ty) {
        const auto s = solve_agent_mdp(c.system.types[ty], {rates.p_s[ty], rates.p_e[ty]}, c.system.n,
                                       c.equilibrium.k_max);
        for (std::size_t i = 0; i < s.values.size(); ++i)
            t.rows.push_back({integer(static_cast<std::int64_t>(ty)), integer(static_cast<std::int64_t>(i)),
                              number(s.values[i]), flag(s.volunteers[i])});
        out.summary["thresholds"].push_back(s.threshold);
        out.summary["cap_binding"].push_back(s.cap_binding);
    }
    out.summary["p_s"] = rates.p_s;
    out.summary["p_e"] = rates.p_e;
    out.tables.push_back(std::move(t));
    return out;
}

CommandOutput cmd_equilibrium(const ExperimentConfig& c, const RunContext&) {
    const auto r = find_equilibrium(c.system, c.equilibrium);
    Table t{"equilibrium",
            {"type_index", "fraction", "threshold", "p_s", "p_e", "utility", "utility_at_zero", "status"},
            {}};
    for (std::size_t ty = 0; ty < c.system.types.size(); ++ty)
        t.rows.push_back({integer(static_cast<std::int64_t>(ty)), number(c.system.fractions[ty]),
                          integer(r.profile.thresholds[ty]), number(r.rates.p_s[ty]),
                          number(r.rates.p_e[ty]), number(r.per_type_utility[ty]),
                          number(r.utility_at_zero[ty]), to_string(r.status)});
    return {{t}, result_to_json(r)};
}

// --- simulate -----------------------------------------------------------------

namespace {

struct SimJob {
    SimReport report;
    UnitRates mean_field;
};

}  // namespace

CommandOutput cmd_simulate(const ExperimentConfig& c, const RunContext& ctx) {
    UnitSystem system;
    StrategyProfile profile;
    if (c.group_size > 1) {
        const auto spec = make_collusion_spec(c.system, c.group_size, c.colluding_fraction);
        system = units_of(spec);
        if (c.profile) {
            profile = *c.profile;
        } else {
            const auto r = find_collusion_equilibrium(spec, c.equilibrium);
            if (r.equilibrium.status != EquilibriumStatus::converged)
                throw ScripError("collusion equilibrium did not converge");
            profile = r.equilibrium.profile;
        }
    } else {
        system = units_of(c.system);
        profile = profile_or_equilibrium(c);
    }
    std::optional<UnitRates> mf;
    try {
        const auto ms = solve_mstar(system.omegas(), system.fractions(), profile.thresholds,
                                    system.mean_money_per_unit());
        mf = unit_rates(system, profile, ms.mstar);
    } catch (const InfeasibleError&) {
    }

    const auto reports = parallel_map<SimReport>(c.seeds.size(), ctx.threads, [&](std::size_t i) {
        return run_units(system, profile, sim_options(c, c.seeds[i], ctx.trace));
    });

    Table t{"simulate",
            {"seed", "class_index", "group_size", "units", "threshold", "p_s", "p_e", "mf_p_s", "mf_p_e",
             "satisfaction", "internal_fraction", "average_utility", "discounted_utility", "distance",
             "mean_trace_distance"},
            {}};
    const std::size_t classes = system.classes.size();
    std::vector<std::vector<std::vector<double>>> cols(classes, std::vector<std::vector<double>>(8));
    for (std::size_t s = 0; s < reports.size(); ++s) {
        const auto& r = reports[s];
        for (std::size_t u = 0; u < classes; ++u) {
            const auto sat = measure_satisfaction(r, u);
            const auto& k = r.counts[u];
            const double internal = k.requests > 0 ? static_cast<double>(k.internal) / static_cast<double>(k.requests) : 0.0;
            const std::vector<double> vals{r.p_s(u), r.p_e(u), sat.value_or(std::nan("")), internal,
                                           r.average_utility(u), r.discounted_utility(u),
                                           r.distance_to_reference(), r.mean_trace_distance};
            for (std::size_t v = 0; v < vals.size(); ++v) cols[u][v].push_back(vals[v]);
            t.rows.push_back({std::to_string(c.seeds[s]), integer(static_cast<std::int64_t>(u)),
                              integer(system.classes[u].group_size), integer(system.classes[u].units),
                              integer(profile.thresholds[u]), number(vals[0]), number(vals[1]),
                              mf ? number(mf->rates.p_s[u]) : "", mf ? number(mf->rates.p_e[u]) : "",
                              sat ? number(*sat) : "", number(vals[3]), number(vals[4]), number(vals[5]),
                              number(vals[6]), number(vals[7])});
        }
    }
    for (std::size_t u = 0; u < classes; ++u) {
        std::vector<std::string> row{"mean", integer(static_cast<std::int64_t>(u)),
                                     integer(system.classes[u].group_size), integer(system.classes[u].units),
                                     integer(profile.thresholds[u])};
        for (std::size_t v = 0; v < 2; ++v) row.push_back(number(mean(cols[u][v])));
        row.push_back(mf ? number(mf->rates.p_s[u]) : "");
        row.push_back(mf ? number(mf->rates.p_e[u]) : "");
        for (std::size_t v = 2; v < 8; ++v) row.push_back(number(mean(cols[u][v])));
        t.rows.push_back(std::move(row));
    }

    CommandOutput out{{t}, {}};
    if (ctx.trace) {
        Table tr{"simulate_trace", {"seed", "round", "distance"}, {}};
        for (std::size_t s = 0; s < reports.size(); ++s)
            for (const auto& [round, d] : reports[s].trace)
                tr.rows.push_back({std::to_string(c.seeds[s]), integer(round), number(d)});
        out.tables.push_back(std::move(tr));
    }
    out.summary["thresholds"] = profile.thresholds;
    out.summary["rounds"] = c.rounds;
    out.summary["seeds"] = c.seeds;
    bool conserved = true;
    for (const auto& r : reports) conserved = conserved && r.final_total_money == system.total_money;
    out.summary["scrip_conserved"] = conserved;
    return out;
}

// --- fig1 -----------------------------------------------------------------------

CommandOutput cmd_fig1(const ExperimentConfig& c, const RunContext& ctx) {
    require_grid(c, {"p_e"});
    const auto& type = single_type(c);
    if (!(c.p_s > 0.0)) throw ValidationError("fig1 needs p_s > 0");
    struct Point {
        int threshold;
        double utility, satisfaction;
        bool cap;
    };
    const auto points = parallel_map<Point>(c.grid.size(), ctx.threads, [&](std::size_t i) {
        const double p_e = c.grid[i];
        const auto s = solve_agent_mdp(type, {c.p_s, p_e}, c.system.n, c.equilibrium.k_max);
        return Point{s.threshold, utility_of_threshold(type, {c.p_s, p_e}, c.system.n, s.threshold),
                     satisfaction_fraction(p_e / c.p_s, s.threshold), s.cap_binding};
    });
    Table t{"fig1", {"p_e", "threshold", "utility", "satisfaction", "cap_binding"}, {}};
    bool non_decreasing = true;
    std::size_t best = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        t.rows.push_back({number(c.grid[i]), integer(points[i].threshold), number(points[i].utility),
                          number(points[i].satisfaction), flag(points[i].cap)});
        if (i > 0 && points[i].utility < points[i - 1].utility - 1e-9) non_decreasing = false;
        if (points[i].utility > points[best].utility) best = i;
    }
    CommandOutput out{{t}, {}};
    out.summary["p_s"] = c.p_s;
    out.summary["utility_non_decreasing"] = non_decreasing;
    out.summary["max_utility"] = points[best].utility;
    out.summary["max_utility_p_e"] = c.grid[best];
    return out;
}

// --- sybil sweep --------------------------------------------------------------

namespace {

struct SybilPoint {
    double fraction = 0.0;
    int sybils = 0;
    EquilibriumResult result;
    bool has_plain = false;
};

}  // namespace

CommandOutput cmd_sybil_sweep(const ExperimentConfig& c, const RunContext& ctx) {
    require_grid(c, {"sybil_count", "sybil_fraction"});
    single_type(c);
    std::vector<double> fractions = c.sybil_fractions;
    std::vector<int> counts = c.sybil_counts;
    if (c.sweep_variable == "sybil_count") {
        counts.clear();
        for (double g : c.grid) counts.push_back(as_int(g, "sybil count"));
        if (fractions.empty()) fractions = {0.1};
    } else {
        fractions = c.grid;
        if (counts.empty()) counts = {1};
    }
    std::vector<std::pair<double, int>> grid;
    for (double f : fractions)
        for (int s : counts) grid.emplace_back(f, s);

    const auto baseline = find_equilibrium(c.system, c.equilibrium);
    const double base_u = baseline.per_type_utility.front();
    const double base_w = baseline.welfare_per_agent;
    const auto points = parallel_map<SybilPoint>(grid.size(), ctx.threads, [&](std::size_t i) {
        const auto spec = apply_sybils(c.system, grid[i].first, grid[i].second);
        return SybilPoint{grid[i].first, grid[i].second, find_equilibrium(spec, c.equilibrium),
                          spec.types.size() == 2};
    });

    Table t{"sybil_sweep",
            {"sybil_fraction", "sybils", "status", "thresholds", "threshold_plain", "threshold_sybil",
             "utility_plain", "utility_sybil", "baseline_utility", "welfare_rate", "welfare_per_agent",
             "baseline_welfare_per_agent", "cap_binding", "multiple_equilibria"},
            {}};
    for (const auto& p : points) {
        const auto& r = p.result;
        t.rows.push_back({number(p.fraction), integer(p.sybils), to_string(r.status),
                          threshold_list(r.profile),
                          p.has_plain ? integer(r.profile.thresholds.front()) : "",
                          integer(r.profile.thresholds.back()),
                          p.has_plain ? number(r.per_type_utility.front()) : "",
                          number(r.per_type_utility.back()), number(base_u), number(r.welfare_rate),
                          number(r.welfare_per_agent), number(base_w), flag(r.cap_binding),
                          flag(r.multiple_equilibria)});
    }

    CommandOutput out{{t}, {}};
    out.summary["baseline"] = {{"threshold", baseline.profile.thresholds.front()},
                               {"utility", base_u},
                               {"welfare_per_agent", base_w},
                               {"status", to_string(baseline.status)}};
    auto& per_fraction = out.summary["crossovers"] = nlohmann::json::array();
    for (double f : fractions) {
        nlohmann::json row{{"sybil_fraction", f}, {"welfare_above_baseline_from", nullptr},
                           {"plain_utility_above_baseline_from", nullptr}};
        for (const auto& p : points) {
            if (p.fraction != f || p.sybils < 1 || p.result.status != EquilibriumStatus::converged) continue;
            if (row["welfare_above_baseline_from"].is_null() && p.result.welfare_per_agent > base_w)
                row["welfare_above_baseline_from"] = p.sybils;
            if (row["plain_utility_above_baseline_from"].is_null() && p.has_plain &&
                p.result.per_type_utility.front() > base_u)
                row["plain_utility_above_baseline_from"] = p.sybils;
        }
        per_fraction.push_back(row);
    }
    // Where the plain agents' threshold jumps most between neighbouring fractions.
    auto& breaks = out.summary["discontinuities"] = nlohmann::json::array();
    if (fractions.size() > 1) {
        for (int s : counts) {
            const SybilPoint* prev = nullptr;
            nlohmann::json best{{"sybils", s}, {"jump", 0}};
            for (const auto& p : points) {
                if (p.sybils != s) continue;
                const bool ok = p.has_plain && p.result.status == EquilibriumStatus::converged;
                if (ok && prev) {
                    const int jump = p.result.profile.thresholds.front() - prev->result.profile.thresholds.front();
                    if (std::abs(jump) > std::abs(best["jump"].get<int>())) {
                        best["jump"] = jump;
                        best["from_fraction"] = prev->fraction;
                        best["to_fraction"] = p.fraction;
                    }
                }
                prev = ok ? &p : nullptr;
            }
            breaks.push_back(best);
        }
    }
    return out;
}

// --- crash scan -------------------------------------------------------------------

CommandOutput cmd_crash_scan(const ExperimentConfig& c, const RunContext& ctx) {
    require_grid(c, {"m"});
    single_type(c);
    std::vector<std::string> populations{"baseline"};
    const bool sybils = !c.sybil_fractions.empty() && !c.sybil_counts.empty();
    if (sybils) populations.push_back("sybil");
    std::vector<std::pair<double, std::size_t>> grid;
    for (double m : c.grid)
        for (std::size_t p = 0; p < populations.size(); ++p) grid.emplace_back(m, p);

    const auto results = parallel_map<EquilibriumResult>(grid.size(), ctx.threads, [&](std::size_t i) {
        auto spec = with_m(c.system, grid[i].first);
        if (grid[i].second == 1) spec = apply_sybils(spec, c.sybil_fractions.front(), c.sybil_counts.front());
        return find_equilibrium(spec, c.equilibrium);
    });

    Table t{"crash_scan", {"m", "population", "status", "thresholds", "welfare_rate", "welfare_per_agent", "iterations"}, {}};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& r = results[i];
        t.rows.push_back({number(grid[i].first), populations[grid[i].second], to_string(r.status),
                          threshold_list(r.profile), number(r.welfare_rate), number(r.welfare_per_agent),
                          integer(r.iterations)});
    }
    CommandOutput out{{t}, {}};
    for (std::size_t p = 0; p < populations.size(); ++p) {
        nlohmann::json s{{"largest_converged_m", nullptr}, {"first_crash_m", nullptr}, {"reentry", false}};
        bool crashed = false;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid[i].second != p) continue;
            const bool conv = results[i].status == EquilibriumStatus::converged;
            if (conv && crashed) s["reentry"] = true;
            if (conv && !crashed) s["largest_converged_m"] = grid[i].first;
            if (results[i].status == EquilibriumStatus::crash && !crashed && grid[i].first > 0.0) {
                crashed = true;
                s["first_crash_m"] = grid[i].first;
            }
        }
        out.summary[populations[p]] = s;
    }
    if (sybils) out.summary["sybil"]["population"] = {{"fraction", c.sybil_fractions.front()}, {"sybils", c.sybil_counts.front()}};
    return out;
}

// --- collusion sweep --------------------------------------------------------------

CommandOutput cmd_collusion_sweep(const ExperimentConfig& c, const RunContext& ctx) {
    require_grid(c, {"group_size"});
    single_type(c);
    std::vector<int> sizes;
    for (double g : c.grid) sizes.push_back(as_int(g, "group size"));
    const auto baseline = find_equilibrium(c.system, c.equilibrium);
    const double base_u = baseline.per_type_utility.front();

    const auto results = parallel_map<CollusionResult>(sizes.size(), ctx.threads, [&](std::size_t i) {
        return find_collusion_equilibrium(make_collusion_spec(c.system, sizes[i], c.colluding_fraction),
                                          c.equilibrium);
    });

    // Optional simulator cross-check at each converged point, paired seeds across sizes.
    const bool simulate = c.rounds > 0;
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    if (simulate)
        for (std::size_t i = 0; i < sizes.size(); ++i)
            if (results[i].equilibrium.status == EquilibriumStatus::converged)
                for (std::size_t s = 0; s < c.seeds.size(); ++s) jobs.emplace_back(i, s);
    const auto reports = parallel_map<SimReport>(jobs.size(), ctx.threads, [&](std::size_t j) {
        const auto spec = make_collusion_spec(c.system, sizes[jobs[j].first], c.colluding_fraction);
        return run_with_groups(spec, results[jobs[j].first].equilibrium.profile,
                               sim_options(c, c.seeds[jobs[j].second], false));
    });

    Table t{"collusion_sweep",
            {"group_size", "status", "group_threshold", "independent_threshold", "colluder_utility",
             "independent_utility", "baseline_utility", "welfare_rate", "welfare_per_agent",
             "internal_fraction", "beta_int", "cap_binding", "sim_seeds", "sim_p_e_independent",
             "sim_p_e_group", "mf_p_e_independent", "mf_p_e_group", "sim_utility_independent",
             "sim_utility_independent_se", "sim_utility_colluder", "sim_utility_colluder_se"},
            {}};
    Table per_seed{"collusion_sweep_sim",
                   {"group_size", "seed", "class", "p_s", "p_e", "mf_p_s", "mf_p_e", "average_utility",
                    "discounted_utility", "internal_fraction"},
                   {}};
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const auto& r = results[i];
        const auto& e = r.equilibrium;
        const auto spec = make_collusion_spec(c.system, sizes[i], c.colluding_fraction);
        const std::size_t group_class = e.profile.thresholds.size() - 1;
        // Per class: p_s, p_e, average utility, discounted utility, internal fraction.
        std::map<bool, std::array<std::vector<double>, 5>> by_class;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].first != i) continue;
            const auto& rep = reports[j];
            for (std::size_t u = 0; u < rep.counts.size(); ++u) {
                const bool group = r.has_groups && u == group_class;
                const auto& k = rep.counts[u];
                const double internal = k.requests > 0 ? static_cast<double>(k.internal) / static_cast<double>(k.requests) : 0.0;
                const std::array<double, 5> vals{rep.p_s(u), rep.p_e(u), rep.average_utility(u),
                                                 rep.discounted_utility(u), internal};
                per_seed.rows.push_back({integer(sizes[i]), std::to_string(c.seeds[jobs[j].second]),
                                         group ? "group" : "independent", number(vals[0]), number(vals[1]),
                                         number(e.rates.p_s[u]), number(e.rates.p_e[u]), number(vals[2]),
                                         number(vals[3]), number(vals[4])});
                for (std::size_t v = 0; v < vals.size(); ++v) by_class[group][v].push_back(vals[v]);
            }
        }
        for (const auto& [group, cols] : by_class) {
            const std::size_t u = group ? group_class : 0;
            per_seed.rows.push_back({integer(sizes[i]), "mean", group ? "group" : "independent",
                                     number(mean(cols[0])), number(mean(cols[1])), number(e.rates.p_s[u]),
                                     number(e.rates.p_e[u]), number(mean(cols[2])), number(mean(cols[3])),
                                     number(mean(cols[4]))});
        }
        static const std::vector<double> none;
        const auto& pe_ind = by_class.count(false) ? by_class[false][1] : none;
        const auto& pe_grp = by_class.count(true) ? by_class[true][1] : none;
        const auto& u_ind = by_class.count(false) ? by_class[false][2] : none;
        const auto& u_grp = by_class.count(true) ? by_class[true][2] : none;
        auto opt = [](const std::vector<double>& v) { return v.empty() ? std::string() : number(mean(v)); };
        auto se = [](const std::vector<double>& v) { return v.empty() ? std::string() : number(std_error(v)); };
        const bool conv = e.status == EquilibriumStatus::converged;
        t.rows.push_back({integer(sizes[i]), to_string(e.status),
                          r.has_groups ? integer(r.group_threshold) : "",
                          r.has_independents ? integer(r.independent_threshold) : "",
                          r.has_groups ? number(r.colluder_utility) : "",
                          r.has_independents ? number(r.independent_utility) : "", number(base_u),
                          number(e.welfare_rate), number(e.welfare_per_agent), number(r.internal_fraction),
                          number(spec.beta_int), flag(e.cap_binding),
                          integer(static_cast<std::int64_t>(u_ind.empty() ? u_grp.size() : u_ind.size())),
                          opt(pe_ind), opt(pe_grp),
                          conv && r.has_independents ? number(e.rates.p_e.front()) : "",
                          conv && r.has_groups ? number(e.rates.p_e.back()) : "", opt(u_ind), se(u_ind),
                          opt(u_grp), se(u_grp)});
    }
    CommandOutput out{{t}, {}};
    if (simulate) out.tables.push_back(std::move(per_seed));
    // Shape of the non-colluders' utility against group size.
    std::vector<double> ind;
    std::vector<int> at;
    for (std::size_t i = 0; i < sizes.size(); ++i)
        if (results[i].has_independents && results[i].equilibrium.status == EquilibriumStatus::converged &&
            sizes[i] > 1) {
            ind.push_back(results[i].independent_utility);
            at.push_back(sizes[i]);
        }
    nlohmann::json shape{{"initial_gain", false}, {"middle_dip", false}, {"dip_above_baseline", false},
                         {"large_c_recovery", false}};
    if (!ind.empty()) {
        shape["initial_gain"] = ind.front() > base_u;
        const auto peak = static_cast<std::size_t>(std::max_element(ind.begin(), ind.end()) - ind.begin());
        std::size_t first_peak = 0;
        while (first_peak + 1 < ind.size() && ind[first_peak + 1] >= ind[first_peak]) ++first_peak;
        if (first_peak + 1 < ind.size()) {
            const auto low = static_cast<std::size_t>(
                std::min_element(ind.begin() + static_cast<std::ptrdiff_t>(first_peak), ind.end()) - ind.begin());
            shape["middle_dip"] = true;
            shape["dip_at"] = at[low];
            shape["dip_above_baseline"] = ind[low] > base_u;
            shape["large_c_recovery"] = ind.back() > ind[low];
        }
        shape["max_independent_utility_at"] = at[peak];
    }
    out.summary["baseline_utility"] = base_u;
    out.summary["colluding_fraction"] = c.colluding_fraction;
    out.summary["shape"] = shape;
    nlohmann::json pareto = nlohmann::json::array();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const auto& r = results[i];
        if (sizes[i] > 1 && r.equilibrium.status == EquilibriumStatus::converged && r.has_groups &&
            r.has_independents && r.colluder_utility > base_u && r.independent_utility > base_u)
            pareto.push_back(sizes[i]);
    }
    out.summary["pareto_improving_sizes"] = pareto;
    return out;
}

// --- sybil equivalence -------------------------------------------------------------

CommandOutput cmd_sybil_equivalence(const ExperimentConfig& c, const RunContext& ctx) {
    require_grid(c, {"m"});
    CommandOutput out;
    if (c.system.types.size() != 1) {
        out.summary["in_scope"] = false;
        out.summary["reason"] = "equivalence is only claimed for a single base type";
        out.tables.push_back(Table{"sybil_equivalence", {"m_prime", "status", "threshold", "welfare_per_agent", "meets_target"}, {}});
        return out;
    }
    if (c.sybil_fractions.empty() || c.sybil_counts.empty())
        throw ValidationError("sybil-equivalence needs sybils.fractions and sybils.counts");
    const auto sybil_spec = apply_sybils(c.system, c.sybil_fractions.front(), c.sybil_counts.front());
    const auto target = find_equilibrium(sybil_spec, c.equilibrium);
    if (target.status != EquilibriumStatus::converged)
        throw ScripError("the sybil system has no converged equilibrium to match");
    const double x = target.welfare_per_agent;

    const auto results = parallel_map<EquilibriumResult>(c.grid.size(), ctx.threads, [&](std::size_t i) {
        return find_equilibrium(with_m(c.system, c.grid[i]), c.equilibrium);
    });
    Table t{"sybil_equivalence", {"m_prime", "status", "threshold", "welfare_per_agent", "meets_target"}, {}};
    nlohmann::json found = nullptr;
    double best = 0.0;
    double best_m = c.grid.front();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        // Relative slack keeps the degenerate sybil (chi unchanged) an exact match.
        const bool meets = r.status == EquilibriumStatus::converged && r.welfare_per_agent >= x * (1.0 - 1e-12);
        t.rows.push_back({number(c.grid[i]), to_string(r.status), threshold_list(r.profile),
                          number(r.welfare_per_agent), flag(meets)});
        if (meets && found.is_null()) found = c.grid[i];
        if (r.welfare_per_agent > best) {
            best = r.welfare_per_agent;
            best_m = c.grid[i];
        }
    }
    out.tables.push_back(std::move(t));
    out.summary["in_scope"] = true;
    out.summary["target_welfare_per_agent"] = x;
    out.summary["sybil_thresholds"] = target.profile.thresholds;
    out.summary["m_prime"] = found;
    out.summary["best_welfare_per_agent"] = best;
    out.summary["best_m_prime"] = best_m;
    return out;
}

// --- dispatch and output ---------------------------------------------------------

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"steady-state", "best-response", "equilibrium",
                                                "simulate", "fig1", "sybil-sweep", "crash-scan",
                                                "collusion-sweep", "sybil-equivalence"};
    return names;
}

CommandOutput run_command(const std::string& name, const ExperimentConfig& c, const RunContext& ctx) {
    using Fn = CommandOutput (*)(const ExperimentConfig&, const RunContext&);
    static const std::map<std::string, Fn> table{
        {"steady-state", cmd_steady_state}, {"best-response", cmd_best_response},
        {"equilibrium", cmd_equilibrium},   {"simulate", cmd_simulate},
        {"fig1", cmd_fig1},                 {"sybil-sweep", cmd_sybil_sweep},
        {"crash-scan", cmd_crash_scan},     {"collusion-sweep", cmd_collusion_sweep},
        {"sybil-equivalence", cmd_sybil_equivalence}};
    const auto it = table.find(name);
    if (it == table.end()) throw ValidationError("unknown command " + name);
    return it->second(c, ctx);
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string table_to_csv(const Table& table) {
    std::ostringstream os;
    csv::write_row(os, table.header);
    for (const auto& row : table.rows) csv::write_row(os, row);
    return os.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ScripError("cannot write " + path.string());
    out << text;
}

std::string plot_stub(const Table& t) {
    std::ostringstream os;
    os << "# " << t.name << ".csv: columns";
    for (std::size_t i = 0; i < t.header.size(); ++i) os << ' ' << i + 1 << '=' << t.header[i];
    os << "\n# gnuplot: plot first numeric column against any other\n"
       << "set datafile separator ','\nset key autotitle columnhead\n"
       << "plot '" << t.name << ".csv' using 1:" << std::min<std::size_t>(3, t.header.size())
       << " with linespoints\n";
    return os.str();
}

}  // namespace

std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir,
                                                 const CommandOutput& output, const ManifestInfo& info,
                                                 bool plot) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    nlohmann::json files = nlohmann::json::array();
    auto emit = [&](const std::string& name, const std::string& text) {
        const auto path = dir / name;
        write_file(path, text);
        written.push_back(path);
        files.push_back({{"file", name}, {"hash", content_hash(text)}});
    };
    for (const auto& t : output.tables) {
        emit(t.name + ".csv", table_to_csv(t));
        if (plot) emit(t.name + ".gp", plot_stub(t));
    }
    emit(info.command + ".summary.json", output.summary.dump(2) + "\n");

    nlohmann::json manifest;
    manifest["command"] = info.command;
    manifest["config"] = info.config_path.empty() ? "" : std::filesystem::path(info.config_path).filename().string();
    manifest["config_hash"] = content_hash(info.config_bytes);
    manifest["seeds"] = info.seeds;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["compiler"] = __VERSION__;
    manifest["json_library"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                               std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    manifest["outputs"] = files;
    const auto path = dir / (info.command + ".manifest.json");
    write_file(path, manifest.dump(2) + "\n");
    written.push_back(path);
    return written;
}

}  // namespace scrip
