#include "scrip/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace scrip {

namespace {

constexpr double kFractionSumTol = 1e-12;

bool near_integer(double x, double scale) {
    return std::abs(x - std::round(x)) <= 1e-9 * std::max(1.0, std::abs(scale));
}

std::string describe(const char* what, double value) {
    std::ostringstream os;
    os.precision(17);
    os << what << " (got " << value << ")";
    return os.str();
}

}  // namespace

void validate_type(const AgentType& t) {
    if (!(t.alpha >= 0.0)) throw ValidationError(describe("alpha must be >= 0", t.alpha));
    if (!(t.beta >= 0.0 && t.beta <= 1.0))
        throw ValidationError(describe("beta must lie in [0,1]", t.beta));
    if (!(t.gamma > 0.0)) throw ValidationError(describe("gamma must be > 0", t.gamma));
    if (!(t.gamma > t.alpha))
        throw ValidationError(describe("gamma must exceed alpha", t.gamma));
    if (!(t.delta > 0.0 && t.delta < 1.0))
        throw ValidationError(describe("delta must lie in (0,1)", t.delta));
    if (!(t.rho > 0.0)) throw ValidationError(describe("rho must be > 0", t.rho));
    if (!(t.chi > 0.0)) throw ValidationError(describe("chi must be > 0", t.chi));
}

std::int64_t SystemSpec::agents_of(std::size_t t) const {
    return std::llround(fractions.at(t) * static_cast<double>(n));
}

std::int64_t SystemSpec::total_money() const {
    return std::llround(m * static_cast<double>(n));
}

double SystemSpec::gamma_max() const {
    double g = 0.0;
    for (const auto& t : types) g = std::max(g, t.gamma);
    return g;
}

SystemSpec validate_spec(SystemSpec spec) {
    if (spec.types.empty()) throw ValidationError("spec has no agent types");
    if (spec.types.size() != spec.fractions.size())
        throw ValidationError("types and fractions differ in length");
    if (spec.n <= 0) throw ValidationError("n must be a positive integer");
    for (const auto& t : spec.types) validate_type(t);

    const double dn = static_cast<double>(spec.n);
    for (std::size_t t = 0; t < spec.fractions.size(); ++t) {
        const double ft = spec.fractions[t];
        if (!(ft > 0.0))
            throw ValidationError(describe("type fraction must be positive", ft));
        const double count = ft * dn;
        if (!near_integer(count, dn) || std::llround(count) < 1)
            throw ValidationError(describe("f_t * n must be a positive integer", count));
    }
    const double sum = std::accumulate(spec.fractions.begin(), spec.fractions.end(), 0.0);
    if (std::abs(sum - 1.0) > kFractionSumTol)
        throw ValidationError(describe("type fractions must sum to 1", sum));

    if (!(spec.m >= 0.0)) throw ValidationError(describe("m must be >= 0", spec.m));
    const double money = spec.m * dn;
    if (!near_integer(money, dn))
        throw ValidationError(describe("m * n must be an integer", money));
    return spec;
}

bool StrategyProfile::all_zero() const {
    return std::all_of(thresholds.begin(), thresholds.end(), [](int k) { return k == 0; });
}

int StrategyProfile::max_threshold() const {
    return thresholds.empty() ? 0 : *std::max_element(thresholds.begin(), thresholds.end());
}

void validate_profile(const SystemSpec& spec, const StrategyProfile& profile, int k_max) {
    if (profile.thresholds.size() != spec.types.size())
        throw ValidationError("profile arity differs from the number of types");
    for (int k : profile.thresholds) {
        if (k < 0 || k > k_max) {
            std::ostringstream os;
            os << "threshold " << k << " outside [0, " << k_max << "]";
            throw ValidationError(os.str());
        }
    }
}

StrategyProfile uniform_profile(std::size_t types, int k) {
    return StrategyProfile{std::vector<int>(types, k)};
}

double MoneyDistribution::type_mass(std::size_t t) const {
    return std::accumulate(mass.at(t).begin(), mass.at(t).end(), 0.0);
}

double MoneyDistribution::total_mass() const {
    double s = 0.0;
    for (std::size_t t = 0; t < mass.size(); ++t) s += type_mass(t);
    return s;
}

double MoneyDistribution::mean_money() const {
    double s = 0.0;
    for (const auto& row : mass)
        for (std::size_t i = 0; i < row.size(); ++i) s += static_cast<double>(i) * row[i];
    return s;
}

double MoneyDistribution::mass_at_zero() const {
    double s = 0.0;
    for (const auto& row : mass)
        if (!row.empty()) s += row.front();
    return s;
}

double MoneyDistribution::mass_at_top() const {
    double s = 0.0;
    for (const auto& row : mass)
        if (!row.empty()) s += row.back();
    return s;
}

double MoneyDistribution::at(std::size_t t, std::size_t level) const {
    const auto& row = mass.at(t);
    return level < row.size() ? row[level] : 0.0;
}

double l2_distance(const MoneyDistribution& a, const MoneyDistribution& b) {
    const std::size_t types = std::max(a.type_count(), b.type_count());
    double s = 0.0;
    for (std::size_t t = 0; t < types; ++t) {
        const std::size_t la = t < a.type_count() ? a.mass[t].size() : 0;
        const std::size_t lb = t < b.type_count() ? b.mass[t].size() : 0;
        for (std::size_t i = 0; i < std::max(la, lb); ++i) {
            const double x = i < la ? a.mass[t][i] : 0.0;
            const double y = i < lb ? b.mass[t][i] : 0.0;
            s += (x - y) * (x - y);
        }
    }
    return std::sqrt(s);
}

SystemSpec apply_sybils(const SystemSpec& spec, double target_fraction, int sybils,
                        std::size_t type_index) {
    if (type_index >= spec.types.size()) throw ValidationError("sybil type index out of range");
    if (sybils < 0) throw ValidationError("sybil count must be non-negative");
    const double dn = static_cast<double>(spec.n);
    const double moved = target_fraction * dn;
    if (!(target_fraction > 0.0) || !near_integer(moved, dn))
        throw ValidationError(describe("sybil sub-population must be a positive integer", moved));
    const std::int64_t moved_count = std::llround(moved);
    const std::int64_t available = spec.agents_of(type_index);
    if (moved_count > available)
        throw ValidationError(describe("sybil sub-population exceeds its type", moved));

    SystemSpec out = spec;
    AgentType sybil = spec.types[type_index];
    sybil.chi = spec.types[type_index].chi * (1.0 + sybils);
    const std::int64_t rest = available - moved_count;
    if (rest == 0) {
        out.types.erase(out.types.begin() + static_cast<std::ptrdiff_t>(type_index));
        out.fractions.erase(out.fractions.begin() + static_cast<std::ptrdiff_t>(type_index));
    } else {
        out.fractions[type_index] = static_cast<double>(rest) / dn;
    }
    out.types.push_back(sybil);
    out.fractions.push_back(static_cast<double>(moved_count) / dn);
    return validate_spec(std::move(out));
}

SystemSpec merge_equal_types(const SystemSpec& spec) {
    SystemSpec out;
    out.n = spec.n;
    out.m = spec.m;
    std::vector<std::int64_t> counts;
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        auto it = std::find(out.types.begin(), out.types.end(), spec.types[t]);
        if (it == out.types.end()) {
            out.types.push_back(spec.types[t]);
            counts.push_back(spec.agents_of(t));
        } else {
            counts[static_cast<std::size_t>(it - out.types.begin())] += spec.agents_of(t);
        }
    }
    for (auto c : counts) out.fractions.push_back(static_cast<double>(c) / static_cast<double>(spec.n));
    return out;
}

double internal_satisfaction_probability(double beta, int group_size) {
    if (group_size < 1) throw ValidationError("group size must be >= 1");
    return 1.0 - std::pow(1.0 - beta, group_size - 1);
}

std::int64_t CollusionSpec::total_money() const {
    return std::llround(m * static_cast<double>(n));
}

CollusionSpec make_collusion_spec(const SystemSpec& spec, int group_size,
                                  double colluding_fraction) {
    if (spec.types.size() != 1) throw ValidationError("collusion needs a single base type");
    if (group_size < 1) throw ValidationError("group size must be >= 1");
    if (!(colluding_fraction > 0.0 && colluding_fraction <= 1.0))
        throw ValidationError(describe("colluding fraction must lie in (0,1]", colluding_fraction));
    const std::int64_t pool =
        static_cast<std::int64_t>(std::floor(colluding_fraction * static_cast<double>(spec.n) + 1e-9));
    if (group_size > spec.agents_of(0) || group_size > pool)
        throw ValidationError("group size exceeds the colluding population");

    CollusionSpec c;
    c.base = spec.types[0];
    c.group_size = group_size;
    c.groups = pool / group_size;
    c.independents = spec.n - c.groups * group_size;
    c.beta_int = internal_satisfaction_probability(c.base.beta, group_size);
    c.n = spec.n;
    c.m = spec.m;
    if (group_size > 1 && c.beta_int >= 1.0)
        throw ValidationError("internal satisfaction is certain (beta = 1); groups never use scrip");
    return c;
}

AgentType type_from_json(const nlohmann::json& j) {
    AgentType t;
    t.alpha = j.at("alpha").get<double>();
    t.beta = j.at("beta").get<double>();
    t.gamma = j.at("gamma").get<double>();
    t.delta = j.at("delta").get<double>();
    t.rho = j.value("rho", 1.0);
    t.chi = j.value("chi", 1.0);
    return t;
}

nlohmann::json type_to_json(const AgentType& t) {
    return {{"alpha", t.alpha}, {"beta", t.beta}, {"gamma", t.gamma},
            {"delta", t.delta}, {"rho", t.rho},   {"chi", t.chi}};
}

SystemSpec spec_from_json(const nlohmann::json& j) {
    SystemSpec spec;
    try {
        spec.n = j.at("n").get<std::int64_t>();
        spec.m = j.at("m").get<double>();
        for (const auto& entry : j.at("types")) {
            spec.types.push_back(type_from_json(entry));
            spec.fractions.push_back(entry.value("fraction", 1.0));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed system block: ") + e.what());
    }
    return validate_spec(std::move(spec));
}

nlohmann::json spec_to_json(const SystemSpec& spec) {
    nlohmann::json types = nlohmann::json::array();
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        auto entry = type_to_json(spec.types[t]);
        entry["fraction"] = spec.fractions[t];
        types.push_back(entry);
    }
    return {{"n", spec.n}, {"m", spec.m}, {"types", types}};
}

SystemSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("cannot parse config " + path.string() + ": " + e.what());
    }
    return spec_from_json(j.contains("system") ? j.at("system") : j);
}

}  // namespace scrip
