#pragma once

// Experiment drivers behind the command-line tool. Each command turns a
// config into CSV tables plus a JSON summary; nothing here touches the
// filesystem except load_config and write_outputs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scrip/equilibrium.hpp"
#include "scrip/model.hpp"

namespace scrip {

struct ExperimentConfig {
    std::string scenario;
    SystemSpec system;
    std::optional<StrategyProfile> profile;
    std::optional<RateEstimates> rates;  // best-response override
    EquilibriumOptions equilibrium;
    std::string sweep_variable;  // m | sybil_count | sybil_fraction | group_size | p_e
    std::vector<double> grid;
    std::vector<std::uint64_t> seeds{1};
    std::int64_t rounds = 0;
    std::int64_t warmup = -1;
    double p_s = 1e-4;  // fig1
    std::vector<double> sybil_fractions;
    std::vector<int> sybil_counts;
    int group_size = 1;
    double colluding_fraction = 1.0;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
/// Reads a JSON config; // and /* */ comments are accepted.
ExperimentConfig load_config(const std::filesystem::path& path);

struct Table {
    std::string name;  // file stem
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct CommandOutput {
    std::vector<Table> tables;
    nlohmann::json summary;
};

struct RunContext {
    int threads = 1;
    bool trace = false;
};

/// Runs fn(0..count-1) on up to `threads` workers; results keep index order.
template <class T>
std::vector<T> parallel_map(std::size_t count, int threads, const std::function<T(std::size_t)>& fn);

CommandOutput cmd_steady_state(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_best_response(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_equilibrium(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_simulate(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_fig1(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_sybil_sweep(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_crash_scan(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_collusion_sweep(const ExperimentConfig& config, const RunContext& ctx);
CommandOutput cmd_sybil_equivalence(const ExperimentConfig& config, const RunContext& ctx);

const std::vector<std::string>& command_names();
CommandOutput run_command(const std::string& name, const ExperimentConfig& config,
                          const RunContext& ctx);

/// FNV-1a 64-bit, hex encoded.
std::string content_hash(const std::string& bytes);

struct ManifestInfo {
    std::string command;
    std::string config_path;
    std::string config_bytes;
    std::vector<std::uint64_t> seeds;
};

/// Writes <dir>/<table>.csv for every table, <dir>/<command>.summary.json
/// and <dir>/<command>.manifest.json. Returns the files written.
std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir,
                                                 const CommandOutput& output,
                                                 const ManifestInfo& info, bool plot_stub = false);

std::string table_to_csv(const Table& table);

}  // namespace scrip

#include "scrip/detail/parallel.hpp"
