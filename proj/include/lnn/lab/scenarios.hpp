#pragma once

#include "lnn/lab/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lnn::lab {

struct ScenarioResult {
  /// Scenario-level metrics; also written to `summary.json`.
  nlohmann::json summary;
  /// False when any bound report produced by the run is unsatisfied.
  bool satisfied = true;
  /// True when a run diverged; its partial trajectory was still written.
  bool diverged = false;
};

/// Runs the configured scenario and writes its artifacts under
/// cfg.outputDir: `config.toml`, `summary.json`, trajectory and sigma CSVs
/// (`depth_<n>/trajectory.csv`, `depth_<n>/sigma.csv`) and bound reports
/// (`reports/*.json`). Deterministic for a fixed config.
ScenarioResult run_scenario(const ExperimentConfig& cfg);

/// The property suite: conservation, equivalence, sigma_rates and det_sign
/// with default settings and the given seed, each in its own subdirectory.
ScenarioResult run_verify(std::uint64_t seed, const std::string& outputDir);

/// One scenario per value of `axis` in `<outputDir>/cell_<i>`. Cell seeds
/// are seed + i unless the axis is `seed` itself. A failing cell is recorded
/// in the merged array (also written to `sweep.json`) and does not stop the
/// sweep. Invalid axis names or values throw ConfigError before any run.
nlohmann::json run_sweep(const ExperimentConfig& base, const std::string& axis,
                         const std::vector<std::string>& values);

enum class ExportFormat { Csv, Json };

/// Collects every `summary.json`, `sweep.json` and report JSON below `dir`.
/// JSON: {"artifacts": [{"path", "content"}]} sorted by path. CSV: header
/// `path,key,value` with one row per scalar leaf, keys as JSON pointers.
std::string export_artifacts(const std::string& dir, ExportFormat format);

}  // namespace lnn::lab
