#pragma once

#include "lnn/dynamics.hpp"
#include "lnn/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lnn::lab {

enum class Scenario {
  Acceleration,
  GreedyRank,
  NuclearVsLnn,
  NormDivergence,
  Conservation,
  ConvergenceBound,
  Equivalence,
  DetSign,
  SigmaRates,
};

std::string scenario_name(Scenario scenario);
std::optional<Scenario> parse_scenario(std::string_view name);
const std::vector<Scenario>& all_scenarios();

/// Task generation parameters. Which fields matter depends on the scenario;
/// unused ones are ignored.
struct LossParams {
  int rows = 5;
  int cols = 5;
  int rank = 1;
  int observations = 12;
  int samples = 20;
  int p = 4;
  double noise = 0.0;
  double targetScale = 5.0;
};

/// Discrete-iteration parameters, including the step-size grid searched by
/// the acceleration scenario.
struct GdParams {
  double stepSize = 1e-2;
  int maxIters = 10000;
  int recordEvery = 1;
  double gridMin = 1e-6;
  double gridMax = 1.0;
  int pointsPerDecade = 20;
  double epsilon = 1e-3;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::GreedyRank;
  std::uint64_t seed = 1;
  /// Number of independent repetitions (seed, seed+1, ...) in property
  /// scenarios.
  int seeds = 1;
  std::vector<int> depths{1, 2, 3};
  /// Width of every hidden layer; 0 means max(rows, cols).
  int hidden = 0;
  double initScale = 1e-4;
  /// Target loss gaps for the convergence-bound scenario.
  std::vector<double> epsilons{1e-2, 1e-4};
  LossParams loss;
  FlowConfig flow;
  GdParams gd;
  std::string outputDir = "lnn-out";

  int hidden_width() const;
};

/// Invalid configuration; `field` is the dotted path of the offending key
/// (empty for syntax errors).
struct ConfigError : Error {
  ConfigError(std::string fieldPath, const std::string& message)
      : Error(fieldPath.empty() ? message : fieldPath + ": " + message),
        field(std::move(fieldPath)) {}
  std::string field;
};

/// Defaults of every field for the given scenario.
ExperimentConfig default_config(Scenario scenario);

/// Parses TOML text. Keys not set fall back to the scenario's defaults;
/// unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Sets one field from its textual value (TOML literal syntax, bare words
/// are read as strings), then re-validates.
void set_field(ExperimentConfig& cfg, const std::string& field, const std::string& value);

/// Dotted paths of all accepted fields, in documentation order.
std::vector<std::string> field_names();

void validate(const ExperimentConfig& cfg);

/// Complete TOML rendering (every field), suitable for parse_config.
std::string to_toml(const ExperimentConfig& cfg);

}  // namespace lnn::lab
