// lnn-lab: run, sweep, verify and export deep linear network experiments.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 divergence,
// 4 unsatisfied verification.

#include "lnn/io.hpp"
#include "lnn/lab/config.hpp"
#include "lnn/lab/scenarios.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;
constexpr int kUnsatisfied = 4;

std::string env_output_dir() {
  const char* env = std::getenv("LNN_LAB_OUT");
  return env && *env ? std::string(env) : std::string();
}

int status_of(const lnn::lab::ScenarioResult& r) {
  if (r.diverged) return kDiverged;
  if (!r.satisfied) return kUnsatisfied;
  return kOk;
}

std::vector<std::string> split_csv(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw lnn::lab::ConfigError("values", "empty entry in list");
    out.push_back(item.substr(first, last - first + 1));
  }
  return out;
}

lnn::lab::ExperimentConfig load(const std::string& path) {
  lnn::lab::ExperimentConfig cfg = lnn::lab::load_config(path);
  if (const std::string env = env_output_dir(); !env.empty()) cfg.outputDir = env;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep linear network training-dynamics lab"};
  app.require_subcommand(1);

  std::string configPath;
  auto* run = app.add_subcommand("run", "Run the scenario described by a config file");
  run->add_option("config", configPath, "TOML config file")->required();

  std::string sweepConfig;
  std::string axis;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "Run one scenario per value of a config field");
  sweep->add_option("config", sweepConfig, "TOML config file")->required();
  sweep->add_option("--axis", axis, "Dotted config field, e.g. loss.observations")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  std::uint64_t seed = 1;
  std::string verifyDir;
  auto* verify = app.add_subcommand("verify", "Run the property suite with default settings");
  verify->add_option("--seed", seed, "Base seed");
  verify->add_option("--out", verifyDir, "Output directory (default: $LNN_LAB_OUT or lnn-out/verify)");

  std::string format;
  std::string exportDir;
  std::string exportFile;
  auto* exportCmd = app.add_subcommand("export", "Consolidate summaries and reports of an output directory");
  exportCmd->add_option("--format", format, "csv or json")
      ->required()
      ->check(CLI::IsMember({"csv", "json"}));
  exportCmd->add_option("--dir", exportDir, "Output directory to read (default: $LNN_LAB_OUT or lnn-out)");
  exportCmd->add_option("-o,--output", exportFile, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*run) {
      const auto cfg = load(configPath);
      const auto result = lnn::lab::run_scenario(cfg);
      std::cout << result.summary.dump(2) << "\n";
      return status_of(result);
    }
    if (*sweep) {
      const auto cfg = load(sweepConfig);
      const auto merged = lnn::lab::run_sweep(cfg, axis, split_csv(values));
      std::cout << merged.dump(2) << "\n";
      return kOk;
    }
    if (*verify) {
      std::string dir = verifyDir;
      if (dir.empty()) dir = env_output_dir();
      if (dir.empty()) dir = "lnn-out/verify";
      const auto result = lnn::lab::run_verify(seed, dir);
      for (const auto& [name, part] : result.summary["parts"].items()) {
        std::cout << (part["satisfied"].get<bool>() ? "PASS " : "FAIL ") << name << "\n";
      }
      return status_of(result);
    }
    if (*exportCmd) {
      std::string dir = exportDir;
      if (dir.empty()) dir = env_output_dir();
      if (dir.empty()) dir = "lnn-out";
      const auto text = lnn::lab::export_artifacts(
          dir, format == "csv" ? lnn::lab::ExportFormat::Csv : lnn::lab::ExportFormat::Json);
      if (exportFile.empty()) {
        std::cout << text;
      } else {
        lnn::write_file(exportFile, text);
      }
      return kOk;
    }
  } catch (const lnn::lab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const lnn::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const lnn::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
