#include "lnn/lab/config.hpp"

#include "lnn/io.hpp"

#include <toml.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace lnn::lab {

namespace {

constexpr std::array<std::pair<Scenario, std::string_view>, 9> kScenarioNames{{
    {Scenario::Acceleration, "acceleration"},
    {Scenario::GreedyRank, "greedy_rank"},
    {Scenario::NuclearVsLnn, "nuclear_vs_lnn"},
    {Scenario::NormDivergence, "norm_divergence"},
    {Scenario::Conservation, "conservation"},
    {Scenario::ConvergenceBound, "convergence_bound"},
    {Scenario::Equivalence, "equivalence"},
    {Scenario::DetSign, "det_sign"},
    {Scenario::SigmaRates, "sigma_rates"},
}};

std::int64_t as_integer(const toml::node& node, const std::string& path) {
  if (auto v = node.value_exact<std::int64_t>()) return *v;
  throw ConfigError(path, "expected an integer");
}

int as_int(const toml::node& node, const std::string& path) {
  const std::int64_t v = as_integer(node, path);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(path, "integer out of range");
  }
  return static_cast<int>(v);
}

double as_double(const toml::node& node, const std::string& path) {
  if (auto v = node.value_exact<double>()) return *v;
  if (auto v = node.value_exact<std::int64_t>()) return static_cast<double>(*v);
  throw ConfigError(path, "expected a number");
}

std::string as_string(const toml::node& node, const std::string& path) {
  if (auto v = node.value_exact<std::string>()) return *v;
  throw ConfigError(path, "expected a string");
}

template <typename T, typename Convert>
std::vector<T> as_list(const toml::node& node, const std::string& path, Convert convert) {
  const toml::array* arr = node.as_array();
  if (!arr) throw ConfigError(path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    out.push_back(convert(*arr->get(i), path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::string quote(const std::string& s) {
  std::ostringstream out;
  out << toml::value<std::string>(s);
  return out.str();
}

std::string number(double v) { return format_double(v); }

template <typename T, typename Format>
std::string list(const std::vector<T>& values, Format fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt(values[i]);
  }
  return out + "]";
}

struct Field {
  std::string path;
  std::function<void(ExperimentConfig&, const toml::node&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Member>
Field int_field(std::string path, Member member) {
  return {std::move(path),
          [member](ExperimentConfig& c, const toml::node& n, const std::string& p) {
            member(c) = as_int(n, p);
          },
          [member](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return std::to_string(member(copy));
          }};
}

template <typename Member>
Field double_field(std::string path, Member member) {
  return {std::move(path),
          [member](ExperimentConfig& c, const toml::node& n, const std::string& p) {
            member(c) = as_double(n, p);
          },
          [member](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return number(member(copy));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"scenario",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   const auto s = parse_scenario(as_string(n, p));
                   if (!s) throw ConfigError(p, "unknown scenario");
                   c.scenario = *s;
                 },
                 [](const ExperimentConfig& c) { return quote(scenario_name(c.scenario)); }});
    f.push_back({"seed",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   const std::int64_t v = as_integer(n, p);
                   if (v < 0) throw ConfigError(p, "must be non-negative");
                   c.seed = static_cast<std::uint64_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
    f.push_back(int_field("seeds", [](ExperimentConfig& c) -> int& { return c.seeds; }));
    f.push_back({"depths",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   c.depths = as_list<int>(n, p, as_int);
                 },
                 [](const ExperimentConfig& c) {
                   return list(c.depths, [](int v) { return std::to_string(v); });
                 }});
    f.push_back(int_field("hidden", [](ExperimentConfig& c) -> int& { return c.hidden; }));
    f.push_back(
        double_field("init_scale", [](ExperimentConfig& c) -> double& { return c.initScale; }));
    f.push_back({"epsilons",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   c.epsilons = as_list<double>(n, p, as_double);
                 },
                 [](const ExperimentConfig& c) { return list(c.epsilons, number); }});
    f.push_back({"output_dir",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   c.outputDir = as_string(n, p);
                 },
                 [](const ExperimentConfig& c) { return quote(c.outputDir); }});

    f.push_back(int_field("loss.rows", [](ExperimentConfig& c) -> int& { return c.loss.rows; }));
    f.push_back(int_field("loss.cols", [](ExperimentConfig& c) -> int& { return c.loss.cols; }));
    f.push_back(int_field("loss.rank", [](ExperimentConfig& c) -> int& { return c.loss.rank; }));
    f.push_back(int_field("loss.observations",
                          [](ExperimentConfig& c) -> int& { return c.loss.observations; }));
    f.push_back(
        int_field("loss.samples", [](ExperimentConfig& c) -> int& { return c.loss.samples; }));
    f.push_back(int_field("loss.p", [](ExperimentConfig& c) -> int& { return c.loss.p; }));
    f.push_back(
        double_field("loss.noise", [](ExperimentConfig& c) -> double& { return c.loss.noise; }));
    f.push_back(double_field("loss.target_scale",
                             [](ExperimentConfig& c) -> double& { return c.loss.targetScale; }));

    f.push_back({"flow.method",
                 [](ExperimentConfig& c, const toml::node& n, const std::string& p) {
                   const std::string m = as_string(n, p);
                   if (m == "rk4") {
                     c.flow.method = Method::Rk4;
                   } else if (m == "euler") {
                     c.flow.method = Method::Euler;
                   } else {
                     throw ConfigError(p, "expected \"rk4\" or \"euler\"");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return quote(c.flow.method == Method::Rk4 ? "rk4" : "euler");
                 }});
    f.push_back(double_field("flow.step_size",
                             [](ExperimentConfig& c) -> double& { return c.flow.stepSize; }));
    f.push_back(double_field("flow.max_time",
                             [](ExperimentConfig& c) -> double& { return c.flow.maxTime; }));
    f.push_back(double_field("flow.stop_loss_delta",
                             [](ExperimentConfig& c) -> double& { return c.flow.stopLossDelta; }));
    f.push_back(int_field("flow.record_every",
                          [](ExperimentConfig& c) -> int& { return c.flow.recordEvery; }));
    f.push_back(int_field("flow.max_halvings",
                          [](ExperimentConfig& c) -> int& { return c.flow.maxHalvings; }));

    f.push_back(
        double_field("gd.step_size", [](ExperimentConfig& c) -> double& { return c.gd.stepSize; }));
    f.push_back(int_field("gd.max_iters", [](ExperimentConfig& c) -> int& { return c.gd.maxIters; }));
    f.push_back(
        int_field("gd.record_every", [](ExperimentConfig& c) -> int& { return c.gd.recordEvery; }));
    f.push_back(
        double_field("gd.grid_min", [](ExperimentConfig& c) -> double& { return c.gd.gridMin; }));
    f.push_back(
        double_field("gd.grid_max", [](ExperimentConfig& c) -> double& { return c.gd.gridMax; }));
    f.push_back(int_field("gd.points_per_decade",
                          [](ExperimentConfig& c) -> int& { return c.gd.pointsPerDecade; }));
    f.push_back(
        double_field("gd.epsilon", [](ExperimentConfig& c) -> double& { return c.gd.epsilon; }));
    return f;
  }();
  return all;
}

const Field* find_field(const std::string& path) {
  for (const auto& f : fields()) {
    if (f.path == path) return &f;
  }
  return nullptr;
}

void apply(ExperimentConfig& cfg, const std::string& path, const toml::node& node) {
  const Field* field = find_field(path);
  if (!field) throw ConfigError(path, "unknown key");
  field->set(cfg, node, path);
}

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path, message);
}

}  // namespace

std::string scenario_name(Scenario scenario) {
  for (const auto& [s, name] : kScenarioNames) {
    if (s == scenario) return std::string(name);
  }
  return "unknown";
}

std::optional<Scenario> parse_scenario(std::string_view name) {
  for (const auto& [s, n] : kScenarioNames) {
    if (n == name) return s;
  }
  return std::nullopt;
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all = [] {
    std::vector<Scenario> out;
    for (const auto& entry : kScenarioNames) out.push_back(entry.first);
    return out;
  }();
  return all;
}

int ExperimentConfig::hidden_width() const {
  return hidden > 0 ? hidden : std::max(loss.rows, loss.cols);
}

ExperimentConfig default_config(Scenario scenario) {
  ExperimentConfig c;
  c.scenario = scenario;
  switch (scenario) {
    case Scenario::Acceleration:
      c.depths = {1, 2, 3};
      c.initScale = 1e-3;
      c.loss.rows = 1;
      c.loss.cols = 4;
      c.loss.samples = 20;
      c.loss.p = 4;
      c.loss.targetScale = 1.0;
      c.gd.maxIters = 200000;
      c.gd.recordEvery = 1;
      c.gd.epsilon = 1e-3;
      break;
    case Scenario::GreedyRank:
      c.depths = {1, 2, 3};
      c.initScale = 1e-4;
      c.flow.stepSize = 0.02;
      c.flow.maxTime = 400.0;
      c.flow.recordEvery = 25;
      break;
    case Scenario::NuclearVsLnn:
      c.depths = {2, 3};
      c.initScale = 1e-4;
      c.loss.observations = 10;
      c.flow.stepSize = 0.02;
      c.flow.maxTime = 400.0;
      c.flow.recordEvery = 250;
      break;
    case Scenario::NormDivergence:
      c.depths = {2};
      c.loss.rows = 2;
      c.loss.cols = 2;
      c.gd.stepSize = 0.1;
      c.gd.maxIters = 2000;
      c.gd.recordEvery = 10;
      c.flow.stepSize = 0.05;
      c.flow.maxTime = 60000.0;
      c.flow.stopLossDelta = 1e-4;
      c.flow.recordEvery = 200;
      break;
    case Scenario::Conservation:
      c.seeds = 20;
      c.depths = {2, 3, 4};
      c.hidden = 8;
      c.initScale = 0.3;
      c.loss.rows = 6;
      c.loss.cols = 6;
      c.flow.stepSize = 1e-3;
      c.flow.maxTime = 1.0;
      c.flow.recordEvery = 100;
      break;
    case Scenario::ConvergenceBound:
      c.seeds = 10;
      c.depths = {2, 3};
      c.initScale = 0.5;
      c.loss.rows = 3;
      c.loss.cols = 3;
      c.flow.stepSize = 1e-3;
      c.flow.recordEvery = 1000;
      break;
    case Scenario::Equivalence:
      c.seeds = 10;
      c.depths = {2, 3};
      c.initScale = 0.5;
      c.loss.rows = 4;
      c.loss.cols = 4;
      c.flow.stepSize = 1e-3;
      c.flow.maxTime = 1.0;
      c.flow.recordEvery = 10;
      break;
    case Scenario::DetSign:
      c.seeds = 50;
      c.depths = {2, 3};
      c.initScale = 0.5;
      c.loss.rows = 3;
      c.loss.cols = 3;
      c.flow.stepSize = 1e-2;
      c.flow.maxTime = 2.0;
      c.flow.recordEvery = 10;
      c.gd.stepSize = 0.1;
      c.gd.maxIters = 2000;
      c.gd.recordEvery = 10;
      break;
    case Scenario::SigmaRates:
      c.seeds = 3;
      c.depths = {2, 3, 4};
      c.initScale = 0.3;
      c.loss.rows = 4;
      c.loss.cols = 4;
      c.flow.stepSize = 2.5e-4;
      c.flow.maxTime = 1.0;
      c.flow.recordEvery = 1;
      break;
  }
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError("", msg.str());
  }

  Scenario scenario = Scenario::GreedyRank;
  if (const toml::node* node = root.get("scenario")) {
    const auto s = parse_scenario(as_string(*node, "scenario"));
    if (!s) throw ConfigError("scenario", "unknown scenario");
    scenario = *s;
  }
  ExperimentConfig cfg = default_config(scenario);

  for (const auto& [key, node] : root) {
    const std::string name(key.str());
    if (const toml::table* section = node.as_table()) {
      for (const auto& [subkey, subnode] : *section) {
        const std::string path = name + "." + std::string(subkey.str());
        if (subnode.is_table()) throw ConfigError(path, "nested tables are not supported");
        apply(cfg, path, subnode);
      }
    } else {
      apply(cfg, name, node);
    }
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void set_field(ExperimentConfig& cfg, const std::string& field, const std::string& value) {
  const Field* f = find_field(field);
  if (!f) throw ConfigError(field, "unknown key");
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    parsed = toml::table{{"v", value}};
  }
  const toml::node* node = parsed.get("v");
  if (field == "scenario") {
    const auto s = parse_scenario(as_string(*node, field));
    if (!s) throw ConfigError(field, "unknown scenario");
    // Switching scenario resets to that scenario's defaults.
    const std::string out = cfg.outputDir;
    const std::uint64_t seed = cfg.seed;
    cfg = default_config(*s);
    cfg.outputDir = out;
    cfg.seed = seed;
  } else {
    f->set(cfg, *node, field);
  }
  validate(cfg);
}

std::vector<std::string> field_names() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.path);
  return out;
}

void validate(const ExperimentConfig& c) {
  require(c.seeds >= 1, "seeds", "must be >= 1");
  require(!c.depths.empty(), "depths", "must not be empty");
  for (std::size_t i = 0; i < c.depths.size(); ++i) {
    require(c.depths[i] >= 1, "depths[" + std::to_string(i) + "]", "must be >= 1");
  }
  require(c.hidden >= 0, "hidden", "must be >= 0");
  require(c.hidden == 0 || c.hidden >= std::min(c.loss.rows, c.loss.cols), "hidden",
          "must be >= min(loss.rows, loss.cols)");
  require(c.initScale >= 0.0, "init_scale", "must be >= 0");
  require(!c.epsilons.empty(), "epsilons", "must not be empty");
  for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
    require(c.epsilons[i] > 0.0, "epsilons[" + std::to_string(i) + "]", "must be > 0");
  }
  require(!c.outputDir.empty(), "output_dir", "must not be empty");

  require(c.loss.rows >= 1, "loss.rows", "must be >= 1");
  require(c.loss.cols >= 1, "loss.cols", "must be >= 1");
  require(c.loss.rank >= 1 && c.loss.rank <= std::min(c.loss.rows, c.loss.cols), "loss.rank",
          "must be in [1, min(rows, cols)]");
  const bool completion = c.scenario == Scenario::GreedyRank || c.scenario == Scenario::NuclearVsLnn;
  require(c.loss.observations >= 1 && (!completion || c.loss.observations <= c.loss.rows * c.loss.cols),
          "loss.observations", "must be in [1, rows * cols]");
  require(c.loss.samples >= 1, "loss.samples", "must be >= 1");
  require(c.loss.p == 2 || (c.loss.p >= 4 && c.loss.p % 2 == 0), "loss.p",
          "must be 2 or an even integer >= 4");
  require(c.loss.noise >= 0.0, "loss.noise", "must be >= 0");
  require(c.loss.targetScale > 0.0, "loss.target_scale", "must be > 0");

  require(c.flow.stepSize > 0.0, "flow.step_size", "must be > 0");
  require(c.flow.maxTime >= 0.0, "flow.max_time", "must be >= 0");
  require(c.flow.stopLossDelta >= 0.0, "flow.stop_loss_delta", "must be >= 0");
  require(c.flow.recordEvery >= 1, "flow.record_every", "must be >= 1");
  require(c.flow.maxHalvings >= 0, "flow.max_halvings", "must be >= 0");

  require(c.gd.stepSize > 0.0, "gd.step_size", "must be > 0");
  require(c.gd.maxIters >= 0, "gd.max_iters", "must be >= 0");
  require(c.gd.recordEvery >= 1, "gd.record_every", "must be >= 1");
  require(c.gd.gridMin > 0.0, "gd.grid_min", "must be > 0");
  require(c.gd.gridMax >= c.gd.gridMin, "gd.grid_max", "must be >= gd.grid_min");
  require(c.gd.pointsPerDecade >= 1, "gd.points_per_decade", "must be >= 1");
  require(c.gd.epsilon > 0.0, "gd.epsilon", "must be > 0");
}

std::string to_toml(const ExperimentConfig& cfg) {
  std::string top;
  std::string sections;
  std::string current;
  for (const auto& f : fields()) {
    const auto dot = f.path.find('.');
    if (dot == std::string::npos) {
      top += f.path + " = " + f.get(cfg) + "\n";
      continue;
    }
    const std::string section = f.path.substr(0, dot);
    if (section != current) {
      sections += "\n[" + section + "]\n";
      current = section;
    }
    sections += f.path.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return top + sections;
}

}  // namespace lnn::lab
