#include "bayesnn/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Config from_ptree(const boost::property_tree::ptree& tree, const std::string& base_dir) {
  Config c = Config::parse("", base_dir);
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' must be inside a section");
    for (const auto& [key, value] : body) {
      if (!value.empty()) throw ConfigError("config: nesting deeper than one section");
      c.set(section + "." + key, value.data());
    }
  }
  return c;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw ConfigError("config: '" + key + "' is not a number: " + text);
  return v;
}

Index to_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw ConfigError("config: '" + key + "' is not an integer: " + text);
  return static_cast<Index>(v);
}

}  // namespace

Config Config::load(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const auto parent = std::filesystem::path(path).parent_path();
  return from_ptree(tree, parent.empty() ? "." : parent.string());
}

Config Config::parse(const std::string& text, const std::string& base_dir) {
  Config c;
  c.base_dir_ = base_dir;
  if (text.empty()) return c;
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Config parsed = from_ptree(tree, base_dir);
  return parsed;
}

void Config::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() ||
      key.find('.', dot + 1) != std::string::npos)
    throw ConfigError("config: keys have the form section.name, got '" + key + "'");
  values_[key] = trim(value);
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const { return to_double(key, get_string(key)); }

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

Index Config::get_int(const std::string& key) const { return to_int(key, get_string(key)); }

Index Config::get_int(const std::string& key, Index fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' is not a boolean: " + v);
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
  return out;
}

std::string Config::to_ini() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

Method parse_method(const std::string& name) {
  static const std::map<std::string, Method> kMethods = {
      {"mh", Method::kMh},       {"hmc", Method::kHmc},     {"mcd", Method::kMcd},
      {"bbb", Method::kBbb},     {"bbvi", Method::kBbvi},   {"ngbbvi", Method::kNgbbvi},
      {"ngvi", Method::kNgvi},   {"von", Method::kVon},     {"vadam", Method::kVadam},
      {"vogn", Method::kVogn},   {"qbvi", Method::kQbvi},   {"mgvb", Method::kMgvb},
      {"emgvb", Method::kEmgvb}};
  auto it = kMethods.find(name);
  if (it == kMethods.end()) throw ConfigError("unknown method '" + name + "'");
  return it->second;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kMh: return "mh";
    case Method::kHmc: return "hmc";
    case Method::kMcd: return "mcd";
    case Method::kBbb: return "bbb";
    case Method::kBbvi: return "bbvi";
    case Method::kNgbbvi: return "ngbbvi";
    case Method::kNgvi: return "ngvi";
    case Method::kVon: return "von";
    case Method::kVadam: return "vadam";
    case Method::kVogn: return "vogn";
    case Method::kQbvi: return "qbvi";
    case Method::kMgvb: return "mgvb";
    case Method::kEmgvb: return "emgvb";
  }
  return "unknown";
}

bool is_mcmc(Method m) { return m == Method::kMh || m == Method::kHmc; }

double ExperimentConfig::hyper(const std::string& key, double fallback) const {
  return raw.get_double(section() + "." + key, fallback);
}

double ExperimentConfig::hyper(const std::string& key) const {
  return raw.get_double(section() + "." + key);
}

Index ExperimentConfig::hyper_int(const std::string& key, Index fallback) const {
  return raw.get_int(section() + "." + key, fallback);
}

bool ExperimentConfig::hyper_bool(const std::string& key, bool fallback) const {
  return raw.get_bool(section() + "." + key, fallback);
}

std::string ExperimentConfig::hyper_string(const std::string& key, const std::string& fallback) const {
  return raw.get_string(section() + "." + key, fallback);
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void one_of(const std::string& value, std::initializer_list<const char*> allowed,
            const std::string& key) {
  for (const char* a : allowed)
    if (value == a) return;
  throw ConfigError("config: unsupported value '" + value + "' for " + key);
}

void validate_method(const ExperimentConfig& e) {
  const std::string s = e.section();
  auto pos = [&](const std::string& key) {
    require(e.hyper(key) > 0.0, "config: " + s + "." + key + " must be positive");
  };
  auto unit = [&](const std::string& key, double fallback) {
    const double v = e.hyper(key, fallback);
    require(v >= 0.0 && v < 1.0, "config: " + s + "." + key + " must lie in [0, 1)");
  };
  auto at_least = [&](const std::string& key, Index fallback, Index lo) {
    require(e.hyper_int(key, fallback) >= lo,
            "config: " + s + "." + key + " must be >= " + std::to_string(lo));
  };

  switch (e.method) {
    case Method::kMh:
      pos("proposal_std");
      at_least("burn_in", 0, 0);
      break;
    case Method::kHmc:
      pos("step_size");
      require(e.raw.has("hmc.leapfrog_steps"), "config: missing required key 'hmc.leapfrog_steps'");
      require(e.hyper_int("leapfrog_steps", 0) >= 1, "config: hmc.leapfrog_steps must be >= 1");
      e.hyper_bool("adapt_mass", false);
      at_least("burn_in", 0, 0);
      break;
    case Method::kMcd: {
      require(e.model_kind == "mlp", "config: mcd needs model.kind = mlp");
      const double p = e.hyper("dropout_rate");
      require(p > 0.0 && p < 1.0, "config: mcd.dropout_rate must lie in (0, 1)");
      require(e.hyper("weight_decay", 1e-4) >= 0.0, "config: mcd.weight_decay must be >= 0");
      require(e.hyper("learning_rate", 1e-2) > 0.0, "config: mcd.learning_rate must be positive");
      at_least("n_passes", 100, 2);
      e.hyper_bool("all_layers", false);
      break;
    }
    case Method::kBbb:
      pos("beta");
      break;
    case Method::kBbvi:
      pos("beta");
      at_least("n_samples", 16, 2);
      one_of(e.hyper_string("schedule", "robbins_monro"), {"robbins_monro", "constant"},
             s + ".schedule");
      break;
    case Method::kNgbbvi:
      pos("beta");
      at_least("n_samples", 16, 4);
      at_least("factor_size", 1, 1);
      e.hyper_bool("control_variate", true);
      break;
    case Method::kNgvi:
      pos("beta");
      at_least("n_samples", 16, 1);
      e.hyper_bool("diagonal", false);
      one_of(e.hyper_string("gradient", "mc"), {"mc", "exact"}, s + ".gradient");
      one_of(e.hyper_string("mean_update", "next"), {"next", "current"}, s + ".mean_update");
      break;
    case Method::kVon:
      pos("beta");
      require(e.hyper("s0", 0.0) >= 0.0, "config: von.s0 must be >= 0");
      one_of(e.hyper_string("curvature", "auto"), {"auto", "hessian", "ggn"}, s + ".curvature");
      e.hyper_bool("full", false);
      e.hyper_bool("at_mean", false);
      break;
    case Method::kVadam:
      pos("beta");
      unit("gamma1", 0.9);
      unit("gamma2", 0.999);
      break;
    case Method::kVogn:
      pos("beta");
      unit("beta1", 0.9);
      unit("beta2", 0.999);
      at_least("n_samples", 1, 1);
      break;
    case Method::kQbvi:
      pos("beta");
      require(e.hyper("beta") <= 1.0, "config: qbvi.beta must be <= 1");
      at_least("n_samples", 16, 2);
      e.hyper_bool("baseline", true);
      break;
    case Method::kMgvb:
    case Method::kEmgvb:
      pos("beta");
      at_least("n_samples", 64, 2);
      unit("omega", 0.9);
      require(e.hyper("clip", 100.0) > 0.0, "config: " + s + ".clip must be positive");
      e.hyper_bool("exact_factor", false);
      e.hyper_bool("gaussian_constants", true);
      e.hyper_bool("baseline", true);
      break;
  }
}

}  // namespace

ExperimentConfig parse_experiment(const Config& cfg, const std::uint64_t* seed_override) {
  ExperimentConfig e;
  e.raw = cfg;

  std::filesystem::path data = cfg.get_string("data.path");
  if (data.is_relative()) data = std::filesystem::path(cfg.base_dir()) / data;
  e.data_path = data.lexically_normal().string();
  try {
    e.task = parse_task(cfg.get_string("data.task", "regression"));
  } catch (const Error& err) {
    throw ConfigError(err.what());
  }
  e.target_cols = cfg.get_int("data.target_cols", 1);
  require(e.target_cols >= 1, "config: data.target_cols must be >= 1");

  e.model_kind = cfg.get_string("model.kind");
  one_of(e.model_kind, {"linear", "logistic", "mlp"}, "model.kind");
  if (e.model_kind == "linear") require(e.task == Task::kRegression, "config: linear model needs a regression task");
  if (e.model_kind == "logistic") require(e.task == Task::kBinary, "config: logistic model needs a binary task");
  if (cfg.has("model.hidden")) {
    for (double h : cfg.get_doubles("model.hidden")) {
      require(h >= 1.0 && h == static_cast<double>(static_cast<Index>(h)),
              "config: model.hidden must list positive integers");
      e.hidden.push_back(static_cast<Index>(h));
    }
  }
  if (e.model_kind == "mlp") require(!e.hidden.empty(), "config: mlp needs model.hidden");
  e.activation = cfg.get_string("model.activation", "tanh");
  one_of(e.activation, {"tanh", "relu"}, "model.activation");
  e.noise_var = cfg.get_double("model.noise_var", 1.0);
  require(e.noise_var > 0.0, "config: model.noise_var must be positive");
  e.classes = cfg.get_int("model.classes", 0);
  require(e.classes >= 0, "config: model.classes must be >= 0");

  e.prior_mean = cfg.get_double("prior.mean", 0.0);
  e.prior_tau = cfg.get_double("prior.tau", 1.0);
  require(e.prior_tau > 0.0, "config: prior.tau must be positive");

  e.method = parse_method(cfg.get_string("run.method"));
  e.iterations = cfg.get_int("run.iterations");
  require(e.iterations >= 1, "config: run.iterations must be >= 1");
  if (seed_override) {
    e.seed = *seed_override;
  } else {
    const Index seed = cfg.get_int("run.seed");
    require(seed >= 0, "config: run.seed must be >= 0");
    e.seed = static_cast<std::uint64_t>(seed);
  }
  e.output_dir = cfg.get_string("run.output", "");
  if (!e.output_dir.empty() && std::filesystem::path(e.output_dir).is_relative())
    e.output_dir = (std::filesystem::path(cfg.base_dir()) / e.output_dir).lexically_normal().string();
  e.batch_size = cfg.get_int("run.batch_size", 0);
  require(e.batch_size >= 0, "config: run.batch_size must be >= 0");
  e.early_stop = cfg.get_bool("run.early_stop", true);
  e.window = cfg.get_int("run.window", 200);
  e.patience = cfg.get_int("run.patience", 10);
  require(e.window >= 1 && e.patience >= 1, "config: run.window and run.patience must be >= 1");
  e.record_time = cfg.get_bool("run.record_time", false);
  e.predict_draws = cfg.get_int("run.predict_draws", 200);
  require(e.predict_draws >= 1, "config: run.predict_draws must be >= 1");

  validate_method(e);
  return e;
}

}  // namespace bnn
