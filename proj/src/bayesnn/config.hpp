#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bayesnn/linalg.hpp"
#include "bayesnn/models.hpp"

namespace bnn {

// Flat "section.key = value" settings read from an INI file.
class Config {
 public:
  static Config load(const std::string& path);
  static Config parse(const std::string& text, const std::string& base_dir = ".");

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }
  const std::string& base_dir() const noexcept { return base_dir_; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  Index get_int(const std::string& key) const;
  Index get_int(const std::string& key, Index fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  // Sorted INI text; parse(to_ini()) reproduces the entries.
  std::string to_ini() const;

 private:
  std::map<std::string, std::string> values_;
  std::string base_dir_ = ".";
};

enum class Method { kMh, kHmc, kMcd, kBbb, kBbvi, kNgbbvi, kNgvi, kVon, kVadam, kVogn, kQbvi, kMgvb, kEmgvb };

Method parse_method(const std::string& name);
std::string method_name(Method m);
bool is_mcmc(Method m);

struct ExperimentConfig {
  // [data]
  std::string data_path;
  Task task = Task::kRegression;
  Index target_cols = 1;
  // [model]
  std::string model_kind;  // linear | logistic | mlp
  std::vector<Index> hidden;
  std::string activation = "tanh";
  double noise_var = 1.0;
  Index classes = 0;  // multiclass output width; 0 = infer from the data
  // [prior]
  double prior_mean = 0.0;
  double prior_tau = 1.0;
  // [run]
  Method method = Method::kNgvi;
  Index iterations = 1000;
  std::uint64_t seed = 0;
  std::string output_dir;
  Index batch_size = 0;  // 0 = full batch
  bool early_stop = true;
  Index window = 200;
  Index patience = 10;
  bool record_time = false;
  Index predict_draws = 200;

  Config raw;  // method hyperparameters live in the section named after the method

  std::string section() const { return method_name(method); }
  double hyper(const std::string& key, double fallback) const;
  double hyper(const std::string& key) const;
  Index hyper_int(const std::string& key, Index fallback) const;
  bool hyper_bool(const std::string& key, bool fallback) const;
  std::string hyper_string(const std::string& key, const std::string& fallback) const;
};

// Validates every field, including method hyperparameters, without touching data.
// `seed_override` replaces [run] seed when set.
ExperimentConfig parse_experiment(const Config& cfg, const std::uint64_t* seed_override = nullptr);

}  // namespace bnn
