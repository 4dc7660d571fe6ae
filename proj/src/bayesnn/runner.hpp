#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bayesnn/config.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/predictive.hpp"

namespace bnn {

// Everything needed to rebuild a model without the training data.
struct ModelSpec {
  std::string kind;  // linear | logistic | mlp
  Task task = Task::kRegression;
  std::vector<Index> layers;  // {d} for linear/logistic, {d, h..., out} for mlp
  std::string activation = "tanh";
  double noise_var = 1.0;
};

ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& data);
std::unique_ptr<ProbModel> build_model(const ModelSpec& spec);
GaussianPrior build_prior(const ExperimentConfig& cfg, Index dim);

struct RunSummary {
  std::string method;
  std::string run_dir;
  Index iterations_run = 0;
  bool early_stopped = false;
  std::optional<double> final_elbo;
  std::optional<double> final_elbo_stderr;
  std::optional<double> kl_to_oracle;
  std::optional<double> accept_rate;
  double runtime_ms = 0.0;
};

// Runs the configured method and writes config.ini, trace.jsonl,
// posterior.json (plus chain.csv for samplers) and summary.json into the run
// directory (out_dir when non-empty, else [run] output).
RunSummary run_fit(const ExperimentConfig& cfg, const std::string& out_dir = "");

// Same as run_fit but only accepts the MCMC methods.
RunSummary run_sample(const ExperimentConfig& cfg, const std::string& out_dir = "");

// Reads a run directory and writes one predictive record per input row to
// out_path (line-delimited JSON). Returns the summaries.
std::vector<PredictiveSummary> run_predict(const std::string& run_dir,
                                           const std::string& inputs_path,
                                           const std::string& out_path);

// Feature matrix from a CSV with a header row and numeric cells only.
Mat load_inputs_csv(const std::string& path);

std::string summary_json(const RunSummary& s);

}  // namespace bnn
