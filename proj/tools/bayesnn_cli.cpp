#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bayesnn/bayesnn.h"

namespace {

constexpr int kExitCheckFailed = 5;

int report_error(bnn_status status) {
  std::cerr << "error: " << bnn_last_error() << '\n';
  return static_cast<int>(status);
}

// Execution is sequential; the variable is validated so typos surface early.
bool threads_env_ok() {
  const char* raw = std::getenv("BAYESNN_THREADS");
  if (!raw || !*raw) return true;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n < 1) {
    std::cerr << "error: BAYESNN_THREADS must be a positive integer, got '" << raw << "'\n";
    return false;
  }
  return true;
}

int run_method(const std::string& config_path, const std::optional<std::uint64_t>& seed,
               const std::string& out_dir, bool sample_only) {
  bnn_config* cfg = nullptr;
  if (bnn_status s = bnn_config_load(config_path.c_str(), &cfg); s != BNN_OK) return report_error(s);
  bnn_run* run = nullptr;
  const std::uint64_t* seed_ptr = seed ? &*seed : nullptr;
  const bnn_status s = sample_only ? bnn_sample(cfg, seed_ptr, out_dir.c_str(), &run)
                                   : bnn_fit(cfg, seed_ptr, out_dir.c_str(), &run);
  bnn_config_free(cfg);
  if (s != BNN_OK) return report_error(s);
  std::cout << bnn_run_summary_json(run) << '\n';
  bnn_run_free(run);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural network inference toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bnn_version());

  std::string config_path, out_dir, run_dir, inputs_path, suite = "all";
  std::optional<std::uint64_t> seed;
  bool fault = false;

  auto* fit = app.add_subcommand("fit", "Fit a posterior approximation");
  fit->add_option("--config", config_path, "Experiment configuration (INI)")->required()->check(CLI::ExistingFile);
  fit->add_option("--seed", seed, "Override the configured seed");
  fit->add_option("--out", out_dir, "Run directory (defaults to [run] output)");

  auto* sample = app.add_subcommand("sample", "Draw an MCMC chain (mh, hmc)");
  sample->add_option("--config", config_path, "Experiment configuration (INI)")->required()->check(CLI::ExistingFile);
  sample->add_option("--seed", seed, "Override the configured seed");
  sample->add_option("--out", out_dir, "Run directory (defaults to [run] output)");

  auto* predict = app.add_subcommand("predict", "Posterior predictive summaries for new inputs");
  predict->add_option("--run", run_dir, "Run directory produced by fit or sample")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--inputs", inputs_path, "CSV of input features with a header row")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out_dir, "Output file (defaults to <run>/predictions.jsonl)");

  auto* check = app.add_subcommand("check", "Run the invariant suites");
  check->add_option("suite", suite, "gradients | duality | manifold | samplers | all")
      ->check(CLI::IsMember({"gradients", "duality", "manifold", "samplers", "all"}));
  check->add_option("--seed", seed, "Seed for the randomized instances");
  check->add_flag("--fault", fault, "Flip a sign in the score gradient to exercise the detectors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!threads_env_ok()) return 2;

  if (*fit) return run_method(config_path, seed, out_dir, false);
  if (*sample) return run_method(config_path, seed, out_dir, true);
  if (*predict) {
    const std::string out = out_dir.empty() ? run_dir + "/predictions.jsonl" : out_dir;
    std::size_t rows = 0;
    if (bnn_status s = bnn_predict(run_dir.c_str(), inputs_path.c_str(), out.c_str(), &rows); s != BNN_OK)
      return report_error(s);
    std::cout << "wrote " << rows << " predictive records to " << out << '\n';
    return 0;
  }
  bnn_report* report = nullptr;
  if (bnn_status s = bnn_check(suite.c_str(), seed.value_or(7), fault ? 1 : 0, &report); s != BNN_OK)
    return report_error(s);
  std::cout << bnn_report_text(report);
  const bool ok = bnn_report_passed(report) != 0;
  std::cout << (ok ? "all invariants passed" : "invariant failures detected") << '\n';
  bnn_report_free(report);
  return ok ? 0 : kExitCheckFailed;
}
