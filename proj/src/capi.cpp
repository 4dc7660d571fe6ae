#include "bayesnn/bayesnn.h"

#include <exception>
#include <memory>
#include <optional>
#include <new>
#include <string>
#include <vector>

#include "bayesnn/checks.hpp"
#include "bayesnn/config.hpp"
#include "bayesnn/errors.hpp"
#include "bayesnn/runner.hpp"

struct bnn_config {
  bnn::Config cfg;
};

struct bnn_run {
  bnn::RunSummary summary;
  std::string json;
};

struct bnn_report {
  std::vector<bnn::CheckResult> results;
  std::string text;
};

namespace {

thread_local std::string g_last_error;

bnn_status fail(bnn_status code, const char* what) {
  g_last_error = what;
  return code;
}

template <typename Fn>
bnn_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return BNN_OK;
  } catch (const bnn::Error& e) {
    return fail(static_cast<bnn_status>(e.category()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(BNN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BNN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(BNN_ERR_INTERNAL, "unknown error");
  }
}

bnn_status run_impl(const bnn_config* cfg, const uint64_t* seed, const char* out_dir, bnn_run** out,
                    bool sample_only) {
  if (!cfg || !out) return fail(BNN_ERR_CONFIG, "null argument");
  *out = nullptr;
  return guarded([&] {
    const bnn::ExperimentConfig ec = bnn::parse_experiment(cfg->cfg, seed);
    const std::string dir = out_dir ? out_dir : "";
    auto run = std::make_unique<bnn_run>();
    run->summary = sample_only ? bnn::run_sample(ec, dir) : bnn::run_fit(ec, dir);
    run->json = bnn::summary_json(run->summary);
    *out = run.release();
  });
}

int optional_out(const std::optional<double>& v, double* value) {
  if (!v) return 0;
  if (value) *value = *v;
  return 1;
}

}  // namespace

extern "C" {

const char* bnn_version(void) { return "0.1.0"; }

const char* bnn_last_error(void) { return g_last_error.c_str(); }

bnn_status bnn_config_load(const char* path, bnn_config** out) {
  if (!path || !out) return fail(BNN_ERR_CONFIG, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new bnn_config{bnn::Config::load(path)}; });
}

bnn_status bnn_config_parse(const char* text, const char* base_dir, bnn_config** out) {
  if (!text || !out) return fail(BNN_ERR_CONFIG, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new bnn_config{bnn::Config::parse(text, base_dir ? base_dir : ".")}; });
}

bnn_status bnn_config_set(bnn_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(BNN_ERR_CONFIG, "null argument");
  return guarded([&] { cfg->cfg.set(key, value); });
}

void bnn_config_free(bnn_config* cfg) { delete cfg; }

bnn_status bnn_fit(const bnn_config* cfg, const uint64_t* seed, const char* out_dir, bnn_run** out) {
  return run_impl(cfg, seed, out_dir, out, false);
}

bnn_status bnn_sample(const bnn_config* cfg, const uint64_t* seed, const char* out_dir,
                      bnn_run** out) {
  return run_impl(cfg, seed, out_dir, out, true);
}

const char* bnn_run_dir(const bnn_run* run) { return run ? run->summary.run_dir.c_str() : ""; }
const char* bnn_run_method(const bnn_run* run) { return run ? run->summary.method.c_str() : ""; }
int64_t bnn_run_iterations(const bnn_run* run) { return run ? run->summary.iterations_run : 0; }
int bnn_run_early_stopped(const bnn_run* run) { return run && run->summary.early_stopped ? 1 : 0; }

int bnn_run_final_elbo(const bnn_run* run, double* value) {
  return run ? optional_out(run->summary.final_elbo, value) : 0;
}
int bnn_run_kl_to_oracle(const bnn_run* run, double* value) {
  return run ? optional_out(run->summary.kl_to_oracle, value) : 0;
}
int bnn_run_accept_rate(const bnn_run* run, double* value) {
  return run ? optional_out(run->summary.accept_rate, value) : 0;
}

const char* bnn_run_summary_json(const bnn_run* run) { return run ? run->json.c_str() : ""; }

void bnn_run_free(bnn_run* run) { delete run; }

bnn_status bnn_predict(const char* run_dir, const char* inputs_path, const char* out_path,
                       size_t* n_rows) {
  if (!run_dir || !inputs_path || !out_path) return fail(BNN_ERR_CONFIG, "null argument");
  return guarded([&] {
    const auto rows = bnn::run_predict(run_dir, inputs_path, out_path);
    if (n_rows) *n_rows = rows.size();
  });
}

bnn_status bnn_check(const char* suite, uint64_t seed, int fault, bnn_report** out) {
  if (!suite || !out) return fail(BNN_ERR_CONFIG, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto report = std::make_unique<bnn_report>();
    report->results = bnn::run_checks(bnn::parse_suite(suite), seed, fault != 0);
    report->text = bnn::format_report(report->results);
    *out = report.release();
  });
}

size_t bnn_report_size(const bnn_report* report) { return report ? report->results.size() : 0; }

int bnn_report_passed(const bnn_report* report) {
  return report && bnn::all_passed(report->results) ? 1 : 0;
}

const char* bnn_report_name(const bnn_report* report, size_t index) {
  if (!report || index >= report->results.size()) return "";
  return report->results[index].name.c_str();
}

const char* bnn_report_suite(const bnn_report* report, size_t index) {
  if (!report || index >= report->results.size()) return "";
  return report->results[index].suite.c_str();
}

double bnn_report_measured(const bnn_report* report, size_t index) {
  if (!report || index >= report->results.size()) return 0.0;
  return report->results[index].measured;
}

int bnn_report_item_passed(const bnn_report* report, size_t index) {
  if (!report || index >= report->results.size()) return 0;
  return report->results[index].passed ? 1 : 0;
}

const char* bnn_report_text(const bnn_report* report) { return report ? report->text.c_str() : ""; }

void bnn_report_free(bnn_report* report) { delete report; }

}  // extern "C"
