#include "bayesnn/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "bayesnn/blackbox.hpp"
#include "bayesnn/errors.hpp"
#include "bayesnn/mcmc.hpp"
#include "bayesnn/natgrad.hpp"
#include "bayesnn/spd.hpp"
#include "bayesnn/trace.hpp"
#include "json.hpp"

namespace bnn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

json mat_json(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

Mat json_mat(const json& j) {
  const Index r = static_cast<Index>(j.size());
  Mat m;
  for (Index i = 0; i < r; ++i) {
    const Vec row = json_vec(j.at(static_cast<std::size_t>(i)));
    if (i == 0) m.resize(r, row.size());
    if (row.size() != m.cols()) throw DataError("posterior: ragged matrix");
    m.row(i) = row.transpose();
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing run artifact " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

json spec_json(const ModelSpec& s) {
  return {{"kind", s.kind},           {"task", task_name(s.task)}, {"layers", s.layers},
          {"activation", s.activation}, {"noise_var", s.noise_var}};
}

ModelSpec json_spec(const json& j) {
  ModelSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.task = parse_task(j.at("task").get<std::string>());
  s.layers = j.at("layers").get<std::vector<Index>>();
  s.activation = j.at("activation").get<std::string>();
  s.noise_var = j.at("noise_var").get<double>();
  return s;
}

// Cycles through shuffled epochs; batch_size 0 (or >= N) means full batch.
class BatchStream {
 public:
  BatchStream(const Dataset& d, Index batch_size, RngStream rng)
      : data_(d), batch_size_(batch_size), rng_(std::move(rng)) {}

  Batch next() {
    if (batch_size_ == 0 || batch_size_ >= data_.size()) return Batch::full(data_);
    if (pos_ == batches_.size()) {
      batches_ = epoch_partition(data_, batch_size_, rng_);
      pos_ = 0;
    }
    return batches_[pos_++];
  }

  double scale(const Batch& b) const {
    return static_cast<double>(data_.size()) / static_cast<double>(b.size());
  }

 private:
  const Dataset& data_;
  Index batch_size_;
  RngStream rng_;
  std::vector<Batch> batches_;
  std::size_t pos_ = 0;
};

struct StepOutcome {
  double elbo = std::numeric_limits<double>::quiet_NaN();
  double elbo_stderr = std::numeric_limits<double>::quiet_NaN();
  bool halved = false;
  Index dropped = 0;
};

// Single-draw ELBO estimate on a minibatch, for traces of methods that do
// not produce one themselves.
StepOutcome batch_elbo(const GaussianVariational& q, const ProbModel& model,
                       const GaussianPrior& prior, const Batch& batch, double scale,
                       RngStream& rng) {
  StepOutcome o;
  const Vec theta = sample_reparam(q, rng, 1).row(0).transpose();
  o.elbo = prior.log_density(theta) + scale * model.log_lik(theta, batch) - log_pdf(q, theta);
  if (!std::isfinite(o.elbo)) o.dropped = 1;
  return o;
}

struct Streams {
  RngStream init, order, draws, trace, final_elbo;
  explicit Streams(std::uint64_t seed)
      : init(RngStream(seed).split("init")),
        order(RngStream(seed).split("minibatch-order")),
        draws(RngStream(seed).split("posterior-draws")),
        trace(RngStream(seed).split("elbo-trace")),
        final_elbo(RngStream(seed).split("final-elbo")) {}
};

struct FitContext {
  const ExperimentConfig& cfg;
  const Dataset& data;
  const ProbModel& model;
  const GaussianPrior& prior;
  Streams& rng;
  TraceWriter& trace;
  RunSummary& summary;
  std::chrono::steady_clock::time_point start;
};

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// Shared VI loop: step(batch, scale) advances the optimizer, current() returns q.
void vi_loop(FitContext& ctx, const std::function<StepOutcome(const Batch&, double)>& step,
             const std::function<GaussianVariational()>& current) {
  BatchStream batches(ctx.data, ctx.cfg.batch_size, ctx.rng.order);
  EarlyStopper stopper(ctx.cfg.window, ctx.cfg.patience);
  for (Index t = 0; t < ctx.cfg.iterations; ++t) {
    const Batch b = batches.next();
    const StepOutcome o = step(b, batches.scale(b));
    const GaussianVariational q = current();
    TraceRecord r;
    r.t = t;
    r.elbo = o.elbo;
    r.elbo_stderr = o.elbo_stderr;
    r.mean_norm = q.mean().norm();
    r.scale_norm = q.covariance().norm();
    r.step_halved = o.halved;
    r.draws_dropped = o.dropped;
    if (ctx.cfg.record_time) r.wall_ms = elapsed_ms(ctx.start);
    ctx.trace.write(r);
    ctx.summary.iterations_run = t + 1;
    if (!q.mean().allFinite()) throw NumericalError("fit: parameters became non-finite");
    if (ctx.cfg.early_stop && stopper.add(o.elbo)) {
      ctx.summary.early_stopped = true;
      break;
    }
  }
}

std::vector<Index> factor_blocks(Index dim, Index factor_size) {
  std::vector<Index> blocks;
  for (Index o = 0; o < dim; o += factor_size) blocks.push_back(std::min(factor_size, dim - o));
  return blocks;
}

GaussianVariational fit_vi(FitContext& ctx, const Vec& mu0, double init_var) {
  const ExperimentConfig& cfg = ctx.cfg;
  const ProbModel& model = ctx.model;
  const GaussianPrior& prior = ctx.prior;
  const Index k = mu0.size();
  const double beta = cfg.hyper("beta");
  RngStream& rng = ctx.rng.draws;
  const Mat init_cov = init_var * Mat::Identity(k, k);
  const double n_data = static_cast<double>(ctx.data.size());

  switch (cfg.method) {
    case Method::kBbb: {
      BbbState st = BbbState::from_mean_std(mu0, Vec::Constant(k, std::sqrt(init_var)));
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                BbbReport rep;
                st = bbb_step(st, model, prior, b, rng, beta, scale, &rep);
                StepOutcome o;
                o.elbo = -rep.f;
                o.halved = rep.halvings > 0 || rep.rejected;
                o.dropped = rep.rejected ? 1 : 0;
                return o;
              },
              [&] { return st.as_gaussian(); });
      return st.as_gaussian();
    }
    case Method::kBbvi: {
      const Index n_s = cfg.hyper_int("n_samples", 16);
      const bool constant = cfg.hyper_string("schedule", "robbins_monro") == "constant";
      FactorizedPosterior post(mu0, Vec::Constant(k, init_var),
                               factor_blocks(k, cfg.hyper_int("factor_size", 1)));
      Index t = 0;
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                BbviReport rep;
                post = bbvi_step(post, log_joint(model, prior, b, scale), n_s, rng,
                                 bbvi_step_size(beta, t++, constant), &rep);
                StepOutcome o;
                o.elbo = rep.elbo;
                o.elbo_stderr = rep.elbo_stderr;
                o.dropped = rep.dropped_draws;
                return o;
              },
              [&] { return post.as_gaussian(); });
      return post.as_gaussian();
    }
    case Method::kNgbbvi: {
      NgbbviOptions opts;
      opts.n_samples = cfg.hyper_int("n_samples", 16);
      opts.control_variate = cfg.hyper_bool("control_variate", true);
      NgbbviState st{FactorizedPosterior(mu0, Vec::Constant(k, init_var),
                                         factor_blocks(k, cfg.hyper_int("factor_size", 1))),
                     AdamMoments{}};
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                NgbbviGradient g;
                ngbbvi_step(st, log_joint(model, prior, b, scale), opts, rng, beta, &g);
                StepOutcome o;
                o.elbo = g.elbo;
                o.elbo_stderr = g.elbo_stderr;
                o.dropped = g.dropped_draws;
                return o;
              },
              [&] { return st.post.as_gaussian(); });
      return st.post.as_gaussian();
    }
    case Method::kNgvi: {
      const bool diagonal = cfg.hyper_bool("diagonal", false);
      const Index n_s = cfg.hyper_int("n_samples", 16);
      const GradientMode mode =
          cfg.hyper_string("gradient", "mc") == "exact" ? GradientMode::kAtMean : GradientMode::kMonteCarlo;
      const MeanUpdate order = cfg.hyper_string("mean_update", "next") == "next"
                                   ? MeanUpdate::kNextCovariance
                                   : MeanUpdate::kCurrentCovariance;
      NgviState st = diagonal ? NgviState::diag(mu0, Vec::Constant(k, 1.0 / init_var))
                              : NgviState::full(mu0, Mat::Identity(k, k) / init_var);
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                const ElboGradients g =
                    elbo_gradients(st.as_gaussian(), model, prior, b, scale, n_s, rng, mode);
                StepReport rep;
                st = ngvi_step(st, g.grad_mu, g.grad_sigma, beta, order, &rep);
                StepOutcome o;
                o.elbo = g.elbo;
                o.elbo_stderr = g.elbo_stderr;
                o.halved = rep.halvings > 0 || rep.rejected;
                return o;
              },
              [&] { return st.as_gaussian(); });
      return st.as_gaussian();
    }
    case Method::kVon:
    case Method::kVadam:
    case Method::kVogn: {
      const double lambda_tilde = prior.mean_precision() / n_data;
      const Index n = ctx.data.size();
      const double s0 = cfg.hyper("s0", 0.0);
      const bool full = cfg.method == Method::kVon && cfg.hyper_bool("full", false);
      VonState st = full ? VonState::full_matrix(mu0, s0 * Mat::Identity(k, k), lambda_tilde, n)
                         : VonState::diag(mu0, Vec::Constant(k, s0), lambda_tilde, n);
      VonOptions von;
      const std::string curv = cfg.hyper_string("curvature", "auto");
      von.curvature = curv == "hessian" ? Curvature::kHessian
                      : curv == "ggn"   ? Curvature::kGgn
                                        : Curvature::kAuto;
      von.at_mean = cfg.hyper_bool("at_mean", false);
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                StepOutcome o = batch_elbo(st.as_gaussian(), model, prior, b, scale, ctx.rng.trace);
                VonReport rep;
                if (cfg.method == Method::kVon)
                  st = von_step(st, model, b, rng, beta, von, &rep);
                else if (cfg.method == Method::kVadam)
                  st = vadam_step(st, model, b, rng, beta, cfg.hyper("gamma1", 0.9),
                                  cfg.hyper("gamma2", 0.999), &rep);
                else
                  st = vogn_step(st, model, b, rng, beta, cfg.hyper("beta1", 0.9),
                                 cfg.hyper("beta2", 0.999), cfg.hyper_int("n_samples", 1), &rep);
                o.halved = rep.clipped;
                return o;
              },
              [&] { return st.as_gaussian(); });
      return st.as_gaussian();
    }
    case Method::kQbvi: {
      QbviOptions opts;
      opts.n_samples = cfg.hyper_int("n_samples", 16);
      opts.baseline = cfg.hyper_bool("baseline", true);
      NgviState st = NgviState::full(mu0, Mat::Identity(k, k) / init_var);
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                QbviReport rep;
                st = qbvi_step(st, log_likelihood(model, b, scale), prior, opts, rng, beta, &rep);
                StepOutcome o;
                o.elbo = rep.elbo;
                o.elbo_stderr = rep.elbo_stderr;
                o.halved = rep.step.halvings > 0 || rep.step.rejected;
                return o;
              },
              [&] { return st.as_gaussian(); });
      return st.as_gaussian();
    }
    case Method::kMgvb:
    case Method::kEmgvb: {
      ManifoldOptions opts;
      opts.n_samples = cfg.hyper_int("n_samples", 64);
      opts.omega = cfg.hyper("omega", 0.9);
      opts.clip = cfg.hyper("clip", 100.0);
      opts.exact_factor = cfg.hyper_bool("exact_factor", false);
      opts.gaussian_constants = cfg.hyper_bool("gaussian_constants", true);
      opts.baseline = cfg.hyper_bool("baseline", true);
      const bool precision = cfg.method == Method::kEmgvb;
      ManifoldState st(mu0, SpdPoint(precision ? Mat(Mat::Identity(k, k) / init_var) : init_cov));
      const LogDensity log_prior = [&prior](const Vec& t) { return prior.log_density(t); };
      vi_loop(ctx,
              [&](const Batch& b, double scale) {
                ManifoldReport rep;
                if (precision)
                  emgvb_step(st, log_likelihood(model, b, scale), log_prior, &prior, opts, rng, beta,
                             &rep);
                else
                  mgvb_step(st, log_joint(model, prior, b, scale), opts, rng, beta, &rep);
                StepOutcome o;
                o.elbo = rep.grad.elbo;
                o.elbo_stderr = rep.grad.elbo_stderr;
                o.halved = rep.halvings > 0 || rep.rejected;
                o.dropped = rep.grad.dropped_draws;
                return o;
              },
              [&] { return st.as_gaussian(precision); });
      return st.as_gaussian(precision);
    }
    default:
      break;
  }
  throw Error(Error::Category::kInternal, "fit_vi: not a variational method");
}

void write_chain_csv(const fs::path& path, const Chain& chain, const std::string& config_echo) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  std::istringstream echo(config_echo);
  std::string line;
  while (std::getline(echo, line)) out << "# " << line << '\n';
  for (Index j = 0; j < chain.draws.cols(); ++j) out << (j ? "," : "") << "theta_" << j;
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < chain.draws.rows(); ++i) {
    for (Index j = 0; j < chain.draws.cols(); ++j) out << (j ? "," : "") << chain.draws(i, j);
    out << '\n';
  }
}

Mat read_chain_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing run artifact " + path.string());
  std::string line;
  bool header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("chain file has no draws");
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DataError("chain file is ragged");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

std::string effective_config(const ExperimentConfig& cfg) {
  Config echo = cfg.raw;
  echo.set("data.path", fs::absolute(cfg.data_path).lexically_normal().string());
  echo.set("run.seed", std::to_string(cfg.seed));
  return echo.to_ini();
}

}  // namespace

ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& data) {
  ModelSpec s;
  s.kind = cfg.model_kind;
  s.task = cfg.task;
  s.activation = cfg.activation;
  s.noise_var = cfg.noise_var;
  if (data.task() != cfg.task) throw ConfigError("model: dataset task differs from the configured task");
  if (s.kind == "linear" || s.kind == "logistic") {
    if (data.target_dim() != 1) throw DataError("model: expected a single target column");
    s.layers = {data.input_dim()};
    return s;
  }
  s.layers.push_back(data.input_dim());
  for (Index h : cfg.hidden) s.layers.push_back(h);
  Index out = data.target_dim();
  if (cfg.task == Task::kBinary) out = 1;
  if (cfg.task == Task::kMulticlass)
    out = cfg.classes > 0 ? cfg.classes : static_cast<Index>(data.targets().maxCoeff()) + 1;
  if (cfg.task == Task::kMulticlass && data.targets().maxCoeff() >= static_cast<double>(out))
    throw DataError("model: class labels exceed model.classes");
  s.layers.push_back(out);
  return s;
}

std::unique_ptr<ProbModel> build_model(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("model: no layer sizes");
  if (spec.kind == "linear") return std::make_unique<LinearRegression>(spec.layers[0], spec.noise_var);
  if (spec.kind == "logistic") return std::make_unique<LogisticRegression>(spec.layers[0]);
  if (spec.kind == "mlp")
    return std::make_unique<Mlp>(spec.layers, parse_activation(spec.activation), spec.task,
                                 spec.noise_var);
  throw ConfigError("model: unknown kind '" + spec.kind + "'");
}

GaussianPrior build_prior(const ExperimentConfig& cfg, Index dim) {
  GaussianPrior p = GaussianPrior::isotropic(dim, cfg.prior_tau);
  if (cfg.prior_mean != 0.0) p = GaussianPrior::full(Vec::Constant(dim, cfg.prior_mean), p.precision0);
  return p;
}

std::string summary_json(const RunSummary& s) {
  json j;
  j["method"] = s.method;
  j["run_dir"] = s.run_dir;
  j["iterations_run"] = s.iterations_run;
  j["early_stopped"] = s.early_stopped;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = std::isfinite(*v) ? json(*v) : json(nullptr);
  };
  opt("final_elbo", s.final_elbo);
  opt("final_elbo_stderr", s.final_elbo_stderr);
  opt("kl_to_oracle", s.kl_to_oracle);
  opt("accept_rate", s.accept_rate);
  j["runtime_ms"] = s.runtime_ms;
  return j.dump(2);
}

RunSummary run_fit(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
  if (dir.empty()) throw ConfigError("fit: no output directory (set run.output or --out)");

  const Dataset data = load_csv(cfg.data_path, cfg.target_cols, cfg.task);
  const ModelSpec spec = model_spec(cfg, data);
  const std::unique_ptr<ProbModel> model = build_model(spec);
  const GaussianPrior prior = build_prior(cfg, model->param_dim());

  fs::create_directories(dir);
  const std::string echo = effective_config(cfg);
  write_text(fs::path(dir) / "config.ini", echo);

  RunSummary summary;
  summary.method = method_name(cfg.method);
  summary.run_dir = dir;
  Streams streams(cfg.seed);
  TraceWriter trace((fs::path(dir) / "trace.jsonl").string());
  FitContext ctx{cfg, data, *model, prior, streams, trace, summary, start};
  const Vec mu0 = model->init_params(streams.init);
  const double init_std = cfg.raw.get_double("run.init_std", 0.1);
  if (!(init_std > 0.0)) throw ConfigError("config: run.init_std must be positive");

  json posterior;
  posterior["model"] = spec_json(spec);

  if (is_mcmc(cfg.method)) {
    const Index n = cfg.iterations;
    const Index burn = cfg.hyper_int("burn_in", default_burn_in(n));
    if (burn >= n) throw ConfigError("config: burn_in must be smaller than run.iterations");
    Chain chain;
    if (cfg.method == Method::kMh) {
      const HmcTarget target = posterior_target(*model, prior, data);
      const LogTarget lt = [&target](const Vec& t) { return -target.potential(t); };
      chain = mh_sample(lt, Vec::Constant(mu0.size(), cfg.hyper("proposal_std")), mu0, n, burn,
                        streams.draws);
    } else {
      HmcConfig hc;
      hc.step_size = cfg.hyper("step_size");
      hc.leapfrog_steps = cfg.hyper_int("leapfrog_steps", 1);
      hc.adapt_diagonal_mass = cfg.hyper_bool("adapt_mass", false);
      chain = hmc_sample(*model, prior, data, hc, mu0, n, burn, streams.draws);
    }
    for (Index t = 0; t < chain.length(); ++t) {
      TraceRecord r;
      r.t = t;
      r.log_target = chain.log_target(t);
      r.accepted = chain.accepted[static_cast<std::size_t>(t)] != 0;
      r.mean_norm = chain.draws.row(t).norm();
      if (cfg.record_time) r.wall_ms = elapsed_ms(start);
      trace.write(r);
    }
    write_chain_csv(fs::path(dir) / "chain.csv", chain, echo);
    posterior["type"] = "chain";
    posterior["file"] = "chain.csv";
    posterior["burn_in"] = chain.burn_in;
    summary.iterations_run = chain.length();
    summary.accept_rate = chain.accept_rate;
  } else if (cfg.method == Method::kMcd) {
    const auto& net = dynamic_cast<const Mlp&>(*model);
    DropoutConfig dc = DropoutConfig::uniform(net, cfg.hyper("dropout_rate"));
    dc.all_layers = cfg.hyper_bool("all_layers", false);
    if (!dc.all_layers) dc.rates[0] = 0.0;
    dc.weight_decay = cfg.hyper("weight_decay", 1e-4);
    dc.learning_rate = cfg.hyper("learning_rate", 1e-2);
    dc.iterations = cfg.iterations;
    dc.batch_size = cfg.batch_size == 0 ? data.size() : cfg.batch_size;
    dc.n_passes = cfg.hyper_int("n_passes", 100);
    EarlyStopper stopper(cfg.window, cfg.patience);
    const Vec theta = mc_dropout_train(net, dc, data, mu0, streams.draws, [&](Index t, double loss) {
      TraceRecord r;
      r.t = t;
      r.elbo = -loss;
      if (cfg.record_time) r.wall_ms = elapsed_ms(start);
      trace.write(r);
      summary.iterations_run = t + 1;
      if (cfg.early_stop && stopper.add(-loss)) {
        summary.early_stopped = true;
        return true;
      }
      return false;
    });
    posterior["type"] = "dropout";
    posterior["theta"] = vec_json(theta);
    posterior["rates"] = dc.rates;
    posterior["all_layers"] = dc.all_layers;
    posterior["n_passes"] = dc.n_passes;
  } else {
    const GaussianVariational q = fit_vi(ctx, mu0, init_std * init_std);
    posterior["type"] = "gaussian";
    posterior["mean"] = vec_json(q.mean());
    posterior["covariance"] = mat_json(q.covariance());
    if (q.mean().allFinite()) {
      const ElboEstimate e = elbo_estimate(q, *model, prior, data, 256, streams.final_elbo);
      summary.final_elbo = e.value;
      summary.final_elbo_stderr = e.stderr_;
    }
    if (spec.kind == "linear")
      summary.kl_to_oracle = kl_gaussians(q, conjugate_posterior(prior, data, spec.noise_var));
  }
  posterior["predict_draws"] = cfg.predict_draws;
  write_text(fs::path(dir) / "posterior.json", posterior.dump(2) + "\n");
  summary.runtime_ms = elapsed_ms(start);
  write_text(fs::path(dir) / "summary.json", summary_json(summary) + "\n");
  return summary;
}

RunSummary run_sample(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (!is_mcmc(cfg.method)) throw ConfigError("sample: method must be mh or hmc");
  return run_fit(cfg, out_dir);
}

Mat load_inputs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open inputs '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("inputs '" + path + "' is empty");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw DataError("inputs: cannot parse '" + cell + "'");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows[0].size()) throw DataError("inputs: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("inputs '" + path + "' has no rows");
  Mat x(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      x(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return x;
}

std::vector<PredictiveSummary> run_predict(const std::string& run_dir, const std::string& inputs_path,
                                           const std::string& out_path) {
  const fs::path dir(run_dir);
  const json post = read_json(dir / "posterior.json");
  const Config cfg = Config::load((dir / "config.ini").string());
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("run.seed"));
  RngStream rng = RngStream(seed).split("posterior-draws").split("predict");

  ModelSpec spec;
  Index n_draws = 0;
  std::string type;
  try {
    spec = json_spec(post.at("model"));
    n_draws = post.at("predict_draws").get<Index>();
    type = post.at("type").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("posterior.json: ") + e.what());
  }
  const std::unique_ptr<ProbModel> model = build_model(spec);
  Mat x = load_inputs_csv(inputs_path);
  const Index d = spec.layers.front();
  if (x.cols() < d) throw DataError("inputs: expected " + std::to_string(d) + " feature columns");
  x = x.leftCols(d).eval();

  std::vector<PredictiveSummary> out;
  if (type == "dropout") {
    const auto& net = dynamic_cast<const Mlp&>(*model);
    DropoutConfig dc;
    dc.rates = post.at("rates").get<std::vector<double>>();
    dc.all_layers = post.at("all_layers").get<bool>();
    dc.n_passes = post.at("n_passes").get<Index>();
    out = mc_dropout_predict(net, json_vec(post.at("theta")), dc, x, rng);
  } else {
    Mat draws;
    SampleSource source = SampleSource::kVariational;
    if (type == "gaussian") {
      const GaussianVariational q = GaussianVariational::from_covariance(
          json_vec(post.at("mean")), json_mat(post.at("covariance")));
      draws = sample_reparam(q, rng, n_draws);
    } else if (type == "chain") {
      const Mat all = read_chain_csv(dir / post.at("file").get<std::string>());
      const Index burn = post.at("burn_in").get<Index>();
      draws = all.bottomRows(all.rows() - std::min(burn, all.rows() - 1));
      source = SampleSource::kMcmc;
    } else {
      throw DataError("posterior.json: unknown type '" + type + "'");
    }
    const PosteriorSamples samples(draws, source);
    for (Index i = 0; i < x.rows(); ++i)
      out.push_back(predictive_summary(samples, *model, x.row(i).transpose(), true));
  }

  std::ostringstream lines;
  for (std::size_t i = 0; i < out.size(); ++i) {
    json j;
    j["row"] = i;
    j["n_draws"] = out[i].n_draws;
    j["mean"] = vec_json(out[i].mean);
    const Mat& c = out[i].covariance;
    j["covariance"] = std::vector<double>(c.data(), c.data() + c.size());  // symmetric
    if (out[i].class_probs.size() > 0) {
      j["class_probs"] = vec_json(out[i].class_probs);
      j["predicted_class"] = out[i].predicted_class;
    }
    lines << j.dump() << '\n';
  }
  write_text(out_path, lines.str());
  return out;
}

}  // namespace bnn
