#include "bayesnn/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_binary_target(double y) {
  if (y != 0.0 && y != 1.0)
    throw DataError("binary target must be 0 or 1, got " + std::to_string(y));
}

}  // namespace

const char* task_name(Task task) {
  switch (task) {
    case Task::kRegression:
      return "regression";
    case Task::kBinary:
      return "binary";
    case Task::kMulticlass:
      return "multiclass";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  if (name == "regression") return Task::kRegression;
  if (name == "binary" || name == "binary-classification") return Task::kBinary;
  if (name == "multiclass") return Task::kMulticlass;
  throw ConfigError("unknown task '" + name + "'");
}

Dataset::Dataset(Mat inputs, Mat targets, Task task)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), task_(task) {
  if (inputs_.rows() < 1) throw DataError("dataset must contain at least one row");
  if (inputs_.rows() != targets_.rows())
    throw DimensionMismatch("dataset inputs and targets differ in row count");
  if (targets_.cols() < 1) throw DataError("dataset needs at least one target column");
  if (!inputs_.allFinite() || !targets_.allFinite())
    throw DataError("dataset contains non-finite entries");
  if (task_ == Task::kBinary) {
    for (Index i = 0; i < targets_.rows(); ++i)
      for (Index j = 0; j < targets_.cols(); ++j) check_binary_target(targets_(i, j));
  }
  if (task_ == Task::kMulticlass) {
    if (targets_.cols() != 1) throw DataError("multiclass targets must be a single index column");
    for (Index i = 0; i < targets_.rows(); ++i) {
      const double c = targets_(i, 0);
      if (c < 0.0 || c != std::floor(c)) throw DataError("class index must be a non-negative integer");
    }
  }
}

Dataset Dataset::empty(Index input_dim, Index target_dim, Task task) {
  Dataset d;
  d.inputs_ = Mat(0, input_dim);
  d.targets_ = Mat(0, target_dim);
  d.task_ = task;
  return d;
}

Dataset load_csv(const std::string& path, Index target_cols, Task task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset '" + path + "' is empty");
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || (*end != '\0' && !std::isspace(static_cast<unsigned char>(*end))))
        throw DataError(path + ":" + std::to_string(line_no) + ": cannot parse '" + cell + "'");
      values.push_back(v);
    }
    if (width == 0) width = values.size();
    if (values.size() != width)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                      " columns");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("dataset '" + path + "' has no data rows");
  if (target_cols < 1 || static_cast<std::size_t>(target_cols) >= width)
    throw DataError("dataset '" + path + "' has too few columns for the requested targets");
  const Index n = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(width) - target_cols;
  Mat x(n, d), y(n, target_cols);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rows[i][j];
    for (Index j = 0; j < target_cols; ++j) y(i, j) = rows[i][d + j];
  }
  return Dataset(std::move(x), std::move(y), task);
}

Batch Batch::full(const Dataset& d) {
  Batch b;
  b.data = &d;
  b.rows.resize(static_cast<std::size_t>(d.size()));
  std::iota(b.rows.begin(), b.rows.end(), Index{0});
  return b;
}

Batch Batch::of(const Dataset& d, std::vector<Index> rows) {
  for (Index r : rows)
    if (r < 0 || r >= d.size()) throw DataError("batch row index out of range");
  return Batch{&d, std::move(rows)};
}

std::vector<Batch> epoch_partition(const Dataset& d, Index batch_size, RngStream& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(d.size()));
  std::iota(order.begin(), order.end(), Index{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.push_back(Batch{&d, std::vector<Index>(order.begin() + start, order.begin() + stop)});
  }
  return out;
}

void ProbModel::check_theta(const Vec& theta) const {
  if (theta.size() != param_dim())
    throw DimensionMismatch("theta has length " + std::to_string(theta.size()) + ", model expects " +
                            std::to_string(param_dim()));
}

double ProbModel::log_lik(const Vec& theta, const Batch& batch) const {
  check_theta(theta);
  double total = 0.0;
  for (Index r : batch.rows) total += log_lik_row(theta, *batch.data, r, nullptr);
  return total;
}

Vec ProbModel::grad_sum(const Vec& theta, const Batch& batch) const {
  check_theta(theta);
  Vec total = Vec::Zero(param_dim());
  Vec g(param_dim());
  for (Index r : batch.rows) {
    log_lik_row(theta, *batch.data, r, &g);
    total += g;
  }
  return total;
}

Vec ProbModel::grad(const Vec& theta, const Batch& batch) const {
  if (batch.size() == 0) throw DataError("gradient of an empty batch");
  return grad_sum(theta, batch) / static_cast<double>(batch.size());
}

Mat ProbModel::per_sample_grads(const Vec& theta, const Batch& batch) const {
  check_theta(theta);
  Mat out(batch.size(), param_dim());
  Vec g(param_dim());
  for (Index i = 0; i < batch.size(); ++i) {
    log_lik_row(theta, *batch.data, batch.rows[static_cast<std::size_t>(i)], &g);
    out.row(i) = g.transpose();
  }
  return out;
}

Vec ProbModel::ggn_diag(const Vec& theta, const Batch& batch) const {
  if (batch.size() == 0) throw DataError("curvature of an empty batch");
  const Mat g = per_sample_grads(theta, batch);
  return g.array().square().colwise().mean().transpose();
}

std::optional<Mat> ProbModel::hessian(const Vec&, const Batch&) const { return std::nullopt; }

Vec ProbModel::init_params(RngStream& rng) const { return 0.1 * rng.normal_vector(param_dim()); }

LinearRegression::LinearRegression(Index input_dim, double noise_var)
    : dim_(input_dim), noise_var_(noise_var) {
  if (input_dim < 1) throw ConfigError("linear model needs input_dim >= 1");
  if (!(noise_var > 0.0) || !std::isfinite(noise_var))
    throw ConfigError("noise_var must be positive and finite");
}

double LinearRegression::log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const {
  if (d.input_dim() != dim_) throw DimensionMismatch("linear model: input dimension mismatch");
  const double resid = d.targets()(row, 0) - d.inputs().row(row).dot(theta);
  if (grad) *grad = (resid / noise_var_) * d.inputs().row(row).transpose();
  return -0.5 * kLog2Pi - 0.5 * std::log(noise_var_) - 0.5 * resid * resid / noise_var_;
}

std::optional<Mat> LinearRegression::hessian(const Vec& theta, const Batch& batch) const {
  check_theta(theta);
  if (batch.size() == 0) throw DataError("hessian of an empty batch");
  Mat h = Mat::Zero(dim_, dim_);
  for (Index r : batch.rows) {
    const auto x = batch.data->inputs().row(r);
    h.noalias() += x.transpose() * x;
  }
  return Mat(h / (noise_var_ * static_cast<double>(batch.size())));
}

Vec LinearRegression::predict(const Vec& theta, const Vec& x) const {
  check_theta(theta);
  Vec out(1);
  out(0) = x.dot(theta);
  return out;
}

LogisticRegression::LogisticRegression(Index input_dim) : dim_(input_dim) {
  if (input_dim < 1) throw ConfigError("logistic model needs input_dim >= 1");
}

double LogisticRegression::log_lik_row(const Vec& theta, const Dataset& d, Index row,
                                       Vec* grad) const {
  if (d.input_dim() != dim_) throw DimensionMismatch("logistic model: input dimension mismatch");
  const double y = d.targets()(row, 0);
  check_binary_target(y);
  const double z = d.inputs().row(row).dot(theta);
  if (grad) *grad = (y - sigmoid(z)) * d.inputs().row(row).transpose();
  // y log s(z) + (1-y) log(1-s(z)) = y z - softplus(z)
  return y * z - softplus(z);
}

Vec LogisticRegression::predict(const Vec& theta, const Vec& x) const {
  check_theta(theta);
  const double p = sigmoid(x.dot(theta));
  Vec out(2);
  out << 1.0 - p, p;
  return out;
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<Index> layer_sizes, Activation activation, Task task, double noise_var)
    : sizes_(std::move(layer_sizes)), activation_(activation), task_(task), noise_var_(noise_var) {
  if (sizes_.size() < 3) throw ConfigError("mlp needs at least one hidden layer");
  for (Index s : sizes_)
    if (s < 1) throw ConfigError("mlp layer sizes must be positive");
  if (task_ == Task::kBinary && sizes_.back() != 1)
    throw ConfigError("binary mlp must have a single output unit");
  if (task_ == Task::kMulticlass && sizes_.back() < 2)
    throw ConfigError("multiclass mlp needs at least two outputs");
  if (task_ == Task::kRegression && (!(noise_var_ > 0.0) || !std::isfinite(noise_var_)))
    throw ConfigError("noise_var must be positive and finite");
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  dim_ = offset;
}

Vec Mlp::forward(const Vec& theta, const Vec& x) const { return forward_masked(theta, x, {}); }

Vec Mlp::forward_masked(const Vec& theta, const Vec& x, const Masks& masks) const {
  check_theta(theta);
  if (x.size() != sizes_.front()) throw DimensionMismatch("mlp: input dimension mismatch");
  Vec a = x;
  for (Index l = 0; l < num_layers(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    if (ul < masks.size() && masks[ul].size() > 0) a = a.cwiseProduct(masks[ul]);
    const Index in = sizes_[ul], out = sizes_[ul + 1];
    Eigen::Map<const Mat> w(theta.data() + weight_offset(l), out, in);
    Eigen::Map<const Vec> b(theta.data() + weight_offset(l) + out * in, out);
    Vec z = w * a + b;
    if (l + 1 < num_layers()) {
      if (activation_ == Activation::kRelu)
        a = z.cwiseMax(0.0);
      else
        a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double Mlp::head_log_lik(const Vec& out, const Eigen::RowVectorXd& y, Vec* dout) const {
  switch (task_) {
    case Task::kRegression: {
      if (y.size() != out.size()) throw DimensionMismatch("mlp: target dimension mismatch");
      const Vec r = y.transpose() - out;
      if (dout) *dout = r / noise_var_;
      const double p = static_cast<double>(out.size());
      return -0.5 * p * (kLog2Pi + std::log(noise_var_)) - 0.5 * r.squaredNorm() / noise_var_;
    }
    case Task::kBinary: {
      const double t = y(0);
      check_binary_target(t);
      const double z = out(0);
      if (dout) *dout = Vec::Constant(1, t - sigmoid(z));
      return t * z - softplus(z);
    }
    case Task::kMulticlass: {
      const Index c = static_cast<Index>(y(0));
      if (c < 0 || c >= out.size()) throw DataError("class index out of range for mlp output");
      const double mx = out.maxCoeff();
      const Vec e = (out.array() - mx).exp().matrix();
      const double s = e.sum();
      if (dout) {
        *dout = -e / s;
        (*dout)(c) += 1.0;
      }
      return out(c) - mx - std::log(s);
    }
  }
  return 0.0;
}

double Mlp::log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const {
  return log_lik_row_masked(theta, d, row, {}, grad);
}

double Mlp::log_lik_row_masked(const Vec& theta, const Dataset& d, Index row, const Masks& masks,
                               Vec* grad) const {
  check_theta(theta);
  if (d.input_dim() != sizes_.front()) throw DimensionMismatch("mlp: input dimension mismatch");
  const std::size_t n_layers = static_cast<std::size_t>(num_layers());
  // inputs[l] is the (masked) input of layer l, pre[l] its pre-activation output.
  std::vector<Vec> inputs(n_layers), pre(n_layers);
  Vec a = d.inputs().row(row).transpose();
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (l < masks.size() && masks[l].size() > 0) a = a.cwiseProduct(masks[l]);
    inputs[l] = a;
    const Index in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const Mat> w(theta.data() + weight_offset(static_cast<Index>(l)), out, in);
    Eigen::Map<const Vec> b(theta.data() + weight_offset(static_cast<Index>(l)) + out * in, out);
    pre[l] = w * a + b;
    if (l + 1 < n_layers)
      a = activation_ == Activation::kRelu ? Vec(pre[l].cwiseMax(0.0)) : Vec(pre[l].array().tanh());
  }
  Vec delta;
  const double ll = head_log_lik(pre.back(), d.targets().row(row), grad ? &delta : nullptr);
  if (!grad) return ll;

  grad->resize(dim_);
  for (std::size_t l = n_layers; l-- > 0;) {
    const Index in = sizes_[l], out = sizes_[l + 1];
    const Index off = weight_offset(static_cast<Index>(l));
    Eigen::Map<Mat> gw(grad->data() + off, out, in);
    gw.noalias() = delta * inputs[l].transpose();
    grad->segment(off + out * in, out) = delta;
    if (l == 0) break;
    Eigen::Map<const Mat> w(theta.data() + off, out, in);
    Vec da = w.transpose() * delta;
    if (l < masks.size() && masks[l].size() > 0) da = da.cwiseProduct(masks[l]);
    const Vec& z = pre[l - 1];
    if (activation_ == Activation::kRelu)
      delta = (z.array() > 0.0).select(da, 0.0);
    else
      delta = da.cwiseProduct((1.0 - z.array().tanh().square()).matrix());
  }
  return ll;
}

Vec Mlp::link(const Vec& out) const {
  switch (task_) {
    case Task::kRegression:
      return out;
    case Task::kBinary: {
      const double p = sigmoid(out(0));
      Vec probs(2);
      probs << 1.0 - p, p;
      return probs;
    }
    case Task::kMulticlass: {
      const Vec e = (out.array() - out.maxCoeff()).exp().matrix();
      return e / e.sum();
    }
  }
  return out;
}

Vec Mlp::predict(const Vec& theta, const Vec& x) const { return link(forward(theta, x)); }

Vec Mlp::predict_masked(const Vec& theta, const Vec& x, const Masks& masks) const {
  return link(forward_masked(theta, x, masks));
}

GaussianPrior GaussianPrior::isotropic(Index k, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("prior precision tau must be positive");
  return GaussianPrior{Vec::Zero(k), tau * Mat::Identity(k, k), static_cast<double>(k) * std::log(tau)};
}

GaussianPrior GaussianPrior::full(Vec mean0, const Mat& precision0) {
  if (precision0.rows() != mean0.size() || precision0.cols() != mean0.size())
    throw DimensionMismatch("prior mean and precision sizes differ");
  auto llt = try_cholesky(symmetrize(precision0));
  if (!llt) throw ConfigError("prior precision must be SPD");
  const double logdet = 2.0 * Mat(llt->matrixL()).diagonal().array().log().sum();
  return GaussianPrior{std::move(mean0), symmetrize(precision0), logdet};
}

double GaussianPrior::log_density(const Vec& theta) const {
  if (theta.size() != dim()) throw DimensionMismatch("prior: theta has the wrong dimension");
  const Vec d = theta - mean0;
  return -0.5 * static_cast<double>(dim()) * kLog2Pi + 0.5 * log_det_precision0 -
         0.5 * d.dot(precision0 * d);
}

Vec GaussianPrior::grad_log_density(const Vec& theta) const { return -(precision0 * (theta - mean0)); }

GaussianVariational GaussianPrior::as_gaussian() const {
  return GaussianVariational::from_precision(mean0, precision0);
}

double GaussianPrior::mean_precision() const { return precision0.diagonal().mean(); }

LogDensity log_joint(const ProbModel& model, const GaussianPrior& prior, const Batch& batch,
                     double scale) {
  return [&model, &prior, batch, scale](const Vec& theta) {
    return prior.log_density(theta) + scale * model.log_lik(theta, batch);
  };
}

LogDensity log_likelihood(const ProbModel& model, const Batch& batch, double scale) {
  return [&model, batch, scale](const Vec& theta) { return scale * model.log_lik(theta, batch); };
}

GaussianVariational conjugate_posterior(const GaussianPrior& prior, const Dataset& data,
                                        double noise_var) {
  if (data.task() != Task::kRegression) throw DataError("conjugate posterior needs a regression task");
  if (data.size() > 0 && data.input_dim() != prior.dim())
    throw DimensionMismatch("prior and data dimensions differ");
  if (!(noise_var > 0.0)) throw ConfigError("noise_var must be positive");
  if (data.size() == 0) return prior.as_gaussian();
  const Mat& x = data.inputs();
  const Mat precision = symmetrize(prior.precision0 + x.transpose() * x / noise_var);
  const Vec rhs = prior.precision0 * prior.mean0 + x.transpose() * data.targets().col(0) / noise_var;
  auto llt = cholesky_or_throw(precision, "posterior precision");
  return GaussianVariational::from_precision(llt.solve(rhs), precision);
}

double linear_log_evidence(const GaussianPrior& prior, const Dataset& data, double noise_var) {
  if (data.size() == 0) return 0.0;
  const Mat& x = data.inputs();
  const Mat sigma0 = spd_inverse(prior.precision0);
  const Mat cov = symmetrize(noise_var * Mat::Identity(data.size(), data.size()) +
                             x * sigma0 * x.transpose());
  auto llt = cholesky_or_throw(cov, "evidence covariance");
  const Vec r = data.targets().col(0) - x * prior.mean0;
  const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * static_cast<double>(data.size()) * kLog2Pi - 0.5 * logdet - 0.5 * r.dot(llt.solve(r));
}

}  // namespace bnn
