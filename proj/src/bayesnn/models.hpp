#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bayesnn/gaussian.hpp"
#include "bayesnn/linalg.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

enum class Task { kRegression, kBinary, kMulticlass };

const char* task_name(Task task);
Task parse_task(const std::string& name);

// Inputs N x d and targets N x p. For multiclass tasks the single target
// column holds the class index 0..C-1.
class Dataset {
 public:
  Dataset(Mat inputs, Mat targets, Task task);
  // The one way to obtain N = 0 (used as the "no data" case of oracles).
  static Dataset empty(Index input_dim, Index target_dim, Task task);

  Index size() const noexcept { return inputs_.rows(); }
  Index input_dim() const noexcept { return inputs_.cols(); }
  Index target_dim() const noexcept { return targets_.cols(); }
  const Mat& inputs() const noexcept { return inputs_; }
  const Mat& targets() const noexcept { return targets_; }
  Task task() const noexcept { return task_; }

 private:
  Dataset() = default;
  Mat inputs_;
  Mat targets_;
  Task task_ = Task::kRegression;
};

// Header row, then numeric rows; the last `target_cols` columns are targets.
Dataset load_csv(const std::string& path, Index target_cols, Task task);

// Row subset of a dataset. Does not own the dataset.
struct Batch {
  const Dataset* data = nullptr;
  std::vector<Index> rows;

  static Batch full(const Dataset& d);
  static Batch of(const Dataset& d, std::vector<Index> rows);
  Index size() const noexcept { return static_cast<Index>(rows.size()); }
};

// Splits 0..N-1 into consecutive batches of `batch_size` after a shuffle
// drawn from rng (the last batch may be smaller).
std::vector<Batch> epoch_partition(const Dataset& d, Index batch_size, RngStream& rng);

// Likelihood p(D | theta) of a differentiable model. Gradients are of the
// log-likelihood; curvature (hessian, ggn_diag) is of the mean negative
// log-likelihood so it is PSD for well-posed models.
class ProbModel {
 public:
  virtual ~ProbModel() = default;

  virtual Index param_dim() const = 0;
  virtual Task task() const = 0;
  virtual std::string kind() const = 0;

  // log p(y_i | x_i, theta); writes d/dtheta into grad when non-null.
  virtual double log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const = 0;

  // Sum over the batch. An empty batch contributes 0.
  double log_lik(const Vec& theta, const Batch& batch) const;
  Vec grad_sum(const Vec& theta, const Batch& batch) const;
  // Mean of the per-sample gradients. Throws on an empty batch.
  Vec grad(const Vec& theta, const Batch& batch) const;
  // M x k, row i = gradient of log p(y_i | x_i, theta).
  Mat per_sample_grads(const Vec& theta, const Batch& batch) const;
  // Mean of squared per-sample gradients.
  Vec ggn_diag(const Vec& theta, const Batch& batch) const;
  // Exact Hessian of the mean negative log-likelihood, where available.
  virtual std::optional<Mat> hessian(const Vec& theta, const Batch& batch) const;

  // Regression: predicted mean (length p). Classification: class
  // probabilities (binary models return (1 - p, p)).
  virtual Vec predict(const Vec& theta, const Vec& x) const = 0;

  // Starting point drawn as N(0, 0.1^2) per coordinate.
  Vec init_params(RngStream& rng) const;

 protected:
  void check_theta(const Vec& theta) const;
};

class LinearRegression final : public ProbModel {
 public:
  LinearRegression(Index input_dim, double noise_var);

  Index param_dim() const override { return dim_; }
  Task task() const override { return Task::kRegression; }
  std::string kind() const override { return "linear"; }
  double noise_var() const noexcept { return noise_var_; }

  double log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const override;
  std::optional<Mat> hessian(const Vec& theta, const Batch& batch) const override;
  Vec predict(const Vec& theta, const Vec& x) const override;

 private:
  Index dim_;
  double noise_var_;
};

class LogisticRegression final : public ProbModel {
 public:
  explicit LogisticRegression(Index input_dim);

  Index param_dim() const override { return dim_; }
  Task task() const override { return Task::kBinary; }
  std::string kind() const override { return "logistic"; }

  double log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const override;
  Vec predict(const Vec& theta, const Vec& x) const override;

 private:
  Index dim_;
};

enum class Activation { kRelu, kTanh };

Activation parse_activation(const std::string& name);

// Fully connected network. layer_sizes = {d, h1, ..., out}. Parameters are
// laid out per layer as W (out x in, column-major) followed by b.
class Mlp final : public ProbModel {
 public:
  // For kMulticlass the output size is the number of classes; for kBinary it
  // must be 1; noise_var is used only for regression.
  Mlp(std::vector<Index> layer_sizes, Activation activation, Task task, double noise_var = 1.0);

  Index param_dim() const override { return dim_; }
  Task task() const override { return task_; }
  std::string kind() const override { return "mlp"; }
  const std::vector<Index>& layer_sizes() const noexcept { return sizes_; }
  Index num_layers() const noexcept { return static_cast<Index>(sizes_.size()) - 1; }

  double log_lik_row(const Vec& theta, const Dataset& d, Index row, Vec* grad) const override;
  Vec predict(const Vec& theta, const Vec& x) const override;

  // Raw network output NN_theta(x) (pre-link).
  Vec forward(const Vec& theta, const Vec& x) const;

  // Dropout masks multiply the input of each layer; masks[l] has length
  // layer_sizes[l], or is empty for "no mask on this layer".
  using Masks = std::vector<Vec>;
  Vec forward_masked(const Vec& theta, const Vec& x, const Masks& masks) const;
  double log_lik_row_masked(const Vec& theta, const Dataset& d, Index row, const Masks& masks,
                            Vec* grad) const;
  Vec predict_masked(const Vec& theta, const Vec& x, const Masks& masks) const;

 private:
  Index weight_offset(Index layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
  double head_log_lik(const Vec& out, const Eigen::RowVectorXd& y, Vec* dout) const;
  Vec link(const Vec& out) const;

  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  Activation activation_;
  Task task_;
  double noise_var_;
  Index dim_;
};

// Build through isotropic() or full(); they fill the cached log-determinant.
struct GaussianPrior {
  Vec mean0;
  Mat precision0;
  double log_det_precision0 = 0.0;

  static GaussianPrior isotropic(Index k, double tau);
  static GaussianPrior full(Vec mean0, const Mat& precision0);

  Index dim() const noexcept { return mean0.size(); }
  double log_density(const Vec& theta) const;
  Vec grad_log_density(const Vec& theta) const;
  GaussianVariational as_gaussian() const;
  // Mean of the diagonal of the precision (tau for isotropic priors).
  double mean_precision() const;
};

using LogDensity = std::function<double(const Vec&)>;

// theta -> log p(theta) + scale * log p(batch | theta). Captures references to
// the model and prior, which must outlive the returned function.
LogDensity log_joint(const ProbModel& model, const GaussianPrior& prior, const Batch& batch,
                     double scale = 1.0);

// theta -> scale * log p(batch | theta).
LogDensity log_likelihood(const ProbModel& model, const Batch& batch, double scale = 1.0);

// Exact Gaussian posterior of Bayesian linear regression with known noise.
GaussianVariational conjugate_posterior(const GaussianPrior& prior, const Dataset& data,
                                        double noise_var);

// log p(y | X) for the same model: N(y | X mu0, sigma^2 I + X Sigma0 X^T).
double linear_log_evidence(const GaussianPrior& prior, const Dataset& data, double noise_var);

}  // namespace bnn
