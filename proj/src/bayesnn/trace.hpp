#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bayesnn/linalg.hpp"

namespace bnn {

// One line of a run trace. Optional fields are omitted when unset.
struct TraceRecord {
  Index t = 0;
  std::optional<double> elbo;
  std::optional<double> elbo_stderr;
  std::optional<double> log_target;
  std::optional<bool> accepted;
  double mean_norm = 0.0;   // ||mu|| or ||theta||
  double scale_norm = 0.0;  // Frobenius norm of the covariance (VI only)
  std::optional<double> wall_ms;
  bool step_halved = false;
  Index draws_dropped = 0;

  std::string to_json() const;
  static TraceRecord from_json(const std::string& line);
};

// Append-only line-delimited writer; rejects non-increasing iteration indices.
class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path);
  void write(const TraceRecord& r);
  Index count() const noexcept { return count_; }

 private:
  std::ofstream out_;
  Index last_t_ = -1;
  Index count_ = 0;
};

// Parses every line and checks monotone indices; throws DataError on failure.
std::vector<TraceRecord> read_trace(const std::string& path);

// Windowed moving-average early stopping: after every `window` records the
// window mean is compared with the best so far; `patience` windows without
// improvement stop the run.
class EarlyStopper {
 public:
  EarlyStopper(Index window, Index patience);
  // Returns true when the run should stop.
  bool add(double value);
  double best() const noexcept { return best_; }

 private:
  Index window_, patience_;
  double sum_ = 0.0;
  Index filled_ = 0;
  double best_;
  Index stale_ = 0;
};

}  // namespace bnn
