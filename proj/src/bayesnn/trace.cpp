#include "bayesnn/trace.hpp"

#include <cmath>
#include <limits>

#include "bayesnn/errors.hpp"
#include "json.hpp"

namespace bnn {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::optional<double> opt_number(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return v.get<double>();
}

}  // namespace

std::string TraceRecord::to_json() const {
  json j;
  j["t"] = t;
  if (elbo) j["elbo"] = number(*elbo);
  if (elbo_stderr) j["elbo_stderr"] = number(*elbo_stderr);
  if (log_target) j["log_target"] = number(*log_target);
  if (accepted) j["accepted"] = *accepted;
  j["mean_norm"] = number(mean_norm);
  j["scale_norm"] = number(scale_norm);
  if (wall_ms) j["wall_ms"] = number(*wall_ms);
  j["flags"] = {{"step_halved", step_halved}, {"draws_dropped", draws_dropped}};
  return j.dump();
}

TraceRecord TraceRecord::from_json(const std::string& line) {
  TraceRecord r;
  try {
    const json j = json::parse(line);
    r.t = j.at("t").get<Index>();
    r.elbo = opt_number(j, "elbo");
    r.elbo_stderr = opt_number(j, "elbo_stderr");
    r.log_target = opt_number(j, "log_target");
    if (j.contains("accepted")) r.accepted = j.at("accepted").get<bool>();
    r.mean_norm = opt_number(j, "mean_norm").value_or(0.0);
    r.scale_norm = opt_number(j, "scale_norm").value_or(0.0);
    r.wall_ms = opt_number(j, "wall_ms");
    const json& f = j.at("flags");
    r.step_halved = f.at("step_halved").get<bool>();
    r.draws_dropped = f.at("draws_dropped").get<Index>();
  } catch (const json::exception& e) {
    throw DataError(std::string("trace: malformed record: ") + e.what());
  }
  return r;
}

TraceWriter::TraceWriter(const std::string& path) : out_(path, std::ios::out | std::ios::trunc) {
  if (!out_) throw DataError("trace: cannot open " + path);
}

void TraceWriter::write(const TraceRecord& r) {
  if (r.t <= last_t_) throw Error(Error::Category::kInternal, "trace: iteration index must increase");
  out_ << r.to_json() << '\n';
  if (!out_) throw DataError("trace: write failed");
  last_t_ = r.t;
  ++count_;
}

std::vector<TraceRecord> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("trace: cannot open " + path);
  std::vector<TraceRecord> out;
  std::string line;
  Index last = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRecord r = TraceRecord::from_json(line);
    if (r.t <= last) throw DataError("trace: iteration indices are not increasing");
    last = r.t;
    out.push_back(std::move(r));
  }
  return out;
}

EarlyStopper::EarlyStopper(Index window, Index patience)
    : window_(window), patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (window < 1 || patience < 1) throw ConfigError("early stopping: window and patience must be >= 1");
}

bool EarlyStopper::add(double value) {
  if (!std::isfinite(value)) return false;
  sum_ += value;
  if (++filled_ < window_) return false;
  const double mean = sum_ / static_cast<double>(window_);
  sum_ = 0.0;
  filled_ = 0;
  if (mean > best_) {
    best_ = mean;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

}  // namespace bnn
