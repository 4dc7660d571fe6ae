#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bayesnn/config.hpp"
#include "bayesnn/errors.hpp"
#include "bayesnn/trace.hpp"

namespace bnn {
namespace {

namespace fs = std::filesystem;

const char* kHmc = R"(
[data]
path = data/logistic.csv
task = binary

[model]
kind = logistic

[run]
method = hmc
iterations = 100
seed = 3
output = out/hmc

[hmc]
step_size = 0.1
leapfrog_steps = 10
)";

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bayesnn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Config, ParsesSectionsAndTypes) {
  const Config c = Config::parse("[a]\nx = 1.5\nn = 3\nflag = true\nlist = 1, 2, 3\n; comment\n# comment\n");
  EXPECT_DOUBLE_EQ(c.get_double("a.x"), 1.5);
  EXPECT_EQ(c.get_int("a.n"), 3);
  EXPECT_TRUE(c.get_bool("a.flag", false));
  EXPECT_EQ(c.get_doubles("a.list"), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.get_string("a.missing", "dflt"), "dflt");
}

TEST(Config, TypeErrorsAreConfigErrors) {
  const Config c = Config::parse("[a]\nx = abc\nn = 1.5\nb = maybe\n");
  EXPECT_THROW(c.get_double("a.x"), ConfigError);
  EXPECT_THROW(c.get_int("a.n"), ConfigError);
  EXPECT_THROW(c.get_bool("a.b", false), ConfigError);
  EXPECT_THROW(c.get_string("a.none"), ConfigError);
}

TEST(Config, KeyOutsideSectionIsRejected) {
  EXPECT_THROW(Config::parse("x = 1\n"), ConfigError);
}

TEST(Config, IniRoundTrip) {
  Config c = Config::parse(kHmc);
  c.set("hmc.burn_in", "20");
  const Config back = Config::parse(c.to_ini());
  EXPECT_EQ(back.entries(), c.entries());
}

TEST(Config, SetRequiresDottedKey) {
  Config c;
  EXPECT_THROW(c.set("nodot", "1"), ConfigError);
}

TEST(Config, LoadMissingFileIsConfigError) {
  EXPECT_THROW(Config::load("/nonexistent/bayesnn.ini"), ConfigError);
}

TEST(Experiment, RelativePathsResolveAgainstConfigDirectory) {
  const ExperimentConfig e = parse_experiment(Config::parse(kHmc, "/base/dir"));
  EXPECT_EQ(e.data_path, "/base/dir/data/logistic.csv");
  EXPECT_EQ(e.output_dir, "/base/dir/out/hmc");
}

TEST(Experiment, DefaultsAndSeedOverride) {
  const std::uint64_t seed = 99;
  const ExperimentConfig e = parse_experiment(Config::parse(kHmc), &seed);
  EXPECT_EQ(e.seed, 99u);
  EXPECT_EQ(e.method, Method::kHmc);
  EXPECT_TRUE(is_mcmc(e.method));
  EXPECT_DOUBLE_EQ(e.prior_tau, 1.0);
  EXPECT_EQ(e.batch_size, 0);
  EXPECT_FALSE(e.record_time);
}

TEST(Experiment, HmcWithoutStepSizeIsConfigError) {
  Config c = Config::parse(kHmc);
  Config stripped;
  for (const auto& [k, v] : c.entries())
    if (k != "hmc.step_size") stripped.set(k, v);
  EXPECT_THROW(parse_experiment(stripped), ConfigError);
}

TEST(Experiment, InvalidValuesAreConfigErrors) {
  const auto with = [](const std::string& key, const std::string& value) {
    Config c = Config::parse(kHmc);
    c.set(key, value);
    return c;
  };
  EXPECT_THROW(parse_experiment(with("run.method", "sgld")), ConfigError);
  EXPECT_THROW(parse_experiment(with("run.iterations", "0")), ConfigError);
  EXPECT_THROW(parse_experiment(with("prior.tau", "-1")), ConfigError);
  EXPECT_THROW(parse_experiment(with("model.kind", "linear")), ConfigError);
  EXPECT_THROW(parse_experiment(with("hmc.step_size", "-0.1")), ConfigError);
  EXPECT_THROW(parse_experiment(with("model.activation", "sigmoid")), ConfigError);
}

TEST(Experiment, MethodNamesRoundTrip) {
  for (const char* name : {"mh", "hmc", "mcd", "bbb", "bbvi", "ngbbvi", "ngvi", "von", "vadam", "vogn",
                           "qbvi", "mgvb", "emgvb"})
    EXPECT_EQ(method_name(parse_method(name)), name);
}

TEST(Trace, RecordRoundTrip) {
  TraceRecord r;
  r.t = 7;
  r.elbo = -12.5;
  r.elbo_stderr = 0.25;
  r.mean_norm = 1.5;
  r.scale_norm = 0.125;
  r.step_halved = true;
  r.draws_dropped = 2;
  const TraceRecord back = TraceRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.t, 7);
  EXPECT_EQ(*back.elbo, -12.5);
  EXPECT_FALSE(back.wall_ms.has_value());
  EXPECT_FALSE(back.accepted.has_value());
}

TEST(Trace, WriterAndReader) {
  const fs::path dir = temp_dir("trace");
  const std::string path = (dir / "trace.jsonl").string();
  {
    TraceWriter w(path);
    for (Index t = 1; t <= 5; ++t) {
      TraceRecord r;
      r.t = t;
      r.log_target = -static_cast<double>(t);
      r.accepted = t % 2 == 0;
      w.write(r);
    }
    EXPECT_EQ(w.count(), 5);
    TraceRecord dup;
    dup.t = 5;
    EXPECT_THROW(w.write(dup), Error);
  }
  const auto records = read_trace(path);
  ASSERT_EQ(records.size(), 5u);
  EXPECT_EQ(*records[3].accepted, true);
  EXPECT_EQ(*records[4].log_target, -5.0);
}

TEST(Trace, NonMonotoneIndicesAreDataErrors) {
  const fs::path dir = temp_dir("trace_bad");
  const std::string path = (dir / "trace.jsonl").string();
  TraceRecord a, b;
  a.t = 2;
  b.t = 1;
  std::ofstream(path) << a.to_json() << "\n" << b.to_json() << "\n";
  EXPECT_THROW(read_trace(path), DataError);
  std::ofstream(path) << "{not json\n";
  EXPECT_THROW(read_trace(path), DataError);
}

TEST(EarlyStopper, StopsAfterPatienceWindowsWithoutImprovement) {
  EarlyStopper s(2, 2);
  // Windows: mean 1 (best), mean 3 (best), then two stale windows.
  const std::vector<double> values{1, 1, 3, 3, 2, 2, 2, 2};
  std::vector<bool> stops;
  for (double v : values) stops.push_back(s.add(v));
  EXPECT_EQ(stops, (std::vector<bool>{false, false, false, false, false, false, false, true}));
  EXPECT_DOUBLE_EQ(s.best(), 3.0);
}

TEST(EarlyStopper, ImprovementResetsPatience) {
  EarlyStopper s(1, 2);
  EXPECT_FALSE(s.add(1.0));
  EXPECT_FALSE(s.add(0.5));
  EXPECT_FALSE(s.add(2.0));
  EXPECT_FALSE(s.add(1.0));
  EXPECT_TRUE(s.add(1.0));
}

TEST(EarlyStopper, RejectsBadSettings) {
  EXPECT_THROW(EarlyStopper(0, 1), ConfigError);
  EXPECT_THROW(EarlyStopper(1, 0), ConfigError);
}

}  // namespace
}  // namespace bnn
