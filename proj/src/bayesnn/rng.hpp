#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace bnn {

// A seeded random stream. Child streams are derived from the seed and a name
// only, so the number of draws taken from a parent never shifts its children.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream split(std::string_view name) const;
  RngStream split(std::uint64_t index) const;

  double normal();
  double uniform();
  std::size_t uniform_index(std::size_t n);
  Eigen::VectorXd normal_vector(Eigen::Index k);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::uint64_t seed() const noexcept { return seed_; }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace bnn
