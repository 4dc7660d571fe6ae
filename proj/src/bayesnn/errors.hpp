#pragma once

#include <stdexcept>
#include <string>

namespace bnn {

// Base of every error the library throws. The category decides the exit code
// the CLI (and the C interface) reports.
class Error : public std::runtime_error {
 public:
  enum class Category { kInternal = 1, kConfig = 2, kData = 3, kNumerical = 4 };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::kData, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(Category::kNumerical, what) {}
};

// A parameter violates its documented invariant (e.g. a non-SPD factor).
class InvalidParameter : public Error {
 public:
  explicit InvalidParameter(const std::string& what) : Error(Category::kNumerical, what) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error(Category::kData, what) {}
};

// A matrix update left the SPD manifold (factorization failed).
class ManifoldExit : public Error {
 public:
  explicit ManifoldExit(const std::string& what) : Error(Category::kNumerical, what) {}
};

}  // namespace bnn
