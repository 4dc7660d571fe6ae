#pragma once

#include <cmath>

#include "bayesnn/linalg.hpp"

namespace bnn {

// Bias-corrected Adam moments. direction() returns m_hat / (sqrt(v_hat) + eps);
// the caller applies the learning rate and the sign.
struct AdamMoments {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vec m;
  Vec v;
  Index t = 0;

  Vec direction(const Vec& g) {
    if (m.size() != g.size()) {
      m = Vec::Zero(g.size());
      v = Vec::Zero(g.size());
      t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    return (m / c1).array() / ((v / c2).array().sqrt() + eps);
  }
};

}  // namespace bnn
