#pragma once

#include <optional>

#include <Eigen/Dense>

namespace bnn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Cholesky of a symmetric matrix; nullopt when the matrix is not numerically
// SPD. A failed factorization is the library-wide "left the manifold" signal.
std::optional<Eigen::LLT<Mat>> try_cholesky(const Mat& m);

bool is_spd(const Mat& m);

// Cholesky or throw ManifoldExit with `what` as context.
Eigen::LLT<Mat> cholesky_or_throw(const Mat& m, const char* what);

Mat spd_inverse(const Mat& m);

// Largest absolute eigenvalue of a symmetric matrix.
double spectral_norm_sym(const Mat& m);

// Rescales a symmetric matrix so its spectral norm does not exceed `limit`.
// Returns true when clipping happened.
bool clip_spectral_norm(Mat& m, double limit);

// Principal square root and inverse square root of an SPD matrix.
Mat spd_sqrt(const Mat& m);
Mat spd_inv_sqrt(const Mat& m);

// Relative asymmetry ||m - m^T|| / max(||m||, tiny).
double relative_asymmetry(const Mat& m);

}  // namespace bnn
