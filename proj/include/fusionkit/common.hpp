#ifndef FUSIONKIT_COMMON_HPP
#define FUSIONKIT_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fusionkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class InsufficientDataError : public std::runtime_error {
 public:
  explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

void require_finite(const Matrix& m, const std::string& what);
void require_finite(const Vector& v, const std::string& what);

/// Deterministic RNG utilities. Everything derives from one 64-bit root seed
/// through named substreams, so a run is reproducible from (seed, stream name).
/// Gaussian/uniform draws avoid std distributions, whose algorithms are
/// implementation-defined and would break byte-identical reruns across
/// standard libraries.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t substream(std::uint64_t root_seed, const std::string& name);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform draw in [0, 1) with 53 bits of mantissa.
  double uniform();
  /// Uniform draw in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal draw via Box-Muller.
  double normal();

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Softmax of a logit vector; result is positive and sums to 1.
Vector softmax_vec(const Vector& logits);
/// Backward of softmax_vec: given w = softmax(z) and dL/dw, returns dL/dz.
Vector softmax_vec_backward(const Vector& weights, const Vector& grad_weights);

/// Row-wise softmax of a score matrix.
Matrix softmax_rows(const Matrix& scores);
/// Backward of softmax_rows: given P = softmax_rows(S) and dL/dP, returns dL/dS.
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs);

}  // namespace fusionkit

#endif
