#include "fusionkit/common.hpp"

#include <cmath>

namespace fusionkit {

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) {
    throw NumericalError(what + ": non-finite entries");
  }
}

void require_finite(const Vector& v, const std::string& what) {
  if (!v.allFinite()) {
    throw NumericalError(what + ": non-finite entries");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t substream(std::uint64_t root_seed, const std::string& name) {
  // FNV-1a over the stream name keeps substreams stable across runs and
  // independent of call order.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(root_seed ^ h);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = normal();
    }
  }
  return m;
}

Vector softmax_vec(const Vector& logits) {
  if (logits.size() == 0) {
    throw ShapeError("softmax_vec: empty logits");
  }
  require_finite(logits, "softmax_vec");
  const Vector shifted = logits.array() - logits.maxCoeff();
  Vector w = shifted.array().exp();
  return w / w.sum();
}

Vector softmax_vec_backward(const Vector& weights, const Vector& grad_weights) {
  if (weights.size() != grad_weights.size()) {
    throw ShapeError("softmax_vec_backward: size mismatch");
  }
  const double dot = weights.dot(grad_weights);
  return weights.array() * (grad_weights.array() - dot);
}

Matrix softmax_rows(const Matrix& scores) {
  if (scores.rows() == 0 || scores.cols() == 0) {
    throw ShapeError("softmax_rows: empty scores");
  }
  require_finite(scores, "softmax_rows");
  Matrix p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    Eigen::RowVectorXd e = (scores.row(r).array() - m).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs) {
  if (probs.rows() != grad_probs.rows() || probs.cols() != grad_probs.cols()) {
    throw ShapeError("softmax_rows_backward: shape mismatch");
  }
  Matrix g(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(grad_probs.row(r));
    g.row(r) = probs.row(r).array() * (grad_probs.row(r).array() - dot);
  }
  return g;
}

}  // namespace fusionkit
