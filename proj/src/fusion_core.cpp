#include "fusionkit/fusion_core.hpp"

#include <algorithm>
#include <cmath>

namespace fusionkit {

namespace {

constexpr double kVarianceFloor = 1e-8;

void check_refine_config(const RefineConfig& cfg) {
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0)) {
    throw std::invalid_argument("refine config: epsilon must lie in [0, 1]");
  }
  if (!(cfg.lambda >= 0.0)) {
    throw std::invalid_argument("refine config: lambda must be >= 0");
  }
}

}  // namespace

void LayerStack::validate() const {
  if (embeddings.empty()) {
    throw ShapeError("layer stack: no layers");
  }
  if (layer_logits.size() != layers()) {
    throw ShapeError("layer stack: logit count does not match layer count");
  }
  const Eigen::Index t = embeddings.front().rows();
  const Eigen::Index d = embeddings.front().cols();
  if (t < 1 || d < 1) {
    throw ShapeError("layer stack: empty layer embedding");
  }
  for (const Matrix& e : embeddings) {
    if (e.rows() != t || e.cols() != d) {
      throw ShapeError("layer stack: inconsistent layer shapes");
    }
    require_finite(e, "layer stack embedding");
  }
  require_finite(layer_logits, "layer stack logits");
}

AffineMap AffineMap::init(Eigen::Index d_in, Eigen::Index d_out, Rng& rng) {
  if (d_in < 1 || d_out < 1) {
    throw ShapeError("affine init: dimensions must be positive");
  }
  AffineMap map;
  map.weight.resize(d_in, d_out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (Eigen::Index i = 0; i < d_in; ++i) {
    for (Eigen::Index j = 0; j < d_out; ++j) {
      map.weight(i, j) = rng.uniform(-bound, bound);
    }
  }
  map.bias = Vector::Zero(d_out);
  return map;
}

void AffineMap::validate() const {
  if (weight.rows() < 1 || weight.cols() < 1) {
    throw ShapeError("affine map: empty weight");
  }
  if (bias.size() != weight.cols()) {
    throw ShapeError("affine map: bias size does not match weight columns");
  }
  require_finite(weight, "affine weight");
  require_finite(bias, "affine bias");
}

void GradientBundle::ensure(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    entries_[name] = Entry{Matrix::Zero(rows, cols), 0u};
    return;
  }
  if (it->second.value.rows() != rows || it->second.value.cols() != cols) {
    throw ShapeError("gradient bundle: shape conflict for " + name);
  }
}

void GradientBundle::accumulate(const std::string& name, const Matrix& grad, unsigned source) {
  require_finite(grad, "gradient for " + name);
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    entries_[name] = Entry{grad, source};
    return;
  }
  if (it->second.value.rows() != grad.rows() || it->second.value.cols() != grad.cols()) {
    throw ShapeError("gradient bundle: shape conflict for " + name);
  }
  it->second.value += grad;
  it->second.sources |= source;
}

bool GradientBundle::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

const Matrix& GradientBundle::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::invalid_argument("gradient bundle: no entry named " + name);
  }
  return it->second.value;
}

unsigned GradientBundle::sources(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::invalid_argument("gradient bundle: no entry named " + name);
  }
  return it->second.sources;
}

void GradientBundle::merge(const GradientBundle& other) {
  for (const auto& [name, entry] : other.entries_) {
    accumulate(name, entry.value, entry.sources);
  }
}

Matrix weighted_sum_layers(const LayerStack& stack) {
  stack.validate();
  const Vector w = softmax_vec(stack.layer_logits);
  Matrix out = Matrix::Zero(stack.frames(), stack.dim());
  for (Eigen::Index l = 0; l < stack.layers(); ++l) {
    out += w(l) * stack.embeddings[static_cast<std::size_t>(l)];
  }
  return out;
}

Vector weighted_sum_backward(const LayerStack& stack, const Matrix& upstream) {
  stack.validate();
  if (upstream.rows() != stack.frames() || upstream.cols() != stack.dim()) {
    throw ShapeError("weighted_sum_backward: upstream shape mismatch");
  }
  const Vector w = softmax_vec(stack.layer_logits);
  Vector grad_w(stack.layers());
  for (Eigen::Index l = 0; l < stack.layers(); ++l) {
    grad_w(l) = upstream.cwiseProduct(stack.embeddings[static_cast<std::size_t>(l)]).sum();
  }
  return softmax_vec_backward(w, grad_w);
}

Matrix downsample_time(const Matrix& x, Eigen::Index t_out) {
  if (t_out < 1) {
    throw ShapeError("downsample_time: target length must be >= 1");
  }
  if (t_out > x.rows()) {
    throw ShapeError("downsample_time: target length exceeds input length");
  }
  Matrix out(t_out, x.cols());
  for (Eigen::Index t = 0; t < t_out; ++t) {
    out.row(t) = x.row(t * x.rows() / t_out);
  }
  return out;
}

Matrix downsample_backward(const Matrix& upstream, Eigen::Index t_in) {
  if (upstream.rows() > t_in) {
    throw ShapeError("downsample_backward: upstream longer than input");
  }
  Matrix g = Matrix::Zero(t_in, upstream.cols());
  for (Eigen::Index t = 0; t < upstream.rows(); ++t) {
    g.row(t * t_in / upstream.rows()) += upstream.row(t);
  }
  return g;
}

Matrix affine_apply(const Matrix& x, const AffineMap& map) {
  map.validate();
  if (x.cols() != map.weight.rows()) {
    throw ShapeError("affine_apply: input width does not match weight rows");
  }
  return (x * map.weight).rowwise() + map.bias.transpose();
}

AffineGrads affine_backward(const Matrix& x, const AffineMap& map, const Matrix& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != map.weight.cols()) {
    throw ShapeError("affine_backward: upstream shape mismatch");
  }
  AffineGrads g;
  g.weight = x.transpose() * upstream;
  g.bias = upstream.colwise().sum().transpose();
  g.input = upstream * map.weight.transpose();
  return g;
}

Matrix norm_transform(const Matrix& x, const AffineMap& map, Eigen::Index t_out) {
  return downsample_time(affine_apply(x, map), t_out);
}

Matrix mvn(const Matrix& x) {
  if (x.rows() < 2) {
    throw ShapeError("mvn: needs at least 2 frames");
  }
  require_finite(x, "mvn input");
  const double t = static_cast<double>(x.rows());
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / t;
    const double scale = 1.0 / std::sqrt(var + kVarianceFloor);
    y.col(j) = (x.col(j).array() - mean) * scale;
  }
  return y;
}

Matrix mvn_backward(const Matrix& x, const Matrix& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols()) {
    throw ShapeError("mvn_backward: shape mismatch");
  }
  const double t = static_cast<double>(x.rows());
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / t;
    const double inv_std = 1.0 / std::sqrt(var + kVarianceFloor);
    const Eigen::ArrayXd y = (x.col(j).array() - mean) * inv_std;
    const Eigen::ArrayXd up = upstream.col(j).array();
    const double up_mean = up.mean();
    const double proj = (up * y).mean();
    g.col(j) = inv_std * (up - up_mean - y * proj);
  }
  return g;
}

CorrelationMatrix cross_correlation(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError("cross_correlation: streams must have equal shapes");
  }
  const double t = static_cast<double>(x.rows());
  CorrelationMatrix c;
  c.values = mvn(x).transpose() * mvn(y) / t;
  if (c.values.cwiseAbs().maxCoeff() > 1.0 + 1e-9) {
    throw NumericalError("cross_correlation: entry outside [-1, 1]");
  }
  return c;
}

double refine_loss(const CorrelationMatrix& c, const RefineConfig& cfg) {
  check_refine_config(cfg);
  require_finite(c.values, "refine_loss correlations");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) {
      const double a = std::abs(c.values(i, j));
      if (cfg.mode == RefineMode::maximum) {
        if (a > cfg.epsilon) {
          loss += c.values(i, j) * c.values(i, j);
        }
      } else {
        if (a < cfg.epsilon) {
          const double gap = cfg.epsilon - a;
          loss += gap * gap;
        }
      }
    }
  }
  return loss;
}

Matrix refine_loss_grad(const CorrelationMatrix& c, const RefineConfig& cfg) {
  check_refine_config(cfg);
  Matrix g = Matrix::Zero(c.values.rows(), c.values.cols());
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) {
      const double v = c.values(i, j);
      const double a = std::abs(v);
      if (cfg.mode == RefineMode::maximum) {
        if (a > cfg.epsilon) {
          g(i, j) = 2.0 * v;
        }
      } else {
        if (a < cfg.epsilon && v != 0.0) {
          g(i, j) = -2.0 * (cfg.epsilon - a) * (v > 0.0 ? 1.0 : -1.0);
        }
      }
    }
  }
  return g;
}

double fraction_above(const CorrelationMatrix& c, double epsilon) {
  return static_cast<double>(count_above(c, epsilon)) /
         static_cast<double>(c.values.size());
}

Eigen::Index count_above(const CorrelationMatrix& c, double epsilon) {
  if (c.values.size() == 0) {
    throw ShapeError("count_above: empty correlation matrix");
  }
  return (c.values.cwiseAbs().array() > epsilon).count();
}

double combined_loss(double task_loss, double refine, double lambda) {
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("combined_loss: lambda must be >= 0");
  }
  const double total = task_loss + lambda * refine;
  if (!std::isfinite(total)) {
    throw NumericalError("combined_loss: non-finite result");
  }
  return total;
}

GradientBundle refine_backward(const Matrix& x, const Matrix& y,
                               const AffineMap& map_x, const AffineMap& map_y,
                               const RefineConfig& cfg) {
  check_refine_config(cfg);
  const Eigen::Index t = std::min(x.rows(), y.rows());

  const Matrix xt = norm_transform(x, map_x, t);
  const Matrix yt = norm_transform(y, map_y, t);
  const Matrix a = mvn(xt);
  const Matrix b = mvn(yt);
  CorrelationMatrix c;
  c.values = a.transpose() * b / static_cast<double>(t);

  const Matrix grad_c = cfg.lambda * refine_loss_grad(c, cfg);
  const Matrix grad_a = b * grad_c.transpose() / static_cast<double>(t);
  const Matrix grad_b = a * grad_c / static_cast<double>(t);
  const Matrix grad_xt = mvn_backward(xt, grad_a);
  const Matrix grad_yt = mvn_backward(yt, grad_b);

  GradientBundle out;
  const AffineGrads gx = affine_backward(x, map_x, downsample_backward(grad_xt, x.rows()));
  const AffineGrads gy = affine_backward(y, map_y, downsample_backward(grad_yt, y.rows()));
  out.accumulate("norm_x.weight", gx.weight, loss_refine);
  out.accumulate("norm_x.bias", gx.bias, loss_refine);
  out.accumulate("norm_y.weight", gy.weight, loss_refine);
  out.accumulate("norm_y.bias", gy.bias, loss_refine);
  return out;
}

}  // namespace fusionkit
