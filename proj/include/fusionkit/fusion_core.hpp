#ifndef FUSIONKIT_FUSION_CORE_HPP
#define FUSIONKIT_FUSION_CORE_HPP

#include "fusionkit/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace fusionkit {

/// Per-layer hidden states of one frozen upstream encoder plus the learnable
/// logits that blend them. Every layer is a frames x dim matrix.
struct LayerStack {
  std::vector<Matrix> embeddings;
  Vector layer_logits;

  Eigen::Index layers() const { return static_cast<Eigen::Index>(embeddings.size()); }
  Eigen::Index frames() const { return embeddings.empty() ? 0 : embeddings.front().rows(); }
  Eigen::Index dim() const { return embeddings.empty() ? 0 : embeddings.front().cols(); }
  void validate() const;
};

/// Learnable affine projection applied per frame: y = x * weight + bias.
struct AffineMap {
  Matrix weight;  // d_in x d_out
  Vector bias;    // d_out

  static AffineMap init(Eigen::Index d_in, Eigen::Index d_out, Rng& rng);
  void validate() const;
};

/// Column-by-column correlation matrix of two normalized feature streams.
/// Entries are population Pearson correlations, so they lie in [-1, 1] up to
/// the variance-floor epsilon.
struct CorrelationMatrix {
  Matrix values;
};

enum class RefineMode {
  maximum,  // epsilon is a ceiling: penalize |C_ij| above it
  minimum,  // epsilon is a floor: penalize |C_ij| below it
};

struct RefineConfig {
  double epsilon = 0.6;
  double lambda = 0.1;
  RefineMode mode = RefineMode::maximum;
};

/// Which scalar loss produced a gradient contribution.
enum LossSource : unsigned {
  loss_task = 1u,
  loss_refine = 2u,
};

/// Named per-parameter gradient accumulator. Shapes mirror the parameters
/// exactly (vectors are n x 1) and every entry records which losses
/// contributed, so gradient isolation is testable bitwise.
class GradientBundle {
 public:
  struct Entry {
    Matrix value;
    unsigned sources = 0;
  };

  /// Registers a zero gradient of the given shape if absent.
  void ensure(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  /// Adds grad into the named entry, creating it if needed.
  void accumulate(const std::string& name, const Matrix& grad, unsigned source);
  bool contains(const std::string& name) const;
  const Matrix& value(const std::string& name) const;
  unsigned sources(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  /// Elementwise sum with another bundle (shapes must agree on shared names).
  void merge(const GradientBundle& other);

 private:
  std::map<std::string, Entry> entries_;
};

/// Softmax-weighted blend of the stack's layers.
Matrix weighted_sum_layers(const LayerStack& stack);
/// Gradient of a scalar loss with respect to the stack's layer logits, given
/// the upstream gradient on the blended output.
Vector weighted_sum_backward(const LayerStack& stack, const Matrix& upstream);

/// Keeps rows floor(t * t_in / t_out) for t in [0, t_out). Requires
/// t_out <= t_in; the selected rows are strictly increasing.
Matrix downsample_time(const Matrix& x, Eigen::Index t_out);
/// Scatters the upstream gradient back onto the surviving input rows.
Matrix downsample_backward(const Matrix& upstream, Eigen::Index t_in);

struct AffineGrads {
  Matrix weight;
  Vector bias;
  Matrix input;
};
Matrix affine_apply(const Matrix& x, const AffineMap& map);
AffineGrads affine_backward(const Matrix& x, const AffineMap& map, const Matrix& upstream);

/// Affine projection followed by deterministic time downsampling.
Matrix norm_transform(const Matrix& x, const AffineMap& map, Eigen::Index t_out);

/// Per-column mean/variance normalization along time (population variance,
/// 1e-8 floor under the square root). Constant columns map to zeros.
Matrix mvn(const Matrix& x);
Matrix mvn_backward(const Matrix& x, const Matrix& upstream);

/// C = mvn(x)^T * mvn(y) / T. Requires equal shapes and T >= 2.
CorrelationMatrix cross_correlation(const Matrix& x, const Matrix& y);

/// Threshold penalty on correlation entries: in maximum mode the loss is
/// sum of C_ij^2 over |C_ij| > epsilon; in minimum mode it is
/// sum of (epsilon - |C_ij|)^2 over |C_ij| < epsilon.
double refine_loss(const CorrelationMatrix& c, const RefineConfig& cfg);
/// dL/dC for refine_loss (without the lambda factor).
Matrix refine_loss_grad(const CorrelationMatrix& c, const RefineConfig& cfg);

/// Fraction of correlation entries with |C_ij| > epsilon.
double fraction_above(const CorrelationMatrix& c, double epsilon);
Eigen::Index count_above(const CorrelationMatrix& c, double epsilon);

/// task_loss + lambda * refine.
double combined_loss(double task_loss, double refine, double lambda);

/// Analytic gradients of lambda * refine_loss(cross_correlation(
/// norm_transform(x, map_x, T), norm_transform(y, map_y, T))) with respect to
/// the two affine maps only, T = min of the input frame counts. The inputs x
/// and y are treated as constants: the refinement loss trains the projections
/// and deliberately contributes nothing upstream of them.
GradientBundle refine_backward(const Matrix& x, const Matrix& y,
                               const AffineMap& map_x, const AffineMap& map_y,
                               const RefineConfig& cfg);

}  // namespace fusionkit

#endif
