#ifndef FUSIONKIT_DCA_FUSION_HPP
#define FUSIONKIT_DCA_FUSION_HPP

#include "fusionkit/common.hpp"
#include "fusionkit/fusion_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fusionkit {

enum class FusionMethod {
  linear_projection,  // per-stream affine + downsample, then concat
  dca,                // per-layer cross-attention fusion
};

/// The shipped combination is norm_concat; the others are kept for ablation
/// parity and are forward-only.
enum class DcaVariant {
  norm_concat,    // [NORM(X; F_A2B); NORM(Y; F_B2A)]
  concat_after,   // [[NORM(X); F_A2B]; [NORM(Y); F_B2A]]
  sum,            // [NORM(X) + F_A2B; NORM(Y) + F_B2A], needs proj_dim == att_dim
  weighted_norm,  // w1 * NORM(X; F_A2B) + w2 * NORM(Y; F_B2A)
  attended_only,  // [F_A2B; F_B2A]
};

struct FusionConfig {
  Eigen::Index proj_dim = 8;      // width of each projected stream
  Eigen::Index att_dim = 8;       // attention dimension
  bool even_layers_only = true;   // layer subset: even 1-indexed layers, or all
  FusionMethod method = FusionMethod::linear_projection;
  DcaVariant variant = DcaVariant::norm_concat;
};

/// Single-head projections for one direction of one layer pairing.
/// wq applies to the query-side embedding, wk/wv to the key/value side.
struct AttentionParams {
  Matrix wq;  // d_q_in x d_att
  Matrix wk;  // d_kv_in x d_att
  Matrix wv;  // d_kv_in x d_att

  static AttentionParams init(Eigen::Index d_q_in, Eigen::Index d_kv_in,
                              Eigen::Index d_att, Rng& rng);
  void validate() const;
};

/// Assignment between the layer lists of two stacks of depths l1 <= l2.
/// Indices are 1-based layer positions within each list.
struct LayerMapping {
  enum class Direction { a2b, b2a };
  struct Segment {
    int first = 0;
    int last = 0;  // inclusive
  };

  Direction direction = Direction::a2b;
  std::vector<Segment> segments;  // a2b: one deep-side segment per shallow layer
  std::vector<int> targets;       // b2a: one shallow-side layer per deep layer
};

/// Partitions {1..l2} into l1 consecutive segments: layer l of the shallow
/// stack owns deep layers floor((l-1)*l2/l1)+1 .. floor(l*l2/l1).
LayerMapping map_layers_a2b(int l1, int l2);
/// Assigns each deep layer m in {1..l2} the shallow layer
/// floor((m-1)*l1/l2) + 1; total, surjective, monotone.
LayerMapping map_layers_b2a(int l1, int l2);

/// Mean embedding of the deep-stack layers assigned to 1-based layer l.
Matrix segment_average(const LayerStack& stack, const LayerMapping& mapping, int l);

/// 1-based positions of the selected layers (even layers or all).
std::vector<int> select_layers(Eigen::Index layers, bool even_only);

struct CrossAttendResult {
  Matrix out;    // t_q x d_att
  Matrix q, k, v;
  Matrix probs;  // t_q x t_kv, rows sum to 1
};

/// Scaled dot-product attention with queries from q_src and keys/values from
/// kv_src: softmax(Q K^T / sqrt(d_att)) V.
CrossAttendResult cross_attend(const Matrix& q_src, const Matrix& kv_src,
                               const AttentionParams& params);

struct AttentionGrads {
  Matrix wq, wk, wv;
};
AttentionGrads cross_attend_backward(const Matrix& q_src, const Matrix& kv_src,
                                     const AttentionParams& params,
                                     const CrossAttendResult& cache,
                                     const Matrix& upstream);

/// All learnable state of the cross-attention fusion head.
struct DcaParams {
  std::vector<AttentionParams> a2b;  // one per selected layer of stack A
  std::vector<AttentionParams> b2a;  // one per selected layer of stack B
  Vector att_logits_a2b;             // blend of per-layer attended features
  Vector att_logits_b2a;
  AffineMap norm_a;                  // projection of [X; F_A2B] (or X, by variant)
  AffineMap norm_b;
  Vector variant_weights;            // weighted_norm variant only, size 2

  static DcaParams init(Eigen::Index layers_a, Eigen::Index layers_b,
                        Eigen::Index dim_a, Eigen::Index dim_b,
                        const FusionConfig& cfg, std::uint64_t seed);
};

/// Intermediate state of dca_forward kept for the backward pass.
struct DcaCache {
  Matrix x, y;                        // blended per-stack features
  std::vector<Matrix> kv_a2b;         // mapped key/value embedding per A-side module
  std::vector<Matrix> kv_b2a;
  std::vector<CrossAttendResult> att_a2b, att_b2a;
  Vector att_weights_a2b, att_weights_b2a;
  Matrix f_a2b, f_b2a;                // blended attended features
  Matrix concat_a, concat_b;          // projection inputs
  Matrix out;
  std::vector<int> sel_a, sel_b;      // 1-based selected layer positions
};

/// Full fusion forward for the norm_concat combination. Output is
/// min(T_a, T_b) x 2 * proj_dim.
Matrix dca_forward(const LayerStack& a, const LayerStack& b, const DcaParams& params,
                   const FusionConfig& cfg, DcaCache* cache = nullptr);

/// Forward pass of one of the rejected combinations (ablation parity only).
Matrix variant_forward(DcaVariant variant, const LayerStack& a, const LayerStack& b,
                       const DcaParams& params, const FusionConfig& cfg);

/// Gradients of a scalar loss with respect to every DcaParams tensor and both
/// stacks' layer logits, given the upstream gradient on dca_forward's output.
GradientBundle dca_backward(const LayerStack& a, const LayerStack& b,
                            const DcaParams& params, const FusionConfig& cfg,
                            const DcaCache& cache, const Matrix& upstream);

/// Relative contribution of consecutive input-row blocks of an affine map,
/// as Frobenius-norm percentages summing to 100.
Vector weight_contribution(const AffineMap& map, const std::vector<Eigen::Index>& block_widths);
/// "53.4+46.6"-style rendering with one decimal per block.
std::string format_contribution(const Vector& percentages);

}  // namespace fusionkit

#endif
