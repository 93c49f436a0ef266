#include "fusionkit/dca_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fusionkit {

namespace {

// Mean of the stack layers at the given 1-based positions.
Matrix average_positions(const LayerStack& stack, const std::vector<int>& positions) {
  Matrix sum = Matrix::Zero(stack.frames(), stack.dim());
  for (int p : positions) {
    sum += stack.embeddings[static_cast<std::size_t>(p - 1)];
  }
  return sum / static_cast<double>(positions.size());
}

// Key/value embedding assigned to 0-based query-subset index qi. When the
// query subset is no deeper, it owns a segment average of the key/value
// subset; otherwise it borrows the single assigned layer.
Matrix mapped_kv_embedding(const LayerStack& kv_stack, const std::vector<int>& sel_q,
                           const std::vector<int>& sel_kv, std::size_t qi) {
  const int lq = static_cast<int>(sel_q.size());
  const int lkv = static_cast<int>(sel_kv.size());
  if (lq <= lkv) {
    const LayerMapping m = map_layers_a2b(lq, lkv);
    const LayerMapping::Segment seg = m.segments[qi];
    std::vector<int> positions;
    for (int p = seg.first; p <= seg.last; ++p) {
      positions.push_back(sel_kv[static_cast<std::size_t>(p - 1)]);
    }
    return average_positions(kv_stack, positions);
  }
  const LayerMapping m = map_layers_b2a(lkv, lq);
  const int target = m.targets[qi];
  return kv_stack.embeddings[static_cast<std::size_t>(sel_kv[static_cast<std::size_t>(target - 1)] - 1)];
}

struct DirectionCache {
  std::vector<Matrix> kv;
  std::vector<CrossAttendResult> att;
  Vector weights;
  Matrix blended;  // t_q x d_att
};

// Runs every attention module of one direction and blends the outputs.
DirectionCache attend_direction(const LayerStack& q_stack, const LayerStack& kv_stack,
                                const std::vector<int>& sel_q, const std::vector<int>& sel_kv,
                                const std::vector<AttentionParams>& modules,
                                const Vector& att_logits) {
  if (modules.size() != sel_q.size()) {
    throw ShapeError("dca: attention module count does not match selected layers");
  }
  if (att_logits.size() != static_cast<Eigen::Index>(sel_q.size())) {
    throw ShapeError("dca: attended-feature logit count does not match selected layers");
  }
  DirectionCache cache;
  cache.weights = softmax_vec(att_logits);
  cache.blended = Matrix::Zero(q_stack.frames(), modules.front().wq.cols());
  for (std::size_t i = 0; i < sel_q.size(); ++i) {
    cache.kv.push_back(mapped_kv_embedding(kv_stack, sel_q, sel_kv, i));
    const Matrix& q_src = q_stack.embeddings[static_cast<std::size_t>(sel_q[i] - 1)];
    cache.att.push_back(cross_attend(q_src, cache.kv.back(), modules[i]));
    cache.blended += cache.weights(static_cast<Eigen::Index>(i)) * cache.att.back().out;
  }
  return cache;
}

void backward_direction(const LayerStack& q_stack, const std::vector<int>& sel_q,
                        const std::vector<AttentionParams>& modules,
                        const std::vector<Matrix>& kv, const std::vector<CrossAttendResult>& att,
                        const Vector& weights, const Matrix& grad_blended,
                        const std::string& prefix, const std::string& logits_name,
                        GradientBundle& bundle) {
  Vector grad_w(weights.size());
  for (std::size_t i = 0; i < modules.size(); ++i) {
    grad_w(static_cast<Eigen::Index>(i)) = grad_blended.cwiseProduct(att[i].out).sum();
    const Matrix grad_out = weights(static_cast<Eigen::Index>(i)) * grad_blended;
    const Matrix& q_src = q_stack.embeddings[static_cast<std::size_t>(sel_q[i] - 1)];
    const AttentionGrads g = cross_attend_backward(q_src, kv[i], modules[i], att[i], grad_out);
    const std::string base = prefix + "[" + std::to_string(i) + "]";
    bundle.accumulate(base + ".wq", g.wq, loss_task);
    bundle.accumulate(base + ".wk", g.wk, loss_task);
    bundle.accumulate(base + ".wv", g.wv, loss_task);
  }
  bundle.accumulate(logits_name, softmax_vec_backward(weights, grad_w), loss_task);
}

void check_dca_params(const DcaParams& params, const std::vector<int>& sel_a,
                      const std::vector<int>& sel_b) {
  if (params.a2b.size() != sel_a.size() || params.b2a.size() != sel_b.size()) {
    throw ShapeError("dca: attention parameter lists do not match selected layers");
  }
  for (const AttentionParams& p : params.a2b) p.validate();
  for (const AttentionParams& p : params.b2a) p.validate();
  params.norm_a.validate();
  params.norm_b.validate();
}

}  // namespace

AttentionParams AttentionParams::init(Eigen::Index d_q_in, Eigen::Index d_kv_in,
                                      Eigen::Index d_att, Rng& rng) {
  AttentionParams p;
  p.wq = AffineMap::init(d_q_in, d_att, rng).weight;
  p.wk = AffineMap::init(d_kv_in, d_att, rng).weight;
  p.wv = AffineMap::init(d_kv_in, d_att, rng).weight;
  return p;
}

void AttentionParams::validate() const {
  if (wq.rows() < 1 || wq.cols() < 1) {
    throw ShapeError("attention params: empty wq");
  }
  if (wk.rows() != wv.rows() || wk.cols() != wq.cols() || wv.cols() != wq.cols()) {
    throw ShapeError("attention params: inconsistent projection shapes");
  }
  require_finite(wq, "wq");
  require_finite(wk, "wk");
  require_finite(wv, "wv");
}

LayerMapping map_layers_a2b(int l1, int l2) {
  if (l1 < 1 || l2 < l1) {
    throw std::invalid_argument("map_layers_a2b: requires 1 <= l1 <= l2");
  }
  LayerMapping m;
  m.direction = LayerMapping::Direction::a2b;
  for (int l = 1; l <= l1; ++l) {
    LayerMapping::Segment seg;
    seg.first = static_cast<int>((static_cast<long>(l) - 1) * l2 / l1) + 1;
    seg.last = static_cast<int>(static_cast<long>(l) * l2 / l1);
    m.segments.push_back(seg);
  }
  return m;
}

LayerMapping map_layers_b2a(int l1, int l2) {
  if (l1 < 1 || l2 < l1) {
    throw std::invalid_argument("map_layers_b2a: requires 1 <= l1 <= l2");
  }
  LayerMapping m;
  m.direction = LayerMapping::Direction::b2a;
  for (int deep = 1; deep <= l2; ++deep) {
    m.targets.push_back(static_cast<int>((static_cast<long>(deep) - 1) * l1 / l2) + 1);
  }
  return m;
}

Matrix segment_average(const LayerStack& stack, const LayerMapping& mapping, int l) {
  if (mapping.direction != LayerMapping::Direction::a2b) {
    throw std::invalid_argument("segment_average: mapping must be a2b");
  }
  if (l < 1 || l > static_cast<int>(mapping.segments.size())) {
    throw std::invalid_argument("segment_average: layer index out of range");
  }
  stack.validate();
  const LayerMapping::Segment seg = mapping.segments[static_cast<std::size_t>(l - 1)];
  if (seg.last > stack.layers()) {
    throw ShapeError("segment_average: segment exceeds stack depth");
  }
  std::vector<int> positions;
  for (int p = seg.first; p <= seg.last; ++p) {
    positions.push_back(p);
  }
  return average_positions(stack, positions);
}

std::vector<int> select_layers(Eigen::Index layers, bool even_only) {
  if (layers < 1) {
    throw std::invalid_argument("select_layers: stack has no layers");
  }
  std::vector<int> sel;
  for (int l = 1; l <= static_cast<int>(layers); ++l) {
    if (!even_only || l % 2 == 0) {
      sel.push_back(l);
    }
  }
  if (sel.empty()) {
    throw std::invalid_argument("select_layers: even-layer subset is empty");
  }
  return sel;
}

CrossAttendResult cross_attend(const Matrix& q_src, const Matrix& kv_src,
                               const AttentionParams& params) {
  params.validate();
  if (q_src.rows() < 1 || kv_src.rows() < 1) {
    throw ShapeError("cross_attend: empty inputs");
  }
  if (q_src.cols() != params.wq.rows() || kv_src.cols() != params.wk.rows()) {
    throw ShapeError("cross_attend: input widths do not match projections");
  }
  require_finite(q_src, "cross_attend query source");
  require_finite(kv_src, "cross_attend key/value source");

  CrossAttendResult r;
  r.q = q_src * params.wq;
  r.k = kv_src * params.wk;
  r.v = kv_src * params.wv;
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.wq.cols()));
  r.probs = softmax_rows(r.q * r.k.transpose() * scale);
  r.out = r.probs * r.v;
  return r;
}

AttentionGrads cross_attend_backward(const Matrix& q_src, const Matrix& kv_src,
                                     const AttentionParams& params,
                                     const CrossAttendResult& cache,
                                     const Matrix& upstream) {
  if (upstream.rows() != cache.out.rows() || upstream.cols() != cache.out.cols()) {
    throw ShapeError("cross_attend_backward: upstream shape mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.wq.cols()));
  const Matrix grad_probs = upstream * cache.v.transpose();
  const Matrix grad_v = cache.probs.transpose() * upstream;
  const Matrix grad_scores = softmax_rows_backward(cache.probs, grad_probs);
  const Matrix grad_q = grad_scores * cache.k * scale;
  const Matrix grad_k = grad_scores.transpose() * cache.q * scale;

  AttentionGrads g;
  g.wq = q_src.transpose() * grad_q;
  g.wk = kv_src.transpose() * grad_k;
  g.wv = kv_src.transpose() * grad_v;
  return g;
}

DcaParams DcaParams::init(Eigen::Index layers_a, Eigen::Index layers_b,
                          Eigen::Index dim_a, Eigen::Index dim_b,
                          const FusionConfig& cfg, std::uint64_t seed) {
  const std::vector<int> sel_a = select_layers(layers_a, cfg.even_layers_only);
  const std::vector<int> sel_b = select_layers(layers_b, cfg.even_layers_only);

  DcaParams p;
  for (std::size_t i = 0; i < sel_a.size(); ++i) {
    Rng rng(substream(seed, "dca.a2b[" + std::to_string(i) + "]"));
    p.a2b.push_back(AttentionParams::init(dim_a, dim_b, cfg.att_dim, rng));
  }
  for (std::size_t i = 0; i < sel_b.size(); ++i) {
    Rng rng(substream(seed, "dca.b2a[" + std::to_string(i) + "]"));
    p.b2a.push_back(AttentionParams::init(dim_b, dim_a, cfg.att_dim, rng));
  }
  p.att_logits_a2b = Vector::Zero(static_cast<Eigen::Index>(sel_a.size()));
  p.att_logits_b2a = Vector::Zero(static_cast<Eigen::Index>(sel_b.size()));

  const bool plain_norm =
      cfg.variant == DcaVariant::concat_after || cfg.variant == DcaVariant::sum;
  const Eigen::Index in_a = plain_norm ? dim_a : dim_a + cfg.att_dim;
  const Eigen::Index in_b = plain_norm ? dim_b : dim_b + cfg.att_dim;
  {
    Rng rng(substream(seed, "dca.norm_a"));
    p.norm_a = AffineMap::init(in_a, cfg.proj_dim, rng);
  }
  {
    Rng rng(substream(seed, "dca.norm_b"));
    p.norm_b = AffineMap::init(in_b, cfg.proj_dim, rng);
  }
  p.variant_weights = Vector::Constant(2, 0.5);
  return p;
}

Matrix dca_forward(const LayerStack& a, const LayerStack& b, const DcaParams& params,
                   const FusionConfig& cfg, DcaCache* cache) {
  a.validate();
  b.validate();
  DcaCache local;
  DcaCache& c = cache ? *cache : local;
  c.sel_a = select_layers(a.layers(), cfg.even_layers_only);
  c.sel_b = select_layers(b.layers(), cfg.even_layers_only);
  check_dca_params(params, c.sel_a, c.sel_b);

  c.x = weighted_sum_layers(a);
  c.y = weighted_sum_layers(b);

  DirectionCache da = attend_direction(a, b, c.sel_a, c.sel_b, params.a2b, params.att_logits_a2b);
  DirectionCache db = attend_direction(b, a, c.sel_b, c.sel_a, params.b2a, params.att_logits_b2a);
  c.kv_a2b = std::move(da.kv);
  c.att_a2b = std::move(da.att);
  c.att_weights_a2b = da.weights;
  c.f_a2b = da.blended;
  c.kv_b2a = std::move(db.kv);
  c.att_b2a = std::move(db.att);
  c.att_weights_b2a = db.weights;
  c.f_b2a = db.blended;

  const Eigen::Index t = std::min(a.frames(), b.frames());
  c.concat_a.resize(a.frames(), c.x.cols() + c.f_a2b.cols());
  c.concat_a << c.x, c.f_a2b;
  c.concat_b.resize(b.frames(), c.y.cols() + c.f_b2a.cols());
  c.concat_b << c.y, c.f_b2a;

  const Matrix out_a = norm_transform(c.concat_a, params.norm_a, t);
  const Matrix out_b = norm_transform(c.concat_b, params.norm_b, t);
  c.out.resize(t, out_a.cols() + out_b.cols());
  c.out << out_a, out_b;
  return c.out;
}

Matrix variant_forward(DcaVariant variant, const LayerStack& a, const LayerStack& b,
                       const DcaParams& params, const FusionConfig& cfg) {
  if (variant == DcaVariant::norm_concat) {
    return dca_forward(a, b, params, cfg);
  }
  a.validate();
  b.validate();
  const std::vector<int> sel_a = select_layers(a.layers(), cfg.even_layers_only);
  const std::vector<int> sel_b = select_layers(b.layers(), cfg.even_layers_only);
  if (params.a2b.size() != sel_a.size() || params.b2a.size() != sel_b.size()) {
    throw ShapeError("variant_forward: attention parameter lists do not match selected layers");
  }

  const Matrix x = weighted_sum_layers(a);
  const Matrix y = weighted_sum_layers(b);
  const DirectionCache da =
      attend_direction(a, b, sel_a, sel_b, params.a2b, params.att_logits_a2b);
  const DirectionCache db =
      attend_direction(b, a, sel_b, sel_a, params.b2a, params.att_logits_b2a);
  const Eigen::Index t = std::min(a.frames(), b.frames());

  switch (variant) {
    case DcaVariant::concat_after: {
      const Matrix na = norm_transform(x, params.norm_a, t);
      const Matrix nb = norm_transform(y, params.norm_b, t);
      const Matrix fa = downsample_time(da.blended, t);
      const Matrix fb = downsample_time(db.blended, t);
      Matrix out(t, na.cols() + fa.cols() + nb.cols() + fb.cols());
      out << na, fa, nb, fb;
      return out;
    }
    case DcaVariant::sum: {
      if (cfg.proj_dim != cfg.att_dim) {
        throw ShapeError("variant sum: requires proj_dim == att_dim");
      }
      const Matrix sa = norm_transform(x, params.norm_a, t) + downsample_time(da.blended, t);
      const Matrix sb = norm_transform(y, params.norm_b, t) + downsample_time(db.blended, t);
      Matrix out(t, sa.cols() + sb.cols());
      out << sa, sb;
      return out;
    }
    case DcaVariant::weighted_norm: {
      if (params.variant_weights.size() != 2) {
        throw ShapeError("variant weighted_norm: needs exactly 2 stream weights");
      }
      Matrix concat_a(a.frames(), x.cols() + da.blended.cols());
      concat_a << x, da.blended;
      Matrix concat_b(b.frames(), y.cols() + db.blended.cols());
      concat_b << y, db.blended;
      return params.variant_weights(0) * norm_transform(concat_a, params.norm_a, t) +
             params.variant_weights(1) * norm_transform(concat_b, params.norm_b, t);
    }
    case DcaVariant::attended_only: {
      const Matrix fa = downsample_time(da.blended, t);
      const Matrix fb = downsample_time(db.blended, t);
      Matrix out(t, fa.cols() + fb.cols());
      out << fa, fb;
      return out;
    }
    default:
      throw std::invalid_argument("variant_forward: unknown variant");
  }
}

GradientBundle dca_backward(const LayerStack& a, const LayerStack& b,
                            const DcaParams& params, const FusionConfig& cfg,
                            const DcaCache& cache, const Matrix& upstream) {
  if (cfg.variant != DcaVariant::norm_concat) {
    throw std::invalid_argument("dca_backward: only the norm_concat combination is trainable");
  }
  if (upstream.rows() != cache.out.rows() || upstream.cols() != cache.out.cols()) {
    throw ShapeError("dca_backward: upstream shape mismatch");
  }
  require_finite(upstream, "dca_backward upstream");

  const Eigen::Index d = cfg.proj_dim;
  GradientBundle bundle;

  const Matrix grad_affine_a = downsample_backward(upstream.leftCols(d), a.frames());
  const AffineGrads ga = affine_backward(cache.concat_a, params.norm_a, grad_affine_a);
  bundle.accumulate("dca.norm_a.weight", ga.weight, loss_task);
  bundle.accumulate("dca.norm_a.bias", ga.bias, loss_task);

  const Matrix grad_affine_b = downsample_backward(upstream.rightCols(d), b.frames());
  const AffineGrads gb = affine_backward(cache.concat_b, params.norm_b, grad_affine_b);
  bundle.accumulate("dca.norm_b.weight", gb.weight, loss_task);
  bundle.accumulate("dca.norm_b.bias", gb.bias, loss_task);

  const Eigen::Index d1 = cache.x.cols();
  const Eigen::Index d2 = cache.y.cols();
  const Matrix grad_x = ga.input.leftCols(d1);
  const Matrix grad_f_a2b = ga.input.rightCols(ga.input.cols() - d1);
  const Matrix grad_y = gb.input.leftCols(d2);
  const Matrix grad_f_b2a = gb.input.rightCols(gb.input.cols() - d2);

  backward_direction(a, cache.sel_a, params.a2b, cache.kv_a2b, cache.att_a2b,
                     cache.att_weights_a2b, grad_f_a2b, "dca.a2b", "dca.att_logits_a2b",
                     bundle);
  backward_direction(b, cache.sel_b, params.b2a, cache.kv_b2a, cache.att_b2a,
                     cache.att_weights_b2a, grad_f_b2a, "dca.b2a", "dca.att_logits_b2a",
                     bundle);

  bundle.accumulate("layer_logits_a", weighted_sum_backward(a, grad_x), loss_task);
  bundle.accumulate("layer_logits_b", weighted_sum_backward(b, grad_y), loss_task);
  return bundle;
}

Vector weight_contribution(const AffineMap& map, const std::vector<Eigen::Index>& block_widths) {
  map.validate();
  if (block_widths.empty()) {
    throw std::invalid_argument("weight_contribution: no blocks given");
  }
  Eigen::Index total = 0;
  for (Eigen::Index w : block_widths) {
    if (w < 1) {
      throw std::invalid_argument("weight_contribution: block widths must be positive");
    }
    total += w;
  }
  if (total != map.weight.rows()) {
    throw ShapeError("weight_contribution: block widths do not cover the weight rows");
  }
  Vector norms(static_cast<Eigen::Index>(block_widths.size()));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < block_widths.size(); ++i) {
    norms(static_cast<Eigen::Index>(i)) = map.weight.middleRows(row, block_widths[i]).norm();
    row += block_widths[i];
  }
  const double sum = norms.sum();
  if (sum <= 0.0) {
    throw NumericalError("weight_contribution: all-zero weight matrix");
  }
  return 100.0 * norms / sum;
}

std::string format_contribution(const Vector& percentages) {
  std::string out;
  char buf[32];
  for (Eigen::Index i = 0; i < percentages.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.1f", percentages(i));
    if (i > 0) {
      out += "+";
    }
    out += buf;
  }
  return out;
}

}  // namespace fusionkit
