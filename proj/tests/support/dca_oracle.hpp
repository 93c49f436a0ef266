#ifndef FUSIONKIT_TESTS_DCA_ORACLE_HPP
#define FUSIONKIT_TESTS_DCA_ORACLE_HPP

// Straight-line scalar reference for the cross-attention fusion forward pass.
// Everything here is plain loops over std::vector<double>, deliberately
// independent of the Eigen-based production path so the two can be compared.

#include "fusionkit/dca_fusion.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace fusionkit_oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const fusionkit::Matrix& m) {
  Grid g(static_cast<std::size_t>(m.rows()),
         std::vector<double>(static_cast<std::size_t>(m.cols()), 0.0));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
  }
  return g;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double peak = z[0];
  for (double v : z) {
    if (v > peak) peak = v;
  }
  std::vector<double> w(z.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    w[i] = std::exp(z[i] - peak);
    sum += w[i];
  }
  for (double& v : w) {
    v /= sum;
  }
  return w;
}

inline Grid matmul(const Grid& a, const Grid& b) {
  const std::size_t rows = a.size();
  const std::size_t inner = b.size();
  const std::size_t cols = b[0].size();
  Grid out(rows, std::vector<double>(cols, 0.0));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      for (std::size_t j = 0; j < cols; ++j) {
        out[i][j] += a[i][k] * b[k][j];
      }
    }
  }
  return out;
}

inline std::vector<int> selected(int layers, bool even_only) {
  std::vector<int> sel;
  for (int l = 1; l <= layers; ++l) {
    if (!even_only || l % 2 == 0) {
      sel.push_back(l);
    }
  }
  return sel;
}

inline Grid blended(const fusionkit::LayerStack& stack) {
  std::vector<double> logits(static_cast<std::size_t>(stack.layer_logits.size()), 0.0);
  for (Eigen::Index l = 0; l < stack.layer_logits.size(); ++l) {
    logits[static_cast<std::size_t>(l)] = stack.layer_logits(l);
  }
  const std::vector<double> w = softmax(logits);
  Grid out(static_cast<std::size_t>(stack.frames()),
           std::vector<double>(static_cast<std::size_t>(stack.dim()), 0.0));
  for (std::size_t l = 0; l < stack.embeddings.size(); ++l) {
    const Grid e = to_grid(stack.embeddings[l]);
    for (std::size_t t = 0; t < out.size(); ++t) {
      for (std::size_t d = 0; d < out[t].size(); ++d) {
        out[t][d] += w[l] * e[t][d];
      }
    }
  }
  return out;
}

// Key/value source for 0-based query-subset index qi: a segment average when
// the query subset is no deeper than the key/value subset, otherwise the one
// assigned layer.
inline Grid kv_for_query(const fusionkit::LayerStack& kv_stack, const std::vector<int>& sel_q,
                         const std::vector<int>& sel_kv, std::size_t qi) {
  const int lq = static_cast<int>(sel_q.size());
  const int lkv = static_cast<int>(sel_kv.size());
  const std::size_t t = static_cast<std::size_t>(kv_stack.frames());
  const std::size_t d = static_cast<std::size_t>(kv_stack.dim());
  Grid out(t, std::vector<double>(d, 0.0));
  if (lq <= lkv) {
    const int l = static_cast<int>(qi) + 1;
    const int first = (l - 1) * lkv / lq + 1;
    const int last = l * lkv / lq;
    for (int p = first; p <= last; ++p) {
      const Grid e = to_grid(
          kv_stack.embeddings[static_cast<std::size_t>(sel_kv[static_cast<std::size_t>(p - 1)] - 1)]);
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          out[i][j] += e[i][j];
        }
      }
    }
    const double count = static_cast<double>(last - first + 1);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out[i][j] /= count;
      }
    }
    return out;
  }
  const int target = static_cast<int>(qi) * lkv / lq + 1;
  return to_grid(
      kv_stack.embeddings[static_cast<std::size_t>(sel_kv[static_cast<std::size_t>(target - 1)] - 1)]);
}

inline Grid attend(const Grid& q_src, const Grid& kv, const fusionkit::AttentionParams& p) {
  const Grid q = matmul(q_src, to_grid(p.wq));
  const Grid k = matmul(kv, to_grid(p.wk));
  const Grid v = matmul(kv, to_grid(p.wv));
  const std::size_t d_att = q[0].size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_att));
  Grid out(q.size(), std::vector<double>(d_att, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> scores(k.size(), 0.0);
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d_att; ++c) {
        dot += q[i][c] * k[j][c];
      }
      scores[j] = dot * scale;
    }
    const std::vector<double> probs = softmax(scores);
    for (std::size_t j = 0; j < v.size(); ++j) {
      for (std::size_t c = 0; c < d_att; ++c) {
        out[i][c] += probs[j] * v[j][c];
      }
    }
  }
  return out;
}

inline Grid attended_blend(const fusionkit::LayerStack& q_stack,
                           const fusionkit::LayerStack& kv_stack,
                           const std::vector<int>& sel_q, const std::vector<int>& sel_kv,
                           const std::vector<fusionkit::AttentionParams>& modules,
                           const fusionkit::Vector& att_logits) {
  std::vector<double> logits(static_cast<std::size_t>(att_logits.size()), 0.0);
  for (Eigen::Index i = 0; i < att_logits.size(); ++i) {
    logits[static_cast<std::size_t>(i)] = att_logits(i);
  }
  const std::vector<double> w = softmax(logits);
  const std::size_t t = static_cast<std::size_t>(q_stack.frames());
  const std::size_t d_att = static_cast<std::size_t>(modules.front().wq.cols());
  Grid out(t, std::vector<double>(d_att, 0.0));
  for (std::size_t i = 0; i < sel_q.size(); ++i) {
    const Grid q_src =
        to_grid(q_stack.embeddings[static_cast<std::size_t>(sel_q[i] - 1)]);
    const Grid kv = kv_for_query(kv_stack, sel_q, sel_kv, i);
    const Grid att = attend(q_src, kv, modules[i]);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < d_att; ++c) {
        out[r][c] += w[i] * att[r][c];
      }
    }
  }
  return out;
}

// Affine projection of [direct | attended], then row selection t * t_in / t_out.
inline Grid project_and_downsample(const Grid& direct, const Grid& attended,
                                   const fusionkit::AffineMap& map, std::size_t t_out) {
  const std::size_t t_in = direct.size();
  const std::size_t d1 = direct[0].size();
  const std::size_t d2 = attended[0].size();
  const Grid w = to_grid(map.weight);
  const std::size_t d_out = w[0].size();
  Grid full(t_in, std::vector<double>(d_out, 0.0));
  for (std::size_t t = 0; t < t_in; ++t) {
    for (std::size_t o = 0; o < d_out; ++o) {
      double acc = map.bias(static_cast<Eigen::Index>(o));
      for (std::size_t i = 0; i < d1; ++i) {
        acc += direct[t][i] * w[i][o];
      }
      for (std::size_t i = 0; i < d2; ++i) {
        acc += attended[t][i] * w[d1 + i][o];
      }
      full[t][o] = acc;
    }
  }
  Grid out(t_out, std::vector<double>(d_out, 0.0));
  for (std::size_t t = 0; t < t_out; ++t) {
    out[t] = full[t * t_in / t_out];
  }
  return out;
}

inline Grid dca_forward(const fusionkit::LayerStack& a, const fusionkit::LayerStack& b,
                        const fusionkit::DcaParams& params, const fusionkit::FusionConfig& cfg) {
  const std::vector<int> sel_a = selected(static_cast<int>(a.layers()), cfg.even_layers_only);
  const std::vector<int> sel_b = selected(static_cast<int>(b.layers()), cfg.even_layers_only);
  const Grid x = blended(a);
  const Grid y = blended(b);
  const Grid f_a2b = attended_blend(a, b, sel_a, sel_b, params.a2b, params.att_logits_a2b);
  const Grid f_b2a = attended_blend(b, a, sel_b, sel_a, params.b2a, params.att_logits_b2a);
  const std::size_t t = std::min(x.size(), y.size());
  const Grid left = project_and_downsample(x, f_a2b, params.norm_a, t);
  const Grid right = project_and_downsample(y, f_b2a, params.norm_b, t);
  Grid out(t, std::vector<double>(left[0].size() + right[0].size(), 0.0));
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < left[r].size(); ++c) {
      out[r][c] = left[r][c];
    }
    for (std::size_t c = 0; c < right[r].size(); ++c) {
      out[r][left[r].size() + c] = right[r][c];
    }
  }
  return out;
}

}  // namespace fusionkit_oracle

#endif
