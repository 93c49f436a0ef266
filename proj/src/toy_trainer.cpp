#include "fusionkit/toy_trainer.hpp"

#include <algorithm>
#include <cmath>

namespace fusionkit {

namespace {

double entropy(const Vector& weights) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) > 0.0) {
      h -= weights(i) * std::log(weights(i));
    }
  }
  return h;
}

struct LinearCache {
  Matrix x, y;
  Matrix xt, yt;
  Matrix features;
};

LinearCache linear_forward(const ToyModel& model, const FusionConfig& cfg) {
  LinearCache c;
  c.x = weighted_sum_layers(model.a);
  c.y = weighted_sum_layers(model.b);
  const Eigen::Index t = std::min(c.x.rows(), c.y.rows());
  c.xt = norm_transform(c.x, model.norm_x, t);
  c.yt = norm_transform(c.y, model.norm_y, t);
  c.features.resize(t, c.xt.cols() + c.yt.cols());
  c.features << c.xt, c.yt;
  (void)cfg;
  return c;
}

void check_trainable_route(const FusionConfig& cfg) {
  if (cfg.method == FusionMethod::dca && cfg.variant != DcaVariant::norm_concat) {
    throw std::invalid_argument("toy trainer: only the norm_concat combination is trainable");
  }
}

}  // namespace

SynthData synth_stacks(const SynthSpec& spec) {
  if (spec.layers < 1 || spec.frames < 2 || spec.dim < 1) {
    throw std::invalid_argument("synth_stacks: needs layers >= 1, frames >= 2, dim >= 1");
  }
  if (spec.num_classes < 2) {
    throw std::invalid_argument("synth_stacks: needs at least 2 classes");
  }
  if (!(spec.correlation_knob >= 0.0 && spec.correlation_knob <= 1.0)) {
    throw std::invalid_argument("synth_stacks: correlation_knob must lie in [0, 1]");
  }

  const Eigen::Index latent_dim = std::max<Eigen::Index>(4, spec.num_classes);
  Rng latent_rng(substream(spec.seed, "synth.latent"));
  const Matrix latent = latent_rng.normal_matrix(spec.frames, latent_dim);

  SynthData data;
  data.labels.resize(static_cast<std::size_t>(spec.frames));
  for (Eigen::Index t = 0; t < spec.frames; ++t) {
    Eigen::Index best = 0;
    latent.row(t).head(spec.num_classes).maxCoeff(&best);
    data.labels[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }

  const double shared = spec.correlation_knob;
  const double noise = std::sqrt(1.0 - shared * shared);
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (Eigen::Index l = 0; l < spec.layers; ++l) {
    const std::string tag = std::to_string(l);
    Rng mix_rng(substream(spec.seed, "synth.mix[" + tag + "]"));
    const Matrix mix = mix_rng.normal_matrix(latent_dim, spec.dim) * mix_scale;
    Rng na_rng(substream(spec.seed, "synth.noise_a[" + tag + "]"));
    Rng nb_rng(substream(spec.seed, "synth.noise_b[" + tag + "]"));
    const Matrix base = shared * latent;
    data.a.embeddings.push_back((base + noise * na_rng.normal_matrix(spec.frames, latent_dim)) * mix);
    data.b.embeddings.push_back((base + noise * nb_rng.normal_matrix(spec.frames, latent_dim)) * mix);
  }
  data.a.layer_logits = Vector::Zero(spec.layers);
  data.b.layer_logits = Vector::Zero(spec.layers);
  return data;
}

double surrogate_asr_loss(const Matrix& features, const AffineMap& head,
                          const std::vector<int>& labels) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("surrogate loss: one label per frame required");
  }
  const Matrix logits = affine_apply(features, head);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int label = labels[static_cast<std::size_t>(t)];
    if (label < 0 || label >= logits.cols()) {
      throw std::invalid_argument("surrogate loss: label out of range");
    }
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    loss += lse - logits(t, label);
  }
  return loss / static_cast<double>(logits.rows());
}

SurrogateGrads surrogate_asr_backward(const Matrix& features, const AffineMap& head,
                                      const std::vector<int>& labels) {
  SurrogateGrads out;
  out.loss = surrogate_asr_loss(features, head, labels);
  const Matrix logits = affine_apply(features, head);
  Matrix grad_logits = softmax_rows(logits);
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    grad_logits(t, labels[static_cast<std::size_t>(t)]) -= 1.0;
  }
  grad_logits /= static_cast<double>(logits.rows());
  const AffineGrads g = affine_backward(features, head, grad_logits);
  out.features = g.input;
  out.weight = g.weight;
  out.bias = g.bias;
  return out;
}

ToyModel build_toy_model(const SynthSpec& spec, const FusionConfig& cfg,
                         std::uint64_t param_seed) {
  ToyModel model;
  SynthData data = synth_stacks(spec);
  model.a = std::move(data.a);
  model.b = std::move(data.b);
  model.labels = std::move(data.labels);
  {
    Rng rng(substream(param_seed, "norm_x"));
    model.norm_x = AffineMap::init(spec.dim, cfg.proj_dim, rng);
  }
  {
    Rng rng(substream(param_seed, "norm_y"));
    model.norm_y = AffineMap::init(spec.dim, cfg.proj_dim, rng);
  }
  model.dca = DcaParams::init(spec.layers, spec.layers, spec.dim, spec.dim, cfg, param_seed);
  {
    Rng rng(substream(param_seed, "head"));
    model.head = AffineMap::init(2 * cfg.proj_dim, spec.num_classes, rng);
  }
  return model;
}

ToyForward toy_forward(const ToyModel& model, const FusionConfig& cfg,
                       const RefineConfig& refine) {
  check_trainable_route(cfg);
  ToyForward fw;
  if (cfg.method == FusionMethod::linear_projection) {
    const LinearCache c = linear_forward(model, cfg);
    fw.features = c.features;
    fw.corr = cross_correlation(c.xt, c.yt);
  } else {
    DcaCache cache;
    fw.features = dca_forward(model.a, model.b, model.dca, cfg, &cache);
    fw.corr = cross_correlation(fw.features.leftCols(cfg.proj_dim),
                                fw.features.rightCols(cfg.proj_dim));
  }
  fw.l_asr = surrogate_asr_loss(fw.features, model.head, model.labels);
  fw.l_refine = refine_loss(fw.corr, refine);
  fw.total = combined_loss(fw.l_asr, fw.l_refine, refine.lambda);
  return fw;
}

GradientBundle toy_task_gradients(const ToyModel& model, const FusionConfig& cfg) {
  check_trainable_route(cfg);
  GradientBundle bundle;
  if (cfg.method == FusionMethod::linear_projection) {
    const LinearCache c = linear_forward(model, cfg);
    const SurrogateGrads sg = surrogate_asr_backward(c.features, model.head, model.labels);
    bundle.accumulate("head.weight", sg.weight, loss_task);
    bundle.accumulate("head.bias", sg.bias, loss_task);

    const Eigen::Index d = c.xt.cols();
    const AffineGrads gx = affine_backward(
        c.x, model.norm_x, downsample_backward(sg.features.leftCols(d), c.x.rows()));
    const AffineGrads gy = affine_backward(
        c.y, model.norm_y, downsample_backward(sg.features.rightCols(d), c.y.rows()));
    bundle.accumulate("norm_x.weight", gx.weight, loss_task);
    bundle.accumulate("norm_x.bias", gx.bias, loss_task);
    bundle.accumulate("norm_y.weight", gy.weight, loss_task);
    bundle.accumulate("norm_y.bias", gy.bias, loss_task);
    bundle.accumulate("layer_logits_a", weighted_sum_backward(model.a, gx.input), loss_task);
    bundle.accumulate("layer_logits_b", weighted_sum_backward(model.b, gy.input), loss_task);
    return bundle;
  }

  DcaCache cache;
  const Matrix features = dca_forward(model.a, model.b, model.dca, cfg, &cache);
  const SurrogateGrads sg = surrogate_asr_backward(features, model.head, model.labels);
  bundle.accumulate("head.weight", sg.weight, loss_task);
  bundle.accumulate("head.bias", sg.bias, loss_task);
  bundle.merge(dca_backward(model.a, model.b, model.dca, cfg, cache, sg.features));
  return bundle;
}

GradientBundle toy_refine_gradients(const ToyModel& model, const FusionConfig& cfg,
                                    const RefineConfig& refine) {
  check_trainable_route(cfg);
  GradientBundle bundle;
  if (cfg.method == FusionMethod::linear_projection) {
    const Matrix x = weighted_sum_layers(model.a);
    const Matrix y = weighted_sum_layers(model.b);
    bundle = refine_backward(x, y, model.norm_x, model.norm_y, refine);
  } else {
    DcaCache cache;
    dca_forward(model.a, model.b, model.dca, cfg, &cache);
    const GradientBundle raw =
        refine_backward(cache.concat_a, cache.concat_b, model.dca.norm_a,
                        model.dca.norm_b, refine);
    bundle.accumulate("dca.norm_a.weight", raw.value("norm_x.weight"), loss_refine);
    bundle.accumulate("dca.norm_a.bias", raw.value("norm_x.bias"), loss_refine);
    bundle.accumulate("dca.norm_b.weight", raw.value("norm_y.weight"), loss_refine);
    bundle.accumulate("dca.norm_b.bias", raw.value("norm_y.bias"), loss_refine);
  }
  // The refinement loss stops at the projection inputs: the layer-combination
  // logits receive an exactly-zero contribution, recorded here so isolation
  // is observable.
  bundle.ensure("layer_logits_a", model.a.layer_logits.size(), 1);
  bundle.ensure("layer_logits_b", model.b.layer_logits.size(), 1);
  return bundle;
}

GradientBundle toy_gradients(const ToyModel& model, const FusionConfig& cfg,
                             const RefineConfig& refine) {
  GradientBundle bundle = toy_task_gradients(model, cfg);
  if (refine.lambda > 0.0) {
    bundle.merge(toy_refine_gradients(model, cfg, refine));
  }
  return bundle;
}

std::vector<ParamRef> trainable_params(ToyModel& model, const FusionConfig& cfg) {
  check_trainable_route(cfg);
  std::vector<ParamRef> refs;
  auto add_vec = [&refs](const std::string& name, Vector& v) {
    refs.push_back(ParamRef{name, v.data(), v.size(), 1});
  };
  auto add_mat = [&refs](const std::string& name, Matrix& m) {
    refs.push_back(ParamRef{name, m.data(), m.rows(), m.cols()});
  };

  add_vec("layer_logits_a", model.a.layer_logits);
  add_vec("layer_logits_b", model.b.layer_logits);
  if (cfg.method == FusionMethod::linear_projection) {
    add_mat("norm_x.weight", model.norm_x.weight);
    add_vec("norm_x.bias", model.norm_x.bias);
    add_mat("norm_y.weight", model.norm_y.weight);
    add_vec("norm_y.bias", model.norm_y.bias);
  } else {
    for (std::size_t i = 0; i < model.dca.a2b.size(); ++i) {
      const std::string base = "dca.a2b[" + std::to_string(i) + "]";
      add_mat(base + ".wq", model.dca.a2b[i].wq);
      add_mat(base + ".wk", model.dca.a2b[i].wk);
      add_mat(base + ".wv", model.dca.a2b[i].wv);
    }
    for (std::size_t i = 0; i < model.dca.b2a.size(); ++i) {
      const std::string base = "dca.b2a[" + std::to_string(i) + "]";
      add_mat(base + ".wq", model.dca.b2a[i].wq);
      add_mat(base + ".wk", model.dca.b2a[i].wk);
      add_mat(base + ".wv", model.dca.b2a[i].wv);
    }
    add_vec("dca.att_logits_a2b", model.dca.att_logits_a2b);
    add_vec("dca.att_logits_b2a", model.dca.att_logits_b2a);
    add_mat("dca.norm_a.weight", model.dca.norm_a.weight);
    add_vec("dca.norm_a.bias", model.dca.norm_a.bias);
    add_mat("dca.norm_b.weight", model.dca.norm_b.weight);
    add_vec("dca.norm_b.bias", model.dca.norm_b.bias);
  }
  add_mat("head.weight", model.head.weight);
  add_vec("head.bias", model.head.bias);
  return refs;
}

TrainResult train(const TrainConfig& cfg, const SynthSpec& spec) {
  if (cfg.steps < 0 || cfg.log_every < 1) {
    throw std::invalid_argument("train: steps must be >= 0 and log_every >= 1");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("train: learning_rate must be positive");
  }
  check_trainable_route(cfg.fusion);

  TrainResult result;
  result.model = build_toy_model(spec, cfg.fusion, cfg.seed);
  ToyModel& model = result.model;
  std::vector<ParamRef> params = trainable_params(model, cfg.fusion);

  for (int step = 0; step <= cfg.steps; ++step) {
    ToyForward fw;
    try {
      fw = toy_forward(model, cfg.fusion, cfg.refine);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " +
                           e.what());
    }
    if (step == 0) {
      result.corr_initial = fw.corr.values;
    }
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      TrainLogRow row;
      row.step = step;
      row.l_asr = fw.l_asr;
      row.l_refine = fw.l_refine;
      row.frac_above_eps = fraction_above(fw.corr, cfg.refine.epsilon);
      row.layer_entropy = 0.5 * (entropy(softmax_vec(model.a.layer_logits)) +
                                 entropy(softmax_vec(model.b.layer_logits)));
      result.rows.push_back(row);
    }
    if (step == cfg.steps) {
      result.corr_final = fw.corr.values;
      break;
    }

    const GradientBundle bundle = toy_gradients(model, cfg.fusion, cfg.refine);
    for (const ParamRef& p : params) {
      if (!bundle.contains(p.name)) {
        continue;
      }
      const Matrix& g = bundle.value(p.name);
      if (g.rows() != p.rows || g.cols() != p.cols) {
        throw ShapeError("train: gradient shape mismatch for " + p.name);
      }
      Eigen::Map<Vector>(p.data, p.size()) -=
          cfg.learning_rate * Eigen::Map<const Vector>(g.data(), g.size());
    }
    for (const ParamRef& p : params) {
      if (!Eigen::Map<const Vector>(p.data, p.size()).allFinite()) {
        throw NumericalError("training diverged at step " + std::to_string(step + 1) +
                             ": non-finite parameter " + p.name);
      }
    }
  }
  return result;
}

namespace {

struct MicroInstance {
  ToyModel model;
  FusionConfig linear_cfg;
  FusionConfig dca_cfg;
  RefineConfig refine_max;
  RefineConfig refine_min;
};

// Hand-built micro model with unequal depths, frame counts, and widths so the
// finite-difference audit also covers downsampling and layer mapping.
MicroInstance build_micro_instance(std::uint64_t seed) {
  MicroInstance inst;
  inst.linear_cfg.method = FusionMethod::linear_projection;
  inst.linear_cfg.proj_dim = 4;
  inst.linear_cfg.att_dim = 3;
  inst.linear_cfg.even_layers_only = false;
  inst.dca_cfg = inst.linear_cfg;
  inst.dca_cfg.method = FusionMethod::dca;

  inst.refine_max = RefineConfig{0.25, 0.1, RefineMode::maximum};
  inst.refine_min = RefineConfig{0.45, 0.1, RefineMode::minimum};

  const Eigen::Index la = 3, ta = 6, da = 5;
  const Eigen::Index lb = 4, tb = 5, db = 4;
  const int classes = 3;

  ToyModel& m = inst.model;
  Rng rng(substream(seed, "gradcheck.data"));
  for (Eigen::Index l = 0; l < la; ++l) {
    m.a.embeddings.push_back(rng.normal_matrix(ta, da));
  }
  for (Eigen::Index l = 0; l < lb; ++l) {
    m.b.embeddings.push_back(rng.normal_matrix(tb, db));
  }
  m.a.layer_logits = 0.5 * rng.normal_matrix(la, 1);
  m.b.layer_logits = 0.5 * rng.normal_matrix(lb, 1);
  const Eigen::Index t = std::min(ta, tb);
  for (Eigen::Index i = 0; i < t; ++i) {
    m.labels.push_back(static_cast<int>(rng.uniform() * classes) % classes);
  }
  {
    Rng r(substream(seed, "gradcheck.norm_x"));
    m.norm_x = AffineMap::init(da, inst.linear_cfg.proj_dim, r);
  }
  {
    Rng r(substream(seed, "gradcheck.norm_y"));
    m.norm_y = AffineMap::init(db, inst.linear_cfg.proj_dim, r);
  }
  m.dca = DcaParams::init(la, lb, da, db, inst.dca_cfg, substream(seed, "gradcheck.dca"));
  {
    Rng r(substream(seed, "gradcheck.head"));
    m.head = AffineMap::init(2 * inst.linear_cfg.proj_dim, classes, r);
  }
  return inst;
}

struct GroupTracker {
  std::map<std::string, GradcheckGroup> groups;

  void observe(const std::string& name, double err, bool exact_zero) {
    auto it = groups.find(name);
    if (it == groups.end()) {
      GradcheckGroup g;
      g.name = name;
      g.max_rel_err = err;
      g.exact_zero_check = exact_zero;
      groups[name] = g;
    } else {
      it->second.max_rel_err = std::max(it->second.max_rel_err, err);
    }
  }
};

double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

}  // namespace

GradcheckReport gradcheck(const GradcheckOptions& opts) {
  if (opts.instances < 1 || !(opts.fd_step > 0.0) || !(opts.tolerance > 0.0)) {
    throw std::invalid_argument("gradcheck: invalid options");
  }
  GroupTracker tracker;

  for (int k = 0; k < opts.instances; ++k) {
    MicroInstance inst = build_micro_instance(substream(opts.seed, "gradcheck[" + std::to_string(k) + "]"));
    ToyModel& model = inst.model;

    struct Check {
      std::string prefix;
      FusionConfig cfg;
      RefineConfig refine;
      bool refine_path;  // false: task cross-entropy path
    };
    const std::vector<Check> checks = {
        {"linear/", inst.linear_cfg, inst.refine_max, false},
        {"dca/", inst.dca_cfg, inst.refine_max, false},
        {"frl/", inst.linear_cfg, inst.refine_max, true},
        {"frl_min/", inst.linear_cfg, inst.refine_min, true},
        {"dca_frl/", inst.dca_cfg, inst.refine_max, true},
    };

    for (const Check& check : checks) {
      GradientBundle analytic =
          check.refine_path ? toy_refine_gradients(model, check.cfg, check.refine)
                            : toy_task_gradients(model, check.cfg);
      std::vector<ParamRef> refs = trainable_params(model, check.cfg);

      for (const ParamRef& ref : refs) {
        if (!analytic.contains(ref.name)) {
          continue;
        }
        const std::string group = check.prefix + ref.name;
        Matrix grad = analytic.value(ref.name);
        if (group == opts.corrupt_group && grad.size() > 0) {
          grad(0, 0) += 0.5;
        }

        if (check.refine_path && ref.name.rfind("layer_logits", 0) == 0) {
          // Isolation: the refinement path must contribute exactly zero here.
          tracker.observe(group, grad.cwiseAbs().maxCoeff(), true);
          continue;
        }

        double worst = 0.0;
        Eigen::Map<Vector> flat(ref.data, ref.size());
        const Eigen::Map<const Vector> gflat(grad.data(), grad.size());
        for (Eigen::Index i = 0; i < ref.size(); ++i) {
          const double saved = flat(i);
          flat(i) = saved + opts.fd_step;
          const ToyForward hi = toy_forward(model, check.cfg, check.refine);
          flat(i) = saved - opts.fd_step;
          const ToyForward lo = toy_forward(model, check.cfg, check.refine);
          flat(i) = saved;
          const double hi_v = check.refine_path ? check.refine.lambda * hi.l_refine : hi.l_asr;
          const double lo_v = check.refine_path ? check.refine.lambda * lo.l_refine : lo.l_asr;
          const double fd = (hi_v - lo_v) / (2.0 * opts.fd_step);
          worst = std::max(worst, rel_err(gflat(i), fd));
        }
        tracker.observe(group, worst, false);
      }
    }
  }

  GradcheckReport report;
  report.instances = opts.instances;
  report.all_pass = true;
  for (auto& [name, group] : tracker.groups) {
    group.pass = group.exact_zero_check ? group.max_rel_err == 0.0
                                        : group.max_rel_err < opts.tolerance;
    report.all_pass = report.all_pass && group.pass;
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace fusionkit
