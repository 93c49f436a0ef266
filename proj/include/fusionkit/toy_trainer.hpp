#ifndef FUSIONKIT_TOY_TRAINER_HPP
#define FUSIONKIT_TOY_TRAINER_HPP

#include "fusionkit/common.hpp"
#include "fusionkit/dca_fusion.hpp"
#include "fusionkit/fusion_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fusionkit {

/// Synthetic two-stack generator. Both stacks share a low-rank Gaussian
/// latent scaled by correlation_knob plus stack-private noise, mixed per
/// layer by seeded matrices; frame labels come from the latent.
struct SynthSpec {
  std::uint64_t seed = 1;
  Eigen::Index layers = 8;
  Eigen::Index frames = 32;
  Eigen::Index dim = 16;
  int num_classes = 5;
  double correlation_knob = 0.9;  // in [0, 1]; 1 = identical stacks, 0 = independent
};

struct SynthData {
  LayerStack a, b;
  std::vector<int> labels;  // one class per frame
};

SynthData synth_stacks(const SynthSpec& spec);

/// Mean frame-level cross-entropy of softmax(features * head) against labels.
double surrogate_asr_loss(const Matrix& features, const AffineMap& head,
                          const std::vector<int>& labels);

struct SurrogateGrads {
  double loss = 0.0;
  Matrix features;  // dL/dfeatures
  Matrix weight;    // dL/dhead.weight
  Vector bias;      // dL/dhead.bias
};
SurrogateGrads surrogate_asr_backward(const Matrix& features, const AffineMap& head,
                                      const std::vector<int>& labels);

/// Frozen synthetic stacks plus every learnable tensor of the chosen fusion
/// route and the classifier head.
struct ToyModel {
  LayerStack a, b;
  std::vector<int> labels;
  AffineMap norm_x, norm_y;  // linear_projection route
  DcaParams dca;             // dca route
  AffineMap head;
};

ToyModel build_toy_model(const SynthSpec& spec, const FusionConfig& cfg,
                         std::uint64_t param_seed);

struct ToyForward {
  double l_asr = 0.0;
  double l_refine = 0.0;  // unscaled by lambda
  double total = 0.0;     // l_asr + lambda * l_refine
  CorrelationMatrix corr;
  Matrix features;
};

/// Evaluates the full toy objective without touching parameters.
ToyForward toy_forward(const ToyModel& model, const FusionConfig& cfg,
                       const RefineConfig& refine);

/// Gradients of the task (cross-entropy) path alone, tagged loss_task.
GradientBundle toy_task_gradients(const ToyModel& model, const FusionConfig& cfg);
/// Gradients of the lambda-scaled refinement path alone, tagged loss_refine.
/// Layer-logit entries are present and exactly zero: the refinement loss
/// stops at the projection inputs by design.
GradientBundle toy_refine_gradients(const ToyModel& model, const FusionConfig& cfg,
                                    const RefineConfig& refine);
/// Sum of both paths; this is what one training step descends.
GradientBundle toy_gradients(const ToyModel& model, const FusionConfig& cfg,
                             const RefineConfig& refine);

/// Flat view of every trainable tensor, names matching GradientBundle keys.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};
std::vector<ParamRef> trainable_params(ToyModel& model, const FusionConfig& cfg);

struct TrainConfig {
  int steps = 500;
  double learning_rate = 0.5;
  RefineConfig refine;
  FusionConfig fusion;
  int log_every = 10;
  std::uint64_t seed = 1;  // parameter-init seed
};

struct TrainLogRow {
  int step = 0;
  double l_asr = 0.0;
  double l_refine = 0.0;
  double frac_above_eps = 0.0;
  double layer_entropy = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> rows;
  Matrix corr_initial;
  Matrix corr_final;
  ToyModel model;  // state after the last step
};

/// Plain gradient descent on the toy objective. Logs at step 0, every
/// log_every steps, and the final step. Non-finite loss or parameters abort
/// with a NumericalError naming the step.
TrainResult train(const TrainConfig& cfg, const SynthSpec& spec);

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int instances = 10;
  double tolerance = 1e-4;
  double fd_step = 1e-5;
  std::string corrupt_group;  // self-test hook: perturb this group's analytic gradient
};

struct GradcheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  bool exact_zero_check = false;  // pass requires the analytic gradient to be 0.0
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  int instances = 0;
  bool all_pass = false;
};

/// Central-finite-difference audit of every analytic gradient on seeded
/// micro instances (all dims <= 8). Covers the linear_projection task path,
/// the dca task path, the refinement path, and the refinement/layer-logit
/// isolation. Failures are reported, not thrown.
GradcheckReport gradcheck(const GradcheckOptions& opts);

}  // namespace fusionkit

#endif
