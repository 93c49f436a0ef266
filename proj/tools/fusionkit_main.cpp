// Command-line front end: gradcheck | train | score | significance | fuse-demo.
// Exit codes: 0 success, 1 analysis/numerical failure, 2 usage/config error.
#include "CLI11.hpp"

#include "fusionkit/common.hpp"
#include "fusionkit/dca_fusion.hpp"
#include "fusionkit/error_analysis.hpp"
#include "fusionkit/fusion_core.hpp"
#include "fusionkit/reports.hpp"
#include "fusionkit/toy_trainer.hpp"
#include "fusionkit/tsv.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace {

using namespace fusionkit;

/// Anything that should exit 2: bad flags, bad config keys or values.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

long parse_long(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const long value = std::stol(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument("trailing characters");
    }
    return value;
  } catch (const std::exception&) {
    throw UsageError(what + ": cannot parse '" + text + "' as an integer");
  }
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long value = std::stoull(text, &used);
    if (used != text.size() || text.find('-') != std::string::npos) {
      throw std::invalid_argument("trailing characters");
    }
    return value;
  } catch (const std::exception&) {
    throw UsageError(what + ": cannot parse '" + text + "' as an unsigned integer");
  }
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument("trailing characters");
    }
    return value;
  } catch (const std::exception&) {
    throw UsageError(what + ": cannot parse '" + text + "' as a number");
  }
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1") {
    return true;
  }
  if (text == "false" || text == "0") {
    return false;
  }
  throw UsageError(what + ": expected true/false/1/0, got '" + text + "'");
}

/// key=value file view that rejects unknown keys and re-types values.
class ConfigView {
 public:
  ConfigView(const std::string& path, const std::set<std::string>& allowed) {
    if (path.empty()) {
      return;
    }
    try {
      values_ = load_config(path);
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
    for (const auto& [key, value] : values_) {
      if (allowed.count(key) == 0) {
        throw UsageError(path + ": unknown config key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  long get_long(const std::string& key, long fallback) const {
    return has(key) ? parse_long(values_.at(key), "config key '" + key + "'") : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? parse_double(values_.at(key), "config key '" + key + "'") : fallback;
  }
  bool get_bool(const std::string& key, bool fallback) const {
    return has(key) ? parse_bool(values_.at(key), "config key '" + key + "'") : fallback;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? values_.at(key) : fallback;
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? parse_u64(values_.at(key), "config key '" + key + "'") : fallback;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// --seed beats the config file, which beats FUSIONKIT_SEED, which beats 1.
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value, const ConfigView& cfg) {
  if (flag_given) {
    return flag_value;
  }
  if (cfg.has("seed")) {
    return cfg.get_u64("seed", 1);
  }
  if (const char* env = std::getenv("FUSIONKIT_SEED")) {
    return parse_u64(env, "FUSIONKIT_SEED");
  }
  return 1;
}

RefineMode parse_mode(const std::string& text) {
  if (text == "maximum") {
    return RefineMode::maximum;
  }
  if (text == "minimum") {
    return RefineMode::minimum;
  }
  throw UsageError("config key 'mode': expected maximum or minimum, got '" + text + "'");
}

FusionMethod parse_method(const std::string& text) {
  if (text == "linear_projection") {
    return FusionMethod::linear_projection;
  }
  if (text == "dca") {
    return FusionMethod::dca;
  }
  throw UsageError("config key 'method': expected linear_projection or dca, got '" + text + "'");
}

DcaVariant parse_variant(const std::string& text) {
  if (text == "norm_concat") return DcaVariant::norm_concat;
  if (text == "concat_after") return DcaVariant::concat_after;
  if (text == "sum") return DcaVariant::sum;
  if (text == "weighted_norm") return DcaVariant::weighted_norm;
  if (text == "attended_only") return DcaVariant::attended_only;
  throw UsageError("config key 'variant': unknown variant '" + text + "'");
}

const char* method_name(FusionMethod method) {
  return method == FusionMethod::dca ? "dca" : "linear_projection";
}

const char* variant_name(DcaVariant variant) {
  switch (variant) {
    case DcaVariant::norm_concat: return "norm_concat";
    case DcaVariant::concat_after: return "concat_after";
    case DcaVariant::sum: return "sum";
    case DcaVariant::weighted_norm: return "weighted_norm";
    case DcaVariant::attended_only: return "attended_only";
  }
  return "norm_concat";
}

std::string fmt6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw UsageError(message);
  }
}

SynthSpec synth_from_config(const ConfigView& cfg, std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.layers = cfg.get_long("layers", spec.layers);
  spec.frames = cfg.get_long("frames", spec.frames);
  spec.dim = cfg.get_long("dim", spec.dim);
  spec.num_classes = static_cast<int>(cfg.get_long("num_classes", spec.num_classes));
  spec.correlation_knob = cfg.get_double("correlation_knob", spec.correlation_knob);
  require(spec.layers >= 1, "config key 'layers': must be >= 1");
  require(spec.frames >= 2, "config key 'frames': must be >= 2");
  require(spec.dim >= 1, "config key 'dim': must be >= 1");
  require(spec.num_classes >= 2, "config key 'num_classes': must be >= 2");
  require(spec.correlation_knob >= 0.0 && spec.correlation_knob <= 1.0,
          "config key 'correlation_knob': must lie in [0, 1]");
  return spec;
}

FusionConfig fusion_from_config(const ConfigView& cfg) {
  FusionConfig fusion;
  fusion.method = parse_method(cfg.get_string("method", method_name(fusion.method)));
  fusion.variant = parse_variant(cfg.get_string("variant", variant_name(fusion.variant)));
  fusion.proj_dim = cfg.get_long("proj_dim", fusion.proj_dim);
  fusion.att_dim = cfg.get_long("att_dim", fusion.att_dim);
  fusion.even_layers_only = cfg.get_bool("even_layers_only", fusion.even_layers_only);
  require(fusion.proj_dim >= 1, "config key 'proj_dim': must be >= 1");
  require(fusion.att_dim >= 1, "config key 'att_dim': must be >= 1");
  return fusion;
}

const std::set<std::string> kTrainKeys = {
    "seed",       "steps",       "learning_rate", "log_every",        "epsilon",
    "lambda",     "mode",        "method",        "variant",          "proj_dim",
    "att_dim",    "even_layers_only", "layers",   "frames",           "dim",
    "num_classes", "correlation_knob"};

const std::set<std::string> kDemoKeys = {
    "seed",    "method", "variant",          "proj_dim", "att_dim",
    "layers",  "frames", "even_layers_only", "dim",      "num_classes",
    "correlation_knob"};

const std::set<std::string> kGradcheckKeys = {"seed", "instances", "tolerance", "fd_step",
                                              "corrupt_group"};

int run_gradcheck(const std::string& config_path, bool seed_given, std::uint64_t seed_flag,
                  const std::string& out_dir) {
  const ConfigView cfg(config_path, kGradcheckKeys);
  GradcheckOptions opts;
  opts.seed = resolve_seed(seed_given, seed_flag, cfg);
  opts.instances = static_cast<int>(cfg.get_long("instances", opts.instances));
  opts.tolerance = cfg.get_double("tolerance", opts.tolerance);
  opts.fd_step = cfg.get_double("fd_step", opts.fd_step);
  opts.corrupt_group = cfg.get_string("corrupt_group", opts.corrupt_group);
  require(opts.instances >= 1, "config key 'instances': must be >= 1");
  require(opts.tolerance > 0.0, "config key 'tolerance': must be > 0");
  require(opts.fd_step > 0.0, "config key 'fd_step': must be > 0");

  const GradcheckReport report = gradcheck(opts);
  const std::string text = render_gradcheck_report(report);
  std::cout << text;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/gradcheck.tsv", text);
  }
  if (!report.all_pass) {
    std::cerr << "error: analytic gradients disagree with finite differences\n";
    return 1;
  }
  return 0;
}

int run_train(const std::string& config_path, bool seed_given, std::uint64_t seed_flag,
              const std::string& out_dir) {
  const ConfigView cfg(config_path, kTrainKeys);
  const std::uint64_t seed = resolve_seed(seed_given, seed_flag, cfg);
  const SynthSpec spec = synth_from_config(cfg, seed);

  TrainConfig tc;
  tc.seed = seed;
  tc.steps = static_cast<int>(cfg.get_long("steps", tc.steps));
  tc.learning_rate = cfg.get_double("learning_rate", tc.learning_rate);
  tc.log_every = static_cast<int>(cfg.get_long("log_every", tc.log_every));
  tc.refine.epsilon = cfg.get_double("epsilon", tc.refine.epsilon);
  tc.refine.lambda = cfg.get_double("lambda", tc.refine.lambda);
  tc.refine.mode = parse_mode(cfg.get_string("mode", "maximum"));
  tc.fusion = fusion_from_config(cfg);
  require(tc.steps >= 0, "config key 'steps': must be >= 0");
  require(tc.learning_rate > 0.0, "config key 'learning_rate': must be > 0");
  require(tc.log_every >= 1, "config key 'log_every': must be >= 1");
  require(tc.refine.epsilon >= 0.0 && tc.refine.epsilon <= 1.0,
          "config key 'epsilon': must lie in [0, 1]");
  require(tc.refine.lambda >= 0.0, "config key 'lambda': must be >= 0");
  require(tc.fusion.method == FusionMethod::linear_projection ||
              tc.fusion.variant == DcaVariant::norm_concat,
          std::string("config key 'variant': ") + variant_name(tc.fusion.variant) +
              " is forward-only; training requires norm_concat");

  const TrainResult result = train(tc, spec);
  write_train_reports(out_dir, result, tc.steps);

  std::cout << "steps\t" << tc.steps << "\n";
  std::cout << "frac_above_eps_initial\t" << fmt6(result.rows.front().frac_above_eps) << "\n";
  std::cout << "frac_above_eps_final\t" << fmt6(result.rows.back().frac_above_eps) << "\n";
  std::cout << "l_asr_final\t" << fmt6(result.rows.back().l_asr) << "\n";
  return 0;
}

std::vector<ScoredUtterance> pair_and_align(const std::vector<Utterance>& refs,
                                            const std::vector<Utterance>& hyps) {
  std::map<std::string, const Utterance*> by_id;
  for (const Utterance& h : hyps) {
    if (!by_id.emplace(h.id, &h).second) {
      throw ValidationError("duplicate hypothesis id: " + h.id);
    }
  }
  std::set<std::string> ref_ids;
  std::vector<ScoredUtterance> scored;
  for (const Utterance& r : refs) {
    if (!ref_ids.insert(r.id).second) {
      throw ValidationError("duplicate reference id: " + r.id);
    }
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      throw ValidationError("hypothesis file is missing id: " + r.id);
    }
    scored.push_back({r, align(r.words, it->second->words)});
  }
  if (hyps.size() != refs.size()) {
    for (const Utterance& h : hyps) {
      if (ref_ids.count(h.id) == 0) {
        throw ValidationError("hypothesis file has extra id: " + h.id);
      }
    }
  }
  return scored;
}

int run_score(const std::string& ref_path, const std::string& hyp_path,
              const std::string& group_by, const std::string& lexicon_path,
              const std::string& words_path, const std::string& out_dir) {
  const std::vector<ScoredUtterance> scored =
      pair_and_align(load_transcripts(ref_path), load_transcripts(hyp_path));

  ScoreOutputs outputs;
  if (!group_by.empty()) {
    try {
      outputs.group_keys = parse_group_keys(group_by);
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
    outputs.have_groups = true;
  }
  Lexicon lexicon;
  if (!lexicon_path.empty()) {
    lexicon = Lexicon::load(lexicon_path);
    outputs.lexicon = &lexicon;
  }
  FunctionalWordSet functional;
  if (!words_path.empty()) {
    functional = FunctionalWordSet::load(words_path);
    outputs.functional = &functional;
  }

  std::cout << render_wer_report(scored);
  if (!out_dir.empty()) {
    write_score_reports(out_dir, scored, outputs);
  }
  return 0;
}

int run_significance(const std::string& ref_path, const std::string& hyp1_path,
                     const std::string& hyp2_path, const std::string& out_dir) {
  const std::vector<Utterance> refs = load_transcripts(ref_path);
  const std::vector<ScoredUtterance> scored1 = pair_and_align(refs, load_transcripts(hyp1_path));
  const std::vector<ScoredUtterance> scored2 = pair_and_align(refs, load_transcripts(hyp2_path));
  std::map<std::string, Alignment> sys1, sys2;
  for (const ScoredUtterance& s : scored1) {
    sys1[s.ref.id] = s.alignment;
  }
  for (const ScoredUtterance& s : scored2) {
    sys2[s.ref.id] = s.alignment;
  }

  const MapssweResult result = mapsswe(sys1, sys2);
  const std::string text = render_significance_report(result);
  std::cout << text;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/significance.tsv", text);
  }
  return 0;
}

int run_fuse_demo(const std::string& config_path, bool seed_given, std::uint64_t seed_flag,
                  const std::string& out_dir) {
  const ConfigView cfg(config_path, kDemoKeys);
  const std::uint64_t seed = resolve_seed(seed_given, seed_flag, cfg);
  const SynthSpec spec = synth_from_config(cfg, seed);
  const FusionConfig fusion = fusion_from_config(cfg);

  const ToyModel model = build_toy_model(spec, fusion, seed);
  Matrix fused;
  if (fusion.method == FusionMethod::dca) {
    fused = fusion.variant == DcaVariant::norm_concat
                ? dca_forward(model.a, model.b, model.dca, fusion)
                : variant_forward(fusion.variant, model.a, model.b, model.dca, fusion);
  } else {
    const Eigen::Index t_out = std::min(model.a.frames(), model.b.frames());
    Matrix fx = norm_transform(weighted_sum_layers(model.a), model.norm_x, t_out);
    Matrix fy = norm_transform(weighted_sum_layers(model.b), model.norm_y, t_out);
    fused.resize(t_out, fx.cols() + fy.cols());
    fused << fx, fy;
  }

  std::string text;
  text += std::string("method\t") + method_name(fusion.method) + "\n";
  if (fusion.method == FusionMethod::dca) {
    text += std::string("variant\t") + variant_name(fusion.variant) + "\n";
  }
  const auto stack_line = [&text](const char* name, const LayerStack& stack) {
    text += std::string(name) + "\tlayers=" + std::to_string(stack.layers()) +
            "\tframes=" + std::to_string(stack.frames()) +
            "\tdim=" + std::to_string(stack.dim()) + "\n";
  };
  stack_line("stack_a", model.a);
  stack_line("stack_b", model.b);
  text += "fused\trows=" + std::to_string(fused.rows()) +
          "\tcols=" + std::to_string(fused.cols()) + "\n";
  text += "fused_frobenius\t" + fmt6(fused.norm()) + "\n";
  if (fusion.method == FusionMethod::dca &&
      (fusion.variant == DcaVariant::norm_concat ||
       fusion.variant == DcaVariant::weighted_norm)) {
    const std::vector<Eigen::Index> blocks = {model.a.dim(), fusion.att_dim};
    text += "contribution_a\t" +
            format_contribution(weight_contribution(model.dca.norm_a, blocks)) + "\n";
    const std::vector<Eigen::Index> blocks_b = {model.b.dim(), fusion.att_dim};
    text += "contribution_b\t" +
            format_contribution(weight_contribution(model.dca.norm_b, blocks_b)) + "\n";
  } else if (fusion.method == FusionMethod::linear_projection) {
    text += "contribution_x\t" +
            format_contribution(weight_contribution(model.norm_x, {model.a.dim()})) + "\n";
    text += "contribution_y\t" +
            format_contribution(weight_contribution(model.norm_y, {model.b.dim()})) + "\n";
  }

  std::cout << text;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/fuse_demo.tsv", text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-fusion kernels and transcription error analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir, group_by, lexicon_path, words_path;
  std::string train_out = "out";
  std::string ref_path, hyp_path, hyp2_path;
  std::uint64_t seed_flag = 1;

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "audit analytic gradients against finite differences");
  gradcheck_cmd->add_option("--config", config_path, "key=value options file");
  CLI::Option* gradcheck_seed = gradcheck_cmd->add_option("--seed", seed_flag, "root RNG seed");
  gradcheck_cmd->add_option("--out", out_dir, "directory for gradcheck.tsv");

  CLI::App* train_cmd = app.add_subcommand("train", "fit the toy fusion model");
  train_cmd->add_option("--config", config_path, "key=value options file");
  CLI::Option* train_seed = train_cmd->add_option("--seed", seed_flag, "root RNG seed");
  train_cmd->add_option("--out", train_out, "directory for training reports (default: out)");

  CLI::App* score_cmd = app.add_subcommand("score", "align transcripts and report error rates");
  score_cmd->add_option("ref", ref_path, "reference transcript TSV")->required();
  score_cmd->add_option("hyp", hyp_path, "hypothesis transcript TSV")->required();
  score_cmd->add_option("--group-by", group_by, "comma-separated keys: mission,channel,seen");
  score_cmd->add_option("--lexicon", lexicon_path, "pronunciation table TSV");
  score_cmd->add_option("--functional-words", words_path, "functional word list");
  score_cmd->add_option("--out", out_dir, "directory for score reports");

  CLI::App* sig_cmd =
      app.add_subcommand("significance", "matched-pairs test between two systems");
  sig_cmd->add_option("ref", ref_path, "reference transcript TSV")->required();
  sig_cmd->add_option("hyp1", hyp_path, "first system hypothesis TSV")->required();
  sig_cmd->add_option("hyp2", hyp2_path, "second system hypothesis TSV")->required();
  sig_cmd->add_option("--out", out_dir, "directory for significance.tsv");

  CLI::App* demo_cmd = app.add_subcommand("fuse-demo", "run one fusion forward pass");
  demo_cmd->add_option("--config", config_path, "key=value options file");
  CLI::Option* demo_seed = demo_cmd->add_option("--seed", seed_flag, "root RNG seed");
  demo_cmd->add_option("--out", out_dir, "directory for fuse_demo.tsv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gradcheck_cmd->parsed()) {
      return run_gradcheck(config_path, gradcheck_seed->count() > 0, seed_flag, out_dir);
    }
    if (train_cmd->parsed()) {
      return run_train(config_path, train_seed->count() > 0, seed_flag, train_out);
    }
    if (score_cmd->parsed()) {
      return run_score(ref_path, hyp_path, group_by, lexicon_path, words_path, out_dir);
    }
    if (sig_cmd->parsed()) {
      return run_significance(ref_path, hyp_path, hyp2_path, out_dir);
    }
    if (demo_cmd->parsed()) {
      return run_fuse_demo(config_path, demo_seed->count() > 0, seed_flag, out_dir);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
