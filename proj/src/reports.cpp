#include "fusionkit/reports.hpp"

#include "fusionkit/tsv.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace fusionkit {

namespace {

std::string fmt(const char* spec, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, value);
  return buf;
}

std::vector<Alignment> collect(const std::vector<ScoredUtterance>& scored) {
  std::vector<Alignment> alignments;
  alignments.reserve(scored.size());
  for (const ScoredUtterance& s : scored) {
    alignments.push_back(s.alignment);
  }
  return alignments;
}

}  // namespace

std::string format_pct(double value) {
  return fmt("%.1f", value);
}

std::string format_sdi(double sub_pct, double del_pct, double ins_pct) {
  return format_pct(sub_pct) + "|" + format_pct(del_pct) + "|" + format_pct(ins_pct);
}

std::vector<HistogramBin> correlation_histogram(const Matrix& corr) {
  constexpr int bins = 40;
  std::vector<HistogramBin> hist(bins);
  for (int i = 0; i < bins; ++i) {
    hist[static_cast<std::size_t>(i)].lo = -1.0 + 2.0 * i / bins;
    hist[static_cast<std::size_t>(i)].hi = -1.0 + 2.0 * (i + 1) / bins;
  }
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
      const double v = std::clamp(corr(i, j), -1.0, 1.0);
      const int bin = std::min(bins - 1, static_cast<int>((v + 1.0) / 2.0 * bins));
      ++hist[static_cast<std::size_t>(bin)].count;
    }
  }
  return hist;
}

std::string render_wer_report(const std::vector<ScoredUtterance>& scored) {
  const WerStats stats = wer(collect(scored));
  std::string out = "n_utts\tn_ref_words\twer\tsub\tdel\tins\n";
  out += std::to_string(scored.size()) + "\t" + std::to_string(stats.n_ref) + "\t" +
         format_pct(stats.wer()) + "\t" + format_pct(stats.sub_pct()) + "\t" +
         format_pct(stats.del_pct()) + "\t" + format_pct(stats.ins_pct()) + "\n";
  return out;
}

std::string render_sdi_report(const std::vector<ScoredUtterance>& scored) {
  const WerStats stats = wer(collect(scored));
  std::string out = "sub_count\tdel_count\tins_count\ttotal_errors\tsdi\n";
  out += std::to_string(stats.sub) + "\t" + std::to_string(stats.del) + "\t" +
         std::to_string(stats.ins) + "\t" + std::to_string(stats.errors()) + "\t" +
         format_sdi(stats.sub_pct(), stats.del_pct(), stats.ins_pct()) + "\n";
  return out;
}

std::string render_group_report(const std::vector<ScoredUtterance>& scored,
                                const GroupKeys& keys) {
  const auto groups = group_wer(scored, keys);
  std::string out = "group\tn_ref_words\terrors\twer\n";
  for (const auto& [label, stats] : groups) {
    out += label + "\t" + std::to_string(stats.n_ref) + "\t" +
           std::to_string(stats.errors()) + "\t" + format_pct(stats.wer()) + "\n";
  }
  const WerStats overall = wer(collect(scored));
  out += "overall\t" + std::to_string(overall.n_ref) + "\t" +
         std::to_string(overall.errors()) + "\t" + format_pct(overall.wer()) + "\n";
  return out;
}

std::string render_phoneme_report(const PhonemeClassCounts& counts) {
  std::string out = "class\terrors\n";
  for (int c = 0; c < phoneme_class_count; ++c) {
    out += std::string(phoneme_class_name(static_cast<PhonemeClass>(c))) + "\t" +
           std::to_string(counts.counts[static_cast<std::size_t>(c)]) + "\n";
  }
  out += "OOV_pairs\t" + std::to_string(counts.oov_pairs) + "\n";
  return out;
}

std::string render_functional_report(const FunctionalContentSplit& split) {
  std::string out = "category\tsub\tdel\tins\tsum\n";
  const auto row = [&out](const char* name, const SplitCounts& c) {
    out += std::string(name) + "\t" + std::to_string(c.sub) + "\t" + std::to_string(c.del) +
           "\t" + std::to_string(c.ins) + "\t" + std::to_string(c.sum()) + "\n";
  };
  row("functional", split.functional);
  row("content", split.content);
  return out;
}

std::string render_significance_report(const MapssweResult& result) {
  std::string out = "n\tz\tp\tdegenerate\tsignificant\n";
  out += std::to_string(result.n) + "\t" + fmt("%.6f", result.z) + "\t" +
         fmt("%.6f", result.p) + "\t" + (result.degenerate ? "1" : "0") + "\t" +
         (result.p < 0.001 ? "yes" : "no") + "\n";
  return out;
}

std::string render_train_log(const std::vector<TrainLogRow>& rows) {
  std::string out = "step\tl_asr\tl_refine\tfrac_above_eps\tlayer_entropy\n";
  for (const TrainLogRow& r : rows) {
    out += std::to_string(r.step) + "\t" + fmt("%.6f", r.l_asr) + "\t" +
           fmt("%.6f", r.l_refine) + "\t" + fmt("%.6f", r.frac_above_eps) + "\t" +
           fmt("%.6f", r.layer_entropy) + "\n";
  }
  return out;
}

std::string render_histogram(const std::vector<HistogramBin>& bins) {
  std::string out = "bin_lo\tbin_hi\tcount\n";
  for (const HistogramBin& b : bins) {
    out += fmt("%.2f", b.lo) + "\t" + fmt("%.2f", b.hi) + "\t" + std::to_string(b.count) + "\n";
  }
  return out;
}

std::string render_gradcheck_report(const GradcheckReport& report) {
  std::string out = "group\tmax_rel_err\tstatus\n";
  for (const GradcheckGroup& g : report.groups) {
    out += g.name + "\t" + fmt("%.3e", g.max_rel_err) + "\t" + (g.pass ? "pass" : "fail") + "\n";
  }
  return out;
}

void write_score_reports(const std::string& out_dir,
                         const std::vector<ScoredUtterance>& scored,
                         const ScoreOutputs& outputs) {
  std::filesystem::create_directories(out_dir);
  const std::string base = out_dir + "/";
  write_file(base + "wer.tsv", render_wer_report(scored));
  write_file(base + "sdi.tsv", render_sdi_report(scored));
  if (outputs.have_groups) {
    write_file(base + "per_group.tsv", render_group_report(scored, outputs.group_keys));
  }
  if (outputs.lexicon != nullptr) {
    const PhonemeClassCounts counts = phoneme_class_errors(collect(scored), *outputs.lexicon);
    write_file(base + "phoneme_classes.tsv", render_phoneme_report(counts));
  }
  if (outputs.functional != nullptr) {
    const FunctionalContentSplit split =
        functional_content_split(collect(scored), *outputs.functional);
    write_file(base + "functional_content.tsv", render_functional_report(split));
  }
}

void write_train_reports(const std::string& out_dir, const TrainResult& result, int steps) {
  std::filesystem::create_directories(out_dir);
  const std::string base = out_dir + "/";
  write_file(base + "train_log.tsv", render_train_log(result.rows));
  write_file(base + "corr_hist_initial.tsv",
             render_histogram(correlation_histogram(result.corr_initial)));
  if (steps > 0) {
    write_file(base + "corr_hist_final.tsv",
               render_histogram(correlation_histogram(result.corr_final)));
  }
}

}  // namespace fusionkit
