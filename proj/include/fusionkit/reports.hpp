#ifndef FUSIONKIT_REPORTS_HPP
#define FUSIONKIT_REPORTS_HPP

#include "fusionkit/error_analysis.hpp"
#include "fusionkit/toy_trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fusionkit {

/// One decimal place, e.g. 33.333 -> "33.3".
std::string format_pct(double value);
/// Pipe-joined substitution|deletion|insertion rates, one decimal each.
std::string format_sdi(double sub_pct, double del_pct, double ins_pct);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  long count = 0;
};
/// Fixed 40-bin histogram of correlation entries over [-1, 1].
std::vector<HistogramBin> correlation_histogram(const Matrix& corr);

std::string render_wer_report(const std::vector<ScoredUtterance>& scored);
std::string render_sdi_report(const std::vector<ScoredUtterance>& scored);
std::string render_group_report(const std::vector<ScoredUtterance>& scored,
                                const GroupKeys& keys);
std::string render_phoneme_report(const PhonemeClassCounts& counts);
std::string render_functional_report(const FunctionalContentSplit& split);
std::string render_significance_report(const MapssweResult& result);

std::string render_train_log(const std::vector<TrainLogRow>& rows);
std::string render_histogram(const std::vector<HistogramBin>& bins);
std::string render_gradcheck_report(const GradcheckReport& report);

struct ScoreOutputs {
  GroupKeys group_keys;
  bool have_groups = false;
  const Lexicon* lexicon = nullptr;            // optional
  const FunctionalWordSet* functional = nullptr;  // optional
};

/// Writes wer.tsv and sdi.tsv, plus per_group.tsv / phoneme_classes.tsv /
/// functional_content.tsv when the corresponding option is present.
void write_score_reports(const std::string& out_dir,
                         const std::vector<ScoredUtterance>& scored,
                         const ScoreOutputs& outputs);

/// Writes train_log.tsv and corr_hist_initial.tsv; corr_hist_final.tsv only
/// when at least one step ran.
void write_train_reports(const std::string& out_dir, const TrainResult& result,
                         int steps);

}  // namespace fusionkit

#endif
