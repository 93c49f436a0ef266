#ifndef FUSIONKIT_ERROR_ANALYSIS_HPP
#define FUSIONKIT_ERROR_ANALYSIS_HPP

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fusionkit {

struct Utterance {
  std::string id;
  std::string mission;
  std::string channel;
  bool seen = false;
  std::vector<std::string> words;
};

/// Uppercases, strips leading/trailing ASCII punctuation per token, and
/// splits on whitespace. Tokens that normalize to empty are dropped.
std::vector<std::string> normalize_words(const std::string& text);

enum class EditOp { match, sub, del, ins };

struct AlignedPair {
  EditOp op = EditOp::match;
  std::string ref;  // empty for insertions
  std::string hyp;  // empty for deletions
};

struct Alignment {
  std::vector<AlignedPair> ops;

  long matches() const;
  long subs() const;
  long dels() const;
  long inss() const;
  long errors() const { return subs() + dels() + inss(); }
  long ref_len() const { return matches() + subs() + dels(); }
};

/// Minimum-edit alignment with unit costs. Ties are broken by preferring
/// match, then substitution, then deletion, then insertion, which makes the
/// result deterministic.
Alignment align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct WerStats {
  long n_ref = 0;
  long sub = 0;
  long del = 0;
  long ins = 0;

  long errors() const { return sub + del + ins; }
  /// All four share the reference-length denominator, in percent.
  double wer() const;
  double sub_pct() const;
  double del_pct() const;
  double ins_pct() const;
};

/// Pools counts over alignments. Throws if the total reference length is zero.
WerStats wer(const std::vector<Alignment>& alignments);

struct ScoredUtterance {
  Utterance ref;
  Alignment alignment;
};

struct GroupKeys {
  bool mission = false;
  bool channel = false;
  bool seen = false;
};

/// Parses a comma-separated subset of {mission, channel, seen}.
GroupKeys parse_group_keys(const std::string& spec);

/// Pooled per-group error counts, keyed by the joined group label
/// (e.g. "A8_seen"). Rows are sorted by label.
std::vector<std::pair<std::string, WerStats>> group_wer(
    const std::vector<ScoredUtterance>& scored, const GroupKeys& keys);

/// Pronunciation table: uppercase word -> phoneme sequence. Stress digits are
/// stripped on load and every symbol must belong to the phoneme-class
/// inventory.
class Lexicon {
 public:
  static Lexicon load(const std::string& path);

  void insert(const std::string& word, const std::vector<std::string>& phonemes);
  const std::vector<std::string>* find(const std::string& word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

enum class PhonemeClass { vowel, stop, fricative, nasal, affricate, liquid, glide };
inline constexpr int phoneme_class_count = 7;

/// Class of an (unstressed) ARPABET symbol, or nullopt if unknown.
std::optional<PhonemeClass> phoneme_class(const std::string& symbol);
const char* phoneme_class_name(PhonemeClass c);

struct PhonemeClassCounts {
  std::array<long, phoneme_class_count> counts{};
  long oov_pairs = 0;

  long total() const;
};

/// Phoneme-level error counts inside word-substitution pairs only. Each pair
/// is phoneme-aligned; substitutions and deletions count against the
/// reference phoneme's class, insertions against the hypothesis phoneme's
/// class. Pairs with either word missing from the lexicon are skipped and
/// counted in oov_pairs.
PhonemeClassCounts phoneme_class_errors(const std::vector<Alignment>& alignments,
                                        const Lexicon& lexicon);

struct FunctionalWordSet {
  std::set<std::string> words;  // lowercase

  static FunctionalWordSet load(const std::string& path);
  bool contains(const std::string& word) const;
  std::size_t size() const { return words.size(); }
};

struct SplitCounts {
  long sub = 0;
  long del = 0;
  long ins = 0;
  long sum() const { return sub + del + ins; }
};

struct FunctionalContentSplit {
  SplitCounts functional;
  SplitCounts content;
};

/// Splits word errors by functional-word membership of the reference word
/// (the hypothesis word for insertions), compared lowercase.
FunctionalContentSplit functional_content_split(const std::vector<Alignment>& alignments,
                                                const FunctionalWordSet& functional);

struct MapssweResult {
  double z = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  bool degenerate = false;  // zero variance with nonzero mean
};

/// Matched-pairs test on per-utterance error-count differences. One
/// utterance is one segment; Z = mean(d) / sqrt(var(d)/n) with sample
/// variance and a two-sided normal p-value. Requires n >= 2 and identical
/// id sets.
MapssweResult mapsswe(const std::map<std::string, Alignment>& sys1,
                      const std::map<std::string, Alignment>& sys2);

}  // namespace fusionkit

#endif
