#include "fusionkit/error_analysis.hpp"

#include "fusionkit/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fusionkit {

namespace {

std::string to_upper(std::string s) {
  for (char& c : s) {
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return s;
}

std::string to_lower(std::string s) {
  for (char& c : s) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

std::string strip_punct(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::ispunct(static_cast<unsigned char>(s[begin]))) {
    ++begin;
  }
  while (end > begin && std::ispunct(static_cast<unsigned char>(s[end - 1]))) {
    --end;
  }
  return s.substr(begin, end - begin);
}

void check_tokens(const std::vector<std::string>& tokens, const char* side) {
  for (const std::string& t : tokens) {
    if (t.empty()) {
      throw std::invalid_argument(std::string("align: empty token in ") + side);
    }
  }
}

std::string strip_stress(const std::string& symbol) {
  std::size_t end = symbol.size();
  while (end > 0 && std::isdigit(static_cast<unsigned char>(symbol[end - 1]))) {
    --end;
  }
  return symbol.substr(0, end);
}

}  // namespace

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const std::string cleaned = to_upper(strip_punct(token));
    if (!cleaned.empty()) {
      words.push_back(cleaned);
    }
  }
  return words;
}

long Alignment::matches() const {
  long n = 0;
  for (const AlignedPair& p : ops) n += p.op == EditOp::match;
  return n;
}

long Alignment::subs() const {
  long n = 0;
  for (const AlignedPair& p : ops) n += p.op == EditOp::sub;
  return n;
}

long Alignment::dels() const {
  long n = 0;
  for (const AlignedPair& p : ops) n += p.op == EditOp::del;
  return n;
}

long Alignment::inss() const {
  long n = 0;
  for (const AlignedPair& p : ops) n += p.op == EditOp::ins;
  return n;
}

Alignment align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  check_tokens(ref, "reference");
  check_tokens(hyp, "hypothesis");
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<int>> cost(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i) {
    cost[i][0] = static_cast<int>(i);
  }
  for (std::size_t j = 1; j <= m; ++j) {
    cost[0][j] = static_cast<int>(j);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }

  // Backtrace preferring match, then substitution, then deletion, then
  // insertion whenever costs tie.
  Alignment out;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && cost[i][j] == cost[i - 1][j - 1]) {
      out.ops.push_back({EditOp::match, ref[i - 1], hyp[j - 1]});
      --i;
      --j;
    } else if (i > 0 && j > 0 && ref[i - 1] != hyp[j - 1] &&
               cost[i][j] == cost[i - 1][j - 1] + 1) {
      out.ops.push_back({EditOp::sub, ref[i - 1], hyp[j - 1]});
      --i;
      --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      out.ops.push_back({EditOp::del, ref[i - 1], ""});
      --i;
    } else {
      out.ops.push_back({EditOp::ins, "", hyp[j - 1]});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

double WerStats::wer() const {
  if (n_ref == 0) {
    throw NumericalError("wer: zero reference words (undefined denominator)");
  }
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(n_ref);
}

double WerStats::sub_pct() const {
  if (n_ref == 0) {
    throw NumericalError("wer: zero reference words (undefined denominator)");
  }
  return 100.0 * static_cast<double>(sub) / static_cast<double>(n_ref);
}

double WerStats::del_pct() const {
  if (n_ref == 0) {
    throw NumericalError("wer: zero reference words (undefined denominator)");
  }
  return 100.0 * static_cast<double>(del) / static_cast<double>(n_ref);
}

double WerStats::ins_pct() const {
  if (n_ref == 0) {
    throw NumericalError("wer: zero reference words (undefined denominator)");
  }
  return 100.0 * static_cast<double>(ins) / static_cast<double>(n_ref);
}

WerStats wer(const std::vector<Alignment>& alignments) {
  WerStats stats;
  for (const Alignment& a : alignments) {
    stats.n_ref += a.ref_len();
    stats.sub += a.subs();
    stats.del += a.dels();
    stats.ins += a.inss();
  }
  if (stats.n_ref == 0) {
    throw NumericalError("wer: zero reference words (undefined denominator)");
  }
  return stats;
}

GroupKeys parse_group_keys(const std::string& spec) {
  GroupKeys keys;
  std::stringstream in(spec);
  std::string token;
  bool any = false;
  while (std::getline(in, token, ',')) {
    // trim
    std::size_t b = token.find_first_not_of(" \t");
    std::size_t e = token.find_last_not_of(" \t");
    if (b == std::string::npos) {
      continue;
    }
    token = token.substr(b, e - b + 1);
    if (token == "mission") {
      keys.mission = true;
    } else if (token == "channel") {
      keys.channel = true;
    } else if (token == "seen") {
      keys.seen = true;
    } else {
      throw ValidationError("unknown group key: " + token);
    }
    any = true;
  }
  if (!any) {
    throw ValidationError("no group keys given");
  }
  return keys;
}

std::vector<std::pair<std::string, WerStats>> group_wer(
    const std::vector<ScoredUtterance>& scored, const GroupKeys& keys) {
  if (!keys.mission && !keys.channel && !keys.seen) {
    throw ValidationError("group_wer: no group keys selected");
  }
  std::map<std::string, WerStats> groups;
  for (const ScoredUtterance& s : scored) {
    std::string label;
    auto append = [&label](const std::string& part) {
      if (!label.empty()) {
        label += "_";
      }
      label += part;
    };
    if (keys.mission) append(s.ref.mission);
    if (keys.channel) append(s.ref.channel);
    if (keys.seen) append(s.ref.seen ? "seen" : "unseen");
    WerStats& stats = groups[label];
    stats.n_ref += s.alignment.ref_len();
    stats.sub += s.alignment.subs();
    stats.del += s.alignment.dels();
    stats.ins += s.alignment.inss();
  }
  return {groups.begin(), groups.end()};
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open lexicon: " + path);
  }
  Lexicon lex;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ValidationError("lexicon line " + std::to_string(line_no) +
                            ": expected WORD<TAB>PHONEMES");
    }
    const std::string word = to_upper(line.substr(0, tab));
    std::istringstream rest(line.substr(tab + 1));
    std::vector<std::string> phonemes;
    std::string symbol;
    while (rest >> symbol) {
      const std::string bare = strip_stress(to_upper(symbol));
      if (!phoneme_class(bare)) {
        throw ValidationError("lexicon line " + std::to_string(line_no) +
                              ": unknown phoneme symbol " + symbol);
      }
      phonemes.push_back(bare);
    }
    if (phonemes.empty()) {
      throw ValidationError("lexicon line " + std::to_string(line_no) +
                            ": no phonemes for " + word);
    }
    // first pronunciation wins
    lex.entries_.emplace(word, phonemes);
  }
  return lex;
}

void Lexicon::insert(const std::string& word, const std::vector<std::string>& phonemes) {
  entries_.emplace(to_upper(word), phonemes);
}

const std::vector<std::string>* Lexicon::find(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

std::optional<PhonemeClass> phoneme_class(const std::string& symbol) {
  static const std::map<std::string, PhonemeClass> table = {
      {"AA", PhonemeClass::vowel},     {"AE", PhonemeClass::vowel},
      {"AH", PhonemeClass::vowel},     {"AO", PhonemeClass::vowel},
      {"AW", PhonemeClass::vowel},     {"AY", PhonemeClass::vowel},
      {"EH", PhonemeClass::vowel},     {"ER", PhonemeClass::vowel},
      {"EY", PhonemeClass::vowel},     {"IH", PhonemeClass::vowel},
      {"IY", PhonemeClass::vowel},     {"OW", PhonemeClass::vowel},
      {"OY", PhonemeClass::vowel},     {"UH", PhonemeClass::vowel},
      {"UW", PhonemeClass::vowel},     {"B", PhonemeClass::stop},
      {"D", PhonemeClass::stop},       {"G", PhonemeClass::stop},
      {"K", PhonemeClass::stop},       {"P", PhonemeClass::stop},
      {"T", PhonemeClass::stop},       {"DH", PhonemeClass::fricative},
      {"F", PhonemeClass::fricative},  {"S", PhonemeClass::fricative},
      {"SH", PhonemeClass::fricative}, {"TH", PhonemeClass::fricative},
      {"V", PhonemeClass::fricative},  {"Z", PhonemeClass::fricative},
      {"ZH", PhonemeClass::fricative}, {"M", PhonemeClass::nasal},
      {"N", PhonemeClass::nasal},      {"NG", PhonemeClass::nasal},
      {"CH", PhonemeClass::affricate}, {"JH", PhonemeClass::affricate},
      {"L", PhonemeClass::liquid},     {"R", PhonemeClass::liquid},
      {"W", PhonemeClass::glide},      {"Y", PhonemeClass::glide},
      {"HH", PhonemeClass::glide},
  };
  auto it = table.find(symbol);
  if (it == table.end()) {
    return std::nullopt;
  }
  return it->second;
}

const char* phoneme_class_name(PhonemeClass c) {
  switch (c) {
    case PhonemeClass::vowel: return "Vowel";
    case PhonemeClass::stop: return "Stop";
    case PhonemeClass::fricative: return "Fricative";
    case PhonemeClass::nasal: return "Nasal";
    case PhonemeClass::affricate: return "Affricate";
    case PhonemeClass::liquid: return "Liquid";
    case PhonemeClass::glide: return "Glide";
  }
  return "Unknown";
}

long PhonemeClassCounts::total() const {
  long t = 0;
  for (long c : counts) {
    t += c;
  }
  return t;
}

PhonemeClassCounts phoneme_class_errors(const std::vector<Alignment>& alignments,
                                        const Lexicon& lexicon) {
  PhonemeClassCounts out;
  for (const Alignment& a : alignments) {
    for (const AlignedPair& pair : a.ops) {
      if (pair.op != EditOp::sub) {
        continue;
      }
      const std::vector<std::string>* ref_ph = lexicon.find(pair.ref);
      const std::vector<std::string>* hyp_ph = lexicon.find(pair.hyp);
      if (ref_ph == nullptr || hyp_ph == nullptr) {
        ++out.oov_pairs;
        continue;
      }
      const Alignment pa = align(*ref_ph, *hyp_ph);
      for (const AlignedPair& pp : pa.ops) {
        if (pp.op == EditOp::match) {
          continue;
        }
        const std::string& symbol = pp.op == EditOp::ins ? pp.hyp : pp.ref;
        const auto cls = phoneme_class(symbol);
        if (!cls) {
          throw ValidationError("phoneme_class_errors: unknown symbol " + symbol);
        }
        ++out.counts[static_cast<std::size_t>(*cls)];
      }
    }
  }
  return out;
}

FunctionalWordSet FunctionalWordSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open functional-word list: " + path);
  }
  FunctionalWordSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    const std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) {
      continue;
    }
    const std::size_t e = line.find_last_not_of(" \t");
    set.words.insert(to_lower(line.substr(b, e - b + 1)));
  }
  if (set.words.empty()) {
    throw ValidationError("functional-word list is empty: " + path);
  }
  return set;
}

bool FunctionalWordSet::contains(const std::string& word) const {
  return words.count(to_lower(word)) != 0;
}

FunctionalContentSplit functional_content_split(const std::vector<Alignment>& alignments,
                                                const FunctionalWordSet& functional) {
  FunctionalContentSplit split;
  for (const Alignment& a : alignments) {
    for (const AlignedPair& pair : a.ops) {
      if (pair.op == EditOp::match) {
        continue;
      }
      const std::string& word = pair.op == EditOp::ins ? pair.hyp : pair.ref;
      SplitCounts& bucket = functional.contains(word) ? split.functional : split.content;
      switch (pair.op) {
        case EditOp::sub: ++bucket.sub; break;
        case EditOp::del: ++bucket.del; break;
        case EditOp::ins: ++bucket.ins; break;
        case EditOp::match: break;
      }
    }
  }
  return split;
}

MapssweResult mapsswe(const std::map<std::string, Alignment>& sys1,
                      const std::map<std::string, Alignment>& sys2) {
  std::string missing;
  for (const auto& [id, a] : sys1) {
    (void)a;
    if (sys2.count(id) == 0) {
      missing += " " + id + "(sys2)";
    }
  }
  for (const auto& [id, a] : sys2) {
    (void)a;
    if (sys1.count(id) == 0) {
      missing += " " + id + "(sys1)";
    }
  }
  if (!missing.empty()) {
    throw ValidationError("mapsswe: utterance id sets differ; missing:" + missing);
  }
  const std::size_t n = sys1.size();
  if (n < 2) {
    throw InsufficientDataError("mapsswe: needs at least 2 segments");
  }

  std::vector<double> d;
  d.reserve(n);
  for (const auto& [id, a1] : sys1) {
    d.push_back(static_cast<double>(a1.errors() - sys2.at(id).errors()));
  }
  double sum = 0.0;
  for (double v : d) {
    sum += v;
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) {
    ss += (v - mean) * (v - mean);
  }
  const double var = ss / static_cast<double>(n - 1);

  MapssweResult result;
  result.n = n;
  if (var == 0.0) {
    if (mean == 0.0) {
      result.z = 0.0;
      result.p = 1.0;
    } else {
      result.z = mean > 0.0 ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      result.p = 0.0;
      result.degenerate = true;
    }
    return result;
  }
  result.z = mean / std::sqrt(var / static_cast<double>(n));
  result.p = std::erfc(std::abs(result.z) / std::sqrt(2.0));
  return result;
}

}  // namespace fusionkit
