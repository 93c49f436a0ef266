#include "doctest.h"

#include "fusionkit/common.hpp"
#include "fusionkit/error_analysis.hpp"
#include "fusionkit/tsv.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

using namespace fusionkit;

namespace {

std::string data_dir() {
  const char* dir = std::getenv("FUSIONKIT_DATA");
  REQUIRE(dir != nullptr);
  return dir;
}

// Exhaustive minimal edit cost, the independent oracle for the aligner.
int brute_cost(const std::vector<std::string>& ref, std::size_t i,
               const std::vector<std::string>& hyp, std::size_t j) {
  if (i == ref.size()) {
    return static_cast<int>(hyp.size() - j);
  }
  if (j == hyp.size()) {
    return static_cast<int>(ref.size() - i);
  }
  int best = brute_cost(ref, i + 1, hyp, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
  best = std::min(best, brute_cost(ref, i + 1, hyp, j) + 1);
  best = std::min(best, brute_cost(ref, i, hyp, j + 1) + 1);
  return best;
}

Alignment with_errors(long subs, long dels, long inss) {
  Alignment a;
  for (long i = 0; i < subs; ++i) a.ops.push_back({EditOp::sub, "X", "Y"});
  for (long i = 0; i < dels; ++i) a.ops.push_back({EditOp::del, "X", ""});
  for (long i = 0; i < inss; ++i) a.ops.push_back({EditOp::ins, "", "Y"});
  a.ops.push_back({EditOp::match, "OK", "OK"});
  return a;
}

std::vector<ScoredUtterance> score_fixture(const std::string& ref_name,
                                           const std::string& hyp_name) {
  const std::vector<Utterance> refs = load_transcripts(data_dir() + "/" + ref_name);
  const std::vector<Utterance> hyps = load_transcripts(data_dir() + "/" + hyp_name);
  std::map<std::string, const Utterance*> by_id;
  for (const Utterance& h : hyps) {
    by_id[h.id] = &h;
  }
  std::vector<ScoredUtterance> scored;
  for (const Utterance& r : refs) {
    scored.push_back({r, align(r.words, by_id.at(r.id)->words)});
  }
  return scored;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("normalize_words uppercases, strips edge punctuation, drops empties") {
  CHECK(normalize_words("go launch.") == std::vector<std::string>{"GO", "LAUNCH"});
  CHECK(normalize_words("  Hello,   WORLD!! ") == std::vector<std::string>{"HELLO", "WORLD"});
  CHECK(normalize_words("don't") == std::vector<std::string>{"DON'T"});  // inner punctuation stays
  CHECK(normalize_words("--- ...").empty());
  CHECK(normalize_words("").empty());
}

TEST_CASE("align produces the canonical minimal-edit operations") {
  const Alignment a = align({"GO", "FOR", "LAUNCH"}, {"GO", "LAUNCH"});
  REQUIRE(a.ops.size() == 3);
  CHECK(a.ops[0].op == EditOp::match);
  CHECK(a.ops[1].op == EditOp::del);
  CHECK(a.ops[1].ref == "FOR");
  CHECK(a.ops[2].op == EditOp::match);
  CHECK(a.errors() == 1);
  CHECK(a.ref_len() == 3);

  const Alignment ins = align({"COPY"}, {"COPY", "THAT"});
  CHECK(ins.inss() == 1);
  CHECK(ins.ops[1].hyp == "THAT");

  const Alignment sub = align({"GO"}, {"NO"});
  CHECK(sub.subs() == 1);
  CHECK(sub.ops[0].ref == "GO");
  CHECK(sub.ops[0].hyp == "NO");

  CHECK(align({}, {}).ops.empty());
  CHECK(align({"A", "B"}, {}).dels() == 2);
  CHECK(align({}, {"A", "B"}).inss() == 2);
  CHECK_THROWS_AS(align({""}, {"A"}), std::invalid_argument);
}

TEST_CASE("align matches the brute-force oracle on random pairs") {
  const std::vector<std::string> vocab = {"A", "B", "C", "D", "E"};
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ref, hyp;
    const int rn = static_cast<int>(rng.uniform() * 7);  // 0..6
    const int hn = static_cast<int>(rng.uniform() * 7);
    for (int i = 0; i < rn; ++i) {
      ref.push_back(vocab[static_cast<std::size_t>(rng.uniform() * 5)]);
    }
    for (int i = 0; i < hn; ++i) {
      hyp.push_back(vocab[static_cast<std::size_t>(rng.uniform() * 5)]);
    }
    const Alignment a = align(ref, hyp);
    CHECK(a.errors() == brute_cost(ref, 0, hyp, 0));
    // structural identities of any valid alignment
    CHECK(a.matches() + a.subs() + a.dels() == static_cast<long>(ref.size()));
    CHECK(a.matches() + a.subs() + a.inss() == static_cast<long>(hyp.size()));
  }
}

TEST_CASE("pooled error rates use the reference-word denominator") {
  const std::vector<Alignment> alignments = {align({"A", "B", "C"}, {"A", "C"}),
                                             align({"D"}, {"D", "E"})};
  const WerStats stats = wer(alignments);
  CHECK(stats.n_ref == 4);
  CHECK(stats.sub == 0);
  CHECK(stats.del == 1);
  CHECK(stats.ins == 1);
  CHECK(stats.wer() == doctest::Approx(50.0));
  CHECK(stats.del_pct() == doctest::Approx(25.0));

  WerStats zero;
  CHECK_THROWS_AS(zero.wer(), NumericalError);
  CHECK_THROWS_AS(wer({align({}, {})}), NumericalError);
}

TEST_CASE("micro corpus reproduces the hand-computed error budget") {
  const std::vector<ScoredUtterance> scored = score_fixture("micro_ref.tsv", "micro_hyp.tsv");
  REQUIRE(scored.size() == 6);
  std::vector<Alignment> alignments;
  for (const ScoredUtterance& s : scored) {
    alignments.push_back(s.alignment);
  }
  const WerStats stats = wer(alignments);
  CHECK(stats.n_ref == 25);
  CHECK(stats.sub == 1);
  CHECK(stats.del == 3);
  CHECK(stats.ins == 1);
  CHECK(stats.wer() == doctest::Approx(20.0));
}

TEST_CASE("group keys parse as a comma-separated subset") {
  const GroupKeys keys = parse_group_keys("mission, seen");
  CHECK(keys.mission);
  CHECK(!keys.channel);
  CHECK(keys.seen);
  CHECK_THROWS_AS(parse_group_keys("bogus"), ValidationError);
  CHECK_THROWS_AS(parse_group_keys(""), ValidationError);
  CHECK_THROWS_AS(parse_group_keys(" , "), ValidationError);
}

TEST_CASE("per-group pooling joins labels and sorts rows") {
  const std::vector<ScoredUtterance> scored = score_fixture("micro_ref.tsv", "micro_hyp.tsv");
  GroupKeys keys;
  keys.mission = true;
  keys.seen = true;
  const auto groups = group_wer(scored, keys);
  REQUIRE(groups.size() == 6);
  CHECK(groups[0].first == "A11_seen");
  CHECK(groups[0].second.n_ref == 5);
  CHECK(groups[0].second.errors() == 1);
  CHECK(groups[5].first == "A8_unseen");
  CHECK(groups[5].second.wer() == doctest::Approx(100.0 / 3.0));

  GroupKeys all;
  all.mission = all.channel = all.seen = true;
  const auto detailed = group_wer(scored, all);
  bool found = false;
  for (const auto& [label, stats] : detailed) {
    if (label == "A8_PAO_unseen") {
      found = true;
      CHECK(stats.n_ref == 3);
    }
  }
  CHECK(found);

  CHECK_THROWS_AS(group_wer(scored, GroupKeys{}), ValidationError);
}

TEST_CASE("lexicon load uppercases, strips stress digits, keeps first pronunciation") {
  const Lexicon lex = Lexicon::load(data_dir() + "/micro_lexicon.tsv");
  CHECK(lex.size() == 18);  // 19 lines, one duplicate headword
  const std::vector<std::string>* the = lex.find("THE");
  REQUIRE(the != nullptr);
  CHECK(*the == std::vector<std::string>{"DH", "AH"});  // first wins, stress stripped
  const std::vector<std::string>* go = lex.find("GO");
  REQUIRE(go != nullptr);
  CHECK(*go == std::vector<std::string>{"G", "OW"});
  CHECK(lex.find("MISSING") == nullptr);

  const std::string bad = temp_path("fusionkit_bad_lexicon.tsv");
  write_file(bad, "WORD NO TAB HERE\n");
  CHECK_THROWS_AS(Lexicon::load(bad), ValidationError);
  write_file(bad, "WORD\tQX OW\n");
  CHECK_THROWS_AS(Lexicon::load(bad), ValidationError);
  write_file(bad, "WORD\t\n");
  CHECK_THROWS_AS(Lexicon::load(bad), ValidationError);
  std::filesystem::remove(bad);
  CHECK_THROWS_AS(Lexicon::load(temp_path("fusionkit_no_such_lexicon.tsv")), ValidationError);
}

TEST_CASE("phoneme classes cover the 39-symbol inventory") {
  CHECK(phoneme_class("AA") == PhonemeClass::vowel);
  CHECK(phoneme_class("UW") == PhonemeClass::vowel);
  CHECK(phoneme_class("G") == PhonemeClass::stop);
  CHECK(phoneme_class("ZH") == PhonemeClass::fricative);
  CHECK(phoneme_class("NG") == PhonemeClass::nasal);
  CHECK(phoneme_class("JH") == PhonemeClass::affricate);
  CHECK(phoneme_class("R") == PhonemeClass::liquid);
  CHECK(phoneme_class("HH") == PhonemeClass::glide);
  CHECK(!phoneme_class("QX").has_value());
  CHECK(!phoneme_class("").has_value());
  CHECK(std::string(phoneme_class_name(PhonemeClass::affricate)) == "Affricate");
}

TEST_CASE("phoneme-class errors cover substitution pairs only") {
  Lexicon lex;
  lex.insert("GO", {"G", "OW"});
  lex.insert("NO", {"N", "OW"});
  lex.insert("GOES", {"G", "OW", "Z"});

  Alignment a;
  a.ops.push_back({EditOp::sub, "GO", "NO"});      // G -> N: counts the reference Stop
  a.ops.push_back({EditOp::del, "GO", ""});        // non-substitutions are ignored
  a.ops.push_back({EditOp::ins, "", "NO"});
  a.ops.push_back({EditOp::sub, "GO", "UNKNOWN"});  // out-of-vocabulary pair
  const PhonemeClassCounts counts = phoneme_class_errors({a}, lex);
  CHECK(counts.counts[static_cast<std::size_t>(PhonemeClass::stop)] == 1);
  CHECK(counts.total() == 1);
  CHECK(counts.oov_pairs == 1);

  Alignment grown;
  grown.ops.push_back({EditOp::sub, "GO", "GOES"});  // inserted phoneme counts the hypothesis class
  const PhonemeClassCounts c2 = phoneme_class_errors({grown}, lex);
  CHECK(c2.counts[static_cast<std::size_t>(PhonemeClass::fricative)] == 1);
  CHECK(c2.total() == 1);
}

TEST_CASE("micro corpus yields the single Stop-class phoneme error") {
  const Lexicon lex = Lexicon::load(data_dir() + "/micro_lexicon.tsv");
  const std::vector<ScoredUtterance> scored = score_fixture("micro_ref.tsv", "micro_hyp.tsv");
  std::vector<Alignment> alignments;
  for (const ScoredUtterance& s : scored) {
    alignments.push_back(s.alignment);
  }
  const PhonemeClassCounts counts = phoneme_class_errors(alignments, lex);
  CHECK(counts.counts[static_cast<std::size_t>(PhonemeClass::stop)] == 1);
  CHECK(counts.total() == 1);
  CHECK(counts.oov_pairs == 0);
}

TEST_CASE("functional-word list loads 128 unique lowercase entries") {
  const char* path = std::getenv("FUSIONKIT_WORDS");
  REQUIRE(path != nullptr);
  const FunctionalWordSet words = FunctionalWordSet::load(path);
  CHECK(words.size() == 128);
  CHECK(words.contains("the"));
  CHECK(words.contains("THE"));  // comparison is case-insensitive
  CHECK(words.contains("whenever"));
  CHECK(words.contains("than"));
  CHECK(!words.contains("launch"));

  const std::string empty = temp_path("fusionkit_empty_words.txt");
  write_file(empty, "\n  \n");
  CHECK_THROWS_AS(FunctionalWordSet::load(empty), ValidationError);
  std::filesystem::remove(empty);
}

TEST_CASE("functional/content split matches the hand-computed micro budget") {
  const char* path = std::getenv("FUSIONKIT_WORDS");
  REQUIRE(path != nullptr);
  const FunctionalWordSet words = FunctionalWordSet::load(path);
  const std::vector<ScoredUtterance> scored = score_fixture("micro_ref.tsv", "micro_hyp.tsv");
  std::vector<Alignment> alignments;
  for (const ScoredUtterance& s : scored) {
    alignments.push_back(s.alignment);
  }
  const FunctionalContentSplit split = functional_content_split(alignments, words);
  // deletions FOR, THE, A and the inserted NO are functional; the GO->NO
  // substitution counts its reference word, which is content
  CHECK(split.functional.sub == 0);
  CHECK(split.functional.del == 3);
  CHECK(split.functional.ins == 1);
  CHECK(split.functional.sum() == 4);
  CHECK(split.content.sub == 1);
  CHECK(split.content.del == 0);
  CHECK(split.content.ins == 0);
  CHECK(split.content.sum() == 1);
}

TEST_CASE("matched-pairs test: identical systems give Z=0, p=1") {
  std::map<std::string, Alignment> sys;
  sys["u1"] = with_errors(1, 0, 0);
  sys["u2"] = with_errors(0, 2, 0);
  sys["u3"] = with_errors(0, 0, 1);
  const MapssweResult r = mapsswe(sys, sys);
  CHECK(r.z == 0.0);
  CHECK(r.p == 1.0);
  CHECK(r.n == 3);
  CHECK(!r.degenerate);
}

TEST_CASE("matched-pairs test reproduces the hand statistic for d=(1,1,1,-1)") {
  std::map<std::string, Alignment> sys1, sys2;
  sys1["u1"] = with_errors(1, 0, 0);
  sys2["u1"] = with_errors(0, 0, 0);
  sys1["u2"] = with_errors(0, 1, 0);
  sys2["u2"] = with_errors(0, 0, 0);
  sys1["u3"] = with_errors(0, 0, 1);
  sys2["u3"] = with_errors(0, 0, 0);
  sys1["u4"] = with_errors(0, 0, 0);
  sys2["u4"] = with_errors(1, 0, 0);
  const MapssweResult r = mapsswe(sys1, sys2);
  CHECK(r.z == 1.0);  // mean 0.5, sample variance 1, n 4
  CHECK(r.p == doctest::Approx(0.3173105078629141).epsilon(1e-9));
  CHECK(std::abs(r.p - 0.317) < 0.005);

  // swapping the systems negates Z exactly and keeps p identical
  const MapssweResult swapped = mapsswe(sys2, sys1);
  CHECK(swapped.z == -r.z);
  CHECK(swapped.p == r.p);
}

TEST_CASE("matched-pairs test flags zero-variance nonzero-mean data as degenerate") {
  std::map<std::string, Alignment> sys1, sys2;
  sys1["u1"] = with_errors(1, 0, 0);
  sys2["u1"] = with_errors(0, 0, 0);
  sys1["u2"] = with_errors(0, 1, 0);
  sys2["u2"] = with_errors(0, 0, 0);
  const MapssweResult r = mapsswe(sys1, sys2);
  CHECK(r.degenerate);
  CHECK(r.p == 0.0);
  CHECK(std::isinf(r.z));
  CHECK(r.z > 0.0);
}

TEST_CASE("matched-pairs test validates its inputs") {
  std::map<std::string, Alignment> one = {{"u1", with_errors(1, 0, 0)}};
  CHECK_THROWS_AS(mapsswe(one, one), InsufficientDataError);

  std::map<std::string, Alignment> a = {{"u1", with_errors(1, 0, 0)},
                                        {"u2", with_errors(0, 0, 0)}};
  std::map<std::string, Alignment> b = {{"u1", with_errors(1, 0, 0)},
                                        {"u3", with_errors(0, 0, 0)}};
  CHECK_THROWS_AS(mapsswe(a, b), ValidationError);
}

TEST_CASE("transcript loader parses the TSV schema and normalizes text") {
  const std::vector<Utterance> refs = load_transcripts(data_dir() + "/micro_ref.tsv");
  REQUIRE(refs.size() == 6);  // header row skipped
  CHECK(refs[0].id == "a8_001");
  CHECK(refs[0].mission == "A8");
  CHECK(refs[0].channel == "PAO");
  CHECK(!refs[0].seen);
  CHECK(refs[1].seen);
  CHECK(refs[0].words == std::vector<std::string>{"GO", "FOR", "LAUNCH"});

  const std::vector<Utterance> hyps = load_transcripts(data_dir() + "/micro_hyp.tsv");
  CHECK(hyps[0].words == std::vector<std::string>{"GO", "LAUNCH"});  // lowercase input normalized

  const std::string bad = temp_path("fusionkit_bad_transcripts.tsv");
  write_file(bad, "u1\tA8\tFD\t0\n");
  CHECK_THROWS_AS(load_transcripts(bad), ValidationError);
  write_file(bad, "u1\tA8\tFD\t2\tGO\n");
  CHECK_THROWS_AS(load_transcripts(bad), ValidationError);
  std::filesystem::remove(bad);
  CHECK_THROWS_AS(load_transcripts(temp_path("fusionkit_no_such_file.tsv")), ValidationError);
}

TEST_CASE("config loader parses key=value lines with comments") {
  const std::string path = temp_path("fusionkit_config_test.cfg");
  write_file(path, "# comment\nsteps=10\nlambda = 0.5\n\nmode=maximum\n");
  const std::map<std::string, std::string> cfg = load_config(path);
  CHECK(cfg.size() == 3);
  CHECK(cfg.at("steps") == "10");
  CHECK(cfg.at("lambda") == "0.5");
  CHECK(cfg.at("mode") == "maximum");

  write_file(path, "steps=1\nsteps=2\n");
  CHECK_THROWS_AS(load_config(path), ValidationError);
  write_file(path, "no equals sign\n");
  CHECK_THROWS_AS(load_config(path), ValidationError);
  std::filesystem::remove(path);
}
