#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "selfret/error.hpp"
#include "selfret/metrics.hpp"
#include "selfret/text.hpp"
#include "support/oracles.hpp"
#include "support/scratch_dir.hpp"

using namespace selfret;

namespace {

std::vector<std::string> numbered(std::size_t n, const char* prefix = "i") {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

EmbeddingSet unit_set(const std::vector<std::string>& ids, const oracle::Matrix& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return EmbeddingSet(ids, rows.front().size(), flat);
}

Bag bag_of(std::string id, std::vector<std::string> members) {
  Bag b;
  b.id = std::move(id);
  b.members = std::move(members);
  return b;
}

bool loop_hit(const oracle::Matrix& caps, const oracle::Matrix& imgs, std::size_t target,
              const std::vector<std::size_t>& others) {
  const double s = oracle::dot(caps[target], imgs[target]);
  for (std::size_t o : others)
    if (oracle::dot(caps[target], imgs[o]) >= s) return false;
  return true;
}

}  // namespace

TEST_CASE("bag recall examples") {
  auto ids = numbered(3);
  EmbeddingSet imgs(ids, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  BagSet bags;
  bags.bags.push_back(bag_of("b0", ids));
  auto report = recall_at_1_bags(imgs, bags, imgs);
  CHECK(report.r_at_1() == 1.0);
  CHECK(report.overall.attempts == 3);

  EmbeddingSet same(ids, 3, {1, 0, 0, 1, 0, 0, 1, 0, 0});
  CHECK(recall_at_1_bags(same, bags, same).r_at_1() == 0.0);

  EmbeddingSet partial({"i0", "i1"}, 3, {1, 0, 0, 0, 1, 0});
  CHECK_THROWS_AS(recall_at_1_bags(partial, bags, imgs), KeyError);
}

TEST_CASE("bag recall reports every size") {
  std::mt19937_64 rng(1);
  const std::size_t sizes[] = {3, 5, 7};
  const std::size_t counts[] = {254, 104, 93};
  std::vector<std::string> ids;
  BagSet bags;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t b = 0; b < counts[k]; ++b) {
      std::vector<std::string> members;
      for (std::size_t m = 0; m < sizes[k]; ++m) {
        members.push_back("s" + std::to_string(sizes[k]) + "-" + std::to_string(b) + "-" +
                          std::to_string(m));
        ids.push_back(members.back());
      }
      bags.bags.push_back(bag_of("b" + std::to_string(bags.bags.size()), members));
    }
  }
  oracle::Matrix rows, caps;
  std::normal_distribution<double> g(0.0, 0.8);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    rows.push_back(oracle::random_unit(8, rng));
    auto c = rows.back();
    for (double& x : c) x += g(rng);
    caps.push_back(oracle::unit(c));
  }
  auto imgs = unit_set(ids, rows);
  auto capset = unit_set(ids, caps);
  auto report = recall_at_1_bags(capset, bags, imgs);
  REQUIRE(report.by_size.size() == 3);
  CHECK(report.by_size.at(3).attempts == 254 * 3);
  CHECK(report.by_size.at(5).attempts == 104 * 5);
  CHECK(report.by_size.at(7).attempts == 93 * 7);
  CHECK(report.per_bag.size() == 451);

  std::size_t hits = 0, attempts = 0, i = 0;
  for (const auto& bag : bags.bags) {
    const std::size_t base = i;
    for (std::size_t m = 0; m < bag.members.size(); ++m) {
      std::vector<std::size_t> others;
      for (std::size_t o = 0; o < bag.members.size(); ++o)
        if (o != m) others.push_back(base + o);
      hits += loop_hit(caps, rows, base + m, others);
      ++attempts;
    }
    i += bag.members.size();
  }
  CHECK(report.overall.hits == hits);
  CHECK(report.overall.attempts == attempts);
  CHECK(report.r_at_1() == double(hits) / double(attempts));
  for (const auto& [size, rc] : report.by_size) {
    CHECK(rc.r_at_1() >= 0.0);
    CHECK(rc.r_at_1() <= 1.0);
  }

  // member order inside a bag does not matter
  BagSet shuffled = bags;
  for (auto& b : shuffled.bags) std::shuffle(b.members.begin(), b.members.end(), rng);
  CHECK(recall_at_1_bags(capset, shuffled, imgs).overall.hits == hits);
}

TEST_CASE("random-distractor recall") {
  std::mt19937_64 rng(2);
  const std::size_t n = 500;
  auto ids = numbered(n);
  oracle::Matrix rows, caps;
  std::normal_distribution<double> g(0.0, 0.05);
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back(oracle::random_unit(6, rng));
    auto c = rows.back();
    for (double& x : c) x += g(rng);
    caps.push_back(oracle::unit(c));
  }
  auto imgs = unit_set(ids, rows);
  auto capset = unit_set(ids, caps);

  CHECK(recall_at_1_random(capset, imgs, 0).r_at_1() == 1.0);

  auto a = recall_at_1_random(capset, imgs, 99, 5);
  auto b = recall_at_1_random(capset, imgs, 99, 5);
  CHECK(a.overall.hits == b.overall.hits);
  for (std::size_t i = 0; i < n; ++i) CHECK(a.per_bag[i].members == b.per_bag[i].members);
  for (const auto& bh : a.per_bag) {
    CHECK(bh.members.size() == 100);
    std::vector<std::string> sorted = bh.members;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }

  // against every other image the candidate set is fixed, so a loop can check it
  auto full = recall_at_1_random(capset, imgs, n - 1, 9);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<std::size_t> others;
    for (std::size_t o = 0; o < n; ++o)
      if (o != t) others.push_back(o);
    hits += loop_hit(caps, rows, t, others);
  }
  CHECK(full.overall.hits == hits);
  CHECK(full.overall.attempts == n);

  // sampled sets agree with the loop on the members that were drawn
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<std::size_t> others;
    for (std::size_t k = 1; k < a.per_bag[t].members.size(); ++k)
      others.push_back(imgs.index_of(a.per_bag[t].members[k]));
    CHECK(a.per_bag[t].hits[0] == loop_hit(caps, rows, t, others));
  }

  CHECK_THROWS_AS(recall_at_1_random(capset, imgs, n), RangeError);
}

TEST_CASE("report files") {
  ScratchDir dir;
  auto ids = numbered(2);
  EmbeddingSet imgs(ids, 2, {1, 0, 0, 1});
  BagSet bags;
  bags.bags.push_back(bag_of("b0", ids));
  auto report = recall_at_1_bags(imgs, bags, imgs);
  write_report_csv(dir / "r.csv", report, FileStamp{1, "cafe"});
  write_report_json(dir / "r.json", report, FileStamp{1, "cafe"});
  const auto csv = slurp(dir / "r.csv");
  CHECK(csv.find("bag_size,hits,attempts,r_at_1") != std::string::npos);
  CHECK(csv.find("all,2,2,1") != std::string::npos);
  CHECK(slurp(dir / "r.json").find("cafe") != std::string::npos);
}

TEST_CASE("tokenization") {
  CHECK(tokenize("A dog's ball.") == std::vector<std::string>{"a", "dogs", "ball"});
  CHECK(tokenize("  Two   spaces ") == std::vector<std::string>{"two", "spaces"});
  CHECK(tokenize("").empty());
  CHECK(split_words("A dog's ball.") == std::vector<std::string>{"A", "dog's", "ball."});
}

TEST_CASE("ngram counts") {
  auto c = count_ngrams({"a", "b", "a", "b"}, 2);
  CHECK(c.at("a") == 2);
  CHECK(c.at("a b") == 2);
  CHECK(c.at("b a") == 1);
  CHECK(c.size() == 4);

  auto stats = collect_ngram_stats({{{"a", "b"}, {"a"}}, {{"b"}}});
  CHECK(stats.corpus_size == 2);
  CHECK(stats.document_frequency.at("a") == 1);
  CHECK(stats.document_frequency.at("b") == 2);
  for (const auto& [g, df] : stats.document_frequency) CHECK(df <= 2);
}

TEST_CASE("cider-d examples") {
  const std::vector<std::vector<std::string>> refs{
      {"a man riding a horse on the beach"},
      {"a plate of food with broccoli"},
      {"two cats sleeping on a red couch"}};

  auto same = cider_d({"a man riding a horse on the beach", "x", "y"}, refs);
  const double self = oracle::cider_d(tokenize(refs[0][0]), {tokenize(refs[0][0])},
                                      {{tokenize(refs[0][0])}, {tokenize(refs[1][0])},
                                       {tokenize(refs[2][0])}});
  CHECK(same.scores[0] == doctest::Approx(self).epsilon(1e-12));
  CHECK(same.scores[0] > 0.0);

  auto other = cider_d({"a man riding a horse", "x", "y"}, refs);
  CHECK(other.scores[0] < same.scores[0]);

  auto disjoint = cider_d({"zebra giraffe elephant", "x", "y"}, refs);
  CHECK(disjoint.scores[0] == 0.0);

  auto empty = cider_d({"", "x", "y"}, refs);
  CHECK(empty.scores[0] == 0.0);
}

TEST_CASE("cider-d matches an independent implementation") {
  const std::vector<std::string> cands{
      "a dog runs across the grassy field",
      "two people sit on a bench near the lake",
      "a red bus parked on a city street",
      "a cat sleeps on the couch",
      "a man holds a surfboard on the beach"};
  const std::vector<std::vector<std::string>> refs{
      {"a brown dog running through a field of grass", "the dog runs on the grass",
       "a dog sprinting across a grassy field"},
      {"two people sitting on a park bench", "a couple sits on a bench by the lake"},
      {"a red double decker bus on the street", "a bus parked along a city street",
       "red bus on a busy road"},
      {"a cat sleeping on a sofa", "a gray cat curled up on the couch"},
      {"a surfer carrying a board on the beach", "a man with a surfboard walks on sand"}};

  std::vector<oracle::Words> tc;
  std::vector<std::vector<oracle::Words>> tr;
  for (const auto& c : cands) tc.push_back(tokenize(c));
  for (const auto& rs : refs) {
    tr.emplace_back();
    for (const auto& r : rs) tr.back().push_back(tokenize(r));
  }

  auto got = cider_d(cands, refs);
  double mean = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double expect = oracle::cider_d(tc[i], tr[i], tr);
    CHECK(std::abs(got.scores[i] - expect) < 1e-6);
    CHECK(got.scores[i] >= 0.0);
    mean += expect;
  }
  CHECK(std::abs(got.mean - mean / 5.0) < 1e-6);

  // candidate order only permutes the scores
  std::vector<std::string> rc(cands.rbegin(), cands.rend());
  std::vector<std::vector<std::string>> rr(refs.rbegin(), refs.rend());
  auto rev = cider_d(rc, rr);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(rev.scores[4 - i] - got.scores[i]) < 1e-12);
  CHECK(std::abs(rev.mean - got.mean) < 1e-12);
}

TEST_CASE("bleu-4 examples") {
  const std::vector<std::string> c{"the cat sat on the mat", "a dog in the park today"};
  const std::vector<std::vector<std::string>> r{{"the cat sat on the mat"},
                                                {"a dog in the park today"}};
  CHECK(bleu4(c, r).score == doctest::Approx(1.0));
  CHECK(bleu4({"zebra giraffe okapi lion"}, {{"the cat sat on the mat"}}).score == 0.0);
}

TEST_CASE("bleu-4 hand arithmetic") {
  // sentence 1: cand "the cat sat on a mat" (6), refs lengths 6 and 7
  // sentence 2: cand "a dog runs" (3), ref "the dog runs fast" (4)
  // sentence 3: cand "birds fly over the sea" (5), ref "birds fly over the sea" (5)
  const std::vector<std::string> c{"the cat sat on a mat", "a dog runs", "birds fly over the sea"};
  const std::vector<std::vector<std::string>> r{
      {"the cat sat on the mat", "there is a cat on the mat"},
      {"the dog runs fast"},
      {"birds fly over the sea"}};
  // 1-grams: 6/6 + 2/3 + 5/5 = 13 / 14
  // 2-grams: the cat, cat sat, sat on (3/5) + dog runs (1/2) + 4/4 = 8 / 11
  // 3-grams: the cat sat, cat sat on (2/4) + 0/1 + 3/3 = 5 / 8
  // 4-grams: the cat sat on (1/3) + 0/0 + 2/2 = 3 / 5
  // lengths: c = 14, r = 6 + 4 + 5 = 15
  const double p = std::pow(13.0 / 14 * 8.0 / 11 * 5.0 / 8 * 3.0 / 5, 0.25);
  const double bp = std::exp(1.0 - 15.0 / 14.0);
  auto got = bleu4(c, r);
  CHECK(got.score == doctest::Approx(bp * p).epsilon(1e-12));
  CHECK(got.candidate_length == 14);
  CHECK(got.reference_length == 15);
  CHECK(got.precisions[0] == doctest::Approx(13.0 / 14));
  CHECK(got.precisions[3] == doctest::Approx(3.0 / 5));

  std::vector<oracle::Words> tc;
  std::vector<std::vector<oracle::Words>> tr;
  for (const auto& s : c) tc.push_back(tokenize(s));
  for (const auto& rs : r) {
    tr.emplace_back();
    for (const auto& x : rs) tr.back().push_back(tokenize(x));
  }
  CHECK(std::abs(got.score - oracle::bleu4(tc, tr)) < 1e-12);

  // candidate order does not matter
  auto rev = bleu4({c[2], c[0], c[1]}, {r[2], r[0], r[1]});
  CHECK(std::abs(rev.score - got.score) < 1e-12);
}

TEST_CASE("bleu-4 closest reference length prefers the shorter on ties") {
  // candidate length 4, references 3 and 5: r = 3 so no brevity penalty
  auto got = bleu4({"a b c d"}, {{"a b c", "a b c d e"}});
  CHECK(got.reference_length == 3);
  CHECK(got.brevity_penalty == 1.0);
}

TEST_CASE("clip score") {
  EmbeddingSet img({"a"}, 2, {1, 0});
  CHECK(clip_score(EmbeddingSet({"a"}, 2, {1, 0}), img) == doctest::Approx(2.5));
  CHECK(clip_score(EmbeddingSet({"a"}, 2, {0, 1}), img) == 0.0);
  CHECK(clip_score(EmbeddingSet({"a"}, 2, {-1, 0}), img) == 0.0);
}

TEST_CASE("clip score dimension mismatch") {
  EmbeddingSet img({"a"}, 2, {1, 0});
  CHECK_THROWS_AS(clip_score(EmbeddingSet({"a"}, 3, {1, 0, 0}), img), DimError);
}

TEST_CASE("vocabulary diversity") {
  CHECK(vocab_diversity({}) == 0);
  CHECK(vocab_diversity({"dog dog dog dog dog"}) == 1);
  CHECK(vocab_diversity({"dog dog dog dog"}) == 0);

  std::mt19937_64 rng(8);
  std::geometric_distribution<int> word(0.05);
  std::uniform_int_distribution<int> len(3, 12);
  std::vector<std::string> corpus;
  std::map<std::string, std::size_t> freq;
  for (int i = 0; i < 1000; ++i) {
    std::string cap;
    for (int k = len(rng); k > 0; --k) {
      const std::string w = "w" + std::to_string(word(rng));
      cap += (cap.empty() ? "" : " ") + (k % 3 == 0 ? "W" + w.substr(1) : w) + (k == 1 ? "." : "");
      ++freq["w" + w.substr(1)];
    }
    corpus.push_back(cap);
  }
  std::size_t prev = SIZE_MAX;
  for (std::size_t m : {1, 2, 5, 10, 50}) {
    const auto expect = std::count_if(freq.begin(), freq.end(),
                                      [&](const auto& kv) { return kv.second >= m; });
    const std::size_t got = vocab_diversity(corpus, m);
    CHECK(got == std::size_t(expect));
    CHECK(got <= prev);
    prev = got;
  }
}

TEST_CASE("caption statistics") {
  auto one = caption_stats({"a b c d e f g h i j"}, [](const std::string& s) { return split_words(s); });
  CHECK(one.words.mean == 10.0);
  CHECK(one.words.sd == 0.0);

  auto two = caption_stats({"a b c d e f g h", "a b c d e f g h i j k l"},
                           [](const std::string& s) { return split_words(s); });
  CHECK(two.words.mean == 10.0);
  CHECK(two.words.sd == 2.0);

  auto pieces = caption_stats({"a dog, running."},
                              [](const std::string& s) { return split_word_pieces(s); });
  CHECK(pieces.words.mean == 3.0);
  CHECK(pieces.tokens.mean == 5.0);

  auto ms = mean_sd({1, 2, 3, 4});
  CHECK(ms.mean == 2.5);
  CHECK(ms.sd == doctest::Approx(std::sqrt(1.25)));
}
