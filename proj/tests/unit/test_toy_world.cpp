#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "selfret/error.hpp"
#include "selfret/toy/world.hpp"
#include "support/oracles.hpp"

using namespace selfret;
using namespace selfret::toy;

namespace {

std::vector<double> row(const EmbeddingSet& s, std::size_t r) {
  return {s.row(r).begin(), s.row(r).end()};
}

}  // namespace

TEST_CASE("noise-free world repeats its centers") {
  WorldConfig cfg;
  cfg.clusters = 2;
  cfg.images = 4;
  cfg.holdout_images = 2;
  cfg.noise = 0.0;
  cfg.attribute_prob = 0.0;
  auto w = make_world(cfg);
  const auto& im = w.train.images;
  CHECK(oracle::dot(row(im, 0), row(im, 2)) == doctest::Approx(1.0));
  CHECK(oracle::dot(row(im, 1), row(im, 3)) == doctest::Approx(1.0));
  CHECK(oracle::dot(row(im, 0), row(im, 1)) < 0.99);
  CHECK(w.train.cluster == std::vector<std::size_t>{0, 1, 0, 1});
}

TEST_CASE("worlds are deterministic in the seed") {
  WorldConfig cfg;
  cfg.images = 30;
  cfg.holdout_images = 10;
  auto a = make_world(cfg), b = make_world(cfg);
  CHECK(std::equal(a.train.images.values().begin(), a.train.images.values().end(),
                   b.train.images.values().begin()));
  CHECK(a.train.captions == b.train.captions);
  CHECK(a.holdout.captions == b.holdout.captions);
  cfg.seed = 8;
  auto c = make_world(cfg);
  CHECK_FALSE(std::equal(a.train.images.values().begin(), a.train.images.values().end(),
                         c.train.images.values().begin()));
}

TEST_CASE("clusters separate") {
  auto w = make_world(WorldConfig{});
  const auto& im = w.train.images;
  REQUIRE(im.size() == 200);
  double intra = 0, inter = 0;
  std::size_t ni = 0, nx = 0;
  for (std::size_t i = 0; i < im.size(); ++i) {
    for (std::size_t j = i + 1; j < im.size(); ++j) {
      const double s = oracle::dot(row(im, i), row(im, j));
      if (w.train.cluster[i] == w.train.cluster[j]) {
        intra += s;
        ++ni;
      } else {
        inter += s;
        ++nx;
      }
    }
  }
  CHECK(intra / double(ni) > inter / double(nx));
  for (std::size_t i = 0; i < im.size(); ++i) {
    CHECK(std::abs(oracle::dot(row(im, i), row(im, i)) - 1.0) < 1e-9);
  }
}

TEST_CASE("ground-truth captions") {
  auto w = make_world(WorldConfig{});
  CHECK(w.vocab_size() == 1 + 5 + 6);
  CHECK(w.vocab[kStopToken] == "<eos>");
  CHECK(w.token("obj3") == w.cluster_token(3));
  CHECK(w.token("attr0") == w.attribute_token(0));
  CHECK_THROWS_AS(w.token("zebra"), VocabError);

  for (std::size_t i = 0; i < w.train.images.size(); ++i) {
    const auto& caps = w.train.captions[i];
    REQUIRE(caps.size() == 5);
    const auto* rec = w.train.manifest.find(w.train.images.id(i));
    REQUIRE(rec != nullptr);
    for (std::size_t m = 0; m < caps.size(); ++m) {
      const auto& c = caps[m];
      REQUIRE(!c.empty());
      CHECK(c[0] == w.cluster_token(w.train.cluster[i]));
      for (std::size_t k = 1; k < c.size(); ++k) {
        const std::size_t j = c[k] - w.attribute_token(0);
        CHECK(w.train.attrs[i][j]);
      }
      CHECK(std::is_sorted(c.begin() + 1, c.end()));
      CHECK(c.size() <= 3);
      CHECK(rec->captions[m] == w.render(c));
      CHECK(w.parse(rec->captions[m]) == c);
    }
  }
  CHECK_THROWS_AS(w.parse("obj1 nonsense"), VocabError);
}

TEST_CASE("world configuration errors") {
  WorldConfig cfg;
  cfg.clusters = 1;
  CHECK_THROWS_AS(make_world(cfg), ConfigError);
  cfg = {};
  cfg.dim = 3;
  CHECK_THROWS_AS(make_world(cfg), ConfigError);
  cfg = {};
  cfg.attribute_prob = 1.5;
  CHECK_THROWS_AS(make_world(cfg), ConfigError);
  cfg = {};
  cfg.mention_probs = {0.0, 0.0};
  CHECK_THROWS_AS(make_world(cfg), ConfigError);
  cfg = {};
  cfg.captions_per_image = 0;
  CHECK_THROWS_AS(make_world(cfg), ConfigError);
}

TEST_CASE("token embedder") {
  auto w = make_world(WorldConfig{});
  SUBCASE("single token") {
    auto e = embed_caption(TokenSeq{w.cluster_token(2)}, w);
    auto t = oracle::unit(w.token_table[w.cluster_token(2)]);
    for (std::size_t c = 0; c < e.size(); ++c) CHECK(std::abs(e[c] - t[c]) < 1e-12);
  }
  SUBCASE("order does not matter") {
    TokenSeq a{1, 7, 9}, b{9, 1, 7};
    auto ea = embed_caption(a, w), eb = embed_caption(b, w);
    for (std::size_t d = 0; d < ea.size(); ++d) CHECK(std::abs(ea[d] - eb[d]) < 1e-12);
  }
  SUBCASE("random sequences match mean then normalize") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> tok(1, w.vocab_size() - 1);
    std::uniform_int_distribution<int> len(1, 4);
    for (int trial = 0; trial < 100; ++trial) {
      TokenSeq c;
      for (int k = len(rng); k > 0; --k) c.push_back(tok(rng));
      std::vector<double> mean(w.config.dim, 0.0);
      for (auto t : c)
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += w.token_table[t][d] / double(c.size());
      auto expect = oracle::unit(mean);
      auto got = embed_caption(c, w);
      for (std::size_t d = 0; d < mean.size(); ++d) CHECK(std::abs(got[d] - expect[d]) < 1e-12);
      CHECK(embed_caption(w.render(c), w) == got);
    }
  }
  SUBCASE("empty caption and bad tokens") {
    CHECK(embed_caption(TokenSeq{}, w) == w.token_table[kStopToken]);
    CHECK_THROWS_AS(embed_caption(TokenSeq{99}, w), VocabError);
    CHECK_THROWS_AS(embed_caption(std::string_view("obj0 ghost"), w), VocabError);
  }
}

TEST_CASE("world multimodal rows") {
  WorldConfig cfg;
  cfg.images = 20;
  cfg.holdout_images = 5;
  auto w = make_world(cfg);
  auto mm = world_multimodal(w, w.train);
  REQUIRE(mm.base.size() == 20);
  REQUIRE(mm.base.dim() == 2 * cfg.dim);
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> mean(cfg.dim, 0.0);
    for (const auto& c : w.train.captions[i]) {
      auto e = embed_caption(c, w);
      for (std::size_t d = 0; d < cfg.dim; ++d) mean[d] += e[d] / 5.0;
    }
    auto t = oracle::unit(mean);
    auto r = row(mm.base, i);
    for (std::size_t d = 0; d < cfg.dim; ++d) {
      CHECK(std::abs(r[d] - w.train.images.row(i)[d]) < 1e-9);
      CHECK(std::abs(r[cfg.dim + d] - t[d]) < 1e-9);
    }
  }
}
