#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "selfret/error.hpp"
#include "selfret/similarity_index.hpp"
#include "support/oracles.hpp"
#include "support/scratch_dir.hpp"

using namespace selfret;

namespace {

EmbeddingSet unit_rows(std::size_t n, std::size_t d, std::uint64_t seed,
                       oracle::Matrix* copy = nullptr) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> ids;
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "p%03zu", i);
    ids.emplace_back(id);
    auto row = oracle::random_unit(d, rng);
    if (copy) copy->push_back(row);
    v.insert(v.end(), row.begin(), row.end());
  }
  return EmbeddingSet(ids, d, v);
}

}  // namespace

TEST_CASE("cosine of an orthonormal basis is the identity") {
  EmbeddingSet set({"a", "b", "c"}, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto m = cosine_matrix(set);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(m.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("identical rows have off-diagonal one") {
  EmbeddingSet set({"a", "b"}, 2, {0.6, 0.8, 0.6, 0.8});
  CHECK(cosine_matrix(set).at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("cosine matrix matches a double loop") {
  oracle::Matrix rows;
  auto set = unit_rows(20, 7, 1, &rows);
  auto expect = oracle::cosine(rows);
  auto m = cosine_matrix(set);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      CHECK(std::abs(m.at(i, j) - expect[i][j]) < 1e-6);
      CHECK(std::abs(m.at(i, j) - m.at(j, i)) < 1e-6);
      CHECK(m.at(i, j) <= 1.0 + 1e-6);
      CHECK(m.at(i, j) >= -1.0 - 1e-6);
    }
  }
}

TEST_CASE("cosine matrix is independent of blocking and threads") {
  auto set = unit_rows(97, 5, 2);
  auto ref = cosine_matrix(set, {1, 64});
  for (auto opts : {SimilarityOptions{4, 7}, SimilarityOptions{3, 1}, SimilarityOptions{8, 200}}) {
    auto m = cosine_matrix(set, opts);
    CHECK(std::equal(ref.values().begin(), ref.values().end(), m.values().begin()));
  }
}

TEST_CASE("cosine matrix needs unit rows") {
  EmbeddingSet set({"a", "b"}, 2, {1, 1, 0, 1});
  CHECK_THROWS_AS(cosine_matrix(set), PreconditionError);
}

TEST_CASE("top-k basics") {
  SimilarityMatrix m({"a", "b", "c"}, {1, 0.9, 0.1, 0.9, 1, 0.2, 0.1, 0.2, 1});
  auto top = topk_neighbors(m, "a", 1);
  REQUIRE(top.neighbors.size() == 1);
  CHECK(top.neighbors[0].id == "b");
  CHECK(top.query_id == "a");

  CHECK_THROWS_AS(topk_neighbors(m, "zz", 1), KeyError);
  CHECK_THROWS_AS(topk_neighbors(m, "a", 3), RangeError);
  CHECK_THROWS_AS(topk_neighbors(m, "a", 0), RangeError);
}

TEST_CASE("ties go to ascending id") {
  const std::vector<std::string> ids{"e", "b", "d", "a", "c"};
  std::vector<double> v(25, 0.5);
  for (int i = 0; i < 5; ++i) v[i * 5 + i] = 1.0;
  SimilarityMatrix m(ids, v);
  auto top = topk_neighbors(m, "d", 3);
  REQUIRE(top.neighbors.size() == 3);
  CHECK(top.neighbors[0].id == "a");
  CHECK(top.neighbors[1].id == "b");
  CHECK(top.neighbors[2].id == "c");
}

TEST_CASE("top-k equals a full-sort oracle") {
  oracle::Matrix rows;
  auto set = unit_rows(50, 6, 3, &rows);
  auto m = cosine_matrix(set);
  auto sims = oracle::cosine(rows);
  for (std::size_t q = 0; q < 50; ++q) {
    auto expect = oracle::ranked(sims, set.ids(), q);
    auto top = topk_neighbors(m, q, 10);
    REQUIRE(top.neighbors.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) CHECK(top.neighbors[k].index == expect[k]);
    for (std::size_t k = 1; k < 10; ++k)
      CHECK(top.neighbors[k].similarity <= top.neighbors[k - 1].similarity);
  }
}

TEST_CASE("top-(N-1) is a permutation of the other ids") {
  auto set = unit_rows(12, 4, 4);
  auto m = cosine_matrix(set);
  auto top = topk_neighbors(m, 5, 11);
  std::set<std::size_t> seen;
  for (const auto& nb : top.neighbors) seen.insert(nb.index);
  CHECK(seen.size() == 11);
  CHECK(seen.count(5) == 0);
}

TEST_CASE("scaling before normalization keeps top-k") {
  std::mt19937_64 rng(5);
  std::vector<std::string> ids;
  std::vector<double> raw, scaled;
  for (int i = 0; i < 30; ++i) {
    ids.push_back("q" + std::to_string(100 + i));
    for (int k = 0; k < 4; ++k) {
      double x = std::normal_distribution<double>(0, 1)(rng);
      raw.push_back(x);
      scaled.push_back(x * 37.5);
    }
  }
  auto a = cosine_matrix(normalize(EmbeddingSet(ids, 4, raw)));
  auto b = cosine_matrix(normalize(EmbeddingSet(ids, 4, scaled)));
  for (std::size_t q = 0; q < 30; ++q) {
    auto ta = topk_neighbors(a, q, 5), tb = topk_neighbors(b, q, 5);
    for (std::size_t k = 0; k < 5; ++k) CHECK(ta.neighbors[k].id == tb.neighbors[k].id);
  }
}

TEST_CASE("similarity cache round trip") {
  ScratchDir dir;
  auto set = unit_rows(9, 3, 6);
  auto m = cosine_matrix(set);
  write_similarity_cache(dir / "s.sim", m);
  CHECK(slurp(dir / "s.sim").substr(0, 4) == "SIM1");
  auto back = read_similarity_cache(dir / "s.sim", set.ids());
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(back.at(i, j) - m.at(i, j)) < 1e-6);
  CHECK_THROWS_AS(read_similarity_cache(dir / "s.sim", {"a", "b"}), ManifestMismatch);
}
