#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfret/embedding_store.hpp"

namespace selfret {

/// Dense N x N cosine similarity matrix over the rows of an EmbeddingSet.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  SimilarityMatrix(std::vector<std::string> ids, std::vector<double> values);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  double at(std::size_t i, std::size_t j) const {
    return values_[i * ids_.size() + j];
  }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * ids_.size(), ids_.size()};
  }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t index_of(std::string_view id) const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> values_;
};

struct Neighbor {
  std::size_t index = 0;
  std::string id;
  double similarity = 0.0;
};

struct NeighborList {
  std::string query_id;
  std::vector<Neighbor> neighbors;  // descending similarity
};

struct SimilarityOptions {
  std::size_t threads = 1;
  std::size_t block_rows = 64;
};

/// values[i][j] = dot(row_i, row_j). Throws PreconditionError unless every
/// row is unit norm within 1e-6. Each entry is a single left-to-right dot
/// product, so the result does not depend on block size or thread count.
SimilarityMatrix cosine_matrix(const EmbeddingSet& set,
                               const SimilarityOptions& options = {});

/// The k most similar rows to `query`, self excluded, ties broken by
/// ascending id. Throws RangeError unless 0 < k < N.
NeighborList topk_neighbors(const SimilarityMatrix& matrix,
                            std::size_t query, std::size_t k);
NeighborList topk_neighbors(const SimilarityMatrix& matrix,
                            std::string_view query_id, std::size_t k);

/// Optional SIM1 cache: EMB1 layout with N columns and magic "SIM1".
void write_similarity_cache(const std::filesystem::path& path,
                            const SimilarityMatrix& matrix);
SimilarityMatrix read_similarity_cache(const std::filesystem::path& path,
                                       std::vector<std::string> ids);

}  // namespace selfret
