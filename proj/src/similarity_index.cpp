#include "selfret/similarity_index.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "parallel.hpp"
#include "selfret/error.hpp"

namespace selfret {

SimilarityMatrix::SimilarityMatrix(std::vector<std::string> ids,
                                   std::vector<double> values)
    : ids_(std::move(ids)), values_(std::move(values)) {
  if (values_.size() != ids_.size() * ids_.size()) {
    throw DimError("similarity matrix must be N x N");
  }
}

std::size_t SimilarityMatrix::index_of(std::string_view id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw KeyError("unknown id '" + std::string(id) + "'");
  return static_cast<std::size_t>(it - ids_.begin());
}

SimilarityMatrix cosine_matrix(const EmbeddingSet& set,
                               const SimilarityOptions& options) {
  if (!is_normalized(set, 1e-6)) {
    throw PreconditionError("cosine_matrix requires unit-norm rows");
  }
  const std::size_t n = set.size();
  std::vector<double> values(n * n);
  detail::parallel_chunks(
      n, options.threads, options.block_rows,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            values[i * n + j] = dot(set.row(i), set.row(j));
          }
        }
      });
  return SimilarityMatrix(set.ids(), std::move(values));
}

NeighborList topk_neighbors(const SimilarityMatrix& matrix, std::size_t query,
                            std::size_t k) {
  const std::size_t n = matrix.size();
  if (query >= n) throw KeyError("query row out of range");
  if (k == 0 || k >= n) {
    throw RangeError("k must satisfy 0 < k < N (k=" + std::to_string(k) +
                     ", N=" + std::to_string(n) + ")");
  }
  const auto& ids = matrix.ids();
  const auto row = matrix.row(query);
  std::vector<std::size_t> order;
  order.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    if (j != query) order.push_back(j);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), better);
  NeighborList out;
  out.query_id = ids[query];
  out.neighbors.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    out.neighbors.push_back({order[t], ids[order[t]], row[order[t]]});
  }
  return out;
}

NeighborList topk_neighbors(const SimilarityMatrix& matrix,
                            std::string_view query_id, std::size_t k) {
  return topk_neighbors(matrix, matrix.index_of(query_id), k);
}

void write_similarity_cache(const std::filesystem::path& path,
                            const SimilarityMatrix& matrix) {
  const auto n = static_cast<std::uint32_t>(matrix.size());
  write_matrix_file(path, kSimilarityMagic, n, n, matrix.values());
}

SimilarityMatrix read_similarity_cache(const std::filesystem::path& path,
                                       std::vector<std::string> ids) {
  RawMatrix raw = read_matrix_file(path, kSimilarityMagic);
  if (raw.rows != raw.cols) throw FormatError("SIM1 matrix is not square");
  if (raw.rows != ids.size()) {
    throw ManifestMismatch("SIM1 cache has " + std::to_string(raw.rows) +
                           " rows but " + std::to_string(ids.size()) +
                           " ids were supplied");
  }
  return SimilarityMatrix(std::move(ids),
                          std::vector<double>(raw.values.begin(),
                                              raw.values.end()));
}

}  // namespace selfret
