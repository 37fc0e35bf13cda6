#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "selfret/embedding_store.hpp"
#include "selfret/similarity_index.hpp"

namespace selfret {

enum class BagSource { Candidate, Curated, Training };

std::string_view to_string(BagSource source);
BagSource parse_bag_source(std::string_view text);

/// How intra-bag similarity is measured.
enum class AlphaMode {
  QueryMean,  // mean cos(query, member) over the non-query members
  AllPairs,   // mean cos over all unordered member pairs
};

/// An ordered set of image ids; members.front() is the query image.
struct Bag {
  std::string id;
  std::vector<std::string> members;
  double alpha = 0.0;
  BagSource source = BagSource::Candidate;
  /// Training bags only: members that were drawn at random because the
  /// query's neighbor list was exhausted.
  std::vector<std::string> fallback;

  std::size_t size() const noexcept { return members.size(); }
};

struct BagSet {
  std::vector<Bag> bags;
  bool disjoint = false;
  BagSource source = BagSource::Candidate;
  std::size_t bag_size = 0;  // nominal size s
};

/// Cosine similarity between multimodal rows (each row scaled to unit norm
/// first, so a half-normalized concat(z, t) gives (cos_z + cos_t) / 2).
SimilarityMatrix multimodal_similarity(const MultimodalSet& mm,
                                       const SimilarityOptions& options = {});

/// Intra-bag similarity of `members` (given as row indices of `sims`).
/// Singletons have alpha 1 (self-similarity).
double intra_bag_similarity(const SimilarityMatrix& sims,
                            std::span<const std::size_t> members,
                            AlphaMode mode = AlphaMode::QueryMean);

struct CandidateBags {
  std::vector<Bag> bags;
  std::vector<double> alphas;
};

/// One bag per image: the query plus its s-1 nearest neighbors.
/// Throws RangeError unless 2 <= s <= N.
CandidateBags create_candidate_bags(const SimilarityMatrix& sims,
                                    std::size_t s,
                                    AlphaMode mode = AlphaMode::QueryMean,
                                    std::size_t threads = 1);
CandidateBags create_candidate_bags(const MultimodalSet& mm, std::size_t s,
                                    AlphaMode mode = AlphaMode::QueryMean,
                                    std::size_t threads = 1);

/// Greedy disjoint selection in descending-alpha order (stable on ties).
BagSet curate_benchmark(const std::vector<Bag>& bags,
                        const std::vector<double>& alphas);

/// Partitions every image into bags of size s (the last one may be smaller).
/// Queries are visited in a seeded random order; members come from the
/// query's top-`topk` unused neighbors, then from seeded uniform sampling
/// over unused images.
BagSet build_training_bags(const SimilarityMatrix& sims, std::size_t s,
                           std::size_t topk, std::uint64_t seed);
BagSet build_training_bags(const MultimodalSet& mm, std::size_t s,
                           std::size_t topk, std::uint64_t seed);

/// True when no id appears in two bags.
bool is_disjoint(const std::vector<Bag>& bags);

void write_bag_file(const std::filesystem::path& path, const BagSet& set,
                    const FileStamp& stamp = {});
BagSet read_bag_file(const std::filesystem::path& path,
                     FileStamp* stamp = nullptr);

struct ReviewRow {
  std::string bag_id;
  bool keep = true;
  std::string note;
};

struct ReviewSheet {
  std::vector<ReviewRow> rows;
};

/// Tab-separated `bag-id<TAB>keep|drop<TAB>note`, one row per bag, every
/// decision defaulted to keep. The note lists the members.
void export_for_review(const std::filesystem::path& path, const BagSet& set,
                       const FileStamp& stamp = {});
ReviewSheet read_review_sheet(const std::filesystem::path& path);

/// Keeps exactly the bags marked keep, in their original order. Throws
/// KeyError for rows naming unknown bags and IncompleteReview when a bag has
/// no decision.
BagSet apply_review(const BagSet& set, const ReviewSheet& sheet);

}  // namespace selfret
