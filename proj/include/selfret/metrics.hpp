#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "selfret/bag_builder.hpp"
#include "selfret/embedding_store.hpp"

namespace selfret {

// ---------------------------------------------------------------------------
// Self-retrieval recall
// ---------------------------------------------------------------------------

struct RecallCount {
  std::size_t hits = 0;
  std::size_t attempts = 0;
  double r_at_1() const {
    return attempts == 0 ? 0.0 : static_cast<double>(hits) / attempts;
  }
};

struct BagHits {
  std::string bag_id;
  std::vector<std::string> members;
  std::vector<bool> hits;  // aligned with members
};

/// Micro-averaged R@1: hits / attempts over every image of every bag.
struct RetrievalReport {
  RecallCount overall;
  std::map<std::size_t, RecallCount> by_size;  // keyed by candidate-set size
  std::vector<BagHits> per_bag;

  double r_at_1() const { return overall.r_at_1(); }
};

/// A caption is a hit iff its similarity to the target is strictly greater
/// than to every other candidate; ties are misses. Captions are looked up by
/// image id; a missing one is a KeyError.
RetrievalReport recall_at_1_bags(const EmbeddingSet& caption_embs,
                                 const BagSet& bags,
                                 const EmbeddingSet& image_set);

/// Each image against n_distractors images sampled without replacement from
/// the rest of the set, one seeded generator per run. RangeError unless
/// n_distractors < N.
RetrievalReport recall_at_1_random(const EmbeddingSet& caption_embs,
                                   const EmbeddingSet& image_set,
                                   std::size_t n_distractors = 99,
                                   std::uint64_t seed = 0);

void write_report_json(const std::filesystem::path& path,
                       const RetrievalReport& report,
                       const FileStamp& stamp = {});
/// Columns bag_size,hits,attempts,r_at_1, plus an "all" row.
void write_report_csv(const std::filesystem::path& path,
                      const RetrievalReport& report,
                      const FileStamp& stamp = {});

// ---------------------------------------------------------------------------
// n-gram metrics
// ---------------------------------------------------------------------------

using Tokens = std::vector<std::string>;
using NgramCounts = std::unordered_map<std::string, int>;

/// Counts of all 1..max_n grams, keys are space-joined tokens.
NgramCounts count_ngrams(const Tokens& tokens, int max_n = 4);

/// Document frequencies over a reference corpus: each image's reference set
/// counts once per distinct n-gram.
struct NgramStats {
  std::array<std::vector<NgramCounts>, 4> term_frequencies;  // per n, per ref
  std::unordered_map<std::string, int> document_frequency;
  std::size_t corpus_size = 0;
};

NgramStats collect_ngram_stats(const std::vector<std::vector<Tokens>>& references);

/// CIDEr-D (n = 1..4, sigma = 6, clipped tf-idf, x10), following the
/// reference coco-caption implementation including its length term, which
/// counts bigrams.
class CiderD {
 public:
  /// Document frequencies are taken from `reference_corpus`.
  explicit CiderD(const std::vector<std::vector<Tokens>>& reference_corpus,
                  double sigma = 6.0);

  double score(const Tokens& candidate, const std::vector<Tokens>& refs) const;

  std::size_t corpus_size() const noexcept { return stats_.corpus_size; }
  const NgramStats& stats() const noexcept { return stats_; }

 private:
  struct Vec {
    std::array<std::unordered_map<std::string, double>, 4> weights;
    std::array<double, 4> norms{};
    double length = 0.0;
  };
  Vec vectorize(const NgramCounts& counts) const;
  std::array<double, 4> similarity(const Vec& hyp, const Vec& ref) const;

  NgramStats stats_;
  double log_ref_len_;
  double sigma_;
};

struct CiderResult {
  std::vector<double> scores;
  double mean = 0.0;
};

/// Corpus CIDEr-D with document frequencies from `references`.
/// Empty candidates score 0 and emit a warning on stderr.
CiderResult cider_d(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references);
CiderResult cider_d_tokens(const std::vector<Tokens>& candidates,
                           const std::vector<std::vector<Tokens>>& references);

struct BleuResult {
  double score = 0.0;
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus BLEU-4, uniform weights, clipped counts, no smoothing; the
/// effective reference length per sentence is the closest reference length
/// (shorter on ties).
BleuResult bleu4(const std::vector<std::string>& candidates,
                 const std::vector<std::vector<std::string>>& references);
BleuResult bleu4_tokens(const std::vector<Tokens>& candidates,
                        const std::vector<std::vector<Tokens>>& references);

// ---------------------------------------------------------------------------
// Embedding and corpus statistics
// ---------------------------------------------------------------------------

/// Mean of w * max(cos(c, i), 0) over captions, pairing rows by id.
double clip_score(const EmbeddingSet& caption_embs,
                  const EmbeddingSet& image_embs, double w = 2.5);

/// Number of distinct tokens with corpus frequency >= min_freq.
std::size_t vocab_diversity(const std::vector<std::string>& captions,
                            std::size_t min_freq = 5);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population
};

struct CaptionStats {
  MeanSd words;
  MeanSd tokens;
};

MeanSd mean_sd(const std::vector<double>& values);

/// Words are whitespace-separated; tokens come from `tokenizer`.
CaptionStats caption_stats(
    const std::vector<std::string>& captions,
    const std::function<std::vector<std::string>(const std::string&)>& tokenizer);

}  // namespace selfret
