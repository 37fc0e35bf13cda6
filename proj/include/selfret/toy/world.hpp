#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selfret/embedding_store.hpp"

namespace selfret::toy {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

/// Token 0 is the stop token; cluster tokens follow, then attribute tokens.
/// The start token is not part of the output vocabulary.
inline constexpr TokenId kStopToken = 0;

struct WorldConfig {
  std::size_t clusters = 5;
  std::size_t images = 200;
  std::size_t holdout_images = 400;
  std::size_t dim = 16;
  std::size_t attributes = 6;
  double attribute_prob = 0.5;
  double attribute_strength = 0.7;
  double noise = 0.15;  // per-coordinate gaussian sigma
  std::size_t captions_per_image = 5;
  /// Probability that a ground-truth caption mentions 0, 1, 2, ... of the
  /// image's attributes (normalized; capped by what the image has).
  std::vector<double> mention_probs{0.45, 0.4, 0.15};
  std::uint64_t seed = 7;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

struct WorldSplit {
  EmbeddingSet images;                  // unit-normalized
  std::vector<std::size_t> cluster;     // per image
  std::vector<std::vector<bool>> attrs; // per image, per attribute
  std::vector<std::vector<TokenSeq>> captions;  // ground truth, no stop token
  CaptionManifest manifest;             // captions rendered as text
};

/// Synthetic captioning world standing in for image/text encoders at desk
/// scale. Cluster and attribute token embeddings coincide with the cluster
/// centers and attribute directions used to generate the images.
struct ToyWorld {
  WorldConfig config;
  std::vector<std::string> vocab;        // token names, index = TokenId
  std::vector<std::vector<double>> token_table;  // unit rows, one per token
  WorldSplit train;
  WorldSplit holdout;

  std::size_t vocab_size() const noexcept { return vocab.size(); }
  TokenId cluster_token(std::size_t k) const { return 1 + k; }
  TokenId attribute_token(std::size_t j) const {
    return 1 + config.clusters + j;
  }
  /// Throws VocabError for unknown names.
  TokenId token(std::string_view name) const;
  std::string render(const TokenSeq& caption) const;
  /// Inverse of render; throws VocabError.
  TokenSeq parse(std::string_view caption) const;

 private:
  friend ToyWorld make_world(const WorldConfig& config);
  std::unordered_map<std::string, TokenId> token_index_;
};

/// Deterministic given config.seed.
ToyWorld make_world(const WorldConfig& config);

/// Unit-normalized mean of the token embedding rows (order-insensitive).
/// The empty caption embeds as the stop token. Throws VocabError.
std::vector<double> embed_caption(const TokenSeq& caption, const ToyWorld& world);
std::vector<double> embed_caption(std::string_view caption, const ToyWorld& world);

/// Multimodal rows for a split, text half from the world's token embedder.
MultimodalSet world_multimodal(const ToyWorld& world, const WorldSplit& split);

}  // namespace selfret::toy
