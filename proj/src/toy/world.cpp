#include "selfret/toy/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <cstdio>

#include "selfret/error.hpp"
#include "selfret/text.hpp"

namespace selfret::toy {

void WorldConfig::validate() const {
  if (clusters < 2) throw ConfigError("world needs at least 2 clusters");
  if (dim < 4) throw ConfigError("world dimension must be at least 4");
  if (images == 0) throw ConfigError("world needs at least one image");
  if (captions_per_image == 0) throw ConfigError("captions_per_image must be >= 1");
  if (!(attribute_prob >= 0.0 && attribute_prob <= 1.0)) {
    throw ConfigError("attribute_prob must lie in [0, 1]");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(attribute_strength >= 0.0)) {
    throw ConfigError("attribute_strength must be non-negative");
  }
  if (mention_probs.empty()) throw ConfigError("mention_probs is empty");
  double total = 0.0;
  for (double p : mention_probs) {
    if (!(p >= 0.0)) throw ConfigError("mention_probs must be non-negative");
    total += p;
  }
  if (!(total > 0.0)) throw ConfigError("mention_probs must not all be zero");
}

TokenId ToyWorld::token(std::string_view name) const {
  auto it = token_index_.find(std::string(name));
  if (it == token_index_.end()) {
    throw VocabError("unknown token '" + std::string(name) + "'");
  }
  return it->second;
}

std::string ToyWorld::render(const TokenSeq& caption) const {
  std::string out;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (caption[i] >= vocab.size()) throw VocabError("token id out of range");
    if (i) out += ' ';
    out += vocab[caption[i]];
  }
  return out;
}

TokenSeq ToyWorld::parse(std::string_view caption) const {
  TokenSeq out;
  for (const auto& w : split_words(caption)) out.push_back(token(w));
  return out;
}

namespace {

std::vector<double> gaussian_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = g(rng);
  return v;
}

// Random directions, orthonormalized when they fit in the space.
std::vector<std::vector<double>> make_directions(std::size_t count,
                                                 std::size_t d,
                                                 std::mt19937_64& rng) {
  std::vector<std::vector<double>> dirs;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v = gaussian_vector(d, rng);
    if (count <= d) {
      for (const auto& u : dirs) {
        const double p = dot(v, u);
        for (std::size_t k = 0; k < d; ++k) v[k] -= p * u[k];
      }
    }
    dirs.push_back(normalized(v));
  }
  return dirs;
}

WorldSplit make_split(const ToyWorld& w, const std::string& prefix,
                      std::size_t n, std::mt19937_64& rng,
                      const std::vector<std::vector<double>>& centers,
                      const std::vector<std::vector<double>>& attr_dirs) {
  const auto& cfg = w.config;
  WorldSplit split;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution has_attr(cfg.attribute_prob);

  std::vector<std::string> ids;
  std::vector<double> values;
  std::vector<ManifestRecord> records;
  const int width = n < 10000 ? 4 : 6;
  for (std::size_t i = 0; i < n; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s%0*zu", prefix.c_str(), width, i);
    ids.emplace_back(id);
    const std::size_t k = i % cfg.clusters;
    split.cluster.push_back(k);
    std::vector<bool> bits(cfg.attributes);
    for (std::size_t j = 0; j < cfg.attributes; ++j) bits[j] = has_attr(rng);

    std::vector<double> z = centers[k];
    for (std::size_t j = 0; j < cfg.attributes; ++j) {
      if (!bits[j]) continue;
      for (std::size_t c = 0; c < cfg.dim; ++c) {
        z[c] += cfg.attribute_strength * attr_dirs[j][c];
      }
    }
    for (double& x : z) x += cfg.noise * noise(rng);
    z = normalized(z);
    values.insert(values.end(), z.begin(), z.end());

    std::vector<std::size_t> present;
    for (std::size_t j = 0; j < cfg.attributes; ++j) {
      if (bits[j]) present.push_back(j);
    }
    std::vector<TokenSeq> captions;
    ManifestRecord rec{ids.back(), {}};
    for (std::size_t m = 0; m < cfg.captions_per_image; ++m) {
      // Number of attribute mentions, truncated to what the image has.
      std::vector<double> probs(cfg.mention_probs.begin(),
                                cfg.mention_probs.begin() +
                                    static_cast<long>(std::min(
                                        cfg.mention_probs.size(), present.size() + 1)));
      std::discrete_distribution<std::size_t> how_many(probs.begin(), probs.end());
      const std::size_t mentions = how_many(rng);
      std::vector<std::size_t> pick = present;
      std::shuffle(pick.begin(), pick.end(), rng);
      pick.resize(mentions);
      std::sort(pick.begin(), pick.end());
      TokenSeq caption{w.cluster_token(k)};
      for (std::size_t j : pick) caption.push_back(w.attribute_token(j));
      rec.captions.push_back(w.render(caption));
      captions.push_back(std::move(caption));
    }
    records.push_back(std::move(rec));
    split.captions.push_back(std::move(captions));
    split.attrs.push_back(std::move(bits));
  }
  split.images = EmbeddingSet(std::move(ids), cfg.dim, std::move(values));
  split.manifest = CaptionManifest(std::move(records));
  return split;
}

}  // namespace

ToyWorld make_world(const WorldConfig& config) {
  config.validate();
  ToyWorld w;
  w.config = config;
  std::mt19937_64 rng(config.seed);

  w.vocab.push_back("<eos>");
  for (std::size_t k = 0; k < config.clusters; ++k) {
    w.vocab.push_back("obj" + std::to_string(k));
  }
  for (std::size_t j = 0; j < config.attributes; ++j) {
    w.vocab.push_back("attr" + std::to_string(j));
  }
  for (std::size_t t = 0; t < w.vocab.size(); ++t) w.token_index_[w.vocab[t]] = t;

  auto dirs = make_directions(config.clusters + config.attributes + 1,
                              config.dim, rng);
  std::vector<std::vector<double>> centers(dirs.begin(),
                                           dirs.begin() + static_cast<long>(config.clusters));
  std::vector<std::vector<double>> attr_dirs(
      dirs.begin() + static_cast<long>(config.clusters),
      dirs.begin() + static_cast<long>(config.clusters + config.attributes));
  w.token_table.push_back(dirs.back());
  for (const auto& c : centers) w.token_table.push_back(c);
  for (const auto& a : attr_dirs) w.token_table.push_back(a);

  w.train = make_split(w, "img", config.images, rng, centers, attr_dirs);
  w.holdout = make_split(w, "hold", config.holdout_images, rng, centers, attr_dirs);
  return w;
}

std::vector<double> embed_caption(const TokenSeq& caption, const ToyWorld& world) {
  const std::size_t d = world.config.dim;
  std::vector<double> mean(d, 0.0);
  if (caption.empty()) return world.token_table[kStopToken];
  for (TokenId t : caption) {
    if (t >= world.vocab_size()) {
      throw VocabError("token id " + std::to_string(t) + " out of range");
    }
    for (std::size_t c = 0; c < d; ++c) mean[c] += world.token_table[t][c];
  }
  for (double& x : mean) x /= static_cast<double>(caption.size());
  const double n = l2_norm(mean);
  // Opposing directions can cancel exactly; fall back to the stop token.
  if (!(n > 1e-12)) return world.token_table[kStopToken];
  for (double& x : mean) x /= n;
  return mean;
}

std::vector<double> embed_caption(std::string_view caption, const ToyWorld& world) {
  return embed_caption(world.parse(caption), world);
}

MultimodalSet world_multimodal(const ToyWorld& world, const WorldSplit& split) {
  return build_multimodal(split.images, split.manifest,
                          [&](const std::string& caption) {
                            return embed_caption(std::string_view(caption), world);
                          });
}

}  // namespace selfret::toy
