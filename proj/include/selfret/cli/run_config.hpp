#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "selfret/bag_builder.hpp"
#include "selfret/embedding_store.hpp"
#include "selfret/toy/trainer.hpp"
#include "selfret/toy/world.hpp"

namespace selfret::cli {

struct PolicyConfig {
  std::size_t token_dim = 8;
  std::size_t max_len = 4;
  double init_scale = 0.1;
  std::uint64_t seed = 3;
};

struct BagConfig {
  std::size_t size = 3;
  std::size_t topk = 200;
  std::uint64_t seed = 0;
  AlphaMode alpha = AlphaMode::QueryMean;
  bool half_norm = true;
  std::size_t threads = 1;
};

struct EvalConfig {
  std::size_t n_distractors = 99;
  std::uint64_t seed = 0;
};

struct MetricConfig {
  std::size_t min_freq = 5;
  double clip_w = 2.5;
};

/// Declarative run configuration. Sections: world, policy, mle, sr, bags,
/// eval, metrics. Unknown keys are rejected.
struct RunConfig {
  nlohmann::json doc;  // fully resolved, defaults included
  toy::WorldConfig world;
  PolicyConfig policy;
  toy::MleConfig mle;
  toy::SrConfig sr;
  BagConfig bags;
  EvalConfig eval;
  MetricConfig metrics;
  std::uint64_t hash = 0;

  std::string hash_hex() const;
  FileStamp stamp() const { return {kSchemaVersion, hash_hex()}; }

  static constexpr int kSchemaVersion = 1;
};

nlohmann::json default_config();

/// FNV-1a 64 over the canonical (sorted-key, compact) dump.
std::uint64_t config_hash(const nlohmann::json& doc);

/// defaults <- file <- overrides (JSON merge patch at each step), then every
/// field is parsed and validated. Throws ConfigError.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const nlohmann::json& overrides = nlohmann::json::object());
RunConfig resolve_config(const nlohmann::json& doc);

/// Sets `doc[a][b]...` from a dotted path, creating objects on the way.
/// The value text is parsed as JSON when possible, otherwise kept as string.
void set_path(nlohmann::json& doc, const std::string& dotted, const std::string& value);

std::string_view to_string(AlphaMode mode);
AlphaMode parse_alpha_mode(std::string_view text);

}  // namespace selfret::cli
