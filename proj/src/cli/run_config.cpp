#include "selfret/cli/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "selfret/error.hpp"

namespace selfret::cli {

using nlohmann::json;

std::string_view to_string(AlphaMode mode) {
  return mode == AlphaMode::AllPairs ? "all_pairs" : "query_mean";
}

AlphaMode parse_alpha_mode(std::string_view text) {
  if (text == "query_mean") return AlphaMode::QueryMean;
  if (text == "all_pairs") return AlphaMode::AllPairs;
  throw ConfigError("unknown alpha mode '" + std::string(text) + "'");
}

namespace {

std::string mask_name(const toy::ParamMask& m) {
  if (m.language && m.vision) return "all";
  if (m.language) return "language";
  if (m.vision) return "vision";
  return "none";
}

toy::ParamMask parse_mask(const std::string& s) {
  if (s == "all") return toy::ParamMask::all();
  if (s == "language") return toy::ParamMask::language_only();
  if (s == "vision") return toy::ParamMask::vision_only();
  if (s == "none") return {false, false};
  throw ConfigError("unknown parameter mask '" + s + "'");
}

}  // namespace

json default_config() {
  const toy::WorldConfig w;
  const PolicyConfig p;
  const toy::MleConfig m;
  const toy::SrConfig s;
  const BagConfig b;
  const EvalConfig e;
  const MetricConfig mt;
  return json{
      {"world",
       {{"clusters", w.clusters},
        {"images", w.images},
        {"holdout_images", w.holdout_images},
        {"dim", w.dim},
        {"attributes", w.attributes},
        {"attribute_prob", w.attribute_prob},
        {"attribute_strength", w.attribute_strength},
        {"noise", w.noise},
        {"captions_per_image", w.captions_per_image},
        {"mention_probs", w.mention_probs},
        {"seed", w.seed}}},
      {"policy",
       {{"token_dim", p.token_dim},
        {"max_len", p.max_len},
        {"init_scale", p.init_scale},
        {"seed", p.seed}}},
      {"mle",
       {{"epochs", m.epochs},
        {"batch_size", m.batch_size},
        {"learning_rate", m.learning_rate},
        {"optimizer", to_string(m.optimizer)},
        {"seed", m.seed},
        {"mask", mask_name(m.mask)}}},
      {"sr",
       {{"epochs", s.epochs},
        {"batch_size", s.batch_size},
        {"learning_rate", s.learning_rate},
        {"optimizer", to_string(s.optimizer)},
        {"seed", s.seed},
        {"reward_kind", to_string(s.reward_kind)},
        {"mode", to_string(s.mode)},
        {"bag_size", s.bag_size},
        {"ladder", s.ladder},
        {"topk", s.topk},
        {"mask", mask_name(s.mask)},
        {"holdout_bag_size", s.holdout_bag_size},
        {"eval_seed", s.eval_seed},
        {"reward",
         {{"temperature", s.reward.temperature},
          {"lambda", s.reward.lambda},
          {"baseline", to_string(s.reward.baseline)},
          {"decay", s.reward.decay}}}}},
      {"bags",
       {{"size", b.size},
        {"topk", b.topk},
        {"seed", b.seed},
        {"alpha", to_string(b.alpha)},
        {"half_norm", b.half_norm},
        {"threads", b.threads}}},
      {"eval", {{"n_distractors", e.n_distractors}, {"seed", e.seed}}},
      {"metrics", {{"min_freq", mt.min_freq}, {"clip_w", mt.clip_w}}},
  };
}

std::uint64_t config_hash(const json& doc) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

namespace {

// Rejects keys that the defaults do not know, so typos fail loudly.
void check_keys(const json& doc, const json& known, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    if (known.at(it.key()).is_object()) check_keys(it.value(), known.at(it.key()), path);
  }
}

class Section {
 public:
  Section(const json& doc, std::string name) : doc_(doc.at(name)), name_(std::move(name)) {}

  template <class T>
  T get(const char* key) const {
    try {
      return doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + name_ + "." + key + "' has the wrong type");
    }
  }
  std::size_t count(const char* key) const {
    const auto& v = doc_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("config field '" + name_ + "." + key +
                        "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }
  Section sub(const char* key) const { return Section(doc_, key, name_); }

 private:
  Section(const json& parent, const char* key, const std::string& owner)
      : doc_(parent.at(key)), name_(owner + "." + key) {}
  const json& doc_;
  std::string name_;
};

}  // namespace

RunConfig resolve_config(const json& doc) {
  const json defaults = default_config();
  check_keys(doc, defaults, "");
  json full = defaults;
  full.merge_patch(doc);

  RunConfig rc;
  rc.doc = full;

  Section w(full, "world");
  rc.world.clusters = w.count("clusters");
  rc.world.images = w.count("images");
  rc.world.holdout_images = w.count("holdout_images");
  rc.world.dim = w.count("dim");
  rc.world.attributes = w.count("attributes");
  rc.world.attribute_prob = w.get<double>("attribute_prob");
  rc.world.attribute_strength = w.get<double>("attribute_strength");
  rc.world.noise = w.get<double>("noise");
  rc.world.captions_per_image = w.count("captions_per_image");
  rc.world.mention_probs = w.get<std::vector<double>>("mention_probs");
  rc.world.seed = w.count("seed");
  rc.world.validate();

  Section p(full, "policy");
  rc.policy.token_dim = p.count("token_dim");
  rc.policy.max_len = p.count("max_len");
  rc.policy.init_scale = p.get<double>("init_scale");
  rc.policy.seed = p.count("seed");
  if (rc.policy.token_dim == 0 || rc.policy.max_len == 0) {
    throw ConfigError("policy.token_dim and policy.max_len must be positive");
  }
  if (!(rc.policy.init_scale >= 0.0)) throw ConfigError("policy.init_scale must be >= 0");

  Section m(full, "mle");
  rc.mle.epochs = m.count("epochs");
  rc.mle.batch_size = m.count("batch_size");
  rc.mle.learning_rate = m.get<double>("learning_rate");
  rc.mle.optimizer = toy::parse_optimizer(m.get<std::string>("optimizer"));
  rc.mle.seed = m.count("seed");
  rc.mle.mask = parse_mask(m.get<std::string>("mask"));
  if (rc.mle.batch_size == 0) throw ConfigError("mle.batch_size must be positive");
  if (!(rc.mle.learning_rate >= 0.0)) throw ConfigError("mle.learning_rate must be >= 0");

  Section s(full, "sr");
  rc.sr.epochs = s.count("epochs");
  rc.sr.batch_size = s.count("batch_size");
  rc.sr.learning_rate = s.get<double>("learning_rate");
  rc.sr.optimizer = toy::parse_optimizer(s.get<std::string>("optimizer"));
  rc.sr.seed = s.count("seed");
  rc.sr.reward_kind = toy::parse_reward_kind(s.get<std::string>("reward_kind"));
  rc.sr.mode = toy::parse_distractor_mode(s.get<std::string>("mode"));
  rc.sr.bag_size = s.count("bag_size");
  rc.sr.ladder = s.get<std::vector<std::size_t>>("ladder");
  rc.sr.topk = s.count("topk");
  rc.sr.mask = parse_mask(s.get<std::string>("mask"));
  rc.sr.holdout_bag_size = s.count("holdout_bag_size");
  rc.sr.eval_seed = s.count("eval_seed");
  Section r = s.sub("reward");
  rc.sr.reward.temperature = r.get<double>("temperature");
  rc.sr.reward.lambda = r.get<double>("lambda");
  rc.sr.reward.baseline = parse_baseline_kind(r.get<std::string>("baseline"));
  rc.sr.reward.decay = r.get<double>("decay");
  rc.sr.validate();

  Section b(full, "bags");
  rc.bags.size = b.count("size");
  rc.bags.topk = b.count("topk");
  rc.bags.seed = b.count("seed");
  rc.bags.alpha = parse_alpha_mode(b.get<std::string>("alpha"));
  rc.bags.half_norm = b.get<bool>("half_norm");
  rc.bags.threads = b.count("threads");
  if (rc.bags.size < 2) throw ConfigError("bags.size must be >= 2");
  if (rc.bags.topk == 0) throw ConfigError("bags.topk must be positive");
  if (rc.bags.threads == 0) throw ConfigError("bags.threads must be positive");

  Section e(full, "eval");
  rc.eval.n_distractors = e.count("n_distractors");
  rc.eval.seed = e.count("seed");

  Section mt(full, "metrics");
  rc.metrics.min_freq = mt.count("min_freq");
  rc.metrics.clip_w = mt.get<double>("clip_w");

  rc.hash = config_hash(full);
  return rc;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const json& overrides) {
  json doc = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config '" + file->string() + "'");
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config '" + file->string() + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be an object");
  }
  check_keys(overrides, default_config(), "");
  doc.merge_patch(overrides);
  return resolve_config(doc);
}

void set_path(json& doc, const std::string& dotted, const std::string& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw ConfigError("bad config path '" + dotted + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      json v = json::parse(value, nullptr, false);
      (*node)[key] = v.is_discarded() ? json(value) : v;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace selfret::cli
