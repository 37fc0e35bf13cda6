#include "selfret/toy/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

#include "selfret/error.hpp"

namespace selfret::toy {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(text) + "'");
}

std::string_view to_string(DistractorMode mode) {
  switch (mode) {
    case DistractorMode::Random: return "random";
    case DistractorMode::HardBags: return "bags";
    case DistractorMode::Curriculum: return "curriculum";
  }
  return "random";
}

DistractorMode parse_distractor_mode(std::string_view text) {
  if (text == "random") return DistractorMode::Random;
  if (text == "bags") return DistractorMode::HardBags;
  if (text == "curriculum") return DistractorMode::Curriculum;
  throw ConfigError("unknown distractor mode '" + std::string(text) + "'");
}

std::string_view to_string(RewardKind kind) {
  return kind == RewardKind::Joint ? "joint" : "sr";
}

RewardKind parse_reward_kind(std::string_view text) {
  if (text == "sr") return RewardKind::SelfRetrieval;
  if (text == "joint") return RewardKind::Joint;
  throw ConfigError("unknown reward kind '" + std::string(text) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::size_t params)
    : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (kind_ == OptimizerKind::Adam) {
    m_.assign(params, 0.0);
    v_.assign(params, 0.0);
  }
}

void Optimizer::ascend(std::span<double> params, std::span<const double> direction) {
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += lr_ * direction[i];
    return;
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, double(step_));
  const double c2 = 1.0 - std::pow(beta2_, double(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * direction[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * direction[i] * direction[i];
    params[i] += lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

void check_finite(std::span<const double> g, const char* what) {
  for (double x : g) {
    if (!std::isfinite(x)) throw TrainingError(std::string("non-finite ") + what);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<CaptionPair> caption_pairs(const WorldSplit& split) {
  std::vector<CaptionPair> out;
  for (std::size_t r = 0; r < split.captions.size(); ++r) {
    for (const auto& c : split.captions[r]) out.push_back({r, c});
  }
  return out;
}

LossAndGradient mle_loss_and_gradient(const ToyPolicy& policy,
                                      const EmbeddingSet& images,
                                      std::span<const CaptionPair> pairs) {
  LossAndGradient out;
  out.gradient.assign(policy.param_count(), 0.0);
  if (pairs.empty()) return out;
  const double scale = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    out.loss -= policy.log_prob(images.row(p.image), p.caption) * scale;
    policy.accumulate_grad_log_prob(images.row(p.image), p.caption, -scale,
                                    out.gradient);
  }
  return out;
}

double mean_gt_loglik(const ToyPolicy& policy, const WorldSplit& split) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < split.captions.size(); ++r) {
    for (const auto& c : split.captions[r]) {
      total += policy.log_prob(split.images.row(r), c);
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

MleResult mle_pretrain(ToyPolicy& policy, const ToyWorld& world,
                       const MleConfig& config) {
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<CaptionPair> pairs = caption_pairs(world.train);
  MleResult result;
  result.initial_loglik = mean_gt_loglik(policy, world.train);
  Optimizer opt(config.optimizer, config.learning_rate, policy.param_count());
  std::mt19937_64 rng(config.seed);
  std::vector<double> direction(policy.param_count());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (std::size_t b = 0; b < pairs.size(); b += config.batch_size) {
      const std::size_t e = std::min(pairs.size(), b + config.batch_size);
      auto lg = mle_loss_and_gradient(
          policy, world.train.images,
          std::span<const CaptionPair>(pairs).subspan(b, e - b));
      if (!std::isfinite(lg.loss)) throw TrainingError("MLE loss diverged");
      check_finite(lg.gradient, "MLE gradient");
      for (std::size_t i = 0; i < direction.size(); ++i) direction[i] = -lg.gradient[i];
      policy.apply_mask(direction, config.mask);
      opt.ascend(policy.params(), direction);
    }
    result.epoch_loglik.push_back(mean_gt_loglik(policy, world.train));
  }
  if (config.epochs > 0) policy.set_pretrained(true);
  return result;
}

// ---------------------------------------------------------------------------

void SrConfig::validate() const {
  reward.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (mode != DistractorMode::Curriculum && bag_size < 1) {
    throw ConfigError("bag_size must be positive");
  }
  if (mode == DistractorMode::HardBags && bag_size < 2) {
    throw ConfigError("hard bags need bag_size >= 2");
  }
  if (mode == DistractorMode::Curriculum && epochs > 0) {
    (void)make_curriculum(ladder, epochs);
  }
  if (holdout_bag_size < 2) throw ConfigError("holdout_bag_size must be >= 2");
}

std::size_t bag_size_for_epoch(const SrConfig& config, std::size_t epoch) {
  if (config.mode == DistractorMode::Curriculum) {
    return curriculum_bag_size(make_curriculum(config.ladder, config.epochs), epoch);
  }
  return config.bag_size;
}

HoldoutEval make_holdout_eval(const ToyWorld& world, std::size_t bag_size,
                              std::size_t topk, std::uint64_t seed) {
  if (world.holdout.images.size() < 2) {
    throw ConfigError("held-out evaluation needs at least two held-out images");
  }
  return {build_training_bags(world_multimodal(world, world.holdout), bag_size,
                              std::max(topk, bag_size - 1), seed)};
}

EvalResult evaluate_holdout(const ToyPolicy& policy, const ToyWorld& world,
                            const HoldoutEval& eval) {
  const auto& images = world.holdout.images;
  std::vector<double> values;
  values.reserve(images.size() * images.dim());
  for (std::size_t r = 0; r < images.size(); ++r) {
    const auto e = embed_caption(policy.greedy(images.row(r)), world);
    values.insert(values.end(), e.begin(), e.end());
  }
  EmbeddingSet captions(images.ids(), images.dim(), std::move(values));
  EvalResult out;
  out.r_at_1 = recall_at_1_bags(captions, eval.bags, images).r_at_1();
  out.gt_loglik = mean_gt_loglik(policy, world.holdout);
  return out;
}

RewardModel::RewardModel(const ToyWorld& world, const SrConfig& config)
    : world_(world), config_(config) {
  if (config.reward_kind == RewardKind::Joint) {
    refs_.reserve(world.train.captions.size());
    for (const auto& caps : world.train.captions) {
      auto& r = refs_.emplace_back();
      for (const auto& c : caps) {
        Tokens t;
        for (TokenId id : c) t.push_back(world.vocab[id]);
        r.push_back(std::move(t));
      }
    }
    cider_.emplace(refs_);
  }
}

double RewardModel::self_retrieval(const TokenSeq& caption, std::size_t image,
                                   std::span<const std::size_t> bag_rows) const {
  const auto& images = world_.train.images;
  const auto c = embed_caption(caption, world_);
  std::vector<std::span<const double>> distractors;
  for (std::size_t r : bag_rows) {
    if (r != image) distractors.push_back(images.row(r));
  }
  return sr_reward(c, images.row(image), distractors, config_.reward.temperature);
}

double RewardModel::cider(const TokenSeq& caption, std::size_t image) const {
  if (!cider_) return 0.0;
  Tokens t;
  for (TokenId id : caption) t.push_back(world_.vocab[id]);
  if (t.empty()) return 0.0;
  return cider_->score(t, refs_[image]);
}

double RewardModel::combine(double sr, double cider) const {
  if (config_.reward_kind == RewardKind::SelfRetrieval) return sr;
  return joint_reward(sr, cider, config_.reward.lambda);
}

std::vector<RolloutSample> collect_rollouts(const ToyPolicy& policy,
                                            const ToyWorld& world,
                                            const RewardModel& rewards,
                                            const SrConfig& config,
                                            const std::vector<std::vector<std::size_t>>& bags,
                                            std::span<const std::size_t> bag_ids,
                                            std::mt19937_64& rng,
                                            RewardTrace& trace) {
  const auto& images = world.train.images;
  std::vector<RolloutSample> out;
  for (std::size_t b : bag_ids) {
    for (std::size_t image : bags[b]) {
      RolloutSample s;
      s.image = image;
      s.bag = b;
      s.caption = policy.sample(images.row(image), rng).tokens;
      s.sr = rewards.self_retrieval(s.caption, image, bags[b]);
      if (rewards.uses_cider()) s.cider = rewards.cider(s.caption, image);
      s.reward = rewards.combine(s.sr, s.cider);
      switch (config.reward.baseline) {
        case BaselineKind::RunningMean:
          s.baseline = trace.observe(s.reward, images.id(image)).baseline;
          break;
        case BaselineKind::Greedy: {
          s.baseline = greedy_baseline(policy, images.row(image), [&](const TokenSeq& g) {
            s.greedy_sr = rewards.self_retrieval(g, image, bags[b]);
            if (rewards.uses_cider()) s.greedy_cider = rewards.cider(g, image);
            return rewards.combine(s.greedy_sr, s.greedy_cider);
          });
          trace.observe_with_baseline(s.reward, s.baseline, images.id(image));
          break;
        }
        case BaselineKind::None:
          trace.observe_with_baseline(s.reward, 0.0, images.id(image));
          s.baseline = 0.0;
          break;
      }
      s.advantage = s.reward - s.baseline;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<double> advantage_weighted_gradient(const ToyPolicy& policy,
                                                const EmbeddingSet& images,
                                                std::span<const RolloutSample> samples) {
  std::vector<double> grad(policy.param_count(), 0.0);
  if (samples.empty()) return grad;
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    if (s.advantage == 0.0) continue;
    policy.accumulate_grad_log_prob(images.row(s.image), s.caption,
                                    s.advantage * scale, grad);
  }
  return grad;
}

namespace {

std::vector<std::vector<std::size_t>> random_bags(std::size_t n, std::size_t s,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += s) {
    out.emplace_back(order.begin() + static_cast<long>(b),
                     order.begin() + static_cast<long>(std::min(n, b + s)));
  }
  return out;
}

std::vector<std::vector<std::size_t>> bag_rows(const BagSet& set,
                                               const EmbeddingSet& images) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& bag : set.bags) {
    auto& rows = out.emplace_back();
    for (const auto& m : bag.members) rows.push_back(images.index_of(m));
  }
  return out;
}

}  // namespace

TrainRun sr_finetune(ToyPolicy& policy, const ToyWorld& world, const SrConfig& config) {
  config.validate();
  TrainRun run;
  run.config = config;
  run.cold_start = !policy.pretrained();
  if (run.cold_start) {
    std::cerr << "warning: self-retrieval fine-tuning from a policy without MLE "
                 "pretraining\n";
  }
  const auto& images = world.train.images;
  const HoldoutEval eval = make_holdout_eval(world, config.holdout_bag_size,
                                             config.topk, config.eval_seed);
  run.initial = evaluate_holdout(policy, world, eval);

  std::optional<SimilarityMatrix> train_sims;
  if (config.mode != DistractorMode::Random) {
    train_sims = multimodal_similarity(world_multimodal(world, world.train));
  }
  const RewardModel rewards(world, config);
  Optimizer opt(config.optimizer, config.learning_rate, policy.param_count());
  std::mt19937_64 rng(config.seed);
  RewardTrace trace(config.reward.decay);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::size_t s = bag_size_for_epoch(config, epoch);
    std::vector<std::vector<std::size_t>> bags;
    if (config.mode == DistractorMode::Random) {
      bags = random_bags(images.size(), s, rng);
    } else {
      const std::size_t topk = std::max(config.topk, s - 1);
      bags = bag_rows(build_training_bags(*train_sims, s, topk, rng()), images);
    }

    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    std::vector<std::size_t> step_bags;
    std::size_t step_images = 0;
    auto flush = [&] {
      if (step_bags.empty()) return;
      auto samples = collect_rollouts(policy, world, rewards, config, bags,
                                      step_bags, rng, trace);
      for (const auto& smp : samples) reward_sum += smp.reward;
      reward_count += samples.size();
      auto direction = advantage_weighted_gradient(policy, images, samples);
      check_finite(direction, "policy gradient");
      policy.apply_mask(direction, config.mask);
      opt.ascend(policy.params(), direction);
      step_bags.clear();
      step_images = 0;
    };
    for (std::size_t b = 0; b < bags.size(); ++b) {
      step_bags.push_back(b);
      step_images += bags[b].size();
      if (step_images >= config.batch_size) flush();
    }
    flush();

    const EvalResult ev = evaluate_holdout(policy, world, eval);
    run.logs.push_back({epoch, s,
                        reward_count ? reward_sum / double(reward_count) : 0.0,
                        ev.r_at_1, ev.gt_loglik});
  }
  return run;
}

void write_train_log_csv(const std::filesystem::path& path, const TrainRun& run,
                         const FileStamp& stamp) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "# schema_version=" << stamp.schema_version
      << " config_hash=" << stamp.config_hash << '\n';
  out << "epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik\n";
  out << std::setprecision(17);
  out << -1 << ',' << 0 << ',' << 0.0 << ',' << run.initial.r_at_1 << ','
      << run.initial.gt_loglik << '\n';
  for (const auto& l : run.logs) {
    out << l.epoch << ',' << l.bag_size << ',' << l.mean_reward << ','
        << l.r_at_1_holdout << ',' << l.gt_loglik << '\n';
  }
}

}  // namespace selfret::toy
