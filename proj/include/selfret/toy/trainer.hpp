#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfret/bag_builder.hpp"
#include "selfret/metrics.hpp"
#include "selfret/reward_engine.hpp"
#include "selfret/toy/policy.hpp"
#include "selfret/toy/world.hpp"

namespace selfret::toy {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

/// Gradient-ascent optimizer over the flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::size_t params);

  /// params += update(direction); frozen entries of `direction` must already
  /// be zero.
  void ascend(std::span<double> params, std::span<const double> direction);

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::size_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// ---------------------------------------------------------------------------
// MLE pretraining
// ---------------------------------------------------------------------------

struct MleConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 40;
  double learning_rate = 0.03;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  ParamMask mask = ParamMask::all();
};

struct CaptionPair {
  std::size_t image = 0;  // row in the split
  TokenSeq caption;
};

std::vector<CaptionPair> caption_pairs(const WorldSplit& split);

struct LossAndGradient {
  double loss = 0.0;             // -mean log P
  std::vector<double> gradient;  // d loss / d theta
};

/// Teacher-forced negative mean log-likelihood of `pairs` and its gradient.
LossAndGradient mle_loss_and_gradient(const ToyPolicy& policy,
                                      const EmbeddingSet& images,
                                      std::span<const CaptionPair> pairs);

/// Mean log P(gt | image) over every ground-truth caption of the split.
double mean_gt_loglik(const ToyPolicy& policy, const WorldSplit& split);

struct MleResult {
  double initial_loglik = 0.0;
  std::vector<double> epoch_loglik;  // training-set mean after each epoch
};

/// Minibatch teacher forcing. Throws TrainingError on a non-finite loss.
MleResult mle_pretrain(ToyPolicy& policy, const ToyWorld& world,
                       const MleConfig& config);

// ---------------------------------------------------------------------------
// Self-retrieval fine-tuning
// ---------------------------------------------------------------------------

enum class DistractorMode {
  Random,      // random partition of the training images into bags
  HardBags,    // fixed-size top-k training bags
  Curriculum,  // top-k training bags with a growing size schedule
};

enum class RewardKind { SelfRetrieval, Joint };

std::string_view to_string(DistractorMode mode);
DistractorMode parse_distractor_mode(std::string_view text);
std::string_view to_string(RewardKind kind);
RewardKind parse_reward_kind(std::string_view text);

// Toy defaults come from a coarse sweep over lr, epochs, batch and mask; the
// full-size reference run used lr 9e-8, batch 100, constant schedule.
struct SrConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 20;  // images per update
  double learning_rate = 0.2;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 11;
  RewardConfig reward;
  RewardKind reward_kind = RewardKind::SelfRetrieval;
  DistractorMode mode = DistractorMode::Curriculum;
  std::size_t bag_size = 5;  // Random and HardBags
  std::vector<std::size_t> ladder = kDefaultLadder;  // Curriculum
  std::size_t topk = 200;
  ParamMask mask = ParamMask::vision_only();
  std::size_t holdout_bag_size = 5;
  std::uint64_t eval_seed = 99;

  void validate() const;
};

/// Fixed held-out evaluation: top-k bags over the held-out split.
struct HoldoutEval {
  BagSet bags;
};

HoldoutEval make_holdout_eval(const ToyWorld& world, std::size_t bag_size,
                              std::size_t topk, std::uint64_t seed);

struct EvalResult {
  double r_at_1 = 0.0;
  double gt_loglik = 0.0;
};

/// Greedy captions for every held-out image scored against the held-out bags,
/// plus the mean held-out ground-truth log-likelihood.
EvalResult evaluate_holdout(const ToyPolicy& policy, const ToyWorld& world,
                            const HoldoutEval& eval);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t bag_size = 0;
  double mean_reward = 0.0;
  double r_at_1_holdout = 0.0;
  double gt_loglik = 0.0;
};

struct TrainRun {
  SrConfig config;
  bool cold_start = false;
  EvalResult initial;
  std::vector<EpochLog> logs;
};

struct RolloutSample {
  std::size_t image = 0;  // training row
  std::size_t bag = 0;
  TokenSeq caption;
  double sr = 0.0;
  double cider = 0.0;
  double greedy_sr = 0.0;     // filled when the baseline is greedy
  double greedy_cider = 0.0;
  double reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;
};

/// Scores captions for the fine-tuning reward: SR against a bag and CIDEr-D
/// against the image's ground-truth captions.
class RewardModel {
 public:
  RewardModel(const ToyWorld& world, const SrConfig& config);

  double self_retrieval(const TokenSeq& caption, std::size_t image,
                        std::span<const std::size_t> bag_rows) const;
  double cider(const TokenSeq& caption, std::size_t image) const;
  bool uses_cider() const noexcept { return config_.reward_kind == RewardKind::Joint; }
  double combine(double sr, double cider) const;

 private:
  const ToyWorld& world_;
  SrConfig config_;
  std::vector<std::vector<Tokens>> refs_;
  std::optional<CiderD> cider_;
};

/// Samples one caption per image of `rows`, scores it and fills in the
/// baseline and advantage (updating `trace` for running-mean baselines).
std::vector<RolloutSample> collect_rollouts(const ToyPolicy& policy,
                                            const ToyWorld& world,
                                            const RewardModel& rewards,
                                            const SrConfig& config,
                                            const std::vector<std::vector<std::size_t>>& bags,
                                            std::span<const std::size_t> bag_ids,
                                            std::mt19937_64& rng,
                                            RewardTrace& trace);

/// mean_i advantage_i * d log P(caption_i | image_i) / d theta.
std::vector<double> advantage_weighted_gradient(const ToyPolicy& policy,
                                                const EmbeddingSet& images,
                                                std::span<const RolloutSample> samples);

/// REINFORCE fine-tuning with the configured reward, baseline and bag
/// schedule. Throws TrainingError on non-finite gradients.
TrainRun sr_finetune(ToyPolicy& policy, const ToyWorld& world, const SrConfig& config);

/// Bag size used at `epoch` under the config's distractor mode.
std::size_t bag_size_for_epoch(const SrConfig& config, std::size_t epoch);

/// CSV columns epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik; the
/// first data row (epoch -1) is the pre-training evaluation.
void write_train_log_csv(const std::filesystem::path& path, const TrainRun& run,
                         const FileStamp& stamp = {});

}  // namespace selfret::toy
