#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfret/bag_builder.hpp"
#include "selfret/embedding_store.hpp"
#include "selfret/error.hpp"

namespace selfret {

enum class BaselineKind { RunningMean, Greedy, None };

std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view text);

struct RewardConfig {
  double temperature = 1.0;  // softmax over sim / temperature
  double lambda = 0.5;       // weight of CIDEr in the joint reward
  BaselineKind baseline = BaselineKind::RunningMean;
  double decay = 1.0;        // 1 = cumulative mean, <1 = exponential

  /// Throws ConfigError on temperature <= 0, lambda < 0, decay outside (0, 1].
  void validate() const;
};

/// The lambda values swept in the joint-reward ablation.
inline constexpr std::array<double, 6> kLambdaGrid{0.0, 0.1, 0.3,
                                                   0.5, 0.7, 1.0};

/// log softmax mass of the target among {target} U distractors, computed from
/// similarities with max-subtraction. Always <= 0.
double sr_reward_from_similarities(double target_similarity,
                                   std::span<const double> distractor_similarities,
                                   double temperature = 1.0);

/// Contrastive self-retrieval reward
///   R = sim(c,i)/T - log sum_{i' in D u {i}} exp(sim(c,i')/T).
/// Vectors are expected to be unit norm; throws DimError on width mismatch.
double sr_reward(std::span<const double> caption,
                 std::span<const double> target,
                 const std::vector<std::span<const double>>& distractors,
                 double temperature = 1.0);

/// Reward of each caption (rows keyed by target image id) against the other
/// members of the bag holding its target. Output follows caption row order.
/// Throws KeyError when a caption's image is in no bag and
/// PreconditionError when it is in more than one.
std::vector<double> sr_reward_batch(const EmbeddingSet& caption_embs,
                                    const BagSet& bags,
                                    const EmbeddingSet& image_set,
                                    double temperature = 1.0);

inline double joint_reward(double sr, double cider, double lambda) {
  return sr + lambda * cider;
}

struct RewardRecord {
  std::string sample_id;
  double reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;
};

/// Per-stream reward log with a running-mean baseline.
class RewardTrace {
 public:
  explicit RewardTrace(double decay = 1.0);

  /// Records `reward` against the current running mean (0 before the first
  /// observation), then folds it into the mean.
  const RewardRecord& observe(double reward, std::string sample_id = {});
  /// Records `reward` against an externally supplied baseline (greedy or
  /// none); the running mean is still updated.
  const RewardRecord& observe_with_baseline(double reward, double baseline,
                                            std::string sample_id = {});

  /// Baseline that the next observe() call would use.
  double baseline() const noexcept { return count_ == 0 ? 0.0 : mean_; }
  double mean() const noexcept { return mean_; }
  std::size_t count() const noexcept { return count_; }
  double decay() const noexcept { return decay_; }
  const std::vector<RewardRecord>& records() const noexcept {
    return records_;
  }
  void clear_records() { records_.clear(); }

 private:
  void fold(double reward);

  double decay_;
  double mean_ = 0.0;
  std::size_t count_ = 0;
  std::vector<RewardRecord> records_;
};

inline const RewardRecord& update_running_baseline(RewardTrace& trace,
                                                   double reward) {
  return trace.observe(reward);
}

/// CSV with columns step,reward,baseline,advantage.
void write_reward_trace_csv(const std::filesystem::path& path,
                            const RewardTrace& trace,
                            const FileStamp& stamp = {});

/// Reward of the policy's deterministic argmax caption for `image`.
/// Policy must expose `greedy(image)`; any exception from decoding, or a
/// non-finite reward, surfaces as PolicyError.
template <class Policy, class Image, class RewardFn>
double greedy_baseline(const Policy& policy, const Image& image,
                       RewardFn&& reward_fn) {
  double value;
  try {
    value = reward_fn(policy.greedy(image));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw PolicyError(std::string("greedy decoding failed: ") + e.what());
  }
  if (!std::isfinite(value)) throw PolicyError("greedy caption reward is not finite");
  return value;
}

/// Staged bag-size schedule: stage k covers epochs [starts[k], starts[k+1]).
struct CurriculumSchedule {
  std::vector<std::size_t> ladder;
  std::size_t epochs = 0;
  std::vector<std::size_t> stage_starts;
};

/// Equal-length stages. Throws ConfigError when the ladder is empty or not
/// strictly increasing, or when there are fewer epochs than stages.
CurriculumSchedule make_curriculum(std::vector<std::size_t> ladder,
                                   std::size_t epochs);
/// Explicit stage starts; stage_starts[0] must be 0 and strictly increasing.
CurriculumSchedule make_curriculum(std::vector<std::size_t> ladder,
                                   std::size_t epochs,
                                   std::vector<std::size_t> stage_starts);

/// Throws RangeError when epoch >= schedule.epochs.
std::size_t curriculum_bag_size(const CurriculumSchedule& schedule,
                                std::size_t epoch);

inline const std::vector<std::size_t> kDefaultLadder{2, 3, 5, 7, 10};

}  // namespace selfret
