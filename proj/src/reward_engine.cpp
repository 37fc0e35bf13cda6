#include "selfret/reward_engine.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <unordered_map>

namespace selfret {

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::RunningMean: return "running_mean";
    case BaselineKind::Greedy: return "greedy";
    case BaselineKind::None: return "none";
  }
  return "none";
}

BaselineKind parse_baseline_kind(std::string_view text) {
  if (text == "running_mean") return BaselineKind::RunningMean;
  if (text == "greedy") return BaselineKind::Greedy;
  if (text == "none") return BaselineKind::None;
  throw ConfigError("unknown baseline '" + std::string(text) +
                    "' (expected running_mean, greedy or none)");
}

void RewardConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ConfigError("running-mean decay must lie in (0, 1]");
  }
}

double sr_reward_from_similarities(double target_similarity,
                                   std::span<const double> distractor_similarities,
                                   double temperature) {
  const double t = target_similarity / temperature;
  double peak = t;
  for (double s : distractor_similarities) peak = std::max(peak, s / temperature);
  double sum = std::exp(t - peak);
  for (double s : distractor_similarities) sum += std::exp(s / temperature - peak);
  return std::min(0.0, t - peak - std::log(sum));
}

double sr_reward(std::span<const double> caption,
                 std::span<const double> target,
                 const std::vector<std::span<const double>>& distractors,
                 double temperature) {
  if (caption.size() != target.size()) {
    throw DimError("caption and target widths differ");
  }
  std::vector<double> sims;
  sims.reserve(distractors.size());
  for (const auto& d : distractors) {
    if (d.size() != caption.size()) throw DimError("distractor width differs");
    sims.push_back(dot(caption, d));
  }
  return sr_reward_from_similarities(dot(caption, target), sims, temperature);
}

std::vector<double> sr_reward_batch(const EmbeddingSet& caption_embs,
                                    const BagSet& bags,
                                    const EmbeddingSet& image_set,
                                    double temperature) {
  if (caption_embs.dim() != image_set.dim() && !caption_embs.empty()) {
    throw DimError("caption and image embeddings differ in width");
  }
  std::unordered_map<std::string, std::size_t> owner;
  for (std::size_t b = 0; b < bags.bags.size(); ++b) {
    for (const auto& m : bags.bags[b].members) {
      if (!owner.emplace(m, b).second) {
        throw PreconditionError("image '" + m + "' appears in several bags");
      }
    }
  }
  std::vector<double> rewards;
  rewards.reserve(caption_embs.size());
  std::vector<std::span<const double>> distractors;
  for (std::size_t r = 0; r < caption_embs.size(); ++r) {
    const std::string& target_id = caption_embs.id(r);
    auto it = owner.find(target_id);
    if (it == owner.end()) {
      throw KeyError("caption for '" + target_id + "' is not in any bag");
    }
    distractors.clear();
    for (const auto& m : bags.bags[it->second].members) {
      if (m != target_id) distractors.push_back(image_set.row(image_set.index_of(m)));
    }
    rewards.push_back(sr_reward(caption_embs.row(r),
                                image_set.row(image_set.index_of(target_id)),
                                distractors, temperature));
  }
  return rewards;
}

RewardTrace::RewardTrace(double decay) : decay_(decay) {
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ConfigError("running-mean decay must lie in (0, 1]");
  }
}

void RewardTrace::fold(double reward) {
  ++count_;
  if (count_ == 1) {
    mean_ = reward;
  } else if (decay_ == 1.0) {
    mean_ += (reward - mean_) / static_cast<double>(count_);
  } else {
    mean_ = decay_ * mean_ + (1.0 - decay_) * reward;
  }
}

const RewardRecord& RewardTrace::observe(double reward, std::string sample_id) {
  return observe_with_baseline(reward, baseline(), std::move(sample_id));
}

const RewardRecord& RewardTrace::observe_with_baseline(double reward,
                                                       double baseline,
                                                       std::string sample_id) {
  records_.push_back({std::move(sample_id), reward, baseline, reward - baseline});
  fold(reward);
  return records_.back();
}

void write_reward_trace_csv(const std::filesystem::path& path,
                            const RewardTrace& trace, const FileStamp& stamp) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "# schema_version=" << stamp.schema_version
      << " config_hash=" << stamp.config_hash << '\n';
  out << "step,reward,baseline,advantage\n";
  out << std::setprecision(17);
  const auto& recs = trace.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    out << i << ',' << recs[i].reward << ',' << recs[i].baseline << ','
        << recs[i].advantage << '\n';
  }
}

CurriculumSchedule make_curriculum(std::vector<std::size_t> ladder,
                                   std::size_t epochs) {
  const std::size_t stages = ladder.size();
  if (stages == 0) throw ConfigError("curriculum ladder is empty");
  if (epochs < stages) {
    throw ConfigError("curriculum needs at least one epoch per stage (" +
                      std::to_string(stages) + " stages, " +
                      std::to_string(epochs) + " epochs)");
  }
  std::vector<std::size_t> starts(stages);
  // Stage k begins at the first epoch e with floor(e * stages / epochs) == k.
  for (std::size_t k = 0; k < stages; ++k) {
    starts[k] = (k * epochs + stages - 1) / stages;
  }
  return make_curriculum(std::move(ladder), epochs, std::move(starts));
}

CurriculumSchedule make_curriculum(std::vector<std::size_t> ladder,
                                   std::size_t epochs,
                                   std::vector<std::size_t> stage_starts) {
  if (ladder.empty()) throw ConfigError("curriculum ladder is empty");
  if (ladder.front() < 2) throw ConfigError("bag sizes must be at least 2");
  for (std::size_t k = 1; k < ladder.size(); ++k) {
    if (ladder[k] <= ladder[k - 1]) {
      throw ConfigError("curriculum ladder must be strictly increasing");
    }
  }
  if (stage_starts.size() != ladder.size() || stage_starts.front() != 0) {
    throw ConfigError("stage starts must align with the ladder and begin at 0");
  }
  for (std::size_t k = 1; k < stage_starts.size(); ++k) {
    if (stage_starts[k] <= stage_starts[k - 1]) {
      throw ConfigError("stage starts must be strictly increasing");
    }
  }
  if (stage_starts.back() >= epochs) {
    throw ConfigError("last curriculum stage starts after the final epoch");
  }
  return {std::move(ladder), epochs, std::move(stage_starts)};
}

std::size_t curriculum_bag_size(const CurriculumSchedule& schedule,
                                std::size_t epoch) {
  if (epoch >= schedule.epochs) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside schedule of " +
                     std::to_string(schedule.epochs) + " epochs");
  }
  auto it = std::upper_bound(schedule.stage_starts.begin(),
                             schedule.stage_starts.end(), epoch);
  return schedule.ladder[static_cast<std::size_t>(
      it - schedule.stage_starts.begin() - 1)];
}

}  // namespace selfret
