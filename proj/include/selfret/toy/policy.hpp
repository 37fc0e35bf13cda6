#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "selfret/toy/world.hpp"

namespace selfret::toy {

/// Which parameter blocks receive updates. "language" is the readout
/// (logit weights and bias); "vision" is the image adapter and the input
/// token embedding table.
struct ParamMask {
  bool language = true;
  bool vision = true;

  static ParamMask all() { return {true, true}; }
  static ParamMask language_only() { return {true, false}; }
  static ParamMask vision_only() { return {false, true}; }
};

struct SampledCaption {
  TokenSeq tokens;  // without the stop token
  double log_prob = 0.0;
};

/// Autoregressive linear-softmax caption policy
///   logits_t = W_img (A z) + W_tok E[prev_t] + b
/// where A is a square image adapter and E an input token table whose last
/// row is the start token. Decoding stops at the stop token or after
/// max_len emitted tokens.
class ToyPolicy {
 public:
  struct Shape {
    std::size_t vocab = 0;      // output tokens, including stop (id 0)
    std::size_t image_dim = 0;
    std::size_t token_dim = 8;
    std::size_t max_len = 4;
  };

  enum class Block { ImageReadout, TokenReadout, Bias, ImageAdapter, TokenInput };

  struct Range {
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  ToyPolicy() = default;
  /// Readout weights ~ N(0, init_scale^2), bias 0, adapter = identity,
  /// token table ~ N(0, 1/token_dim). Throws ConfigError on a bad shape.
  ToyPolicy(const Shape& shape, std::uint64_t seed, double init_scale = 0.1);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t param_count() const noexcept { return theta_.size(); }
  std::span<double> params() noexcept { return theta_; }
  std::span<const double> params() const noexcept { return theta_; }
  Range block(Block b) const;
  static bool is_language(Block b) {
    return b == Block::ImageReadout || b == Block::TokenReadout || b == Block::Bias;
  }

  bool pretrained() const noexcept { return pretrained_; }
  void set_pretrained(bool v) noexcept { pretrained_ = v; }

  /// Log-softmax over the vocabulary for one decoding step.
  std::vector<double> step_log_probs(std::span<const double> image,
                                     TokenId prev) const;
  /// Start-token id used as prev at t = 0.
  TokenId start_token() const noexcept { return shape_.vocab; }

  SampledCaption sample(std::span<const double> image, std::mt19937_64& rng) const;
  /// Argmax decoding; ties go to the lowest token id.
  TokenSeq greedy(std::span<const double> image) const;
  /// Teacher-forced log P(caption | image), including the stop step when the
  /// caption is shorter than max_len. Throws VocabError for invalid tokens
  /// and PolicyError for captions longer than max_len.
  double log_prob(std::span<const double> image, const TokenSeq& caption) const;
  /// grad += scale * d log P(caption | image) / d theta.
  void accumulate_grad_log_prob(std::span<const double> image,
                                const TokenSeq& caption, double scale,
                                std::span<double> grad) const;

  /// Zeroes the entries of `grad` that `mask` freezes.
  void apply_mask(std::span<double> grad, const ParamMask& mask) const;

 private:
  std::vector<double> image_feature(std::span<const double> image) const;
  std::vector<double> logits(std::span<const double> feature, TokenId prev) const;
  void check_caption(const TokenSeq& caption) const;

  Shape shape_;
  std::vector<double> theta_;
  bool pretrained_ = false;
};

/// Every caption the policy can emit (sequences of non-stop tokens of
/// length 0..max_len). Throws RangeError when vocab^max_len > 10^4.
std::vector<TokenSeq> enumerate_captions(std::size_t vocab, std::size_t max_len);

using CaptionReward = std::function<double(const TokenSeq&)>;

/// sum_c P(c) (R(c) - baseline) d log P(c) / d theta, by enumeration.
std::vector<double> exact_policy_gradient(const ToyPolicy& policy,
                                          std::span<const double> image,
                                          const CaptionReward& reward,
                                          double baseline = 0.0);
/// sum_c P(c) R(c), by enumeration.
double exact_expected_reward(const ToyPolicy& policy, std::span<const double> image,
                             const CaptionReward& reward);

}  // namespace selfret::toy
