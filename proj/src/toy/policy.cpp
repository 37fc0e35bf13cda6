#include "selfret/toy/policy.hpp"

#include <algorithm>
#include <cmath>

#include "selfret/error.hpp"

namespace selfret::toy {

ToyPolicy::ToyPolicy(const Shape& shape, std::uint64_t seed, double init_scale)
    : shape_(shape) {
  if (shape.vocab < 2) throw ConfigError("policy vocabulary needs stop + 1 token");
  if (shape.image_dim == 0 || shape.token_dim == 0) {
    throw ConfigError("policy dimensions must be positive");
  }
  if (shape.max_len == 0) throw ConfigError("max_len must be at least 1");
  const std::size_t v = shape.vocab, d = shape.image_dim, e = shape.token_dim;
  theta_.assign(v * d + v * e + v + d * d + (v + 1) * e, 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> readout(0.0, init_scale);
  std::normal_distribution<double> table(0.0, 1.0 / std::sqrt(double(e)));
  auto fill = [&](Block b, auto& dist) {
    Range r = block(b);
    for (std::size_t i = 0; i < r.size; ++i) theta_[r.offset + i] = dist(rng);
  };
  fill(Block::ImageReadout, readout);
  fill(Block::TokenReadout, readout);
  fill(Block::TokenInput, table);
  Range a = block(Block::ImageAdapter);
  for (std::size_t i = 0; i < d; ++i) theta_[a.offset + i * d + i] = 1.0;
}

ToyPolicy::Range ToyPolicy::block(Block b) const {
  const std::size_t v = shape_.vocab, d = shape_.image_dim, e = shape_.token_dim;
  const std::size_t w_img = 0, w_tok = v * d, bias = w_tok + v * e,
                    adapter = bias + v, table = adapter + d * d;
  switch (b) {
    case Block::ImageReadout: return {w_img, v * d};
    case Block::TokenReadout: return {w_tok, v * e};
    case Block::Bias: return {bias, v};
    case Block::ImageAdapter: return {adapter, d * d};
    case Block::TokenInput: return {table, (v + 1) * e};
  }
  return {};
}

std::vector<double> ToyPolicy::image_feature(std::span<const double> image) const {
  const std::size_t d = shape_.image_dim;
  if (image.size() != d) throw DimError("image width does not match the policy");
  const double* a = theta_.data() + block(Block::ImageAdapter).offset;
  std::vector<double> f(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a[i * d + j] * image[j];
    f[i] = s;
  }
  return f;
}

std::vector<double> ToyPolicy::logits(std::span<const double> feature,
                                      TokenId prev) const {
  const std::size_t v = shape_.vocab, d = shape_.image_dim, e = shape_.token_dim;
  const double* w_img = theta_.data() + block(Block::ImageReadout).offset;
  const double* w_tok = theta_.data() + block(Block::TokenReadout).offset;
  const double* bias = theta_.data() + block(Block::Bias).offset;
  const double* emb = theta_.data() + block(Block::TokenInput).offset + prev * e;
  std::vector<double> out(v);
  for (std::size_t t = 0; t < v; ++t) {
    double s = bias[t];
    for (std::size_t c = 0; c < d; ++c) s += w_img[t * d + c] * feature[c];
    for (std::size_t c = 0; c < e; ++c) s += w_tok[t * e + c] * emb[c];
    out[t] = s;
  }
  return out;
}

namespace {

void log_softmax_inplace(std::vector<double>& x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - peak);
  const double lse = peak + std::log(sum);
  for (double& v : x) v -= lse;
}

}  // namespace

std::vector<double> ToyPolicy::step_log_probs(std::span<const double> image,
                                              TokenId prev) const {
  if (prev > shape_.vocab) throw VocabError("previous token out of range");
  auto lp = logits(image_feature(image), prev);
  log_softmax_inplace(lp);
  return lp;
}

SampledCaption ToyPolicy::sample(std::span<const double> image,
                                 std::mt19937_64& rng) const {
  const auto feature = image_feature(image);
  SampledCaption out;
  TokenId prev = start_token();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t t = 0; t < shape_.max_len; ++t) {
    auto lp = logits(feature, prev);
    log_softmax_inplace(lp);
    // Inverse-CDF draw; the last token absorbs rounding slack.
    const double u = unit(rng);
    double acc = 0.0;
    TokenId pick = shape_.vocab - 1;
    for (TokenId k = 0; k < shape_.vocab; ++k) {
      acc += std::exp(lp[k]);
      if (u < acc) {
        pick = k;
        break;
      }
    }
    out.log_prob += lp[pick];
    if (pick == kStopToken) break;
    out.tokens.push_back(pick);
    prev = pick;
  }
  return out;
}

TokenSeq ToyPolicy::greedy(std::span<const double> image) const {
  const auto feature = image_feature(image);
  TokenSeq out;
  TokenId prev = start_token();
  for (std::size_t t = 0; t < shape_.max_len; ++t) {
    const auto z = logits(feature, prev);
    for (double x : z) {
      if (!std::isfinite(x)) throw PolicyError("non-finite logits while decoding");
    }
    const auto pick = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
    if (pick == kStopToken) break;
    out.push_back(pick);
    prev = pick;
  }
  return out;
}

void ToyPolicy::check_caption(const TokenSeq& caption) const {
  if (caption.size() > shape_.max_len) {
    throw PolicyError("caption longer than max_len");
  }
  for (TokenId t : caption) {
    if (t == kStopToken || t >= shape_.vocab) {
      throw VocabError("caption token " + std::to_string(t) + " is not emittable");
    }
  }
}

double ToyPolicy::log_prob(std::span<const double> image, const TokenSeq& caption) const {
  check_caption(caption);
  const auto feature = image_feature(image);
  double total = 0.0;
  TokenId prev = start_token();
  const std::size_t steps = std::min(caption.size() + 1, shape_.max_len);
  for (std::size_t t = 0; t < steps; ++t) {
    auto lp = logits(feature, prev);
    log_softmax_inplace(lp);
    const TokenId y = t < caption.size() ? caption[t] : kStopToken;
    total += lp[y];
    prev = y;
  }
  return total;
}

void ToyPolicy::accumulate_grad_log_prob(std::span<const double> image,
                                         const TokenSeq& caption, double scale,
                                         std::span<double> grad) const {
  check_caption(caption);
  if (grad.size() != theta_.size()) throw DimError("gradient buffer size mismatch");
  const std::size_t v = shape_.vocab, d = shape_.image_dim, e = shape_.token_dim;
  const auto feature = image_feature(image);
  const double* w_img = theta_.data() + block(Block::ImageReadout).offset;
  const double* w_tok = theta_.data() + block(Block::TokenReadout).offset;
  const double* table = theta_.data() + block(Block::TokenInput).offset;
  double* g_img = grad.data() + block(Block::ImageReadout).offset;
  double* g_tok = grad.data() + block(Block::TokenReadout).offset;
  double* g_bias = grad.data() + block(Block::Bias).offset;
  double* g_adapter = grad.data() + block(Block::ImageAdapter).offset;
  double* g_table = grad.data() + block(Block::TokenInput).offset;

  std::vector<double> h_feature(d);
  std::vector<double> h_emb(e);
  TokenId prev = start_token();
  const std::size_t steps = std::min(caption.size() + 1, shape_.max_len);
  for (std::size_t t = 0; t < steps; ++t) {
    auto g = logits(feature, prev);
    log_softmax_inplace(g);
    const TokenId y = t < caption.size() ? caption[t] : kStopToken;
    // d log p_y / d logits = onehot(y) - p
    for (std::size_t k = 0; k < v; ++k) g[k] = (k == y ? 1.0 : 0.0) - std::exp(g[k]);

    const double* emb = table + prev * e;
    std::fill(h_feature.begin(), h_feature.end(), 0.0);
    std::fill(h_emb.begin(), h_emb.end(), 0.0);
    for (std::size_t k = 0; k < v; ++k) {
      const double gk = scale * g[k];
      g_bias[k] += gk;
      for (std::size_t c = 0; c < d; ++c) {
        g_img[k * d + c] += gk * feature[c];
        h_feature[c] += gk * w_img[k * d + c];
      }
      for (std::size_t c = 0; c < e; ++c) {
        g_tok[k * e + c] += gk * emb[c];
        h_emb[c] += gk * w_tok[k * e + c];
      }
    }
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) g_adapter[a * d + b] += h_feature[a] * image[b];
    }
    for (std::size_t c = 0; c < e; ++c) g_table[prev * e + c] += h_emb[c];
    prev = y;
  }
}

void ToyPolicy::apply_mask(std::span<double> grad, const ParamMask& mask) const {
  for (Block b : {Block::ImageReadout, Block::TokenReadout, Block::Bias,
                  Block::ImageAdapter, Block::TokenInput}) {
    const bool on = is_language(b) ? mask.language : mask.vision;
    if (on) continue;
    Range r = block(b);
    std::fill(grad.begin() + static_cast<long>(r.offset),
              grad.begin() + static_cast<long>(r.offset + r.size), 0.0);
  }
}

std::vector<TokenSeq> enumerate_captions(std::size_t vocab, std::size_t max_len) {
  double space = 1.0;
  for (std::size_t i = 0; i < max_len; ++i) space *= static_cast<double>(vocab);
  if (space > 1e4) {
    throw RangeError("caption space V^L = " + std::to_string(space) +
                     " exceeds 10^4");
  }
  std::vector<TokenSeq> out{TokenSeq{}};
  std::size_t frontier_begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t frontier_end = out.size();
    for (std::size_t i = frontier_begin; i < frontier_end; ++i) {
      for (TokenId t = 1; t < vocab; ++t) {
        TokenSeq next = out[i];
        next.push_back(t);
        out.push_back(std::move(next));
      }
    }
    frontier_begin = frontier_end;
  }
  return out;
}

std::vector<double> exact_policy_gradient(const ToyPolicy& policy,
                                          std::span<const double> image,
                                          const CaptionReward& reward,
                                          double baseline) {
  std::vector<double> grad(policy.param_count(), 0.0);
  for (const auto& c : enumerate_captions(policy.shape().vocab, policy.shape().max_len)) {
    const double p = std::exp(policy.log_prob(image, c));
    policy.accumulate_grad_log_prob(image, c, p * (reward(c) - baseline), grad);
  }
  return grad;
}

double exact_expected_reward(const ToyPolicy& policy, std::span<const double> image,
                             const CaptionReward& reward) {
  double total = 0.0;
  for (const auto& c : enumerate_captions(policy.shape().vocab, policy.shape().max_len)) {
    total += std::exp(policy.log_prob(image, c)) * reward(c);
  }
  return total;
}

}  // namespace selfret::toy
