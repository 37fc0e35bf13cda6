#include "selfret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "selfret/error.hpp"
#include "selfret/text.hpp"

namespace selfret {

using nlohmann::json;

namespace {

// Strict argmax of sim(caption, target) over the candidate rows.
bool strict_hit(std::span<const double> caption, const EmbeddingSet& images,
                std::size_t target, std::span<const std::size_t> distractors) {
  const double t = dot(caption, images.row(target));
  for (std::size_t d : distractors) {
    if (!(t > dot(caption, images.row(d)))) return false;
  }
  return true;
}

std::span<const double> caption_for(const EmbeddingSet& caption_embs,
                                    const std::string& image_id) {
  auto r = caption_embs.find(image_id);
  if (!r) throw KeyError("no caption embedding for image '" + image_id + "'");
  return caption_embs.row(*r);
}

void check_dims(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (!a.empty() && !b.empty() && a.dim() != b.dim()) {
    throw DimError("caption and image embeddings differ in width (" +
                   std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) +
                   ")");
  }
}

}  // namespace

RetrievalReport recall_at_1_bags(const EmbeddingSet& caption_embs,
                                 const BagSet& bags,
                                 const EmbeddingSet& image_set) {
  check_dims(caption_embs, image_set);
  RetrievalReport report;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> others;
  for (const auto& bag : bags.bags) {
    rows.clear();
    for (const auto& m : bag.members) rows.push_back(image_set.index_of(m));
    BagHits bh{bag.id, bag.members, {}};
    auto& per_size = report.by_size[bag.size()];
    for (std::size_t k = 0; k < rows.size(); ++k) {
      others.clear();
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (j != k) others.push_back(rows[j]);
      }
      const bool hit = strict_hit(caption_for(caption_embs, bag.members[k]),
                                  image_set, rows[k], others);
      bh.hits.push_back(hit);
      per_size.attempts += 1;
      report.overall.attempts += 1;
      if (hit) {
        per_size.hits += 1;
        report.overall.hits += 1;
      }
    }
    report.per_bag.push_back(std::move(bh));
  }
  return report;
}

RetrievalReport recall_at_1_random(const EmbeddingSet& caption_embs,
                                   const EmbeddingSet& image_set,
                                   std::size_t n_distractors,
                                   std::uint64_t seed) {
  check_dims(caption_embs, image_set);
  const std::size_t n = image_set.size();
  if (n_distractors >= n) {
    throw RangeError("n_distractors (" + std::to_string(n_distractors) +
                     ") must be smaller than the image count (" +
                     std::to_string(n) + ")");
  }
  std::mt19937_64 rng(seed);
  RetrievalReport report;
  auto& per_size = report.by_size[n_distractors + 1];
  std::vector<std::size_t> pool(n);
  std::vector<std::size_t> picked;
  for (std::size_t r = 0; r < n; ++r) {
    const auto caption = caption_for(caption_embs, image_set.id(r));
    // Partial Fisher-Yates over every index except r.
    std::iota(pool.begin(), pool.end(), 0);
    std::swap(pool[r], pool[n - 1]);
    const std::size_t m = n - 1;
    picked.clear();
    for (std::size_t k = 0; k < n_distractors; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, m - 1);
      std::size_t j = pick(rng);
      std::swap(pool[k], pool[j]);
      picked.push_back(pool[k]);
    }
    const bool hit = strict_hit(caption, image_set, r, picked);
    std::vector<std::string> members{image_set.id(r)};
    for (std::size_t d : picked) members.push_back(image_set.id(d));
    BagHits bh{"rd-" + image_set.id(r), std::move(members), {}};
    bh.hits.assign(1, hit);
    report.per_bag.push_back(std::move(bh));
    per_size.attempts += 1;
    report.overall.attempts += 1;
    if (hit) {
      per_size.hits += 1;
      report.overall.hits += 1;
    }
  }
  return report;
}

void write_report_json(const std::filesystem::path& path,
                       const RetrievalReport& report, const FileStamp& stamp) {
  json sizes = json::array();
  for (const auto& [size, c] : report.by_size) {
    sizes.push_back({{"bag_size", size},
                     {"hits", c.hits},
                     {"attempts", c.attempts},
                     {"r_at_1", c.r_at_1()}});
  }
  json bags = json::array();
  for (const auto& b : report.per_bag) {
    std::vector<int> hits(b.hits.begin(), b.hits.end());
    bags.push_back({{"id", b.bag_id}, {"members", b.members}, {"hits", hits}});
  }
  json doc{{"schema_version", stamp.schema_version},
           {"config_hash", stamp.config_hash},
           {"r_at_1", report.r_at_1()},
           {"hits", report.overall.hits},
           {"attempts", report.overall.attempts},
           {"by_size", std::move(sizes)},
           {"bags", std::move(bags)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

void write_report_csv(const std::filesystem::path& path,
                      const RetrievalReport& report, const FileStamp& stamp) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "# schema_version=" << stamp.schema_version
      << " config_hash=" << stamp.config_hash << '\n';
  out << "bag_size,hits,attempts,r_at_1\n" << std::setprecision(10);
  for (const auto& [size, c] : report.by_size) {
    out << size << ',' << c.hits << ',' << c.attempts << ',' << c.r_at_1()
        << '\n';
  }
  out << "all," << report.overall.hits << ',' << report.overall.attempts << ','
      << report.r_at_1() << '\n';
}

// ---------------------------------------------------------------------------

NgramCounts count_ngrams(const Tokens& tokens, int max_n) {
  NgramCounts counts;
  const std::size_t len = tokens.size();
  for (int n = 1; n <= max_n; ++n) {
    for (std::size_t i = 0; i + n <= len; ++i) {
      std::string key = tokens[i];
      for (int k = 1; k < n; ++k) {
        key += ' ';
        key += tokens[i + k];
      }
      ++counts[key];
    }
  }
  return counts;
}

namespace {

int ngram_order(const std::string& key) {
  return 1 + static_cast<int>(std::count(key.begin(), key.end(), ' '));
}

}  // namespace

NgramStats collect_ngram_stats(const std::vector<std::vector<Tokens>>& references) {
  NgramStats stats;
  stats.corpus_size = references.size();
  for (const auto& refs : references) {
    std::unordered_set<std::string> seen;
    for (const auto& ref : refs) {
      NgramCounts counts = count_ngrams(ref);
      std::array<NgramCounts, 4> split;
      for (const auto& [key, c] : counts) {
        split[ngram_order(key) - 1][key] = c;
        seen.insert(key);
      }
      for (int n = 0; n < 4; ++n) {
        stats.term_frequencies[n].push_back(std::move(split[n]));
      }
    }
    for (const auto& key : seen) ++stats.document_frequency[key];
  }
  return stats;
}

CiderD::CiderD(const std::vector<std::vector<Tokens>>& reference_corpus,
               double sigma)
    : stats_(collect_ngram_stats(reference_corpus)),
      log_ref_len_(std::log(static_cast<double>(reference_corpus.size()))),
      sigma_(sigma) {}

CiderD::Vec CiderD::vectorize(const NgramCounts& counts) const {
  Vec v;
  for (const auto& [key, tf] : counts) {
    auto it = stats_.document_frequency.find(key);
    const double df = std::log(std::max(
        1.0, it == stats_.document_frequency.end() ? 0.0 : double(it->second)));
    const int n = ngram_order(key) - 1;
    const double w = double(tf) * (log_ref_len_ - df);
    v.weights[n][key] = w;
    v.norms[n] += w * w;
    if (n == 1) v.length += tf;
  }
  for (double& x : v.norms) x = std::sqrt(x);
  return v;
}

std::array<double, 4> CiderD::similarity(const Vec& hyp, const Vec& ref) const {
  const double delta = hyp.length - ref.length;
  std::array<double, 4> val{};
  for (int n = 0; n < 4; ++n) {
    for (const auto& [key, w] : hyp.weights[n]) {
      auto it = ref.weights[n].find(key);
      const double r = it == ref.weights[n].end() ? 0.0 : it->second;
      val[n] += std::min(w, r) * r;
    }
    if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) {
      val[n] /= hyp.norms[n] * ref.norms[n];
    }
    val[n] *= std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
  }
  return val;
}

double CiderD::score(const Tokens& candidate, const std::vector<Tokens>& refs) const {
  if (refs.empty()) throw PreconditionError("CIDEr-D needs at least one reference");
  const Vec hyp = vectorize(count_ngrams(candidate));
  std::array<double, 4> total{};
  for (const auto& ref : refs) {
    const auto s = similarity(hyp, vectorize(count_ngrams(ref)));
    for (int n = 0; n < 4; ++n) total[n] += s[n];
  }
  const double avg = (total[0] + total[1] + total[2] + total[3]) / 4.0;
  return avg / static_cast<double>(refs.size()) * 10.0;
}

CiderResult cider_d_tokens(const std::vector<Tokens>& candidates,
                           const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) {
    throw PreconditionError("candidates and reference sets are not aligned");
  }
  CiderD scorer(references);
  CiderResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) {
      std::cerr << "warning: empty candidate " << i << " scores 0\n";
      out.scores.push_back(0.0);
      continue;
    }
    out.scores.push_back(scorer.score(candidates[i], references[i]));
  }
  if (!out.scores.empty()) {
    out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) /
               static_cast<double>(out.scores.size());
  }
  return out;
}

namespace {

std::vector<std::vector<Tokens>> tokenize_refs(
    const std::vector<std::vector<std::string>>& references) {
  std::vector<std::vector<Tokens>> out;
  out.reserve(references.size());
  for (const auto& refs : references) {
    if (refs.empty()) throw PreconditionError("empty reference set");
    auto& t = out.emplace_back();
    for (const auto& r : refs) t.push_back(tokenize(r));
  }
  return out;
}

std::vector<Tokens> tokenize_all(const std::vector<std::string>& captions) {
  std::vector<Tokens> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.push_back(tokenize(c));
  return out;
}

}  // namespace

CiderResult cider_d(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
  return cider_d_tokens(tokenize_all(candidates), tokenize_refs(references));
}

BleuResult bleu4_tokens(const std::vector<Tokens>& candidates,
                        const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) {
    throw PreconditionError("candidates and reference sets are not aligned");
  }
  std::array<double, 4> matched{};
  std::array<double, 4> total{};
  BleuResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw PreconditionError("empty reference set");
    out.candidate_length += cand.size();
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) {
        best = r.size();
      }
    }
    out.reference_length += best;

    NgramCounts cand_counts = count_ngrams(cand);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [key, c] : count_ngrams(r)) {
        max_ref[key] = std::max(max_ref[key], c);
      }
    }
    for (const auto& [key, c] : cand_counts) {
      auto it = max_ref.find(key);
      const int clip = it == max_ref.end() ? 0 : std::min(c, it->second);
      matched[ngram_order(key) - 1] += clip;
    }
    for (int n = 1; n <= 4; ++n) {
      if (cand.size() >= static_cast<std::size_t>(n)) total[n - 1] += cand.size() - n + 1;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    out.precisions[n] = total[n] > 0 ? matched[n] / total[n] : 0.0;
    if (out.precisions[n] <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(out.precisions[n]);
    }
  }
  if (out.candidate_length == 0) {
    out.brevity_penalty = 0.0;
  } else if (out.candidate_length > out.reference_length) {
    out.brevity_penalty = 1.0;
  } else {
    out.brevity_penalty = std::exp(1.0 - double(out.reference_length) /
                                             double(out.candidate_length));
  }
  out.score = zero ? 0.0 : out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

BleuResult bleu4(const std::vector<std::string>& candidates,
                 const std::vector<std::vector<std::string>>& references) {
  return bleu4_tokens(tokenize_all(candidates), tokenize_refs(references));
}

// ---------------------------------------------------------------------------

double clip_score(const EmbeddingSet& caption_embs,
                  const EmbeddingSet& image_embs, double w) {
  check_dims(caption_embs, image_embs);
  if (caption_embs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < caption_embs.size(); ++r) {
    const auto image = image_embs.row(image_embs.index_of(caption_embs.id(r)));
    total += w * std::max(dot(caption_embs.row(r), image), 0.0);
  }
  return total / static_cast<double>(caption_embs.size());
}

std::size_t vocab_diversity(const std::vector<std::string>& captions,
                            std::size_t min_freq) {
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& c : captions) {
    for (auto& t : tokenize(c)) ++freq[t];
  }
  return static_cast<std::size_t>(std::count_if(
      freq.begin(), freq.end(), [&](const auto& kv) { return kv.second >= min_freq; }));
}

MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / n);
  return out;
}

CaptionStats caption_stats(
    const std::vector<std::string>& captions,
    const std::function<std::vector<std::string>(const std::string&)>& tokenizer) {
  std::vector<double> words;
  std::vector<double> tokens;
  words.reserve(captions.size());
  tokens.reserve(captions.size());
  for (const auto& c : captions) {
    words.push_back(static_cast<double>(split_words(c).size()));
    tokens.push_back(static_cast<double>(tokenizer(c).size()));
  }
  return {mean_sd(words), mean_sd(tokens)};
}

}  // namespace selfret
