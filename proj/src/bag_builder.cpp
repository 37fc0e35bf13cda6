#include "selfret/bag_builder.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "parallel.hpp"
#include "selfret/error.hpp"

namespace selfret {

using nlohmann::json;

std::string_view to_string(BagSource source) {
  switch (source) {
    case BagSource::Candidate: return "candidate";
    case BagSource::Curated: return "curated";
    case BagSource::Training: return "training";
  }
  return "candidate";
}

BagSource parse_bag_source(std::string_view text) {
  if (text == "candidate") return BagSource::Candidate;
  if (text == "curated") return BagSource::Curated;
  if (text == "training") return BagSource::Training;
  throw FormatError("unknown bag source '" + std::string(text) + "'");
}

SimilarityMatrix multimodal_similarity(const MultimodalSet& mm,
                                       const SimilarityOptions& options) {
  return cosine_matrix(normalize(mm.base), options);
}

double intra_bag_similarity(const SimilarityMatrix& sims,
                            std::span<const std::size_t> members,
                            AlphaMode mode) {
  if (members.size() < 2) return 1.0;
  double total = 0.0;
  std::size_t count = 0;
  if (mode == AlphaMode::QueryMean) {
    for (std::size_t k = 1; k < members.size(); ++k) {
      total += sims.at(members[0], members[k]);
      ++count;
    }
  } else {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        total += sims.at(members[a], members[b]);
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

namespace {

std::string bag_id(std::size_t s, const std::string& query) {
  return "s" + std::to_string(s) + "-" + query;
}

}  // namespace

CandidateBags create_candidate_bags(const SimilarityMatrix& sims,
                                    std::size_t s, AlphaMode mode,
                                    std::size_t threads) {
  const std::size_t n = sims.size();
  if (s < 2 || s > n) {
    throw RangeError("bag size must satisfy 2 <= s <= N (s=" +
                     std::to_string(s) + ", N=" + std::to_string(n) + ")");
  }
  CandidateBags out;
  out.bags.resize(n);
  out.alphas.resize(n);
  detail::parallel_chunks(n, threads, 64, [&](std::size_t b, std::size_t e) {
    std::vector<std::size_t> rows;
    for (std::size_t r = b; r < e; ++r) {
      NeighborList nn = topk_neighbors(sims, r, s - 1);
      rows.assign(1, r);
      Bag bag;
      bag.id = bag_id(s, sims.ids()[r]);
      bag.source = BagSource::Candidate;
      bag.members.push_back(sims.ids()[r]);
      for (const auto& nb : nn.neighbors) {
        bag.members.push_back(nb.id);
        rows.push_back(nb.index);
      }
      bag.alpha = intra_bag_similarity(sims, rows, mode);
      out.alphas[r] = bag.alpha;
      out.bags[r] = std::move(bag);
    }
  });
  return out;
}

CandidateBags create_candidate_bags(const MultimodalSet& mm, std::size_t s,
                                    AlphaMode mode, std::size_t threads) {
  if (s < 2 || s > mm.base.size()) {
    throw RangeError("bag size must satisfy 2 <= s <= N");
  }
  return create_candidate_bags(multimodal_similarity(mm, {threads, 64}), s,
                               mode, threads);
}

BagSet curate_benchmark(const std::vector<Bag>& bags,
                        const std::vector<double>& alphas) {
  if (bags.size() != alphas.size()) {
    throw PreconditionError("bags and alphas are not aligned");
  }
  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return alphas[a] > alphas[b];
  });
  BagSet out;
  out.disjoint = true;
  out.source = BagSource::Curated;
  std::unordered_set<std::string> visited;
  for (std::size_t idx : order) {
    const Bag& bag = bags[idx];
    bool clash = std::any_of(bag.members.begin(), bag.members.end(),
                             [&](const std::string& m) {
                               return visited.contains(m);
                             });
    if (clash) continue;
    visited.insert(bag.members.begin(), bag.members.end());
    Bag kept = bag;
    kept.alpha = alphas[idx];
    kept.source = BagSource::Curated;
    out.bags.push_back(std::move(kept));
    out.bag_size = std::max(out.bag_size, bag.size());
  }
  return out;
}

BagSet build_training_bags(const SimilarityMatrix& sims, std::size_t s,
                           std::size_t topk, std::uint64_t seed) {
  if (s <= 1) throw RangeError("training bag size must be at least 2");
  if (topk < s - 1) throw RangeError("topk must be at least s-1");
  const std::size_t n = sims.size();
  const auto& ids = sims.ids();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  // Unused images, with positions for O(1) removal.
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::size_t> where(n);
  std::iota(where.begin(), where.end(), 0);
  std::vector<bool> used(n, false);
  auto take = [&](std::size_t r) {
    used[r] = true;
    std::size_t pos = where[r];
    std::size_t last = pool.back();
    pool[pos] = last;
    where[last] = pos;
    pool.pop_back();
  };

  const std::size_t depth = n > 1 ? std::min(topk, n - 1) : 0;
  BagSet out;
  out.disjoint = true;
  out.source = BagSource::Training;
  out.bag_size = s;
  std::vector<std::size_t> rows;
  for (std::size_t q : order) {
    if (used[q]) continue;
    take(q);
    Bag bag;
    bag.id = bag_id(s, ids[q]);
    bag.source = BagSource::Training;
    bag.members.push_back(ids[q]);
    rows.assign(1, q);
    if (depth > 0) {
      for (const auto& nb : topk_neighbors(sims, q, depth).neighbors) {
        if (rows.size() == s) break;
        if (used[nb.index]) continue;
        take(nb.index);
        bag.members.push_back(nb.id);
        rows.push_back(nb.index);
      }
    }
    while (rows.size() < s && !pool.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      std::size_t r = pool[pick(rng)];
      take(r);
      bag.members.push_back(ids[r]);
      bag.fallback.push_back(ids[r]);
      rows.push_back(r);
    }
    bag.alpha = intra_bag_similarity(sims, rows, AlphaMode::QueryMean);
    out.bags.push_back(std::move(bag));
  }
  return out;
}

BagSet build_training_bags(const MultimodalSet& mm, std::size_t s,
                           std::size_t topk, std::uint64_t seed) {
  if (s <= 1) throw RangeError("training bag size must be at least 2");
  return build_training_bags(multimodal_similarity(mm), s, topk, seed);
}

bool is_disjoint(const std::vector<Bag>& bags) {
  std::unordered_set<std::string> seen;
  for (const auto& bag : bags) {
    for (const auto& m : bag.members) {
      if (!seen.insert(m).second) return false;
    }
  }
  return true;
}

void write_bag_file(const std::filesystem::path& path, const BagSet& set,
                    const FileStamp& stamp) {
  json bags = json::array();
  for (const auto& bag : set.bags) {
    json b{{"id", bag.id}, {"members", bag.members}, {"alpha", bag.alpha}};
    if (!bag.fallback.empty()) b["fallback"] = bag.fallback;
    bags.push_back(std::move(b));
  }
  json doc{{"schema_version", stamp.schema_version},
           {"config_hash", stamp.config_hash},
           {"source", std::string(to_string(set.source))},
           {"bag_size", set.bag_size},
           {"disjoint", set.disjoint},
           {"bags", std::move(bags)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

BagSet read_bag_file(const std::filesystem::path& path, FileStamp* stamp) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open bag file '" + path.string() + "'");
  BagSet set;
  try {
    json doc = json::parse(in);
    if (stamp) {
      stamp->schema_version = doc.at("schema_version").get<int>();
      stamp->config_hash = doc.value("config_hash", std::string{});
    }
    set.source = parse_bag_source(doc.at("source").get<std::string>());
    set.bag_size = doc.at("bag_size").get<std::size_t>();
    for (const auto& b : doc.at("bags")) {
      Bag bag;
      bag.id = b.at("id").get<std::string>();
      bag.members = b.at("members").get<std::vector<std::string>>();
      bag.alpha = b.at("alpha").get<double>();
      bag.source = set.source;
      if (b.contains("fallback")) {
        bag.fallback = b.at("fallback").get<std::vector<std::string>>();
      }
      std::unordered_set<std::string> uniq(bag.members.begin(),
                                           bag.members.end());
      if (uniq.size() != bag.members.size() || bag.members.empty()) {
        throw FormatError("bag '" + bag.id + "' has duplicate or no members");
      }
      set.bags.push_back(std::move(bag));
    }
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  set.disjoint = is_disjoint(set.bags);
  return set;
}

void export_for_review(const std::filesystem::path& path, const BagSet& set,
                       const FileStamp& stamp) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "# schema_version=" << stamp.schema_version
      << " config_hash=" << stamp.config_hash << '\n';
  out << "# bag-id\tkeep|drop\tnote\n";
  for (const auto& bag : set.bags) {
    out << bag.id << "\tkeep\t";
    for (std::size_t i = 0; i < bag.members.size(); ++i) {
      out << (i ? "," : "") << bag.members[i];
    }
    out << '\n';
  }
}

ReviewSheet read_review_sheet(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open review sheet '" + path.string() + "'");
  ReviewSheet sheet;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 2) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected bag-id<TAB>keep|drop[<TAB>note]");
    }
    ReviewRow row;
    row.bag_id = fields[0];
    if (fields[1] == "keep") {
      row.keep = true;
    } else if (fields[1] == "drop") {
      row.keep = false;
    } else {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": decision must be keep or drop, got '" + fields[1] +
                        "'");
    }
    if (fields.size() > 2) row.note = fields[2];
    sheet.rows.push_back(std::move(row));
  }
  return sheet;
}

BagSet apply_review(const BagSet& set, const ReviewSheet& sheet) {
  std::unordered_map<std::string, bool> decision;
  std::unordered_set<std::string> known;
  for (const auto& bag : set.bags) known.insert(bag.id);
  for (const auto& row : sheet.rows) {
    if (!known.contains(row.bag_id)) {
      throw KeyError("review sheet names unknown bag '" + row.bag_id + "'");
    }
    if (!decision.emplace(row.bag_id, row.keep).second) {
      throw FormatError("review sheet decides bag '" + row.bag_id + "' twice");
    }
  }
  BagSet out;
  out.disjoint = set.disjoint;
  out.source = set.source;
  out.bag_size = set.bag_size;
  for (const auto& bag : set.bags) {
    auto it = decision.find(bag.id);
    if (it == decision.end()) {
      throw IncompleteReview("no review decision for bag '" + bag.id + "'");
    }
    if (it->second) out.bags.push_back(bag);
  }
  return out;
}

}  // namespace selfret
