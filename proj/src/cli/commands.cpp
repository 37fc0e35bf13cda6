#include "selfret/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"
#include "selfret/bag_builder.hpp"
#include "selfret/cli/report.hpp"
#include "selfret/cli/run_config.hpp"
#include "selfret/error.hpp"
#include "selfret/metrics.hpp"
#include "selfret/text.hpp"
#include "selfret/toy/checkpoint.hpp"
#include "selfret/toy/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace selfret::cli {

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  std::vector<std::string> sets;
  json overrides = json::object();

  RunConfig config() {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_path(overrides, s.substr(0, eq), s.substr(eq + 1));
    }
    std::optional<fs::path> file;
    if (!config_path.empty()) file = config_path;
    return resolve_config(file, overrides);
  }
};

void add_common(CLI::App* app, Context& ctx) {
  app->add_option("--config", ctx.config_path, "JSON run configuration");
  app->add_option("--set", ctx.sets, "Override a config field, e.g. --set sr.epochs=20");
}

// A flag that overrides one config field.
void add_override(CLI::App* app, Context& ctx, const std::string& flag,
                  const std::string& path, const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&ctx, path](const std::string& v) { set_path(ctx.overrides, path, v); },
      help + " (config: " + path + ")");
}

fs::path sidecar(const fs::path& emb) {
  fs::path p = emb;
  p.replace_extension(".jsonl");
  return p;
}

CaptionManifest ids_only(const std::vector<std::string>& ids) {
  std::vector<ManifestRecord> records;
  for (const auto& id : ids) records.push_back({id, {}});
  return CaptionManifest(std::move(records));
}

EmbeddingSet load_set(const fs::path& path, const std::string& manifest = {}) {
  const fs::path m = manifest.empty() ? sidecar(path) : fs::path(manifest);
  if (!fs::exists(m)) {
    throw FormatError("no id manifest for '" + path.string() + "' (looked for '" +
                      m.string() + "')");
  }
  return ingest_embeddings(path, m);
}

void save_set(const fs::path& path, const EmbeddingSet& set, const FileStamp& stamp,
              const CaptionManifest* manifest = nullptr) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_embeddings(path, set);
  write_manifest(sidecar(path), manifest ? *manifest : ids_only(set.ids()), stamp);
}

EmbeddingSet load_table(const fs::path& path) {
  const auto raw = read_matrix_file(path, kEmbeddingMagic);
  std::vector<std::string> ids;
  for (std::uint32_t r = 0; r < raw.rows; ++r) ids.push_back("t" + std::to_string(r));
  return ingest_embeddings(path, ids_only(ids));
}

json report_json(const RetrievalReport& report, const std::string& protocol,
                 const RunConfig& rc) {
  json by_size = json::object();
  for (const auto& [size, rcount] : report.by_size) {
    by_size[std::to_string(size)] = {
        {"hits", rcount.hits}, {"attempts", rcount.attempts}, {"r_at_1", rcount.r_at_1()}};
  }
  return {{"protocol", protocol},
          {"r_at_1", report.r_at_1()},
          {"hits", report.overall.hits},
          {"attempts", report.overall.attempts},
          {"by_size", by_size},
          {"config_hash", rc.hash_hex()}};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

toy::ToyPolicy fresh_policy(const RunConfig& rc, const toy::ToyWorld& world) {
  return toy::ToyPolicy({world.vocab_size(), world.config.dim, rc.policy.token_dim,
                         rc.policy.max_len},
                        rc.policy.seed, rc.policy.init_scale);
}

void check_policy_fits(const toy::ToyPolicy& p, const toy::ToyWorld& w) {
  if (p.shape().vocab != w.vocab_size() || p.shape().image_dim != w.config.dim) {
    throw ConfigError("checkpoint shape (vocab " + std::to_string(p.shape().vocab) + ", dim " +
                      std::to_string(p.shape().image_dim) + ") does not fit the world (vocab " +
                      std::to_string(w.vocab_size()) + ", dim " +
                      std::to_string(w.config.dim) + ")");
  }
}

void write_split(const fs::path& dir, const std::string& name, const toy::ToyWorld& world,
                 const toy::WorldSplit& split, const FileStamp& stamp) {
  save_set(dir / (name + ".emb"), split.images, stamp, &split.manifest);
  std::vector<std::string> ids;
  std::vector<double> values;
  for (std::size_t i = 0; i < split.captions.size(); ++i) {
    for (std::size_t k = 0; k < split.captions[i].size(); ++k) {
      ids.push_back(split.images.id(i) + "/" + std::to_string(k));
      const auto e = toy::embed_caption(split.captions[i][k], world);
      values.insert(values.end(), e.begin(), e.end());
    }
  }
  save_set(dir / (name + "_texts.emb"), EmbeddingSet(ids, world.config.dim, values), stamp);
}

std::vector<std::string> first_captions(const CaptionManifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.records()) out.push_back(r.captions.empty() ? "" : r.captions.front());
  return out;
}

std::vector<std::vector<std::string>> references_for(const CaptionManifest& candidates,
                                                     const CaptionManifest& refs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : candidates.records()) {
    const auto* rec = refs.find(r.id);
    if (!rec) throw KeyError("no references for '" + r.id + "'");
    if (rec->captions.empty()) throw PreconditionError("empty reference set for '" + r.id + "'");
    out.push_back(rec->captions);
  }
  return out;
}

std::vector<std::string> all_captions(const CaptionManifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.records()) out.insert(out.end(), r.captions.begin(), r.captions.end());
  return out;
}

// --------------------------------------------------------------------------

struct Paths {
  std::string a, b, c, d, manifest, manifest2, out, csv, review, export_review;
  bool flag = false;
  std::size_t samples = 20000;
  std::uint64_t seed = 5;
};

void setup(CLI::App& app, Context& ctx, Paths& p) {
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Validate, normalize and store an embedding file");
  add_common(ingest, ctx);
  ingest->add_option("--embeddings", p.a, "EMB1 file")->required();
  ingest->add_option("--manifest", p.manifest, "JSONL manifest, one record per row")->required();
  ingest->add_option("--out", p.out, "Output EMB1 file (manifest written alongside)")->required();
  ingest->callback([&] {
    const auto rc = ctx.config();
    const auto set = normalize(ingest_embeddings(p.a, p.manifest));
    const auto manifest = read_manifest(p.manifest);
    save_set(p.out, set, rc.stamp(), &manifest);
    ctx.out << "ingested " << set.size() << " x " << set.dim() << " -> " << p.out << '\n';
  });

  auto* mm = app.add_subcommand("multimodal", "Concatenate image and mean caption embeddings");
  add_common(mm, ctx);
  mm->add_option("--images", p.a, "Image EMB1 file")->required();
  mm->add_option("--captions", p.manifest, "Caption manifest")->required();
  mm->add_option("--texts", p.b, "Caption embedding EMB1, one row per caption in manifest order")
      ->required();
  mm->add_option("--image-manifest", p.manifest2, "Ids for --images (default: its sidecar)");
  mm->add_option("--out", p.out, "Output EMB1 file")->required();
  mm->add_flag_callback("--no-half-norm",
                        [&] { set_path(ctx.overrides, "bags.half_norm", "false"); },
                        "Concatenate raw halves (config: bags.half_norm)");
  mm->callback([&] {
    const auto rc = ctx.config();
    const auto captions = read_manifest(p.manifest);
    EmbeddingSet images;
    if (!p.manifest2.empty() || fs::exists(sidecar(p.a))) {
      images = load_set(p.a, p.manifest2);
    } else {
      images = ingest_embeddings(p.a, captions);
    }
    MultimodalOptions opts;
    opts.half_norm = rc.bags.half_norm;
    const auto m = build_multimodal_from_table(images, captions, load_table(p.b), opts);
    save_set(p.out, m.base, rc.stamp(), &captions);
    ctx.out << "multimodal " << m.base.size() << " x " << m.base.dim() << " -> " << p.out
            << '\n';
  });

  auto* bb = app.add_subcommand("build-bags", "One candidate bag per image from its nearest neighbors");
  add_common(bb, ctx);
  bb->add_option("--multimodal", p.a, "Multimodal EMB1 file")->required();
  bb->add_option("--manifest", p.manifest, "Ids (default: sidecar)");
  bb->add_option("--out", p.out, "Output bag file")->required();
  add_override(bb, ctx, "--size", "bags.size", "Bag size");
  add_override(bb, ctx, "--alpha", "bags.alpha", "query_mean or all_pairs");
  add_override(bb, ctx, "--threads", "bags.threads", "Worker threads");
  bb->callback([&] {
    const auto rc = ctx.config();
    const auto set = load_set(p.a, p.manifest);
    const MultimodalSet m{set, set.dim() / 2, set.dim() - set.dim() / 2, rc.bags.half_norm};
    auto cands = create_candidate_bags(m, rc.bags.size, rc.bags.alpha, rc.bags.threads);
    BagSet out{std::move(cands.bags), false, BagSource::Candidate, rc.bags.size};
    write_bag_file(p.out, out, rc.stamp());
    double mean = 0.0;
    for (double a : cands.alphas) mean += a;
    ctx.out << "built " << out.bags.size() << " candidate bags of size " << rc.bags.size
            << " (mean alpha " << mean / std::max<std::size_t>(1, cands.alphas.size()) << ") -> "
            << p.out << '\n';
  });

  auto* cur = app.add_subcommand("curate", "Greedy disjoint selection, optional manual review");
  add_common(cur, ctx);
  cur->add_option("--bags", p.a, "Candidate bag file")->required();
  cur->add_option("--out", p.out, "Output bag file")->required();
  cur->add_option("--review-sheet", p.review, "Apply a filled-in review sheet");
  cur->add_option("--export-review", p.export_review, "Write a review sheet for the curated bags");
  cur->callback([&] {
    const auto rc = ctx.config();
    const auto in = read_bag_file(p.a);
    std::vector<double> alphas;
    for (const auto& b : in.bags) alphas.push_back(b.alpha);
    auto curated = curate_benchmark(in.bags, alphas);
    curated.bag_size = in.bag_size;
    const std::size_t before = curated.bags.size();
    if (!p.review.empty()) curated = apply_review(curated, read_review_sheet(p.review));
    write_bag_file(p.out, curated, rc.stamp());
    if (!p.export_review.empty()) export_for_review(p.export_review, curated, rc.stamp());
    ctx.out << "curated " << before << " of " << in.bags.size() << " bags";
    if (!p.review.empty()) ctx.out << ", kept " << curated.bags.size() << " after review";
    ctx.out << " -> " << p.out << '\n';
  });

  auto* tb = app.add_subcommand("training-bags", "Partition images into hard training bags");
  add_common(tb, ctx);
  tb->add_option("--multimodal", p.a, "Multimodal EMB1 file")->required();
  tb->add_option("--manifest", p.manifest, "Ids (default: sidecar)");
  tb->add_option("--out", p.out, "Output bag file")->required();
  add_override(tb, ctx, "--size", "bags.size", "Bag size");
  add_override(tb, ctx, "--topk", "bags.topk", "Neighbors considered per query");
  add_override(tb, ctx, "--seed", "bags.seed", "Shuffle seed");
  tb->callback([&] {
    const auto rc = ctx.config();
    const auto set = load_set(p.a, p.manifest);
    const MultimodalSet m{set, set.dim() / 2, set.dim() - set.dim() / 2, rc.bags.half_norm};
    const auto bags = build_training_bags(m, rc.bags.size, rc.bags.topk, rc.bags.seed);
    write_bag_file(p.out, bags, rc.stamp());
    std::size_t fallback = 0;
    for (const auto& b : bags.bags) fallback += b.fallback.size();
    ctx.out << "partitioned " << set.size() << " images into " << bags.bags.size()
            << " bags (" << fallback << " fallback members) -> " << p.out << '\n';
  });

  auto* ev = app.add_subcommand("eval", "Self-retrieval R@1");
  ev->require_subcommand(1);
  for (const char* name : {"bags", "rd"}) {
    const bool bags = std::string(name) == "bags";
    auto* sub = ev->add_subcommand(
        name, bags ? "R@1 within curated bags" : "R@1 against random distractors");
    add_common(sub, ctx);
    sub->add_option("--captions", p.a, "Generated caption EMB1, keyed by image id")->required();
    sub->add_option("--images", p.b, "Image EMB1")->required();
    sub->add_option("--captions-manifest", p.manifest, "Ids for --captions");
    sub->add_option("--images-manifest", p.manifest2, "Ids for --images");
    sub->add_option("--out", p.out, "Write the report as JSON");
    sub->add_option("--csv", p.csv, "Write the per-size table as CSV");
    if (bags) {
      sub->add_option("--bags", p.c, "Bag file")->required();
    } else {
      add_override(sub, ctx, "--n-distractors", "eval.n_distractors", "Distractors per image");
      add_override(sub, ctx, "--seed", "eval.seed", "Sampling seed");
    }
    sub->callback([&ctx, &p, bags] {
      const auto rc = ctx.config();
      const auto caps = load_set(p.a, p.manifest);
      const auto imgs = load_set(p.b, p.manifest2);
      const auto report =
          bags ? recall_at_1_bags(caps, read_bag_file(p.c), imgs)
               : recall_at_1_random(caps, imgs, rc.eval.n_distractors, rc.eval.seed);
      if (!p.out.empty()) write_report_json(p.out, report, rc.stamp());
      if (!p.csv.empty()) write_report_csv(p.csv, report, rc.stamp());
      ctx.out << report_json(report, bags ? "bags" : "rd", rc).dump() << '\n';
    });
  }

  auto* sc = app.add_subcommand("score", "Caption metrics");
  sc->require_subcommand(1);
  for (const char* name : {"cider", "bleu"}) {
    const bool cider = std::string(name) == "cider";
    auto* sub = sc->add_subcommand(name, cider ? "CIDEr-D" : "Corpus BLEU-4");
    add_common(sub, ctx);
    sub->add_option("--candidates", p.a, "Manifest; the first caption of each id is scored")
        ->required();
    sub->add_option("--references", p.b, "Reference manifest")->required();
    sub->add_option("--out", p.out, "Write per-id scores as JSON");
    sub->callback([&ctx, &p, cider] {
      const auto rc = ctx.config();
      const auto cands = read_manifest(p.a);
      const auto refs = references_for(cands, read_manifest(p.b));
      const auto texts = first_captions(cands);
      json j{{"metric", cider ? "cider_d" : "bleu4"},
             {"n", texts.size()},
             {"config_hash", rc.hash_hex()}};
      if (cider) {
        const auto res = cider_d(texts, refs);
        j["score"] = res.mean;
        if (!p.out.empty()) {
          json per = json::object();
          for (std::size_t i = 0; i < res.scores.size(); ++i)
            per[cands.records()[i].id] = res.scores[i];
          write_json(p.out, {{"schema_version", RunConfig::kSchemaVersion},
                             {"config_hash", rc.hash_hex()},
                             {"mean", res.mean},
                             {"scores", per}});
        }
      } else {
        const auto res = bleu4(texts, refs);
        j["score"] = res.score;
        j["precisions"] = res.precisions;
        j["brevity_penalty"] = res.brevity_penalty;
        if (!p.out.empty()) {
          write_json(p.out, {{"schema_version", RunConfig::kSchemaVersion},
                             {"config_hash", rc.hash_hex()},
                             {"score", res.score},
                             {"precisions", res.precisions},
                             {"brevity_penalty", res.brevity_penalty},
                             {"candidate_length", res.candidate_length},
                             {"reference_length", res.reference_length}});
        }
      }
      ctx.out << j.dump() << '\n';
    });
  }
  {
    auto* sub = sc->add_subcommand("clipscore", "Mean w * max(cos, 0) of caption/image pairs");
    add_common(sub, ctx);
    sub->add_option("--captions", p.a, "Caption EMB1 keyed by image id")->required();
    sub->add_option("--images", p.b, "Image EMB1")->required();
    add_override(sub, ctx, "--w", "metrics.clip_w", "Scale");
    sub->callback([&] {
      const auto rc = ctx.config();
      const double s = clip_score(load_set(p.a), load_set(p.b), rc.metrics.clip_w);
      ctx.out << json{{"metric", "clipscore"}, {"score", s}, {"config_hash", rc.hash_hex()}}.dump()
              << '\n';
    });
  }
  {
    auto* sub = sc->add_subcommand("diversity", "Distinct words above a frequency threshold");
    add_common(sub, ctx);
    sub->add_option("--captions", p.a, "Caption manifest (every caption counts)")->required();
    add_override(sub, ctx, "--min-freq", "metrics.min_freq", "Frequency threshold");
    sub->callback([&] {
      const auto rc = ctx.config();
      const auto n = vocab_diversity(all_captions(read_manifest(p.a)), rc.metrics.min_freq);
      ctx.out << json{{"metric", "vocab_diversity"},
                      {"min_freq", rc.metrics.min_freq},
                      {"words", n},
                      {"config_hash", rc.hash_hex()}}
                     .dump()
              << '\n';
    });
  }
  {
    auto* sub = sc->add_subcommand("stats", "Words and tokens per caption");
    add_common(sub, ctx);
    sub->add_option("--captions", p.a, "Caption manifest")->required();
    sub->add_option("--tokenizer", p.c, "pieces (default) or metric")
        ->check(CLI::IsMember({"pieces", "metric"}));
    sub->callback([&] {
      const auto rc = ctx.config();
      std::function<std::vector<std::string>(const std::string&)> tok =
          [](const std::string& s) { return split_word_pieces(s); };
      if (p.c == "metric") tok = [](const std::string& s) { return tokenize(s); };
      const auto st = caption_stats(all_captions(read_manifest(p.a)), tok);
      ctx.out << json{{"metric", "caption_stats"},
                      {"words_mean", st.words.mean},
                      {"words_sd", st.words.sd},
                      {"tokens_mean", st.tokens.mean},
                      {"tokens_sd", st.tokens.sd},
                      {"config_hash", rc.hash_hex()}}
                     .dump()
              << '\n';
    });
  }

  auto* toy_cmd = app.add_subcommand("toy", "Synthetic captioning world");
  toy_cmd->require_subcommand(1);
  {
    auto* sub = toy_cmd->add_subcommand("make-world", "Write the world's embeddings and captions");
    add_common(sub, ctx);
    sub->add_option("--out", p.out, "Output directory")->required();
    add_override(sub, ctx, "--seed", "world.seed", "World seed");
    sub->callback([&] {
      const auto rc = ctx.config();
      const auto world = toy::make_world(rc.world);
      const fs::path dir = p.out;
      fs::create_directories(dir);
      write_split(dir, "train", world, world.train, rc.stamp());
      write_split(dir, "holdout", world, world.holdout, rc.stamp());
      write_json(dir / "world.json", {{"schema_version", RunConfig::kSchemaVersion},
                                      {"config_hash", rc.hash_hex()},
                                      {"vocab", world.vocab},
                                      {"config", rc.doc}});
      ctx.out << "world with " << world.train.images.size() << " training and "
              << world.holdout.images.size() << " held-out images -> " << dir.string() << '\n';
    });
  }
  {
    auto* sub = toy_cmd->add_subcommand("mle", "Teacher-forced pretraining");
    add_common(sub, ctx);
    sub->add_option("--out", p.out, "Output directory")->required();
    add_override(sub, ctx, "--epochs", "mle.epochs", "Epochs");
    add_override(sub, ctx, "--lr", "mle.learning_rate", "Learning rate");
    add_override(sub, ctx, "--seed", "mle.seed", "Minibatch seed");
    sub->callback([&] {
      const auto rc = ctx.config();
      const auto world = toy::make_world(rc.world);
      auto policy = fresh_policy(rc, world);
      const auto res = toy::mle_pretrain(policy, world, rc.mle);
      const fs::path dir = p.out;
      fs::create_directories(dir);
      toy::save_checkpoint(dir / "mle.ckpt", policy, rc.hash);
      std::ofstream log(dir / "mle_log.csv");
      log << "# schema_version=" << RunConfig::kSchemaVersion << " config_hash=" << rc.hash_hex()
          << '\n'
          << "epoch,train_gt_loglik\n"
          << std::setprecision(17) << -1 << ',' << res.initial_loglik << '\n';
      for (std::size_t e = 0; e < res.epoch_loglik.size(); ++e)
        log << e << ',' << res.epoch_loglik[e] << '\n';
      ctx.out << json{{"initial_gt_loglik", res.initial_loglik},
                      {"final_gt_loglik",
                       res.epoch_loglik.empty() ? res.initial_loglik : res.epoch_loglik.back()},
                      {"checkpoint", (dir / "mle.ckpt").string()},
                      {"config_hash", rc.hash_hex()}}
                     .dump()
              << '\n';
    });
  }
  {
    auto* sub = toy_cmd->add_subcommand("sr-finetune", "REINFORCE with the self-retrieval reward");
    add_common(sub, ctx);
    sub->add_option("--init", p.a, "Starting checkpoint (default: untrained policy)");
    sub->add_option("--out", p.out, "Output directory")->required();
    add_override(sub, ctx, "--epochs", "sr.epochs", "Epochs");
    add_override(sub, ctx, "--lr", "sr.learning_rate", "Learning rate");
    add_override(sub, ctx, "--seed", "sr.seed", "Sampling seed");
    add_override(sub, ctx, "--mode", "sr.mode", "random, bags or curriculum");
    add_override(sub, ctx, "--bag-size", "sr.bag_size", "Bag size for random and hard modes");
    add_override(sub, ctx, "--mask", "sr.mask", "language, vision or all");
    add_override(sub, ctx, "--reward-kind", "sr.reward_kind", "sr or joint");
    add_override(sub, ctx, "--lambda", "sr.reward.lambda", "CIDEr weight in the joint reward");
    add_override(sub, ctx, "--baseline", "sr.reward.baseline", "running_mean, greedy or none");
    sub->callback([&] {
      const auto rc = ctx.config();
      const auto world = toy::make_world(rc.world);
      toy::ToyPolicy policy;
      if (p.a.empty()) {
        policy = fresh_policy(rc, world);
      } else {
        std::uint64_t hash = 0;
        policy = toy::load_checkpoint(p.a, &hash);
        check_policy_fits(policy, world);
      }
      const auto run = toy::sr_finetune(policy, world, rc.sr);
      const fs::path dir = p.out;
      fs::create_directories(dir);
      toy::save_checkpoint(dir / "sr.ckpt", policy, rc.hash);
      toy::write_train_log_csv(dir / "train_log.csv", run, rc.stamp());

      // Greedy held-out captions and the evaluation bags, so `eval bags`
      // can recompute the final R@1 from files.
      const auto& hold = world.holdout;
      std::vector<double> values;
      std::vector<ManifestRecord> records;
      for (std::size_t r = 0; r < hold.images.size(); ++r) {
        const auto g = policy.greedy(hold.images.row(r));
        const auto e = toy::embed_caption(g, world);
        values.insert(values.end(), e.begin(), e.end());
        records.push_back({hold.images.id(r), {world.render(g)}});
      }
      const CaptionManifest caps(std::move(records));
      save_set(dir / "holdout_captions.emb",
               EmbeddingSet(hold.images.ids(), world.config.dim, values), rc.stamp(), &caps);
      const auto eval = toy::make_holdout_eval(world, rc.sr.holdout_bag_size, rc.sr.topk,
                                               rc.sr.eval_seed);
      write_bag_file(dir / "holdout_bags.json", eval.bags, rc.stamp());

      const auto& last = run.logs.empty() ? toy::EpochLog{} : run.logs.back();
      ctx.out << json{{"cold_start", run.cold_start},
                      {"initial_r_at_1", run.initial.r_at_1},
                      {"final_r_at_1", run.logs.empty() ? run.initial.r_at_1 : last.r_at_1_holdout},
                      {"initial_gt_loglik", run.initial.gt_loglik},
                      {"final_gt_loglik", run.logs.empty() ? run.initial.gt_loglik : last.gt_loglik},
                      {"config_hash", rc.hash_hex()}}
                     .dump()
              << '\n';
    });
  }
  {
    auto* sub = toy_cmd->add_subcommand("gradient-check",
                                        "Finite-difference and enumeration gradient checks");
    add_common(sub, ctx);
    sub->add_option("--samples", p.samples, "Monte-Carlo samples for the REINFORCE check");
    sub->add_option("--seed", p.seed, "Seed for parameters and sampling");
    sub->callback([&] {
      const auto rc = ctx.config();
      const auto world = toy::make_world(rc.world);

      // Teacher-forced gradient against central differences.
      toy::ToyPolicy mle({world.vocab_size(), world.config.dim, rc.policy.token_dim,
                          rc.policy.max_len},
                         p.seed, 0.5);
      auto pairs = toy::caption_pairs(world.train);
      pairs.resize(std::min<std::size_t>(pairs.size(), 16));
      const auto lg = toy::mle_loss_and_gradient(mle, world.train.images, pairs);
      double worst_fd = 0.0;
      const double h = 1e-6;
      for (std::size_t i = 0; i < mle.param_count(); i += 5) {
        auto plus = mle, minus = mle;
        plus.params()[i] += h;
        minus.params()[i] -= h;
        const double fd = (toy::mle_loss_and_gradient(plus, world.train.images, pairs).loss -
                           toy::mle_loss_and_gradient(minus, world.train.images, pairs).loss) /
                          (2 * h);
        worst_fd = std::max(worst_fd, std::abs(lg.gradient[i] - fd) / std::max(1.0, std::abs(fd)));
      }

      // REINFORCE against exact enumeration on a small policy.
      toy::ToyPolicy small({4, world.config.dim, 3, 3}, p.seed + 1, 0.8);
      const auto image = world.train.images.row(0);
      auto reward = [](const toy::TokenSeq& c) {
        double r = 0.0;
        for (std::size_t k = 0; k < c.size(); ++k) r += std::sin(1.7 * double(c[k]) + double(k));
        return r;
      };
      const auto exact = toy::exact_policy_gradient(small, image, reward);
      std::mt19937_64 rng(p.seed + 2);
      std::vector<double> sum(small.param_count()), sq(small.param_count());
      for (std::size_t k = 0; k < p.samples; ++k) {
        const auto s = small.sample(image, rng);
        std::vector<double> g(small.param_count(), 0.0);
        small.accumulate_grad_log_prob(image, s.tokens, reward(s.tokens), g);
        for (std::size_t i = 0; i < g.size(); ++i) {
          sum[i] += g[i];
          sq[i] += g[i] * g[i];
        }
      }
      double worst_z = 0.0;
      const double n = static_cast<double>(std::max<std::size_t>(p.samples, 1));
      for (std::size_t i = 0; i < exact.size(); ++i) {
        const double mean = sum[i] / n;
        const double se = std::sqrt(std::max(sq[i] / n - mean * mean, 0.0) / n);
        if (se > 0) worst_z = std::max(worst_z, std::abs(mean - exact[i]) / se);
      }
      const bool ok = worst_fd <= 1e-4 && worst_z <= 4.0;
      ctx.out << json{{"mle_max_relative_error", worst_fd},
                      {"reinforce_max_z", worst_z},
                      {"samples", p.samples},
                      {"ok", ok}}
                     .dump()
              << '\n';
      if (!ok) throw TrainingError("gradient check failed");
    });
  }

  auto* rep = app.add_subcommand("report", "CSV tables and SVG plots from training logs");
  add_common(rep, ctx);
  rep->add_option("--runs", p.a, "Directory searched for training logs")->required();
  rep->add_option("--out", p.out, "Output directory")->required();
  rep->add_flag("--force", p.flag, "Report runs with different config hashes together");
  rep->callback([&] {
    (void)ctx.config();
    const auto logs = collect_run_logs(p.a);
    const auto files = write_report(logs, p.out, p.flag);
    ctx.out << "reported " << logs.size() << " runs:";
    for (const auto& f : files.written) ctx.out << ' ' << f.filename().string();
    ctx.out << '\n';
  });
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message,
                  int code) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, {}, {}, json::object()};
  Paths paths;
  CLI::App app{"Self-retrieval captioning toolkit", "selfret"};
  setup(app, ctx, paths);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help
    report_error(err, "UsageError", e.what(), 2);
    return 2;
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    report_error(err, std::string(to_string(e.kind())), e.what(), code);
    return code;
  } catch (const json::exception& e) {
    report_error(err, "FormatError", e.what(), 2);
    return 2;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "IoError", e.what(), 3);
    return 3;
  } catch (const std::exception& e) {
    report_error(err, "InternalError", e.what(), 3);
    return 3;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace selfret::cli
