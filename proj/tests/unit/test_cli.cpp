#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "selfret/bag_builder.hpp"
#include "selfret/cli/commands.hpp"
#include "selfret/cli/report.hpp"
#include "selfret/cli/run_config.hpp"
#include "selfret/error.hpp"
#include "support/scratch_dir.hpp"

using namespace selfret;
using namespace selfret::cli;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const ScratchDir& d, const std::string& name) { return (d / name).string(); }

}  // namespace

TEST_CASE("config defaults and hashing") {
  const auto a = resolve_config(json::object());
  const auto b = resolve_config(json::object());
  CHECK(a.hash == b.hash);
  CHECK(a.hash_hex().size() == 16);
  CHECK(a.sr.epochs == toy::SrConfig{}.epochs);
  CHECK(a.world.images == 200);
  CHECK(a.stamp().config_hash == a.hash_hex());

  const auto c = resolve_config(json{{"sr", {{"epochs", 20}}}});
  CHECK(c.sr.epochs == 20);
  CHECK(c.hash != a.hash);
  // key order in the input does not change the hash
  const auto d1 = resolve_config(json::parse(R"({"sr":{"epochs":20,"seed":4}})"));
  const auto d2 = resolve_config(json::parse(R"({"sr":{"seed":4,"epochs":20}})"));
  CHECK(d1.hash == d2.hash);
}

TEST_CASE("config file with flag overrides") {
  ScratchDir dir;
  spit(dir / "c.json", R"({"sr": {"epochs": 12, "reward": {"lambda": 0.3}}, "bags": {"size": 5}})");
  json ov = json::object();
  set_path(ov, "sr.epochs", "18");
  set_path(ov, "sr.mode", "bags");
  const auto rc = resolve_config(std::optional<std::filesystem::path>(dir / "c.json"), ov);
  CHECK(rc.sr.epochs == 18);
  CHECK(rc.sr.reward.lambda == 0.3);
  CHECK(rc.bags.size == 5);
  CHECK(rc.sr.mode == toy::DistractorMode::HardBags);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(resolve_config(json{{"sr", {{"epoch", 3}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"nonsense", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"sr", {{"epochs", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"sr", {{"epochs", -3}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"sr", {{"reward", {{"temperature", 0}}}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"sr", {{"mask", "everything"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"world", {{"clusters", 1}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(json{{"bags", {{"size", 1}}}}), ConfigError);
  ScratchDir dir;
  spit(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(resolve_config(std::optional<std::filesystem::path>(dir / "bad.json"), json::object()), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::optional<std::filesystem::path>(dir / "missing.json"), json::object()), ConfigError);
}

TEST_CASE("set_path") {
  json j = json::object();
  set_path(j, "a.b.c", "3");
  set_path(j, "a.s", "text");
  set_path(j, "a.l", "[2, 3]");
  set_path(j, "a.f", "false");
  CHECK(j["a"]["b"]["c"] == 3);
  CHECK(j["a"]["s"] == "text");
  CHECK(j["a"]["l"] == json::array({2, 3}));
  CHECK(j["a"]["f"] == false);
  CHECK_THROWS_AS(set_path(j, "a..b", "1"), ConfigError);
}

TEST_CASE("usage errors") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"build-bags", "--size", "3"}).code == 2);
  auto help = invoke({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("build-bags") != std::string::npos);
}

TEST_CASE("ingest and exit codes") {
  ScratchDir dir;
  const EmbeddingSet set({"a", "b", "c"}, 2, {3, 4, 1, 0, 0, 2});
  write_embeddings(dir / "e.emb", set);
  write_manifest(dir / "m.jsonl", CaptionManifest({{"a", {"x"}}, {"b", {"y"}}, {"c", {"z"}}}));
  auto r = invoke({"ingest", "--embeddings", p(dir, "e.emb"), "--manifest", p(dir, "m.jsonl"),
                "--out", p(dir, "out/n.emb")});
  REQUIRE(r.code == 0);
  FileStamp stamp;
  const auto manifest = read_manifest(dir / "out/n.jsonl", &stamp);
  CHECK(stamp.config_hash == resolve_config(json::object()).hash_hex());
  CHECK(manifest.find("b")->captions == std::vector<std::string>{"y"});
  const auto back = ingest_embeddings(dir / "out/n.emb", dir / "out/n.jsonl");
  CHECK(std::abs(back.row(0)[0] - 0.6) < 1e-6);

  write_manifest(dir / "short.jsonl", CaptionManifest({{"a", {}}, {"b", {}}}));
  r = invoke({"ingest", "--embeddings", p(dir, "e.emb"), "--manifest", p(dir, "short.jsonl"),
           "--out", p(dir, "x.emb")});
  CHECK(r.code == 2);
  const auto err = json::parse(r.err);
  CHECK(err["error"] == "ManifestMismatch");
  CHECK(err["exit_code"] == 2);

  {
    std::ofstream raw(dir / "nan.emb", std::ios::binary);
    const std::uint32_t n = 3, dim = 2;
    const float vals[6] = {NAN, 1, 1, 0, 0, 2};
    raw.write("EMB1", 4);
    raw.write(reinterpret_cast<const char*>(&n), 4);
    raw.write(reinterpret_cast<const char*>(&dim), 4);
    raw.write(reinterpret_cast<const char*>(vals), sizeof vals);
  }
  r = invoke({"ingest", "--embeddings", p(dir, "nan.emb"), "--manifest", p(dir, "m.jsonl"),
           "--out", p(dir, "y.emb")});
  CHECK(r.code == 3);
  CHECK(json::parse(r.err)["error"] == "DataError");
}

TEST_CASE("training failures exit with 4") {
  ScratchDir dir;
  auto r = invoke({"toy", "mle", "--out", p(dir, "m"), "--set", "world.images=20", "--set",
                "world.holdout_images=10", "--lr", "1e300", "--set", "mle.optimizer=sgd",
                "--epochs", "3"});
  CHECK(r.code == 4);
  CHECK(json::parse(r.err)["error"] == "TrainingError");
}

TEST_CASE("curate passes disjoint bags through") {
  ScratchDir dir;
  BagSet in;
  in.bag_size = 2;
  in.bags = {Bag{"x", {"a", "b"}, 0.9, BagSource::Candidate, {}},
             Bag{"y", {"c", "d"}, 0.7, BagSource::Candidate, {}},
             Bag{"z", {"e", "f"}, 0.8, BagSource::Candidate, {}}};
  write_bag_file(dir / "in.json", in);
  auto r = invoke({"curate", "--bags", p(dir, "in.json"), "--out", p(dir, "out.json"),
                "--export-review", p(dir, "sheet.tsv")});
  REQUIRE(r.code == 0);
  const auto out = read_bag_file(dir / "out.json");
  REQUIRE(out.bags.size() == 3);
  CHECK(out.bags[0].id == "x");
  CHECK(out.bags[1].id == "z");
  CHECK(out.bags[2].id == "y");
  CHECK(out.disjoint);

  // drop one bag in the sheet and apply it
  std::string sheet = slurp(dir / "sheet.tsv");
  const auto pos = sheet.find("z\tkeep");
  REQUIRE(pos != std::string::npos);
  sheet.replace(pos, 6, "z\tdrop");
  spit(dir / "sheet.tsv", sheet);
  r = invoke({"curate", "--bags", p(dir, "in.json"), "--out", p(dir, "rev.json"), "--review-sheet",
           p(dir, "sheet.tsv")});
  REQUIRE(r.code == 0);
  const auto rev = read_bag_file(dir / "rev.json");
  REQUIRE(rev.bags.size() == 2);
  CHECK(rev.bags[1].id == "y");

  spit(dir / "partial.tsv", "x\tkeep\t\n");
  r = invoke({"curate", "--bags", p(dir, "in.json"), "--out", p(dir, "p.json"), "--review-sheet",
           p(dir, "partial.tsv")});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err)["error"] == "IncompleteReview");
}

TEST_CASE("random-distractor eval is deterministic") {
  ScratchDir dir;
  std::vector<std::string> ids;
  std::vector<double> img, cap;
  for (int i = 0; i < 30; ++i) {
    ids.push_back("i" + std::to_string(i));
    const double t = 0.2 * i;
    img.insert(img.end(), {std::cos(t), std::sin(t)});
    cap.insert(cap.end(), {std::cos(t + 0.15), std::sin(t + 0.15)});
  }
  const EmbeddingSet images(ids, 2, img), caps(ids, 2, cap);
  write_embeddings(dir / "img.emb", images);
  std::vector<ManifestRecord> recs;
  for (const auto& id : ids) recs.push_back({id, {}});
  write_manifest(dir / "img.jsonl", CaptionManifest(recs));
  write_embeddings(dir / "cap.emb", caps);
  write_manifest(dir / "cap.jsonl", CaptionManifest(recs));

  const std::vector<std::string> args{"eval", "rd", "--captions", p(dir, "cap.emb"), "--images",
                                      p(dir, "img.emb"), "--n-distractors", "9", "--seed", "4"};
  auto a = invoke(args), b = invoke(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  const auto j = json::parse(a.out);
  CHECK(j["attempts"] == 30);
  CHECK(j["by_size"].contains("10"));

  auto too_many = invoke({"eval", "rd", "--captions", p(dir, "cap.emb"), "--images",
                       p(dir, "img.emb"), "--n-distractors", "30"});
  CHECK(too_many.code == 2);
  CHECK(json::parse(too_many.err)["error"] == "RangeError");
}

TEST_CASE("report refuses mixed config hashes") {
  ScratchDir dir;
  const std::string body =
      "epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik\n"
      "-1,0,0,0.3,-1.8\n0,2,-0.5,0.32,-1.85\n1,3,-0.9,0.35,-1.87\n";
  std::filesystem::create_directories(dir / "runs/a");
  std::filesystem::create_directories(dir / "runs/b");
  spit(dir / "runs/a/train_log.csv", "# schema_version=1 config_hash=aaaa\n" + body);
  spit(dir / "runs/b/train_log.csv", "# schema_version=1 config_hash=bbbb\n" + body);
  spit(dir / "runs/notes.csv", "x,y\n1,2\n");

  auto r = invoke({"report", "--runs", p(dir, "runs"), "--out", p(dir, "rep")});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err)["error"] == "PreconditionError");

  r = invoke({"report", "--runs", p(dir, "runs"), "--out", p(dir, "rep"), "--force"});
  REQUIRE(r.code == 0);
  const auto summary = slurp(dir / "rep/summary.csv");
  CHECK(summary.find("a/train_log,aaaa,2,0.3,0.35") != std::string::npos);
  CHECK(summary.find("config_hash=mixed") != std::string::npos);
  const auto curves = slurp(dir / "rep/curves.csv");
  CHECK(curves.find("run,epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik") != std::string::npos);
  for (const char* f : {"reward.svg", "r_at_1.svg", "gt_loglik.svg", "tradeoff.svg"}) {
    const auto svg = slurp(dir / "rep" / f);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
  }
  CHECK(slurp(dir / "rep/tradeoff.svg").find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("run log parsing") {
  ScratchDir dir;
  spit(dir / "bad.csv", "epoch,bag_size,mean_reward,r_at_1_holdout,gt_loglik\n0,2,x,0.3,-1\n");
  CHECK_THROWS_AS(read_run_log(dir / "bad.csv"), FormatError);
  spit(dir / "other.csv", "a,b\n");
  CHECK_THROWS_AS(read_run_log(dir / "other.csv"), FormatError);
  CHECK_THROWS_AS(write_report({}, dir / "out", false), DataError);
}

TEST_CASE("svg plot escapes labels") {
  Series s{"a<b", {0, 1, 2}, {1, 2, 3}, false};
  const auto svg = svg_line_plot("t&t", "x", "y", "", {s});
  CHECK(svg.find("a&lt;b") != std::string::npos);
  CHECK(svg.find("t&amp;t") != std::string::npos);
}
