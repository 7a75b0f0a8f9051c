// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "kpg/checkpoint.hpp"
#include "kpg/decoding.hpp"
#include "synthetic.hpp"

using namespace kpg;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
};

Run kpg_run(std::vector<std::string> args) {
  args.insert(args.begin(), "kpg");
  args.insert(args.begin() + 1, "-q");
  std::ostringstream out;
  const int code = cli::run(args, out);
  return {code, out.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void write_corpus(const std::string& file, std::size_t n, std::uint64_t seed, const std::string& prefix = "doc") {
  Rng rng(seed);
  std::ofstream out(file);
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<std::string> words;
    for (int i = 0; i < 12; ++i) words.push_back(test::pseudo_word(rng.below(40)));
    json row = {{"id", prefix + std::to_string(d)},
                {"title", words[0] + " " + words[1]},
                {"abstract", words[2] + " " + words[3] + " " + words[4] + " " + words[5] + " " + words[6]},
                {"keywords", {words[2], words[0] + " " + words[1], test::pseudo_word(rng.below(40))}}};
    out << row.dump() << '\n';
  }
}

const std::vector<std::string> kTiny{"--embedding-dim", "6", "--hidden", "8", "--target-encoder-hidden", "8",
                                     "--attention-hidden", "8", "--generator-hidden", "8",
                                     "--switch-hidden", "8", "--batch-size", "4", "--max-epochs", "2",
                                     "--valid-max-len", "10"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1 and help exits with 0") {
  CHECK(kpg_run({}).code == cli::kUsage);
  CHECK(kpg_run({"frobnicate"}).code == cli::kUsage);
  CHECK(kpg_run({"evaluate", "--gold", "x"}).code == cli::kUsage);
  CHECK(kpg_run({"build-data", "--out", "x"}).code == cli::kUsage);
  CHECK(kpg_run({"predict", "--checkpoint", "a", "--data", "b", "--strategy", "sampling"}).code == cli::kUsage);
  const auto help = kpg_run({"train", "--help"});
  CHECK(help.code == cli::kOk);
  CHECK(help.out.find("--lambda-sc") != std::string::npos);
}

TEST_CASE("build-data converts the StackExchange fixture reproducibly") {
  TempDir tmp("kpg_cli_build");
  const std::string posts = KPG_TEST_DATA "/stackexchange/Posts.xml";
  const auto a = kpg_run({"build-data", "--stackexchange", posts, "--out", tmp / "a", "--valid", "3", "--test", "3"});
  REQUIRE(a.code == cli::kOk);
  const auto report = json::parse(a.out);
  CHECK(report["valid"]["count"] == 3);
  CHECK(report["posts"]["rows"] == 20);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "stats.json", "manifest.json"})
    CHECK(fs::exists(fs::path(tmp / "a") / f));
  const auto manifest = json::parse(slurp(fs::path(tmp / "a") / "manifest.json"));
  CHECK(manifest["command"] == "build-data");
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["config"]["train_max_tokens"] == 300);
  REQUIRE(kpg_run({"build-data", "--stackexchange", posts, "--out", tmp / "b", "--valid", "3", "--test", "3"}).code == 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "stats.json"})
    CHECK(slurp(fs::path(tmp / "a") / f) == slurp(fs::path(tmp / "b") / f));
  CHECK(kpg_run({"build-data", "--stackexchange", tmp / "missing.xml", "--out", tmp / "c"}).code == cli::kInputError);

  std::ofstream(tmp / "bad.jsonl") << "{\"id\": \"a\", \"title\": \"t\"\n";
  CHECK(kpg_run({"build-data", "--jsonl", tmp / "bad.jsonl", "--out", tmp / "d"}).code == cli::kInputError);
  write_corpus(tmp / "corpus.jsonl", 10, 1);
  const auto j = kpg_run({"build-data", "--jsonl", tmp / "corpus.jsonl", "--out", tmp / "e", "--valid", "2", "--test", "2"});
  REQUIRE(j.code == cli::kOk);
  CHECK(json::parse(j.out)["train"]["count"] == 6);
}

TEST_CASE("train, predict, evaluate and inspect end to end") {
  TempDir tmp("kpg_cli_e2e");
  write_corpus(tmp / "train.jsonl", 12, 2);
  write_corpus(tmp / "valid.jsonl", 4, 3, "val");
  const auto ckpt = tmp / "model.kpg";

  SUBCASE("training writes the best checkpoint, a manifest and a JSON report") {
    const auto r = kpg_run(concat({"train", "--train", tmp / "train.jsonl", "--valid", tmp / "valid.jsonl", "--out", ckpt}, kTiny));
    REQUIRE(r.code == cli::kOk);
    const auto report = json::parse(r.out);
    CHECK(report["history"].size() == 2);
    const auto manifest = json::parse(slurp(ckpt + ".manifest.json"));
    CHECK(manifest["config"]["hidden"] == 8);
    CHECK(manifest["config"]["lambda_or"] == 1.0);
    CHECK(manifest["config"]["lambda_sc"] == 0.03);
    CHECK(manifest["config"]["learning_rate"] == 1e-3);
    CHECK(manifest["config"]["valid_subset"] == 2000);
    CHECK(manifest["version"].is_string());
    CHECK(load_checkpoint(fs::path(ckpt)).best_epoch == report["best_epoch"]);
  }

  SUBCASE("flags override the config file, which overrides defaults") {
    std::ofstream(tmp / "cfg.json") << R"({"hidden": 10, "dropout": 0.2, "lambda_sc": 0})";
    auto args = concat({"train", "--train", tmp / "train.jsonl", "--valid", tmp / "valid.jsonl", "--out", ckpt,
                        "--config", tmp / "cfg.json"}, kTiny);
    REQUIRE(kpg_run(args).code == cli::kOk);
    const auto config = json::parse(slurp(ckpt + ".manifest.json"))["config"];
    CHECK(config["hidden"] == 8);
    CHECK(config["dropout"] == 0.2);
    CHECK(config["lambda_sc"] == 0.0);
    CHECK(config["negatives"] == 16);
    std::ofstream(tmp / "bad.json") << R"({"hiden": 10})";
    CHECK(kpg_run(concat({"train", "--train", tmp / "train.jsonl", "--valid", tmp / "valid.jsonl", "--out", ckpt,
                          "--config", tmp / "bad.json"}, kTiny)).code == cli::kInputError);
  }

  SUBCASE("divergence exits with 3") {
    const auto r = kpg_run(concat(concat({"train", "--train", tmp / "train.jsonl", "--valid", tmp / "valid.jsonl", "--out", ckpt}, kTiny),
                                  {"--learning-rate", "1e300", "--clip-norm", "0"}));
    CHECK(r.code == cli::kDivergence);
  }

  SUBCASE("decoding strategies, evaluation and diagnostics") {
    REQUIRE(kpg_run(concat({"train", "--train", tmp / "train.jsonl", "--valid", tmp / "valid.jsonl", "--out", ckpt}, kTiny)).code == 0);
    const auto greedy = kpg_run({"predict", "--checkpoint", ckpt, "--data", tmp / "valid.jsonl", "--strategy", "greedy", "--max-len", "12"});
    const auto top = kpg_run({"predict", "--checkpoint", ckpt, "--data", tmp / "valid.jsonl", "--strategy", "top-beam", "--beam", "1", "--max-len", "12"});
    REQUIRE(greedy.code == 0);
    REQUIRE(top.code == 0);
    std::istringstream gs(greedy.out), ts(top.out);
    const auto g = read_predictions(gs), t = read_predictions(ts);
    REQUIRE(g.size() == 4);
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(g[i].id == t[i].id);
      CHECK(g[i].phrases == t[i].phrases);
      CHECK(g[i].strategy == "greedy");
    }

    const auto preds = tmp / "preds.jsonl";
    REQUIRE(kpg_run({"predict", "--checkpoint", ckpt, "--data", tmp / "valid.jsonl", "--beam", "6", "--max-len", "12",
                     "--threads", "2", "--out", preds}).code == 0);
    CHECK(fs::exists(preds + ".manifest.json"));
    const auto report = kpg_run({"evaluate", "--predictions", preds, "--gold", tmp / "valid.jsonl", "--k", "3",
                                 "--format", "json", "--out", tmp / "report.json"});
    REQUIRE(report.code == cli::kOk);
    CHECK(json::parse(report.out)["present"].contains("@3"));
    CHECK(json::parse(slurp(tmp / "report.json")) == json::parse(report.out));
    CHECK(kpg_run({"evaluate", "--predictions", preds, "--gold", tmp / "valid.jsonl"}).out.find("@O") != std::string::npos);

    CHECK(kpg_run({"evaluate", "--predictions", preds, "--gold", tmp / "train.jsonl"}).code == cli::kIdMismatch);
    CHECK(kpg_run({"evaluate", "--predictions", tmp / "none.jsonl", "--gold", tmp / "train.jsonl"}).code == cli::kInputError);

    const auto inspect = kpg_run({"inspect", "--checkpoint", ckpt, "--data", tmp / "train.jsonl",
                                  "--steps-after-delimiter", "1", "2", "3", "--sample", "5", "--vectors", tmp / "v.tsv"});
    REQUIRE(inspect.code == cli::kOk);
    const auto stats = json::parse(inspect.out);
    CHECK(stats["cohorts"].size() == 3);
    CHECK(stats["cohorts"][0]["sampled"] == 5);
    std::ifstream vin(tmp / "v.tsv");
    std::size_t rows = 0;
    for (std::string line; std::getline(vin, line);) ++rows;
    CHECK(rows == 15);

    std::string bytes = slurp(ckpt);
    bytes[0] = 'X';
    std::ofstream(tmp / "bad.kpg", std::ios::binary) << bytes;
    CHECK(kpg_run({"predict", "--checkpoint", tmp / "bad.kpg", "--data", tmp / "valid.jsonl"}).code == cli::kCheckpointError);
    CHECK(kpg_run({"predict", "--checkpoint", tmp / "absent.kpg", "--data", tmp / "valid.jsonl"}).code == cli::kCheckpointError);
  }
}

TEST_CASE("oracle predictions score F1@O = 1 through the CLI") {
  TempDir tmp("kpg_cli_oracle");
  write_corpus(tmp / "gold.jsonl", 5, 4);
  std::ifstream in(tmp / "gold.jsonl");
  std::ofstream out(tmp / "oracle.jsonl");
  for (std::string line; std::getline(in, line);) {
    const auto row = json::parse(line);
    out << json{{"id", row["id"]}, {"phrases", row["keywords"]}, {"scores", json::array()}, {"strategy", "oracle"}}.dump() << '\n';
  }
  out.close();
  const auto r = kpg_run({"evaluate", "--predictions", tmp / "oracle.jsonl", "--gold", tmp / "gold.jsonl", "--format", "json"});
  REQUIRE(r.code == 0);
  const auto report = json::parse(r.out);
  CHECK(report["present"]["@O"]["f1"] == 1.0);
  CHECK(report["present"]["@M"]["f1"] == 1.0);
}

TEST_CASE("inspect reports cosine 1 for a checkpoint with constant decoder states") {
  TempDir tmp("kpg_cli_degenerate");
  write_corpus(tmp / "docs.jsonl", 6, 5);
  Checkpoint c;
  c.vocab = Vocabulary::build(load_jsonl(fs::path(tmp / "docs.jsonl")), 200);
  c.config.embedding_dim = 6;
  c.config.hidden = c.config.target_encoder_hidden = c.config.attention_hidden = 8;
  c.config.generator_hidden = c.config.switch_hidden = 8;
  c.config.vocab = 200;
  c.params = ModelParams::random(c.config.dims(c.vocab.size()), 1, 0.5);
  c.params.init_w.setZero();
  c.params.decoder.w_x.setZero();
  c.params.decoder.w_h.setZero();
  c.params.decoder.b_x.segment(8, 8).setConstant(40.0);  // update gate saturated: h never moves
  c.adam = AdamState::zeros_like(c.params);
  save_checkpoint(fs::path(tmp / "flat.kpg"), c);
  const auto r = kpg_run({"inspect", "--checkpoint", tmp / "flat.kpg", "--data", tmp / "docs.jsonl", "--sample", "0"});
  REQUIRE(r.code == cli::kOk);
  const auto stats = json::parse(r.out);
  CHECK(stats["cohorts"][0]["sample_mean_cosine"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats["cohorts"][0]["within_document_cosine"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
}

}
