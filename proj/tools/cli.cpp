// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kpg/checkpoint.hpp"
#include "kpg/corpus.hpp"
#include "kpg/decoding.hpp"
#include "kpg/error.hpp"
#include "kpg/evaluation.hpp"
#include "kpg/random.hpp"
#include "kpg/stackexchange.hpp"
#include "kpg/training.hpp"

namespace kpg::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

spdlog::logger& log() {
  static auto logger = [] {
    auto l = spdlog::stderr_color_mt("kpg");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  return *logger;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomically(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << content;
    if (!f.flush()) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path manifest_path(const fs::path& output) {
  if (fs::is_directory(output)) return output / "manifest.json";
  auto p = output;
  p += ".manifest.json";
  return p;
}

/// Records everything needed to repeat a command next to its output.
struct Manifest {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> seed;
  std::string started = utc_now();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write(const fs::path& beside) const {
    json m = {{"command", command},
              {"args", args},
              {"version", KPG_VERSION},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs},
              {"timings",
               {{"started_utc", started},
                {"wall_seconds",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}}}};
    m["seed"] = seed ? json(*seed) : json(nullptr);
    const auto path = manifest_path(beside);
    write_atomically(path, m.dump(2) + "\n");
    log().info("manifest written to {}", path.string());
  }
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error("input file not found: " + p.string());
}

std::vector<Document> load_docs(const fs::path& path) {
  require_file(path);
  LoadStats stats;
  auto docs = load_jsonl(path, &stats);
  log().info("{}: {} documents ({} without keyphrases, {} without source skipped)", path.string(),
             stats.loaded, stats.skipped_empty_keywords, stats.skipped_empty_source);
  return docs;
}

std::vector<RawRecord> read_raw(const fs::path& path) {
  require_file(path);
  std::ifstream in(path, std::ios::binary);
  return read_raw_jsonl(in);
}

json stats_json(const SplitStats& s) {
  return {{"count", s.count}, {"kp_mean", s.kp_mean}, {"kp_var", s.kp_var},
          {"pct_present", s.pct_present}};
}

// ---------------------------------------------------------------- build-data

struct BuildDataArgs {
  std::string stackexchange;
  std::string jsonl;
  std::string out;
  std::size_t valid = 16000;
  std::size_t test = 16000;
  std::uint64_t seed = 1;
  std::size_t train_max_tokens = 0;
  std::size_t eval_max_tokens = 0;
  CLI::Option* train_max_opt = nullptr;
  CLI::Option* eval_max_opt = nullptr;
};

int build_data(const BuildDataArgs& a, Manifest& manifest, std::ostream& out) {
  StackExchangeOptions opts;
  opts.valid_size = a.valid;
  opts.test_size = a.test;
  opts.seed = a.seed;
  const bool se = !a.stackexchange.empty();
  const auto budget = [](const CLI::Option* opt, std::size_t value, std::size_t fallback) {
    const auto v = opt->count() ? value : fallback;
    return v == 0 ? std::numeric_limits<std::size_t>::max() : v;
  };
  opts.train_max_tokens = budget(a.train_max_opt, a.train_max_tokens, se ? 300 : 0);
  opts.eval_max_tokens = budget(a.eval_max_opt, a.eval_max_tokens, se ? 1000 : 0);

  ConversionReport report;
  if (se) {
    require_file(a.stackexchange);
    report = convert_stackexchange(a.stackexchange, a.out, opts);
    manifest.inputs["stackexchange"] = a.stackexchange;
  } else {
    auto splits = split_records(read_raw(a.jsonl), opts);
    report = write_splits(splits, a.out);
    manifest.inputs["jsonl"] = a.jsonl;
  }
  json r = {{"train", stats_json(report.train)},
            {"valid", stats_json(report.valid)},
            {"test", stats_json(report.test)}};
  if (se) r["posts"] = {{"rows", report.read.rows}, {"questions", report.read.questions},
                        {"skipped_no_tags", report.read.skipped_no_tags}};
  manifest.seed = a.seed;
  manifest.config = {{"valid", a.valid}, {"test", a.test},
                     {"train_max_tokens", opts.train_max_tokens},
                     {"eval_max_tokens", opts.eval_max_tokens}};
  for (const char* name : {"train", "valid", "test"})
    manifest.outputs[name] = (fs::path(a.out) / (std::string(name) + ".jsonl")).string();
  manifest.outputs["stats"] = (fs::path(a.out) / "stats.json").string();
  manifest.write(fs::path(a.out));
  out << r.dump(2) << '\n';
  return kOk;
}

// --------------------------------------------------------------------- train

/// Binds one CLI flag per TrainConfig field; only flags given on the
/// command line override the config file.
class ConfigFlags {
 public:
  void attach(CLI::App& app) {
    add(app, "--embedding-dim", &TrainConfig::embedding_dim, "word embedding size");
    add(app, "--hidden", &TrainConfig::hidden, "encoder and decoder GRU units");
    add(app, "--target-encoder-hidden", &TrainConfig::target_encoder_hidden, "target encoder GRU units");
    add(app, "--vocab", &TrainConfig::vocab, "vocabulary size including reserved tokens");
    add(app, "--attention-hidden", &TrainConfig::attention_hidden, "attention MLP units");
    add(app, "--generator-hidden", &TrainConfig::generator_hidden, "generator MLP units");
    add(app, "--switch-hidden", &TrainConfig::switch_hidden, "pointer switch MLP units");
    add(app, "--dropout", &TrainConfig::dropout, "dropout rate");
    add(app, "--learning-rate", &TrainConfig::learning_rate, "Adam learning rate");
    add(app, "--batch-size", &TrainConfig::batch_size, "examples per batch");
    add(app, "--max-epochs", &TrainConfig::max_epochs, "training epochs");
    add(app, "--lambda-or", &TrainConfig::lambda_or, "orthogonal regularization weight");
    add(app, "--lambda-sc", &TrainConfig::lambda_sc, "semantic coverage weight");
    add(app, "--negatives", &TrainConfig::negatives, "in-batch negatives for semantic coverage");
    add(app, "--seed", &TrainConfig::seed, "random seed");
    add(app, "--clip-norm", &TrainConfig::clip_norm, "global gradient norm limit (0 disables)");
    add(app, "--init-scale", &TrainConfig::init_scale, "uniform initialization range");
    add(app, "--valid-max-len", &TrainConfig::valid_max_len, "decoding length during validation");
  }

  void apply(TrainConfig& c) const {
    for (const auto& f : setters_) f(c);
  }

 private:
  template <class T>
  void add(CLI::App& app, const std::string& flag, T TrainConfig::*field, const std::string& help) {
    auto value = std::make_shared<T>(TrainConfig{}.*field);
    auto* opt = app.add_option(flag, *value, help + " (default " + std::to_string(TrainConfig{}.*field) + ")");
    setters_.push_back([value, opt, field](TrainConfig& c) {
      if (opt->count()) c.*field = *value;
    });
  }

  std::vector<std::function<void(TrainConfig&)>> setters_;
};

struct TrainArgs {
  std::string data;
  std::string train;
  std::string valid;
  std::string out;
  std::string last;
  std::string config;
  std::size_t valid_subset = 2000;
  ConfigFlags flags;
};

std::vector<Document> subset(std::vector<Document> docs, std::size_t n, std::uint64_t seed) {
  if (n == 0 || docs.size() <= n) return docs;
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x76616c6964ULL));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<Document> out;
  out.reserve(n);
  for (auto i : order) out.push_back(std::move(docs[i]));
  return out;
}

json history_json(const std::vector<EpochRecord>& history) {
  json h = json::array();
  for (const auto& r : history)
    h.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"nll", r.nll}, {"l_or", r.l_or},
                 {"l_sc", r.l_sc}, {"valid_f1_o", r.valid_f1_o}});
  return h;
}

int train_cmd(const TrainArgs& a, Manifest& manifest, std::ostream& out) {
  TrainConfig config;
  if (!a.config.empty()) {
    require_file(a.config);
    std::ifstream in(a.config);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      config = config_from_json(buf.str(), config);
    } catch (const std::invalid_argument& e) {
      throw Error(a.config + ": " + e.what());
    }
    manifest.inputs["config"] = a.config;
  }
  a.flags.apply(config);
  config.validate();

  const fs::path train_path = a.data.empty() ? fs::path(a.train) : fs::path(a.data) / "train.jsonl";
  const fs::path valid_path = a.data.empty() ? fs::path(a.valid) : fs::path(a.data) / "valid.jsonl";
  const auto train_docs = load_docs(train_path);
  const auto valid_docs = subset(load_docs(valid_path), a.valid_subset, config.seed);
  if (train_docs.empty() || valid_docs.empty()) throw Error("training and validation data must be non-empty");
  const auto vocab = Vocabulary::build(train_docs, config.vocab);
  log().info("vocabulary: {} tokens; {} training and {} validation documents", vocab.size(),
             train_docs.size(), valid_docs.size());

  manifest.config = json::parse(config_to_json(config));
  manifest.config["valid_subset"] = a.valid_subset;
  manifest.seed = config.seed;
  manifest.inputs["train"] = train_path.string();
  manifest.inputs["valid"] = valid_path.string();
  manifest.outputs["checkpoint"] = a.out;

  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r) {
    log().info("epoch {}: loss {:.6f} (nll {:.6f}, or {:.6f}, sc {:.6f}), valid F1@O {:.4f}", r.epoch,
               r.loss, r.nll, r.l_or, r.l_sc, r.valid_f1_o);
  };
  hooks.on_best = [&](const Checkpoint& c) {
    save_checkpoint(fs::path(a.out), c);
    log().info("new best checkpoint (epoch {}) saved to {}", c.epoch, a.out);
  };
  const auto result = train(config, vocab, train_docs, valid_docs, hooks);
  save_checkpoint(fs::path(a.out), result.best);
  if (!a.last.empty()) {
    save_checkpoint(fs::path(a.last), result.last);
    manifest.outputs["last_checkpoint"] = a.last;
  }
  manifest.write(fs::path(a.out));

  json r = {{"best_epoch", result.best.best_epoch},
            {"best_valid_f1_o", result.best.history.at(result.best.best_epoch - 1).valid_f1_o},
            {"vocab_size", vocab.size()},
            {"history", history_json(result.best.history)}};
  out << r.dump(2) << '\n';
  return kOk;
}

// ------------------------------------------------------------------- predict

struct DecodeArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string strategy = "exhaustive";
  std::size_t beam = 50;
  std::size_t max_len = 40;
  bool length_normalize = false;
  std::size_t threads = 1;
};

BeamOptions beam_options(const DecodeArgs& a) {
  BeamOptions o;
  o.width = a.beam;
  o.max_len = a.max_len;
  o.length_normalize = a.length_normalize;
  if (o.width == 0 || o.max_len == 0) throw std::invalid_argument("--beam and --max-len must be positive");
  return o;
}

Checkpoint load_model(const std::string& path) {
  if (!fs::is_regular_file(path)) throw CheckpointError("checkpoint not found: " + path);
  auto ckpt = load_checkpoint(fs::path(path));
  log().info("loaded checkpoint {} (epoch {}, vocabulary {})", path, ckpt.epoch, ckpt.vocab.size());
  return ckpt;
}

std::vector<EncodedExample> encode_all(const std::vector<Document>& docs, const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode_example(d, vocab));
  return out;
}

int predict_cmd(const DecodeArgs& a, Manifest& manifest, std::ostream& out) {
  const auto strategy = parse_strategy(a.strategy);
  const auto opts = beam_options(a);
  const auto ckpt = load_model(a.checkpoint);
  const auto docs = load_docs(a.data);
  const auto examples = encode_all(docs, ckpt.vocab);
  const auto results = decode_all(ckpt.params, ckpt.vocab, examples, strategy, opts, std::max<std::size_t>(a.threads, 1));

  std::vector<PredictionRecord> records;
  std::size_t unk = 0, phrases = 0;
  for (const auto& r : results) {
    records.push_back(to_record(r));
    unk += r.unk_phrases;
    phrases += r.phrases.size();
  }
  log().info("{} documents, {} phrases ({} containing <unk>)", results.size(), phrases, unk);

  std::ostringstream buf;
  write_predictions(buf, records);
  if (a.out.empty()) {
    out << buf.str();
    return kOk;
  }
  write_atomically(a.out, buf.str());
  manifest.config = {{"strategy", a.strategy}, {"beam", a.beam}, {"max_len", a.max_len},
                     {"length_normalize", a.length_normalize}};
  manifest.inputs = {{"checkpoint", a.checkpoint}, {"data", a.data}};
  manifest.outputs["predictions"] = a.out;
  manifest.write(fs::path(a.out));
  json r = {{"documents", results.size()}, {"phrases", phrases}, {"unk_phrases", unk}};
  out << r.dump(2) << '\n';
  return kOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string predictions;
  std::string gold;
  std::string out;
  std::string format = "table";
  std::vector<std::size_t> k;
};

int evaluate_cmd(const EvaluateArgs& a, Manifest& manifest, std::ostream& out) {
  require_file(a.predictions);
  std::ifstream pin(a.predictions, std::ios::binary);
  const auto preds = read_predictions(pin);
  const auto gold = load_docs(a.gold);
  const auto report = evaluate_dataset(preds, gold, a.k);
  if (report.missing_predictions)
    log().warn("{} gold documents have no prediction and score as empty", report.missing_predictions);
  if (!a.out.empty()) {
    write_atomically(a.out, report.to_json() + "\n");
    manifest.config = {{"k", a.k}};
    manifest.inputs = {{"predictions", a.predictions}, {"gold", a.gold}};
    manifest.outputs["report"] = a.out;
    manifest.write(fs::path(a.out));
  }
  out << (a.format == "json" ? report.to_json() + "\n" : report.to_table());
  return kOk;
}

// ------------------------------------------------------------------- inspect

struct InspectArgs {
  DecodeArgs decode;
  std::vector<std::size_t> steps{1};
  std::size_t sample = 1000;
  std::uint64_t seed = 1;
  std::string vectors;
  bool unique_phrases = false;
};

int inspect_cmd(const InspectArgs& a, Manifest& manifest, std::ostream& out) {
  const auto ckpt = load_model(a.decode.checkpoint);
  const auto docs = load_docs(a.decode.data);
  const auto examples = encode_all(docs, ckpt.vocab);

  std::ofstream vectors;
  if (!a.vectors.empty()) {
    vectors.open(a.vectors + ".tmp", std::ios::binary | std::ios::trunc);
    if (!vectors) throw Error("cannot write " + a.vectors);
  }
  json cohorts = json::array();
  for (const auto k : a.steps) {
    if (k == 0) throw std::invalid_argument("--steps-after-delimiter values must be >= 1");
    std::vector<Matrix> groups;
    std::vector<std::pair<std::size_t, Eigen::Index>> pool;
    for (std::size_t d = 0; d < examples.size(); ++d) {
      groups.push_back(delimiter_following_states(ckpt.params, examples[d], k));
      for (Eigen::Index c = 0; c < groups.back().cols(); ++c) pool.emplace_back(d, c);
    }
    Rng rng(mix_seed(a.seed, k));
    rng.shuffle(std::span<std::pair<std::size_t, Eigen::Index>>(pool));
    const auto n = a.sample == 0 ? pool.size() : std::min(a.sample, pool.size());
    if (n < a.sample) log().warn("k = {}: only {} delimiter-following states available", k, pool.size());
    pool.resize(n);
    std::sort(pool.begin(), pool.end());

    Matrix sampled(static_cast<Eigen::Index>(ckpt.params.dims.hidden), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [d, c] = pool[i];
      sampled.col(static_cast<Eigen::Index>(i)) = groups[d].col(c);
      if (vectors.is_open()) {
        vectors << k << '\t' << examples[d].id << '\t' << c;
        char buf[32];
        for (Eigen::Index r = 0; r < sampled.rows(); ++r) {
          std::snprintf(buf, sizeof buf, "\t%.9g", sampled(r, static_cast<Eigen::Index>(i)));
          vectors << buf;
        }
        vectors << '\n';
      }
    }
    const auto within = diversity_stats(groups);
    cohorts.push_back({{"k", k},
                       {"states", within.states},
                       {"sampled", n},
                       {"sample_mean_cosine", mean_pairwise_cosine(sampled)},
                       {"within_document_cosine", within.mean_pairwise_cosine},
                       {"documents_with_pairs", within.groups}});
  }
  if (vectors.is_open()) {
    vectors.close();
    fs::rename(a.vectors + ".tmp", a.vectors);
  }

  json r = {{"documents", examples.size()}, {"cohorts", cohorts}};
  if (a.unique_phrases) {
    const auto results = decode_all(ckpt.params, ckpt.vocab, examples, Strategy::kExhaustive,
                                    beam_options(a.decode), std::max<std::size_t>(a.decode.threads, 1));
    r["avg_unique_phrases"] = average_unique_phrases(results);
  }
  if (!a.decode.out.empty()) {
    write_atomically(a.decode.out, r.dump(2) + "\n");
    manifest.seed = a.seed;
    manifest.config = {{"steps_after_delimiter", a.steps}, {"sample", a.sample}};
    manifest.inputs = {{"checkpoint", a.decode.checkpoint}, {"data", a.decode.data}};
    manifest.outputs["stats"] = a.decode.out;
    if (!a.vectors.empty()) manifest.outputs["vectors"] = a.vectors;
    manifest.write(fs::path(a.decode.out));
  }
  out << r.dump(2) << '\n';
  return kOk;
}

void add_decode_options(CLI::App& cmd, DecodeArgs& a, bool strategy) {
  cmd.add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
  cmd.add_option("--data", a.data, "documents (JSONL)")->required();
  if (strategy)
    cmd.add_option("--strategy", a.strategy, "greedy, top-beam or exhaustive")
        ->check(CLI::IsMember({"greedy", "top-beam", "exhaustive"}))
        ->capture_default_str();
  cmd.add_option("--beam", a.beam, "beam width")->capture_default_str();
  cmd.add_option("--max-len", a.max_len, "maximum generated tokens")->capture_default_str();
  cmd.add_flag("--length-normalize", a.length_normalize, "rank hypotheses by mean token log-probability");
  cmd.add_option("--threads", a.threads, "decoding workers")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"keyphrase generation toolkit", "kpg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", KPG_VERSION);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  BuildDataArgs bd;
  auto* build = app.add_subcommand("build-data", "normalize a JSONL corpus or convert a StackExchange dump");
  auto* se_opt = build->add_option("--stackexchange", bd.stackexchange, "Posts.xml");
  auto* jsonl_opt = build->add_option("--jsonl", bd.jsonl, "JSONL records {id, title, abstract, keywords}");
  se_opt->excludes(jsonl_opt);
  build->add_option("--out", bd.out, "output directory")->required();
  build->add_option("--valid", bd.valid, "validation documents")->capture_default_str();
  build->add_option("--test", bd.test, "test documents")->capture_default_str();
  build->add_option("--seed", bd.seed, "split seed")->capture_default_str();
  bd.train_max_opt = build->add_option("--train-max-tokens", bd.train_max_tokens,
                                       "training-split token budget (0 = none; default 300 for StackExchange)");
  bd.eval_max_opt = build->add_option("--eval-max-tokens", bd.eval_max_tokens,
                                      "valid/test token budget (0 = none; default 1000 for StackExchange)");

  TrainArgs tr;
  auto* train_app = app.add_subcommand("train", "train a model and keep the best validation checkpoint");
  auto* data_opt = train_app->add_option("--data", tr.data, "directory with train.jsonl and valid.jsonl");
  auto* train_opt = train_app->add_option("--train", tr.train, "training JSONL");
  auto* valid_opt = train_app->add_option("--valid", tr.valid, "validation JSONL");
  data_opt->excludes(train_opt)->excludes(valid_opt);
  train_opt->needs(valid_opt);
  valid_opt->needs(train_opt);
  train_app->add_option("--out", tr.out, "best checkpoint path")->required();
  train_app->add_option("--last", tr.last, "also save the final epoch here");
  train_app->add_option("--config", tr.config, "JSON file with TrainConfig fields");
  train_app->add_option("--valid-subset", tr.valid_subset, "validation documents used per epoch (0 = all)")
      ->capture_default_str();
  tr.flags.attach(*train_app);

  DecodeArgs pr;
  auto* predict = app.add_subcommand("predict", "decode keyphrases for every document");
  add_decode_options(*predict, pr, true);
  predict->add_option("--out", pr.out, "prediction JSONL (default: stdout)");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against gold keyphrases");
  evaluate->add_option("--predictions", ev.predictions, "prediction JSONL")->required();
  evaluate->add_option("--gold", ev.gold, "gold JSONL")->required();
  evaluate->add_option("--k", ev.k, "additional fixed cut-offs for present phrases");
  evaluate->add_option("--out", ev.out, "write the JSON report here");
  evaluate->add_option("--format", ev.format, "stdout format")
      ->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();

  InspectArgs in;
  auto* inspect = app.add_subcommand("inspect", "delimiter-following decoder state statistics");
  add_decode_options(*inspect, in.decode, false);
  inspect->add_option("--steps-after-delimiter", in.steps, "one cohort per k")->capture_default_str();
  inspect->add_option("--sample", in.sample, "states sampled per cohort (0 = all)")->capture_default_str();
  inspect->add_option("--seed", in.seed, "sampling seed")->capture_default_str();
  inspect->add_option("--vectors", in.vectors, "write sampled states as TSV rows: k, id, index, values");
  inspect->add_option("--out", in.decode.out, "write the statistics JSON here");
  inspect->add_flag("--unique-phrases", in.unique_phrases, "also report exhaustive-decoding unique phrase counts");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (build->parsed() && se_opt->count() + jsonl_opt->count() == 0)
      throw CLI::RequiredError("--stackexchange or --jsonl");
    if (train_app->parsed() && data_opt->count() + train_opt->count() == 0)
      throw CLI::RequiredError("--data or --train/--valid");
  } catch (const CLI::ParseError& e) {
    std::ostringstream err;
    const int code = app.exit(e, out, err);
    std::fputs(err.str().c_str(), stderr);
    return code == 0 ? kOk : kUsage;
  }

  log().set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
  Manifest manifest;
  manifest.args.assign(args.begin() + 1, args.end());
  try {
    if (build->parsed()) {
      manifest.command = "build-data";
      return build_data(bd, manifest, out);
    }
    if (train_app->parsed()) {
      manifest.command = "train";
      return train_cmd(tr, manifest, out);
    }
    if (predict->parsed()) {
      manifest.command = "predict";
      return predict_cmd(pr, manifest, out);
    }
    if (evaluate->parsed()) {
      manifest.command = "evaluate";
      return evaluate_cmd(ev, manifest, out);
    }
    manifest.command = "inspect";
    return inspect_cmd(in, manifest, out);
  } catch (const DivergenceError& e) {
    log().error("training diverged: {}", e.what());
    return kDivergence;
  } catch (const CheckpointError& e) {
    log().error("checkpoint: {}", e.what());
    return kCheckpointError;
  } catch (const IdMismatchError& e) {
    log().error("{}", e.what());
    return kIdMismatch;
  } catch (const std::invalid_argument& e) {
    log().error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    log().error("{}", e.what());
    return kInputError;
  }
}

}  // namespace kpg::cli
