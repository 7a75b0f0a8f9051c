// SPDX-License-Identifier: Apache-2.0
#include "kpg/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "kpg/decoding.hpp"
#include "kpg/error.hpp"
#include "kpg/evaluation.hpp"

namespace kpg {

using json = nlohmann::json;

namespace {

template <class F>
void for_each_field(F&& f, TrainConfig& c) {
  f("embedding_dim", c.embedding_dim);
  f("hidden", c.hidden);
  f("target_encoder_hidden", c.target_encoder_hidden);
  f("vocab", c.vocab);
  f("attention_hidden", c.attention_hidden);
  f("generator_hidden", c.generator_hidden);
  f("switch_hidden", c.switch_hidden);
  f("dropout", c.dropout);
  f("learning_rate", c.learning_rate);
  f("batch_size", c.batch_size);
  f("max_epochs", c.max_epochs);
  f("lambda_or", c.lambda_or);
  f("lambda_sc", c.lambda_sc);
  f("negatives", c.negatives);
  f("seed", c.seed);
  f("clip_norm", c.clip_norm);
  f("init_scale", c.init_scale);
  f("valid_max_len", c.valid_max_len);
}

}  // namespace

void TrainConfig::validate() const {
  const auto positive = [](const char* name, auto v) {
    if (!(v > 0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive("embedding_dim", embedding_dim);
  positive("hidden", hidden);
  positive("target_encoder_hidden", target_encoder_hidden);
  positive("vocab", vocab);
  positive("attention_hidden", attention_hidden);
  positive("generator_hidden", generator_hidden);
  positive("switch_hidden", switch_hidden);
  positive("learning_rate", learning_rate);
  positive("batch_size", batch_size);
  positive("max_epochs", max_epochs);
  positive("negatives", negatives);
  positive("init_scale", init_scale);
  positive("valid_max_len", valid_max_len);
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("dropout must be in [0, 1)");
  if (!(lambda_or >= 0.0)) throw std::invalid_argument("lambda_or must be >= 0");
  if (!(lambda_sc >= 0.0)) throw std::invalid_argument("lambda_sc must be >= 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
  if (vocab <= kNumReserved)
    throw std::invalid_argument("vocab must exceed the " + std::to_string(kNumReserved) +
                                " reserved tokens");
}

ModelDims TrainConfig::dims(std::size_t vocab_size) const {
  ModelDims d;
  d.vocab = vocab_size;
  d.embedding = embedding_dim;
  d.hidden = hidden;
  d.target_hidden = target_encoder_hidden;
  d.attention = attention_hidden;
  d.generator = generator_hidden;
  d.switch_hidden = switch_hidden;
  return d;
}

std::string config_to_json(const TrainConfig& config) {
  json obj = json::object();
  TrainConfig copy = config;
  for_each_field([&](const char* name, const auto& v) { obj[name] = v; }, copy);
  return obj.dump(2);
}

TrainConfig config_from_json(std::string_view json_text, TrainConfig base) {
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!obj.is_object()) throw std::invalid_argument("config: expected a JSON object");
  std::size_t used = 0;
  for_each_field(
      [&](const char* name, auto& field) {
        auto it = obj.find(name);
        if (it == obj.end()) return;
        ++used;
        using T = std::remove_reference_t<decltype(field)>;
        if constexpr (std::is_floating_point_v<T>) {
          if (!it->is_number())
            throw std::invalid_argument(std::string("config: '") + name + "' must be a number");
          field = it->template get<T>();
        } else {
          if (!it->is_number_unsigned())
            throw std::invalid_argument(std::string("config: '") + name +
                                        "' must be a non-negative integer");
          field = it->template get<T>();
        }
      },
      base);
  if (used != obj.size()) {
    TrainConfig probe;
    for (const auto& [key, value] : obj.items()) {
      bool known = false;
      for_each_field([&](const char* name, auto&) { known = known || key == name; }, probe);
      if (!known) throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return base;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  return AdamState{ModelParams::zeros(params.dims), ModelParams::zeros(params.dims), 0};
}

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               double learning_rate) {
  if (!(grads.tensors.dims == params.dims) || !(state.m.dims == params.dims))
    throw std::invalid_argument("adam_step: shape mismatch");
  ModelParams next = params;
  AdamState s = state;
  ++s.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(s.step));
  std::string bad;
  for_each_tensor(
      [&](std::string_view name, auto& w, const auto& g, auto& m, auto& v) {
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseAbs2();
        w.array() -= learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEpsilon);
        if (bad.empty() && !w.allFinite()) bad = name;
      },
      next, grads.tensors, s.m, s.v);
  if (!bad.empty()) throw DivergenceError("non-finite Adam update in tensor '" + bad + "'");
  round_to_float(next);
  round_to_float(s.m);
  round_to_float(s.v);
  params = std::move(next);
  state = std::move(s);
}

double clip_global_norm(GradientSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

double dataset_nll(const ModelParams& params, std::span<const EncodedExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto batch = make_batch({ex});
    total += forward_batch(params, batch, ForwardOptions{}).nll;
  }
  return total / static_cast<double>(examples.size());
}

double validation_f1(const ModelParams& params, const Vocabulary& vocab,
                     std::span<const Document> docs, std::size_t max_len) {
  if (docs.empty()) return 0.0;
  BeamOptions opts;
  opts.max_len = max_len;
  double total = 0.0;
  for (const auto& doc : docs) {
    const auto ex = encode_example(doc, vocab);
    const auto result = self_terminating_decode(params, vocab, ex, Strategy::kGreedy, opts);
    total += f1_at_O(result.phrases, doc.gold).f1;
  }
  return total / static_cast<double>(docs.size());
}

TrainResult train(const TrainConfig& config, const Vocabulary& vocab,
                  std::span<const Document> train_docs, std::span<const Document> valid_docs,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_docs.empty()) throw std::invalid_argument("train: empty training set");
  if (valid_docs.empty()) throw std::invalid_argument("train: empty validation set");

  std::vector<EncodedExample> encoded;
  encoded.reserve(train_docs.size());
  for (const auto& doc : train_docs) encoded.push_back(encode_example(doc, vocab));

  Checkpoint state;
  state.config = config;
  state.vocab = vocab;
  state.params = ModelParams::random(config.dims(vocab.size()), config.seed, config.init_scale);
  state.adam = AdamState::zeros_like(state.params);

  const auto weights = config.loss_weights();
  TrainResult result;
  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = make_batches(encoded, config.batch_size, mix_seed(config.seed, epoch));
    for (const auto& batch : batches) {
      ForwardOptions fwd;
      fwd.dropout = config.dropout;
      fwd.seed = mix_seed(config.seed ^ 0x5eedULL, state.step);
      fwd.negatives = config.negatives;
      const auto tape = forward_batch(state.params, batch, fwd);
      const auto loss = total_loss(tape, weights);
      if (!std::isfinite(loss.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(state.step + 1));
      auto grads = gradients(state.params, tape, weights);
      clip_global_norm(grads, config.clip_norm);
      adam_step(state.params, grads, state.adam, config.learning_rate);
      ++state.step;
      const auto w = static_cast<double>(batch.size());
      rec.loss += w * loss.total;
      rec.nll += w * loss.nll;
      rec.l_or += w * loss.l_or;
      rec.l_sc += w * loss.l_sc;
    }
    const auto n = static_cast<double>(encoded.size());
    rec.loss /= n;
    rec.nll /= n;
    rec.l_or /= n;
    rec.l_sc /= n;
    rec.valid_f1_o = validation_f1(state.params, vocab, valid_docs, config.valid_max_len);
    state.epoch = epoch;
    state.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (rec.valid_f1_o > best_f1) {
      best_f1 = rec.valid_f1_o;
      state.best_epoch = epoch;
      result.best = state;
      if (hooks.on_best) hooks.on_best(result.best);
    }
  }
  result.best.history = state.history;
  result.last = std::move(state);
  return result;
}

}  // namespace kpg
