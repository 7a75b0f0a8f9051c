// SPDX-License-Identifier: Apache-2.0
#include "kpg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <system_error>

#include <json.hpp>

#include "kpg/error.hpp"

namespace kpg {

using json = nlohmann::json;
using Eigen::Index;

namespace {

constexpr char kMagic[4] = {'K', 'P', 'G', '1'};

template <class T>
void put(std::string& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (n > end_ - pos_)
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct TensorRef {
  Eigen::Index rows;
  Eigen::Index cols;
  int rank;
  double* data;  // column-major storage
};

std::map<std::string, TensorRef> tensor_table(Checkpoint& c) {
  std::map<std::string, TensorRef> out;
  const auto add = [&](const std::string& prefix, ModelParams& p) {
    for_each_tensor(
        [&](std::string_view name, auto& t) {
          const int rank = std::decay_t<decltype(t)>::ColsAtCompileTime == 1 ? 1 : 2;
          out.emplace(prefix + std::string(name), TensorRef{t.rows(), t.cols(), rank, t.data()});
        },
        p);
  };
  add("", c.params);
  add("adam.m/", c.adam.m);
  add("adam.v/", c.adam.v);
  return out;
}

void write_tensor(std::string& buf, const std::string& name, const auto& t) {
  constexpr bool vec = std::decay_t<decltype(t)>::ColsAtCompileTime == 1;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put<std::uint8_t>(buf, vec ? 1 : 2);
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(t.rows()));
  if (!vec) put<std::uint64_t>(buf, static_cast<std::uint64_t>(t.cols()));
  for (Index r = 0; r < t.rows(); ++r)
    for (Index c = 0; c < t.cols(); ++c)
      put<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(t(r, c))));
}

json dims_json(const ModelDims& d) {
  return {{"vocab", d.vocab},         {"embedding", d.embedding},
          {"hidden", d.hidden},       {"target_hidden", d.target_hidden},
          {"attention", d.attention}, {"generator", d.generator},
          {"switch_hidden", d.switch_hidden}};
}

std::string shape_string(Index rows, Index cols, int rank) {
  return rank == 1 ? "[" + std::to_string(rows) + "]"
                   : "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  std::string buf(kMagic, sizeof kMagic);
  put<std::uint16_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, 0);  // count, patched once known
  std::uint32_t count = 0;
  const auto emit = [&](const std::string& prefix, const ModelParams& p) {
    for_each_tensor(
        [&](std::string_view name, const auto& t) {
          write_tensor(buf, prefix + std::string(name), t);
          ++count;
        },
        p);
  };
  emit("", ckpt.params);
  emit("adam.m/", ckpt.adam.m);
  emit("adam.v/", ckpt.adam.v);
  for (std::size_t i = 0; i < 4; ++i)
    buf[6 + i] = static_cast<char>((count >> (8 * i)) & 0xff);

  json history = json::array();
  for (const auto& r : ckpt.history)
    history.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"nll", r.nll}, {"l_or", r.l_or},
                       {"l_sc", r.l_sc}, {"valid_f1_o", r.valid_f1_o}});
  json trailer = {{"config", json::parse(config_to_json(ckpt.config))},
                  {"dims", dims_json(ckpt.params.dims)},
                  {"vocab", ckpt.vocab.tokens()},
                  {"epoch", ckpt.epoch},
                  {"step", ckpt.step},
                  {"adam_step", ckpt.adam.step},
                  {"best_epoch", ckpt.best_epoch},
                  {"history", history}};
  const auto offset = static_cast<std::uint64_t>(buf.size());
  buf += trailer.dump();
  put<std::uint64_t>(buf, offset);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed to write checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp.string() + "' for writing");
    save_checkpoint(out, ckpt);
    out.flush();
    if (!out) throw CheckpointError("failed to write '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(std::istream& in) {
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kHeader = sizeof kMagic + 2 + 4;
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  if (data.size() < kHeader + 8) throw CheckpointError("truncated checkpoint header");

  Reader tail(data, data.size());
  tail.seek(data.size() - 8);
  const auto trailer_at = tail.get<std::uint64_t>("trailer offset");
  if (trailer_at < kHeader || trailer_at > data.size() - 8)
    throw CheckpointError("truncated checkpoint (trailer offset out of range)");

  Reader r(data, static_cast<std::size_t>(trailer_at));
  r.seek(sizeof kMagic);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto count = r.get<std::uint32_t>("tensor count");

  Checkpoint c;
  json trailer;
  try {
    trailer = json::parse(data.begin() + static_cast<std::ptrdiff_t>(trailer_at), data.end() - 8);
    c.config = config_from_json(trailer.at("config").dump());
    c.vocab = Vocabulary::from_tokens(trailer.at("vocab").get<std::vector<std::string>>());
    c.epoch = trailer.at("epoch").get<std::size_t>();
    c.step = trailer.at("step").get<std::uint64_t>();
    c.adam.step = trailer.at("adam_step").get<std::uint64_t>();
    c.best_epoch = trailer.at("best_epoch").get<std::size_t>();
    for (const auto& h : trailer.at("history")) {
      EpochRecord e;
      e.epoch = h.at("epoch").get<std::size_t>();
      e.loss = h.at("loss").get<double>();
      e.nll = h.at("nll").get<double>();
      e.l_or = h.at("l_or").get<double>();
      e.l_sc = h.at("l_sc").get<double>();
      e.valid_f1_o = h.at("valid_f1_o").get<double>();
      c.history.push_back(e);
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint trailer: ") + e.what());
  }

  const auto dims = c.config.dims(c.vocab.size());
  if (trailer.at("dims") != dims_json(dims))
    throw CheckpointError("checkpoint dimensions disagree with its config and vocabulary (" +
                          std::to_string(c.vocab.size()) + " tokens)");
  c.params = ModelParams::zeros(dims);
  c.adam.m = ModelParams::zeros(dims);
  c.adam.v = ModelParams::zeros(dims);
  auto table = tensor_table(c);
  if (count != table.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                          std::to_string(table.size()));

  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("tensor name length");
    const auto name = r.bytes(len, "tensor name");
    auto it = table.find(name);
    if (it == table.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    auto& t = it->second;
    if (t.rank < 0) throw CheckpointError("duplicate tensor '" + name + "'");
    const auto rank = r.get<std::uint8_t>("tensor rank");
    std::uint64_t dims_read[2] = {0, 1};
    if (rank != 1 && rank != 2)
      throw CheckpointError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    for (int d = 0; d < rank; ++d) dims_read[d] = r.get<std::uint64_t>("tensor dims");
    if (rank != t.rank || dims_read[0] != static_cast<std::uint64_t>(t.rows) ||
        dims_read[1] != static_cast<std::uint64_t>(t.cols))
      throw CheckpointError(
          "tensor '" + name + "' has shape " +
          shape_string(static_cast<Index>(dims_read[0]), static_cast<Index>(dims_read[1]), rank) +
          ", expected " + shape_string(t.rows, t.cols, t.rank) + " for vocabulary size " +
          std::to_string(c.vocab.size()));
    r.need(static_cast<std::size_t>(t.rows * t.cols) * 4, "tensor data");
    for (Index row = 0; row < t.rows; ++row)
      for (Index col = 0; col < t.cols; ++col)
        t.data[col * t.rows + row] =
            static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("tensor data")));
    t.rank = -1;
  }
  if (r.pos() != trailer_at) throw CheckpointError("trailing bytes after the tensor table");
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

}  // namespace kpg
