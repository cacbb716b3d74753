// SPDX-License-Identifier: Apache-2.0
//
// "DAMC" container, little-endian throughout:
//   magic[4] u32 version u64 config_hash
//   config: 10 x u64 dims, 2 x f64 (dropout, reproduce)
//   u64 iteration u64 seed u32 tensor_count
//   tensor: u32 name_len name u32 rank u64 dims[rank] f64 values[]
#include <bit>
#include <cstring>
#include <fstream>

#include "dam/error.hpp"
#include "dam/trainer.hpp"

namespace dam {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'M', 'C'};
constexpr const char* kParamPrefix = "param:";
constexpr const char* kMeanSquarePrefix = "rmsprop.ms:";
constexpr const char* kMomentumPrefix = "rmsprop.mom:";

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u(std::uint64_t v, int bytes) {
    char b[8];
    for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, bytes);
  }
  void f64(double v) { u(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u(s.size(), 4);
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Shape& shape, std::span<const double> values) {
    str(name);
    u(shape.size(), 4);
    for (std::size_t d : shape) u(d, 8);
    for (double v : values) f64(v);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint64_t u(int bytes) {
    unsigned char b[8];
    in_.read(reinterpret_cast<char*>(b), bytes);
    if (in_.gcount() != bytes) throw FormatError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u(8)); }
  std::string str() {
    const auto n = u(4);
    if (n > (1u << 20)) throw FormatError("checkpoint string length implausible");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) throw FormatError("checkpoint truncated");
    return s;
  }

 private:
  std::istream& in_;
};

void write_config(Writer& w, const ModelConfig& c) {
  for (std::size_t v : {c.blocks, c.addresses, c.word, c.read_heads, c.hidden, c.input, c.output,
                        c.mlp_layers, c.mlp_width, c.reconstruction}) {
    w.u(v, 8);
  }
  w.u(c.vocab, 8);
  w.f64(c.dropout);
  w.f64(c.reproduce);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  for (std::size_t* v : {&c.blocks, &c.addresses, &c.word, &c.read_heads, &c.hidden, &c.input, &c.output,
                         &c.mlp_layers, &c.mlp_width, &c.reconstruction, &c.vocab}) {
    *v = r.u(8);
  }
  c.dropout = r.f64();
  c.reproduce = r.f64();
  return c;
}

}  // namespace

std::uint64_t config_hash(const ModelConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : config.canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(std::ostream& out, const TrainRecord& record) {
  Writer w(out);
  out.write(kMagic, 4);
  w.u(kCheckpointVersion, 4);
  w.u(config_hash(record.config), 8);
  write_config(w, record.config);
  w.u(record.iteration, 8);
  w.u(record.seed, 8);

  const auto named = record.params.named();
  std::size_t count = named.size();
  for (const auto& p : named) {
    if (record.optimizer.contains(p.name)) count += 2;
  }
  w.u(count, 4);
  for (const auto& p : named) w.tensor(kParamPrefix + p.name, p.tensor.shape(), p.tensor.values());
  for (const auto& p : named) {
    const auto it = record.optimizer.find(p.name);
    if (it == record.optimizer.end()) continue;
    if (it->second.mean_square.size() != p.tensor.size() || it->second.momentum.size() != p.tensor.size()) {
      throw ShapeError("optimizer state for " + p.name + " does not mirror the parameter shape");
    }
    w.tensor(kMeanSquarePrefix + p.name, p.tensor.shape(), it->second.mean_square);
    w.tensor(kMomentumPrefix + p.name, p.tensor.shape(), it->second.momentum);
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

TrainRecord load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  Reader r(in);
  const auto version = r.u(4);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto stored_hash = r.u(8);
  TrainRecord record;
  record.config = read_config(r);
  if (config_hash(record.config) != stored_hash) throw FormatError("checkpoint config block is corrupt");
  if (expected && config_hash(*expected) != stored_hash) {
    throw ConfigError("checkpoint config mismatch: file has {" + record.config.canonical() + "}, expected {" +
                      expected->canonical() + "}");
  }
  record.iteration = r.u(8);
  record.seed = r.u(8);

  // Shapes come from a freshly initialised model; values are overwritten.
  record.params = DamParameters::init(record.config, 0);
  std::map<std::string, Tensor> by_name;
  for (auto& p : record.params.named()) by_name.emplace(p.name, p.tensor);

  const auto count = r.u(4);
  std::size_t params_seen = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto rank = r.u(4);
    if (rank > 8) throw FormatError("checkpoint tensor rank implausible");
    Shape shape(rank);
    for (auto& d : shape) d = r.u(8);
    std::string base;
    std::vector<double>* dst = nullptr;
    std::vector<double> scratch;
    if (name.rfind(kParamPrefix, 0) == 0) {
      base = name.substr(std::strlen(kParamPrefix));
    } else if (name.rfind(kMeanSquarePrefix, 0) == 0) {
      base = name.substr(std::strlen(kMeanSquarePrefix));
      dst = &record.optimizer[base].mean_square;
    } else if (name.rfind(kMomentumPrefix, 0) == 0) {
      base = name.substr(std::strlen(kMomentumPrefix));
      dst = &record.optimizer[base].momentum;
    } else {
      throw FormatError("unknown checkpoint entry " + name);
    }
    const auto it = by_name.find(base);
    if (it == by_name.end()) throw FormatError("checkpoint entry for unknown parameter " + base);
    if (it->second.shape() != shape) throw FormatError("checkpoint shape mismatch for " + name);
    scratch.resize(shape_size(shape));
    for (double& v : scratch) v = r.f64();
    if (dst) {
      *dst = std::move(scratch);
    } else {
      Tensor t = it->second;
      std::copy(scratch.begin(), scratch.end(), t.mutable_values().begin());
      ++params_seen;
    }
  }
  if (params_seen != by_name.size()) throw FormatError("checkpoint is missing parameters");
  return record;
}

void save_checkpoint(const std::filesystem::path& path, const TrainRecord& record) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    save_checkpoint(out, record);
  }
  std::filesystem::rename(tmp, path);
}

TrainRecord load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint not found: " + path.string());
  return load_checkpoint(in, expected);
}

}  // namespace dam
