#include "gradcoo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gradcoo/errors.hpp"
#include "json.hpp"

namespace gradcoo {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'O', 'O'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ >= bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("container truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_container(const Container& c) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(c.header.size()));
  out.append(c.header);
  for (const auto& [name, tensor] : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) put_u64(out, d);
    out.push_back('\0');  // dtype tag 0 = f64
    for (double v : tensor.values) put_f64(out, v);
  }
  return out;
}

Container deserialize_container(const std::string& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic bytes, not a GCOO container");
  }
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw VersionError("unsupported container version " + std::to_string(version));
  }
  Container c;
  c.header = r.str(r.u32());
  while (!r.at_end()) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::size_t>(r.u64());
      numel *= shape[i];
    }
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) throw FormatError("unknown dtype tag " + std::to_string(dtype));
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = r.f64();
    c.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_container(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_container(buf.str());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a_hex(buf.str());
}

std::string config_to_json_string(const ModelConfig& cfg) {
  nlohmann::json j;
  j["vocab_size"] = cfg.vocab_size;
  j["d_model"] = cfg.d_model;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["max_seq_len"] = cfg.max_seq_len;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig config_from_json_string(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw FormatError("config record is not valid JSON");
  }
  ModelConfig cfg;
  try {
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.d_ff = j.at("d_ff").get<std::size_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config record is incomplete: ") + e.what());
  }
  return cfg;
}

namespace {

Container checkpoint_container(const ModelWeights& weights, const ModelConfig& cfg) {
  Container c;
  c.header = config_to_json_string(cfg);
  for (const auto& [name, tensor] : weights.params) c.tensors.emplace_back(name, tensor);
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights,
                     const ModelConfig& cfg) {
  write_container(path, checkpoint_container(weights, cfg));
}

std::pair<ModelWeights, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const ModelConfig cfg = config_from_json_string(c.header);
  cfg.validate();

  ModelWeights w;
  for (const auto& [name, tensor] : c.tensors) {
    if (!w.params.emplace(name, tensor).second) {
      throw ConsistencyError("duplicate tensor '" + name + "' in checkpoint");
    }
  }

  const auto expected = expected_parameter_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    const auto it = w.params.find(name);
    if (it == w.params.end()) {
      throw ConsistencyError("checkpoint is missing parameter '" + name + "'");
    }
    if (it->second.shape != shape) {
      throw ConsistencyError("parameter '" + name + "' has shape " +
                             it->second.shape_str() + ", config implies another shape");
    }
    if (!it->second.all_finite()) {
      throw ConsistencyError("parameter '" + name + "' contains non-finite values");
    }
  }
  if (w.params.size() != expected.size()) {
    throw ConsistencyError("checkpoint carries tensors not implied by its config");
  }
  return {std::move(w), cfg};
}

std::string weights_digest(const ModelWeights& weights, const ModelConfig& cfg) {
  return fnv1a_hex(serialize_container(checkpoint_container(weights, cfg)));
}

}  // namespace gradcoo
