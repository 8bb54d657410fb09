// SPDX-License-Identifier: Apache-2.0
#include "ulab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "ulab/errors.hpp"

namespace ulab {
namespace {

constexpr std::string_view kMagic = "ULABCKPT1\n";

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw InputError("checkpoint truncated");
  std::uint64_t v;
  std::memcpy(&v, in.data() + pos, 8);
  pos += 8;
  return v;
}

nlohmann::ordered_json model_json(const TransformerConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},         {"context", c.context},
          {"tied_output", c.tied_output}, {"init_std", c.init_std}, {"seed", c.seed}};
}

TransformerConfig model_from_json(const nlohmann::ordered_json& j) {
  TransformerConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.context = j.at("context").get<int>();
  c.tied_output = j.at("tied_output").get<bool>();
  c.init_std = j.at("init_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fnv1a_hex(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 15];
  return out;
}

const Eigen::VectorXd& Checkpoint::blob(const std::string& name) const {
  for (const auto& [n, v] : blobs) {
    if (n == name) return v;
  }
  throw InputError("checkpoint has no blob " + name);
}

std::string serialize(const Checkpoint& c) {
  nlohmann::ordered_json header;
  header["kind"] = c.kind;
  header["model"] = model_json(c.model);
  header["vocab"] = c.vocab;
  header["config_hash"] = c.config_hash;
  header["meta"] = c.meta;
  auto& blobs = header["blobs"] = nlohmann::ordered_json::array();
  for (const auto& [name, v] : c.blobs) blobs.push_back({{"name", name}, {"size", v.size()}});
  const std::string h = header.dump();

  std::string out(kMagic);
  put_u64(out, h.size());
  out += h;
  for (const auto& [name, v] : c.blobs) {
    out.append(reinterpret_cast<const char*>(v.data()),
               static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw InputError("not a checkpoint file");
  if (bytes.size() < kMagic.size() + 16) throw InputError("checkpoint truncated");
  std::size_t tail = bytes.size() - 8;
  if (get_u64(bytes, tail) != fnv1a64(bytes.substr(0, bytes.size() - 8))) {
    throw InputError("checkpoint checksum mismatch");
  }
  std::size_t pos = kMagic.size();
  const std::uint64_t hlen = get_u64(bytes, pos);
  if (pos + hlen > bytes.size() - 8) throw InputError("checkpoint truncated");
  const auto header = nlohmann::ordered_json::parse(bytes.substr(pos, hlen));
  pos += hlen;

  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.model = model_from_json(header.at("model"));
  c.vocab = header.at("vocab").get<std::vector<std::string>>();
  c.config_hash = header.at("config_hash").get<std::string>();
  c.meta = header.at("meta");
  for (const auto& b : header.at("blobs")) {
    const auto n = b.at("size").get<std::size_t>();
    if (pos + n * sizeof(double) > bytes.size() - 8) throw InputError("checkpoint truncated");
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    std::memcpy(v.data(), bytes.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    c.blobs.emplace_back(b.at("name").get<std::string>(), std::move(v));
  }
  if (pos != bytes.size() - 8) throw InputError("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

Checkpoint model_checkpoint(const Transformer<double>& model, const Vocab& vocab,
                            const std::string& config_hash) {
  Checkpoint c;
  c.model = model.config();
  c.vocab = vocab.tokens();
  c.config_hash = config_hash;
  c.blobs.emplace_back("params", model.params());
  return c;
}

}  // namespace ulab
