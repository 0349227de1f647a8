#include "borderflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace borderflow {
namespace {

static_assert(sizeof(kCheckpointMagic) == 17, "magic is 16 bytes plus terminator");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

void Checkpoint::put_params(const std::string& prefix, const ParameterSet& params) {
  for (const auto& [name, p] : params) tensors[prefix + name] = p.value;
}

void Checkpoint::get_params(const std::string& prefix, ParameterSet& params) const {
  for (auto& [name, p] : params) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks parameter '" + prefix + name + "'");
    if (it->second.shape() != p.value.shape())
      throw CheckpointError("checkpoint shape mismatch for '" + prefix + name + "': " +
                            shape_string(it->second.shape()) + " vs " + shape_string(p.value.shape()));
    p.value = it->second;
  }
}

void Checkpoint::put_optimizer(const std::string& prefix, const OptimizerState& state) {
  meta[prefix + "step"] = std::to_string(state.step());
  for (const auto& [name, m] : state.moments()) {
    tensors[prefix + "m1/" + name] = m.first;
    tensors[prefix + "m2/" + name] = m.second;
  }
}

void Checkpoint::get_optimizer(const std::string& prefix, OptimizerState& state) const {
  std::map<std::string, Moments> moments;
  for (const auto& [name, m] : state.moments()) {
    auto a = tensors.find(prefix + "m1/" + name);
    auto b = tensors.find(prefix + "m2/" + name);
    if (a == tensors.end() || b == tensors.end())
      throw CheckpointError("checkpoint lacks optimizer moments for '" + name + "'");
    moments.emplace(name, Moments{a->second, b->second});
  }
  state.restore(std::stol(meta_at(prefix + "step")), std::move(moments));
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint lacks meta key '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, a] : ckpt.tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", a.shape()}, {"offset", payload.size()}});
    for (double v : a.values()) put_f64(payload, v);
  }
  const std::string text = manifest.dump();
  std::string blob(kCheckpointMagic, 16);
  put_u64(blob, text.size());
  blob += text;
  blob += payload;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 24 || std::memcmp(blob.data(), kCheckpointMagic, 16) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint64_t len = get_u64(blob.data() + 16);
  if (24 + len > blob.size()) throw CheckpointError("truncated checkpoint manifest");
  const auto manifest = nlohmann::json::parse(blob.begin() + 24, blob.begin() + 24 + static_cast<long>(len));
  const std::size_t payload_start = 24 + len;

  Checkpoint ckpt;
  ckpt.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
  for (const auto& t : manifest.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t count = shape_size(shape);
    if (payload_start + offset + 8 * count > blob.size()) throw CheckpointError("truncated checkpoint payload");
    std::vector<double> values(count);
    const char* p = blob.data() + payload_start + offset;
    for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(p + 8 * i));
    ckpt.tensors.emplace(t.at("name").get<std::string>(), Array(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace borderflow
