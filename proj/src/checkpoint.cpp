#include "semtok/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include <zlib.h>

#include "semtok/config.hpp"
#include "semtok/error.hpp"

namespace semtok {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'K', 'C'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw CorruptionError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  void doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), p_ + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool done() const { return pos_ == n_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const ModelConfig& config,
                                                const std::vector<NamedTensor>& tensors,
                                                std::uint32_t version) {
  std::vector<unsigned char> out;
  put_bytes(out, kMagic, 4);
  put_u32(out, version);
  const std::string cfg = model_config_to_json(config).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  put_bytes(out, cfg.data(), cfg.size());
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto data = t.data();
    put_bytes(out, data.data(), data.size() * sizeof(double));
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

std::vector<unsigned char> serialize_checkpoint(const Model& model) {
  return serialize_checkpoint(model.config(), model.parameters());
}

Model deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12) throw CorruptionError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptionError("bad checkpoint magic");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc_of(bytes.data(), body)) throw CorruptionError("checkpoint CRC mismatch");

  Reader r(bytes.data() + 4, body - 4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  const std::string cfg_text = r.str(r.u32());
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint config rejected: ") + e.what());
  }

  Model model(config, 0);
  std::unordered_map<std::string, Tensor> expected;
  for (const auto& p : model.parameters()) expected.emplace(p.name, p.tensor);
  const std::uint32_t count = r.u32();
  std::unordered_map<std::string, bool> loaded;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str(r.u32());
    const std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (auto& d : shape) d = r.u32();
    auto it = expected.find(name);
    if (it == expected.end())
      throw ShapeError("parameter '" + name + "' is not part of the embedded model config");
    if (loaded[name]) throw ShapeError("parameter '" + name + "' appears twice");
    loaded[name] = true;
    Tensor t = it->second;
    if (shape != t.shape())
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(shape) +
                       ", config expects " + shape_string(t.shape()));
    r.doubles(t.mutable_data());
  }
  for (const auto& p : model.parameters())
    if (!loaded[p.name]) throw ShapeError("parameter '" + p.name + "' missing from checkpoint");
  if (!r.done()) throw CorruptionError("trailing bytes after the last tensor record");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace semtok
