#include "semtok/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "semtok/error.hpp"
#include "semtok/rng.hpp"

namespace semtok {

Tensor Dataset::image(std::size_t i) const {
  if (i >= size()) throw ContractError("image index " + std::to_string(i) + " out of range");
  const std::size_t k = image_numel();
  return Tensor::from_data({channels, image_size, image_size},
                           std::vector<double>(pixels.begin() + i * k, pixels.begin() + (i + 1) * k));
}

void Dataset::validate() const {
  if (pixels.size() != size() * image_numel())
    throw ConsistencyError("dataset holds " + std::to_string(pixels.size()) + " pixels for " +
                           std::to_string(size()) + " images");
  for (std::size_t y : labels)
    if (y >= num_classes)
      throw ConsistencyError("label " + std::to_string(y) + " outside [0," +
                             std::to_string(num_classes) + ")");
  for (double v : pixels)
    if (!(v >= 0.0 && v <= 1.0)) throw ConsistencyError("pixel value outside [0,1]");
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  Dataset out = *this;
  const std::size_t k = image_numel();
  out.pixels.assign(pixels.begin() + begin * k, pixels.begin() + end * k);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

// --- synthetic shapes ----------------------------------------------------------

namespace {

bool inside_glyph(Glyph g, double dx, double dy, double s) {
  switch (g) {
    case Glyph::circle:
      return dx * dx + dy * dy <= s * s;
    case Glyph::square:
      return std::abs(dx) <= 0.85 * s && std::abs(dy) <= 0.85 * s;
    case Glyph::triangle:
      return dy >= -s && dy <= s && std::abs(dx) <= 0.5 * (dy + s);
    case Glyph::cross: {
      const double w = std::max(1.5, 0.3 * s);
      return (std::abs(dx) <= s && std::abs(dy) <= w) || (std::abs(dy) <= s && std::abs(dx) <= w);
    }
  }
  return false;
}

}  // namespace

Dataset gen_shapes(const ShapesOptions& o) {
  if (o.image_size < 16) throw ContractError("gen_shapes: image_size must be >= 16");
  if (o.num_classes < 2 || o.num_classes > 4) throw ContractError("gen_shapes: num_classes must be in [2,4]");
  Dataset data;
  data.channels = 1;
  data.image_size = o.image_size;
  data.num_classes = o.num_classes;
  data.split = o.split;
  const std::size_t S = o.image_size;
  const double size = static_cast<double>(S);
  data.pixels.assign(o.count * S * S, 0.0);
  data.labels.resize(o.count);
  const Rng root(o.seed);

  for (std::size_t i = 0; i < o.count; ++i) {
    Rng rng = root.split(i);
    const std::size_t label = i % o.num_classes;
    data.labels[i] = label;
    double* img = data.pixels.data() + i * S * S;

    const double s = rng.uniform(0.16, 0.28) * size;
    const double cx = rng.uniform(s + 1.0, size - s - 1.0);
    const double cy = rng.uniform(s + 1.0, size - s - 1.0);
    const double intensity = rng.uniform(0.7, 1.0);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        if (inside_glyph(static_cast<Glyph>(label), x + 0.5 - cx, y + 0.5 - cy, s))
          img[y * S + x] = intensity;

    for (std::size_t c = 0; c < o.clutter_level; ++c) {
      const double len = rng.uniform(3.0, 6.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double x0 = rng.uniform(0.0, size), y0 = rng.uniform(0.0, size);
      const double level = rng.uniform(0.25, 0.5);
      const int steps = static_cast<int>(std::ceil(len * 2.0));
      for (int t = 0; t <= steps; ++t) {
        const double u = len * t / steps;
        const long px = std::lround(std::floor(x0 + u * std::cos(angle)));
        const long py = std::lround(std::floor(y0 + u * std::sin(angle)));
        if (px < 0 || py < 0 || px >= static_cast<long>(S) || py >= static_cast<long>(S)) continue;
        double& v = img[py * S + px];
        v = std::max(v, level);
      }
    }

    for (std::size_t k = 0; k < S * S; ++k) {
      double v = img[k];
      if (o.pixel_noise > 0.0) v += rng.normal() * o.pixel_noise;
      v = std::clamp(v, 0.0, 1.0);
      img[k] = std::round(v * 255.0) / 255.0;
    }
  }
  return data;
}

std::uint64_t dataset_hash(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t y : data.labels) {
    const std::uint64_t v = y;
    mix(&v, sizeof v);
  }
  for (double px : data.pixels) mix(&px, sizeof px);
  return h;
}

// --- IDX -------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (ib.size() < 16) throw FormatError(images.string() + ": truncated IDX header");
  if (read_be32(ib, 0) != kImageMagic)
    throw FormatError(images.string() + ": bad magic, expected 0x00000803");
  if (lb.size() < 8) throw FormatError(labels.string() + ": truncated IDX header");
  if (read_be32(lb, 0) != kLabelMagic)
    throw FormatError(labels.string() + ": bad magic, expected 0x00000801");

  const std::size_t n = read_be32(ib, 4), h = read_be32(ib, 8), w = read_be32(ib, 12);
  const std::size_t nl = read_be32(lb, 4);
  if (ib.size() != 16 + n * h * w)
    throw FormatError(images.string() + ": payload length " + std::to_string(ib.size() - 16) +
                      " does not match " + std::to_string(n) + "x" + std::to_string(h) + "x" +
                      std::to_string(w));
  if (lb.size() != 8 + nl)
    throw FormatError(labels.string() + ": payload length does not match label count");
  if (n != nl)
    throw ConsistencyError(std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  if (h != w) throw FormatError(images.string() + ": only square images are supported");

  Dataset data;
  data.channels = 1;
  data.image_size = h;
  data.split = images.stem().string();
  data.pixels.resize(n * h * w);
  for (std::size_t i = 0; i < data.pixels.size(); ++i) data.pixels[i] = ib[16 + i] / 255.0;
  data.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = lb[8 + i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = num_classes ? num_classes : max_label + 1;
  data.validate();
  return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  if (data.channels != 1) throw FormatError("IDX export supports single-channel images only");
  data.validate();
  for (std::size_t y : data.labels)
    if (y > 255) throw FormatError("IDX labels must fit in one byte");
  {
    std::ofstream out(images, std::ios::binary);
    if (!out) throw IoError("cannot write " + images.string());
    write_be32(out, kImageMagic);
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    write_be32(out, static_cast<std::uint32_t>(data.image_size));
    write_be32(out, static_cast<std::uint32_t>(data.image_size));
    std::vector<char> bytes(data.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(data.pixels[i] * 255.0)));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + images.string());
  }
  std::ofstream out(labels, std::ios::binary);
  if (!out) throw IoError("cannot write " + labels.string());
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) out.put(static_cast<char>(y));
  if (!out) throw IoError("short write to " + labels.string());
}

}  // namespace semtok
