#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semtok/tensor.hpp"

namespace semtok {

// Images are stored contiguously as [N x C x H x W] with values in [0,1].
struct Dataset {
  std::size_t channels = 1;
  std::size_t image_size = 0;  // square images
  std::size_t num_classes = 0;
  std::string split;
  std::vector<double> pixels;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * image_size * image_size; }
  // [C x H x W] copy of image i.
  Tensor image(std::size_t i) const;
  // Throws ConsistencyError when labels or pixels are out of range.
  void validate() const;
  Dataset subset(std::size_t begin, std::size_t end) const;
};

enum class Glyph { circle = 0, square = 1, triangle = 2, cross = 3 };

struct ShapesOptions {
  std::size_t count = 2000;
  std::size_t image_size = 32;
  std::size_t num_classes = 4;  // at most 4
  std::size_t clutter_level = 3;  // distractor strokes per image
  double pixel_noise = 0.05;      // stddev of additive Gaussian pixel noise
  std::uint64_t seed = 7;
  std::string split = "train";
};

// Grayscale images with one filled glyph each (label = glyph class,
// assigned round-robin) plus thin, dim distractor strokes and pixel noise.
// Pixels are quantised to multiples of 1/255 so the IDX round trip is exact.
Dataset gen_shapes(const ShapesOptions& options);

// FNV-1a over labels and pixel bytes.
std::uint64_t dataset_hash(const Dataset& data);

// IDX: big-endian magic 0x00000803 (u8 images, N x H x W) and 0x00000801
// (u8 labels). Bytes are rescaled to [0,1]. Throws FormatError on a bad
// magic or truncated file, ConsistencyError when counts disagree.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 0);

// Writes the pair; pixel values are rounded to the nearest 1/255.
void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels);

}  // namespace semtok
