#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stylenorm/features.hpp"
#include "stylenorm/image.hpp"

namespace stylenorm {

/// Exact histogram matching on the integer domain [0, 2^bit_depth - 1].
/// Source pixels are ranked strictly by (value, 3x3 mean, 5x5 mean, index)
/// and receive the reference's sorted values in that order. The reference is
/// resized to the source shape first when they differ.
Image ehm(const Image& source, const Image& reference, int bit_depth = 16);

/// Integer-domain form of ehm() on row-major images of equal pixel count.
std::vector<std::uint32_t> ehm_levels(const std::vector<std::uint32_t>& source, int height, int width,
                                      const std::vector<std::uint32_t>& reference);

/// round(v * (2^bit_depth - 1)) after clamping to [0,1].
std::vector<std::uint32_t> quantize(const Image& img, int bit_depth);
Image dequantize(const std::vector<std::uint32_t>& levels, int height, int width, int bit_depth);

/// Per-level pixel counts (size 2^bit_depth).
std::vector<std::uint64_t> level_histogram(const Image& img, int bit_depth);

/// Mean over b of sum_l ||G_l(a) - G_l(b)||^2 / (4 N_l^2) on the extractor's
/// style layers. Images are resized to the extractor input first.
double gram_distance(const Image& a, std::span<const Image> b_set, const Extractor& extractor);

/// External image-quality instrument: `executable <image>` must print one
/// decimal number and exit 0.
class QualityScorer {
 public:
  /// Throws when the executable is missing or not executable.
  explicit QualityScorer(std::filesystem::path executable,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

  const std::filesystem::path& executable() const { return exe_; }
  /// sha256 of the executable file.
  const std::string& digest() const { return digest_; }
  std::chrono::milliseconds timeout() const { return timeout_; }

  double score(const std::filesystem::path& image) const;

 private:
  std::filesystem::path exe_;
  std::chrono::milliseconds timeout_;
  std::string digest_;
};

double score_quality(const std::filesystem::path& image, const QualityScorer& scorer);

}  // namespace stylenorm
