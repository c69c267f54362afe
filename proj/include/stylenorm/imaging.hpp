#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "stylenorm/image.hpp"

namespace stylenorm {

enum class View { CC, MLO };

std::string_view to_string(View v);
/// Accepts "CC"/"MLO" in any case; throws on anything else.
View parse_view(std::string_view s);

/// Background threshold on the normalised range used for breast masking.
inline constexpr double kBreastThreshold = 0.05;

struct Mammogram {
  Image pixels;  // [0,1]
  Mask breast_mask;
  View view = View::CC;
  std::string vendor;
  int source_bit_depth = 16;
  std::string id;  // file stem for loaded images

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
};

/// Throws unless pixels are finite and inside [0,1] and the mask matches.
void validate(const Mammogram& m);

/// Largest 4-connected component of pixels above kBreastThreshold with
/// interior holes filled. All-zero when nothing exceeds the threshold.
Mask compute_breast_mask(const Image& pixels);

/// Builds a Mammogram from already-normalised pixels (mask computed here).
Mammogram make_mammogram(Image pixels, View view, std::string vendor, int bit_depth = 16,
                         std::string id = {});

/// View/vendor read from DICOM tags take precedence over the supplied hints;
/// for PNG the hints are required.
struct ImageHints {
  std::optional<View> view;
  std::optional<std::string> vendor;
};

/// Loads a grayscale PNG (8/16-bit) or single-frame uncompressed DICOM and
/// normalises by the full range of the source bit depth.
Mammogram load_image(const std::filesystem::path& path, const ImageHints& hints);

/// Writes a grayscale PNG with bit_depth 8 or 16.
void save_image(const Mammogram& m, const std::filesystem::path& path, int bit_depth = 16);
void save_png(const Image& pixels, const std::filesystem::path& path, int bit_depth = 16);

}  // namespace stylenorm
