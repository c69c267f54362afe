#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stylenorm::dicom {

/// Raw single-frame grayscale pixel data plus the few tags we care about.
struct Frame {
  int rows = 0;
  int columns = 0;
  int bits_stored = 0;
  bool monochrome1 = false;
  std::vector<std::uint16_t> samples;  // row-major, already masked to bits_stored
  std::optional<std::string> view_position;
  std::optional<std::string> manufacturer;
};

/// True when the file carries the "DICM" marker after the 128-byte preamble.
bool is_dicom(const std::filesystem::path& path);

/// Reads explicit- or implicit-VR little-endian files. Compressed transfer
/// syntaxes, multi-frame, colour and signed data are rejected.
Frame read(const std::filesystem::path& path);

/// Writes an explicit-VR little-endian file (16 bits allocated).
void write(const std::filesystem::path& path, const Frame& frame);

}  // namespace stylenorm::dicom
