#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "stylenorm/imaging.hpp"

namespace stylenorm {

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point of the `stylenorm` command; returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Image files (.png, .dcm, .dicom) in a directory, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// "CC" or "MLO" when the file stem carries it as an '_' or '-' separated token.
std::optional<View> view_from_filename(const std::filesystem::path& path);

}  // namespace stylenorm
