#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "stylenorm/discriminator.hpp"
#include "stylenorm/engine.hpp"
#include "stylenorm/refiner.hpp"

namespace stylenorm {

/// Flat `key = value` file. '#' starts a comment; blank lines are ignored.
/// Keys outside `allowed` and repeated keys are errors; `seed` is mandatory.
struct ConfigFile {
  std::filesystem::path path;  // empty when parsed from text
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  const std::string& get(const std::string& key) const;

  /// sha256 over the sorted "key=value\n" lines.
  std::string digest() const;
};

ConfigFile parse_config(std::string_view text, std::span<const std::string_view> allowed);
ConfigFile read_config(const std::filesystem::path& path, std::span<const std::string_view> allowed);

extern const std::vector<std::string_view> kTransferKeys;
extern const std::vector<std::string_view> kTrainKeys;

struct TransferSettings {
  TransferConfig transfer;
  bool export_scales = true;
  std::optional<std::filesystem::path> refiner_checkpoint;
};

struct TrainSettings {
  GanConfig gan;
  DiscriminatorKind discriminator = DiscriminatorKind::tiny;
};

/// Paths in the file resolve against the file's directory.
TransferSettings transfer_settings(const ConfigFile& cfg);
TrainSettings train_settings(const ConfigFile& cfg);

}  // namespace stylenorm
