#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stylenorm/imaging.hpp"

namespace stylenorm {

struct BankEntry {
  std::filesystem::path path;  // empty for in-memory entries
  View view = View::CC;
  std::string vendor;
  std::int64_t breast_area = 0;  // pixels in the breast mask
  std::string digest;            // sha256 of the image file (empty in memory)
  std::shared_ptr<const Mammogram> image;  // loaded lazily from path when null

  std::string id() const;
};

/// Loads (or returns the cached) image of an entry, verifying its digest.
Mammogram load_entry(const BankEntry& entry);

struct ReferenceBank {
  std::string target_vendor;
  std::vector<BankEntry> entries;
};

struct BankInput {
  std::filesystem::path path;
  std::optional<View> view;  // required unless the file carries it
};

/// Loads every image, computes breast areas and checks vendor consistency.
/// Images are not kept in memory; they are reloaded on selection.
ReferenceBank build_bank(std::span<const BankInput> inputs, const std::string& vendor);

/// Bank over already-loaded images (no files involved).
ReferenceBank bank_from_images(std::vector<Mammogram> images, const std::string& vendor);

/// Tab-separated manifest: header "path view vendor area digest" then one row per entry.
std::string bank_manifest_text(const ReferenceBank& bank);
void write_bank_manifest(const ReferenceBank& bank, const std::filesystem::path& path);
/// Relative paths in the manifest resolve against the manifest's directory.
ReferenceBank read_bank_manifest(const std::filesystem::path& path);

/// Indices of the n same-view entries with the smallest |area - source area|,
/// ties broken by bank order.
std::vector<std::size_t> rank_refs(const Mammogram& source, const ReferenceBank& bank, std::size_t n);

std::vector<Mammogram> select_refs(const Mammogram& source, const ReferenceBank& bank, std::size_t n);

}  // namespace stylenorm
