#include "stylenorm/refbank.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stylenorm/digest.hpp"

namespace stylenorm {

std::string BankEntry::id() const {
  if (!path.empty()) return path.filename().string();
  return image ? image->id : std::string{};
}

Mammogram load_entry(const BankEntry& entry) {
  if (entry.image) return *entry.image;
  if (!entry.digest.empty()) {
    const std::string actual = sha256_file(entry.path);
    if (actual != entry.digest) throw Error(entry.path.string() + ": content digest differs from the bank manifest");
  }
  return load_image(entry.path, {entry.view, entry.vendor});
}

ReferenceBank build_bank(std::span<const BankInput> inputs, const std::string& vendor) {
  if (inputs.empty()) throw Error("cannot build a reference bank from no images");
  if (vendor.empty()) throw Error("reference bank needs a target vendor");
  ReferenceBank bank;
  bank.target_vendor = vendor;
  for (const auto& in : inputs) {
    Mammogram m = load_image(in.path, {in.view, vendor});
    if (m.vendor != vendor) {
      throw Error(in.path.string() + ": vendor '" + m.vendor + "' differs from bank vendor '" + vendor + "'");
    }
    const std::int64_t area = m.breast_mask.area();
    if (area == 0) throw Error(in.path.string() + ": no breast found");
    BankEntry e;
    e.path = std::filesystem::absolute(in.path).lexically_normal();
    e.view = m.view;
    e.vendor = m.vendor;
    e.breast_area = area;
    e.digest = sha256_file(in.path);
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

ReferenceBank bank_from_images(std::vector<Mammogram> images, const std::string& vendor) {
  if (images.empty()) throw Error("cannot build a reference bank from no images");
  ReferenceBank bank;
  bank.target_vendor = vendor;
  for (auto& m : images) {
    if (m.vendor != vendor) throw Error("image '" + m.id + "' has vendor '" + m.vendor + "', bank is '" + vendor + "'");
    const std::int64_t area = m.breast_mask.area();
    if (area == 0) throw Error("image '" + m.id + "': no breast found");
    BankEntry e;
    e.view = m.view;
    e.vendor = m.vendor;
    e.breast_area = area;
    e.image = std::make_shared<const Mammogram>(std::move(m));
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

std::string bank_manifest_text(const ReferenceBank& bank) {
  std::ostringstream out;
  out << "path\tview\tvendor\tarea\tdigest\n";
  for (const auto& e : bank.entries) {
    if (e.path.empty()) throw Error("in-memory bank entries cannot be written to a manifest");
    out << e.path.string() << '\t' << to_string(e.view) << '\t' << e.vendor << '\t' << e.breast_area << '\t'
        << e.digest << '\n';
  }
  return out.str();
}

void write_bank_manifest(const ReferenceBank& bank, const std::filesystem::path& path) {
  const std::string text = bank_manifest_text(bank);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ReferenceBank read_bank_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open bank manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path\tview\tvendor\tarea\tdigest") {
    throw Error(path.string() + ": not a bank manifest (bad header)");
  }
  ReferenceBank bank;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 5) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    BankEntry e;
    e.path = cols[0];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    e.view = parse_view(cols[1]);
    e.vendor = cols[2];
    e.breast_area = std::stoll(cols[3]);
    e.digest = cols[4];
    if (bank.target_vendor.empty()) bank.target_vendor = e.vendor;
    if (e.vendor != bank.target_vendor) throw Error(path.string() + ": mixed vendors in bank manifest");
    bank.entries.push_back(std::move(e));
  }
  if (bank.entries.empty()) throw Error(path.string() + ": bank manifest has no entries");
  return bank;
}

std::vector<std::size_t> rank_refs(const Mammogram& source, const ReferenceBank& bank, std::size_t n) {
  if (n == 0) throw Error("must select at least one reference");
  const std::int64_t area = source.breast_mask.area();
  std::vector<std::size_t> same_view;
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    if (bank.entries[i].view == source.view) same_view.push_back(i);
  }
  if (same_view.size() < n) {
    throw Error("reference bank has " + std::to_string(same_view.size()) + " " + std::string(to_string(source.view)) +
                " entries, " + std::to_string(n) + " requested");
  }
  auto distance = [&](std::size_t i) {
    const std::int64_t d = bank.entries[i].breast_area - area;
    return d < 0 ? -d : d;
  };
  std::stable_sort(same_view.begin(), same_view.end(),
                   [&](std::size_t a, std::size_t b) { return distance(a) < distance(b); });
  same_view.resize(n);
  return same_view;
}

std::vector<Mammogram> select_refs(const Mammogram& source, const ReferenceBank& bank, std::size_t n) {
  std::vector<Mammogram> out;
  for (std::size_t i : rank_refs(source, bank, n)) out.push_back(load_entry(bank.entries[i]));
  return out;
}

}  // namespace stylenorm
