#include "stylenorm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stylenorm/digest.hpp"

namespace stylenorm {

const std::vector<std::string_view> kTransferKeys = {
    "seed",     "backbone",    "weights_path", "weights_digest", "style_layers", "content_layer", "layer_weights",
    "steps",    "learning_rate", "beta1",      "beta2",          "n_refs",       "overlap",       "scales",
    "work_size", "hist_bins",  "hist_mode",    "threads",        "export_scales", "refiner_checkpoint"};

const std::vector<std::string_view> kTrainKeys = {
    "seed",          "steps",    "batch_size", "crop_size",    "discriminator", "learning_rate_refiner",
    "learning_rate_discriminator", "beta1", "beta2", "warmup_steps", "log_every"};

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw Error("empty item in list '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw Error("config key '" + key + "' must be finite");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::filesystem::path resolve_path(const ConfigFile& cfg, const std::string& value) {
  std::filesystem::path p(value);
  if (p.is_relative() && !cfg.path.empty()) p = cfg.path.parent_path() / p;
  return p;
}

}  // namespace

const std::string& ConfigFile::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw Error("config key '" + key + "' is missing");
  return it->second;
}

std::string ConfigFile::digest() const {
  std::string canon;
  for (const auto& [k, v] : values) canon += k + "=" + v + "\n";
  return sha256_hex(std::string_view(canon));
}

ConfigFile parse_config(std::string_view text, std::span<const std::string_view> allowed) {
  ConfigFile cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!cfg.values.emplace(key, value).second) {
      throw Error("config line " + std::to_string(lineno) + ": key '" + key + "' given twice");
    }
  }
  if (!cfg.has("seed")) throw Error("config must set 'seed'");
  parse_number<std::uint64_t>("seed", cfg.get("seed"));
  return cfg;
}

ConfigFile read_config(const std::filesystem::path& path, std::span<const std::string_view> allowed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    ConfigFile cfg = parse_config(ss.str(), allowed);
    cfg.path = path;
    return cfg;
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

TransferSettings transfer_settings(const ConfigFile& cfg) {
  TransferSettings s;
  TransferConfig& t = s.transfer;
  const auto& v = cfg.values;
  auto num = [&](const char* key, auto& dst) {
    if (v.count(key)) dst = parse_number<std::decay_t<decltype(dst)>>(key, v.at(key));
  };
  num("seed", t.seed);
  t.extractor.toy_seed = t.seed;
  if (v.count("backbone")) t.extractor.backbone = parse_backbone(v.at("backbone"));
  if (v.count("weights_path")) t.extractor.weights_path = resolve_path(cfg, v.at("weights_path"));
  if (v.count("weights_digest")) t.extractor.weights_checksum = v.at("weights_digest");
  if (v.count("style_layers")) t.extractor.style_layers = split_list(v.at("style_layers"));
  if (v.count("content_layer")) t.extractor.content_layer = v.at("content_layer");
  if (v.count("layer_weights")) {
    t.layer_weights.clear();
    for (const auto& w : split_list(v.at("layer_weights"))) t.layer_weights.push_back(parse_number<double>("layer_weights", w));
  }
  num("steps", t.steps);
  num("learning_rate", t.optimizer.learning_rate);
  num("beta1", t.optimizer.beta1);
  num("beta2", t.optimizer.beta2);
  num("n_refs", t.n_refs);
  num("overlap", t.overlap);
  if (v.count("scales")) {
    t.scales.clear();
    for (const auto& name : split_list(v.at("scales"))) t.scales.push_back(parse_scale(name));
  }
  num("work_size", t.work_size);
  num("hist_bins", t.hist_bins);
  if (v.count("hist_mode")) t.hist_mode = parse_histogram_mode(v.at("hist_mode"));
  num("threads", t.threads);
  if (v.count("export_scales")) s.export_scales = parse_bool("export_scales", v.at("export_scales"));
  if (v.count("refiner_checkpoint") && !v.at("refiner_checkpoint").empty()) {
    s.refiner_checkpoint = resolve_path(cfg, v.at("refiner_checkpoint"));
  }
  t.validate();
  return s;
}

TrainSettings train_settings(const ConfigFile& cfg) {
  TrainSettings s;
  GanConfig& g = s.gan;
  const auto& v = cfg.values;
  auto num = [&](const char* key, auto& dst) {
    if (v.count(key)) dst = parse_number<std::decay_t<decltype(dst)>>(key, v.at(key));
  };
  num("seed", g.seed);
  num("steps", g.steps);
  num("batch_size", g.batch_size);
  num("crop_size", g.crop_size);
  num("learning_rate_refiner", g.learning_rate_refiner);
  num("learning_rate_discriminator", g.learning_rate_discriminator);
  num("beta1", g.beta1);
  num("beta2", g.beta2);
  num("warmup_steps", g.warmup_steps);
  num("log_every", g.log_every);
  if (v.count("discriminator")) s.discriminator = parse_discriminator(v.at("discriminator"));
  if (g.steps < 0 || g.batch_size < 1 || g.crop_size < 8 || g.log_every < 1 || g.warmup_steps < 0 ||
      !(g.learning_rate_refiner > 0.0) || !(g.learning_rate_discriminator > 0.0)) {
    throw Error("invalid refiner training configuration");
  }
  return s;
}

}  // namespace stylenorm
