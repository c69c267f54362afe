#include "stylenorm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "stylenorm/config.hpp"
#include "stylenorm/digest.hpp"
#include "stylenorm/engine.hpp"
#include "stylenorm/metrics.hpp"
#include "stylenorm/refbank.hpp"
#include "stylenorm/refiner.hpp"

namespace stylenorm {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (ext == ".png" || ext == ".dcm" || ext == ".dicom") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<View> view_from_filename(const fs::path& path) {
  std::string stem = path.stem().string();
  std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char c) { return char(std::toupper(c)); });
  std::optional<View> found;
  std::size_t start = 0;
  while (start <= stem.size()) {
    const std::size_t end = std::min(stem.find_first_of("_-", start), stem.size());
    const std::string token = stem.substr(start, end - start);
    if (token == "CC" || token == "MLO") {
      const View v = parse_view(token);
      if (found && *found != v) return std::nullopt;
      found = v;
    }
    start = end + 1;
  }
  return found;
}

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      const auto found = list_images(p);
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw Error("no such file or directory: " + in);
    }
  }
  if (files.empty()) throw Error("no images found in the given inputs");
  return files;
}

std::optional<View> optional_view(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_view(s);
}

json trace_json(const std::vector<LossRecord>& trace) {
  json rows = json::array();
  for (const auto& r : trace) rows.push_back({r.step, r.content, r.style, r.total});
  return rows;
}

json scale_json(const ScaleResult& r) {
  json tiles = json::array();
  for (std::size_t k = 0; k < r.tiles.size(); ++k) {
    const auto& t = r.tiles[k];
    tiles.push_back({{"index", k},
                     {"row", r.grid.positions[k].row},
                     {"col", r.grid.positions[k].col},
                     {"initial_loss", t.initial_loss},
                     {"final_loss", t.final_loss},
                     {"best_step", t.best_step},
                     {"trace", trace_json(t.trace)}});
  }
  return {{"scale", std::string(to_string(r.scale))},
          {"tile_size", {r.grid.tile_height, r.grid.tile_width}},
          {"tiles_planned", r.grid.tile_count()},
          {"seconds", r.seconds},
          {"tiles", std::move(tiles)}};
}

// ---------------------------------------------------------------- bank

int cmd_bank_build(const std::vector<std::string>& inputs, const std::string& vendor, const std::string& view,
                   const std::string& out_path, std::ostream& out) {
  const auto files = expand_inputs(inputs);
  const auto hint = optional_view(view);
  std::vector<BankInput> bank_inputs;
  for (const auto& f : files) bank_inputs.push_back({f, hint ? hint : view_from_filename(f)});
  const ReferenceBank bank = build_bank(bank_inputs, vendor);
  write_bank_manifest(bank, out_path);
  out << "wrote " << bank.entries.size() << " entries to " << out_path << "\n";
  return 0;
}

int cmd_bank_list(const std::string& manifest, std::ostream& out) {
  read_bank_manifest(manifest);  // validates
  std::ifstream in(manifest, std::ios::binary);
  out << in.rdbuf();
  return 0;
}

// ---------------------------------------------------------------- transfer

struct TransferArgs {
  std::string source, bank, config, out_dir, view, vendor = "unknown";
  bool serial = false;
  int threads = -1;
};

int cmd_transfer(const TransferArgs& a, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  // Fail fast on configuration and bank before any compute.
  const ConfigFile cfg = read_config(a.config, kTransferKeys);
  TransferSettings settings = transfer_settings(cfg);
  if (!fs::is_regular_file(a.bank)) throw Error("bank manifest not found: " + a.bank);
  const ReferenceBank bank = read_bank_manifest(a.bank);
  if (a.serial) {
    settings.transfer.threads = 1;
  } else if (a.threads >= 0) {
    settings.transfer.threads = a.threads;
  }
  std::optional<RefinerModel> refiner;
  std::string refiner_digest = "identity";
  if (settings.refiner_checkpoint) {
    refiner = load_refiner(*settings.refiner_checkpoint);
    refiner_digest = refiner->digest();
  }
  auto hint_view = optional_view(a.view);
  if (!hint_view) hint_view = view_from_filename(a.source);
  const Mammogram source = load_image(a.source, {hint_view, a.vendor});

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";

  json manifest;
  manifest["command"] = "transfer";
  manifest["tool_version"] = kToolVersion;
  manifest["status"] = "running";
  manifest["seed"] = settings.transfer.seed;
  manifest["config_digest"] = cfg.digest();
  manifest["config"] = cfg.values;
  manifest["threads"] = settings.transfer.threads;
  manifest["inputs"] = {{"source", {{"path", a.source}, {"digest", sha256_file(a.source)}}},
                        {"bank", {{"path", a.bank}, {"digest", sha256_file(a.bank)}}},
                        {"refiner", refiner_digest}};
  manifest["source"] = {{"view", std::string(to_string(source.view))},
                        {"vendor", source.vendor},
                        {"height", source.height()},
                        {"width", source.width()}};
  manifest["scales"] = json::array();
  manifest["outputs"] = json::object();
  write_json(manifest_path, manifest);

  try {
    const StyleTransfer engine(settings.transfer);
    manifest["extractor"] = {{"backbone", std::string(to_string(engine.extractor().spec().backbone))},
                             {"style_layers", engine.extractor().spec().style_layers},
                             {"content_layer", engine.extractor().spec().content_layer},
                             {"layer_weights", engine.layer_weights()}};
    const auto chosen = rank_refs(source, bank, std::size_t(settings.transfer.n_refs));
    json refs = json::array();
    for (std::size_t i : chosen) refs.push_back(bank.entries[i].id());
    manifest["reference_ids"] = refs;
    write_json(manifest_path, manifest);

    auto on_scale = [&](const ScaleResult& r) {
      manifest["scales"].push_back(scale_json(r));
      if (settings.export_scales) {
        const std::string name = "S" + std::to_string(int(r.scale)) + ".png";
        save_png(r.image, dir / name, 16);
        manifest["outputs"][name] = sha256_file(dir / name);
      }
      write_json(manifest_path, manifest);
    };
    const PipelineResult result = engine.run_pipeline(source, bank, refiner ? &*refiner : nullptr, on_scale);
    save_png(result.final_image, dir / "final.png", 16);
    manifest["outputs"]["final.png"] = sha256_file(dir / "final.png");
    manifest["fusion_weights"] = result.fusion_weights;
    manifest["timings"] = {{"pipeline_seconds", result.seconds},
                           {"total_seconds",
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    manifest["status"] = "complete";
    write_json(manifest_path, manifest);
    out << "wrote " << (dir / "final.png").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_json(manifest_path, manifest);
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------- train-refiner

std::vector<ScaleTriple> load_triples(const fs::path& dir) {
  std::map<std::string, std::array<fs::path, 3>> groups;
  for (const auto& f : list_images(dir)) {
    const std::string stem = f.stem().string();
    if (stem.size() < 4 || stem[stem.size() - 3] != '_' || stem[stem.size() - 2] != 's') continue;
    const char digit = stem.back();
    if (digit < '0' || digit > '2') continue;
    groups[stem.substr(0, stem.size() - 3)][std::size_t(digit - '0')] = f;
  }
  std::vector<ScaleTriple> triples;
  for (const auto& [id, paths] : groups) {
    for (const auto& p : paths) {
      if (p.empty()) throw Error("triple '" + id + "' needs _s0, _s1 and _s2 images");
    }
    const ImageHints hints{View::CC, std::string("unknown")};
    triples.push_back({load_image(paths[0], hints).pixels, load_image(paths[1], hints).pixels,
                       load_image(paths[2], hints).pixels});
  }
  if (triples.empty()) throw Error("no <id>_s0/_s1/_s2 image triples in " + dir.string());
  return triples;
}

struct TrainArgs {
  std::string targets, triples, config, out, resume;
  int max_steps = -1;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ConfigFile cfg = read_config(a.config, kTrainKeys);
  const TrainSettings settings = train_settings(cfg);
  std::vector<Image> targets;
  for (const auto& f : list_images(a.targets)) targets.push_back(load_image(f, {View::CC, "unknown"}).pixels);
  if (targets.empty()) throw Error("no target images in " + a.targets);
  const auto triples = load_triples(a.triples);

  const RefinerModel init = RefinerModel::identity(settings.gan.seed);
  RefinerTrainer trainer = a.resume.empty()
                               ? RefinerTrainer(init, Discriminator(settings.discriminator, settings.gan.seed), settings.gan)
                               : RefinerTrainer::load_checkpoint(a.resume, settings.gan);
  if (trainer.discriminator().kind() != settings.discriminator) {
    throw Error("checkpoint discriminator differs from the configured one");
  }
  trainer.train(targets, triples, a.max_steps);

  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  trainer.save_checkpoint(ckpt);
  write_curves_csv(trainer.curves(), ckpt.string() + ".curves.csv");
  json manifest = {{"command", "train-refiner"},
                   {"tool_version", kToolVersion},
                   {"seed", settings.gan.seed},
                   {"config_digest", cfg.digest()},
                   {"config", cfg.values},
                   {"discriminator", std::string(to_string(settings.discriminator))},
                   {"targets", targets.size()},
                   {"triples", triples.size()},
                   {"resumed_from", a.resume},
                   {"steps_completed", trainer.step()},
                   {"init_refiner_digest", init.digest()},
                   {"refiner_digest", trainer.model().digest()},
                   {"checkpoint_digest", sha256_file(ckpt)},
                   {"fusion_weights", trainer.model().fusion_weights}};
  write_json(ckpt.string() + ".manifest.json", manifest);
  out << "trained " << trainer.step() << " steps; refiner " << trainer.model().digest() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

std::string stem_of(const fs::path& p) { return p.stem().string(); }

Image load_pixels(const fs::path& p) { return load_image(p, {View::CC, "unknown"}).pixels; }

int cmd_eval_gram(const std::vector<std::string>& images, const std::vector<std::string>& against,
                  const std::string& config, const std::string& out_csv, std::ostream& out) {
  const ConfigFile cfg = read_config(config, kTransferKeys);
  const TransferSettings settings = transfer_settings(cfg);
  ExtractorSpec spec = settings.transfer.extractor;
  spec.input_size = settings.transfer.work_size;
  const Extractor extractor(spec);
  const auto a_files = expand_inputs(images);
  const auto b_files = expand_inputs(against);
  std::vector<Image> b_images;
  for (const auto& f : b_files) b_images.push_back(load_pixels(f));
  std::ostringstream csv;
  csv.precision(17);
  csv << "image,reference,gram_distance\n";
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : a_files) {
    const Image a = load_pixels(f);
    for (std::size_t k = 0; k < b_files.size(); ++k) {
      const double d = gram_distance(a, std::span(&b_images[k], 1), extractor);
      csv << stem_of(f) << ',' << stem_of(b_files[k]) << ',' << d << '\n';
      sum += d;
      ++n;
    }
  }
  write_atomic(out_csv, csv.str());
  out << "mean gram distance " << sum / double(n) << " over " << n << " pairs\n";
  return 0;
}

int cmd_eval_quality(const std::vector<std::string>& images, const std::string& scorer_path, int timeout_ms,
                     const std::string& out_csv, std::ostream& out) {
  const QualityScorer scorer(scorer_path, std::chrono::milliseconds(timeout_ms));
  const auto files = expand_inputs(images);
  std::ostringstream csv;
  csv.precision(17);
  csv << "image,score\n";
  double sum = 0.0;
  for (const auto& f : files) {
    const double s = score_quality(f, scorer);
    csv << stem_of(f) << ',' << s << '\n';
    sum += s;
  }
  write_atomic(out_csv, csv.str());
  const double mean = sum / double(files.size());
  write_json(out_csv + ".manifest.json", {{"command", "eval quality"},
                                          {"tool_version", kToolVersion},
                                          {"scorer", scorer_path},
                                          {"scorer_digest", scorer.digest()},
                                          {"images", files.size()},
                                          {"mean_score", mean}});
  out << "mean score " << mean << " over " << files.size() << " images\n";
  return 0;
}

int cmd_eval_ehm(const std::vector<std::string>& sources, const std::string& reference, int bit_depth,
                 const std::string& out_dir, std::ostream& out) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("--bit-depth must be 8 or 16");
  const Image ref = load_pixels(reference);
  const auto files = expand_inputs(sources);
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "source,output,histogram_exact\n";
  for (const auto& f : files) {
    const Image src = load_pixels(f);
    const Image result = ehm(src, ref, bit_depth);
    const Image ref_sized = ref.same_shape(src) ? ref : resize_bilinear(ref, src.height(), src.width());
    if (level_histogram(result, bit_depth) != level_histogram(ref_sized, bit_depth)) {
      throw Error("exact histogram check failed for " + f.string());
    }
    const fs::path dst = fs::path(out_dir) / (stem_of(f) + "_ehm.png");
    save_png(result, dst, bit_depth);
    csv << stem_of(f) << ',' << dst.filename().string() << ",true\n";
  }
  write_atomic(fs::path(out_dir) / "ehm.csv", csv.str());
  out << "matched " << files.size() << " images\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-resolution, multi-reference style normalisation for mammograms", "stylenorm"};
  app.set_version_flag("--version", std::string("stylenorm ") + kToolVersion);
  app.require_subcommand(1);

  auto* bank = app.add_subcommand("bank", "Build or list a reference bank");
  bank->require_subcommand(1);
  auto* bank_build = bank->add_subcommand("build", "Build a bank manifest from images or directories");
  std::vector<std::string> bank_inputs;
  std::string bank_vendor, bank_view, bank_out;
  bank_build->add_option("inputs", bank_inputs, "Image files or directories")->required();
  bank_build->add_option("--vendor", bank_vendor, "Target vendor of every image")->required();
  bank_build->add_option("--view", bank_view, "View for images that carry none (CC or MLO)");
  bank_build->add_option("--out", bank_out, "Manifest path")->required();
  auto* bank_list = bank->add_subcommand("list", "Print a bank manifest");
  std::string list_path;
  bank_list->add_option("manifest", list_path, "Manifest path")->required();

  auto* transfer = app.add_subcommand("transfer", "Style-transfer one mammogram");
  TransferArgs targs;
  transfer->add_option("--source", targs.source, "Source mammogram")->required();
  transfer->add_option("--bank", targs.bank, "Reference bank manifest")->required();
  transfer->add_option("--config", targs.config, "Transfer config file")->required();
  transfer->add_option("--out", targs.out_dir, "Output directory")->required();
  transfer->add_option("--view", targs.view, "Source view when the file carries none");
  transfer->add_option("--vendor", targs.vendor, "Source vendor when the file carries none");
  transfer->add_flag("--serial", targs.serial, "Process tiles on one thread");
  transfer->add_option("--threads", targs.threads, "Tile workers (0 = all cores)");

  auto* train = app.add_subcommand("train-refiner", "Adversarially train the scale-fusion refiner");
  TrainArgs tr;
  train->add_option("targets", tr.targets, "Directory of target-domain images")->required();
  train->add_option("triples", tr.triples, "Directory of <id>_s0/_s1/_s2 images")->required();
  train->add_option("config", tr.config, "Training config file")->required();
  train->add_option("out", tr.out, "Checkpoint path")->required();
  train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  train->add_option("--max-steps", tr.max_steps, "Stop after this many steps in this invocation");

  auto* eval = app.add_subcommand("eval", "Evaluation utilities");
  eval->require_subcommand(1);
  auto* eval_gram = eval->add_subcommand("gram-distance", "Gram distance of images to a reference set");
  std::vector<std::string> g_images, g_against;
  std::string g_config, g_out;
  eval_gram->add_option("--images", g_images, "Images or directories to score")->required();
  eval_gram->add_option("--against", g_against, "Reference images or directories")->required();
  eval_gram->add_option("--config", g_config, "Transfer config selecting the extractor")->required();
  eval_gram->add_option("--out", g_out, "CSV path")->required();
  auto* eval_quality = eval->add_subcommand("quality", "Score images with an external quality scorer");
  std::vector<std::string> q_images;
  std::string q_scorer, q_out;
  int q_timeout = 60000;
  eval_quality->add_option("images", q_images, "Images or directories")->required();
  eval_quality->add_option("--scorer", q_scorer, "Scorer executable")->required();
  eval_quality->add_option("--timeout-ms", q_timeout, "Per-image timeout");
  eval_quality->add_option("--out", q_out, "CSV path")->required();
  auto* eval_ehm = eval->add_subcommand("ehm", "Exact histogram matching to a reference");
  std::vector<std::string> e_sources;
  std::string e_ref, e_out;
  int e_bits = 16;
  eval_ehm->add_option("sources", e_sources, "Images or directories")->required();
  eval_ehm->add_option("--reference", e_ref, "Reference image")->required();
  eval_ehm->add_option("--bit-depth", e_bits, "Quantisation depth (8 or 16)");
  eval_ehm->add_option("--out", e_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*bank_build) return cmd_bank_build(bank_inputs, bank_vendor, bank_view, bank_out, out);
    if (*bank_list) return cmd_bank_list(list_path, out);
    if (*transfer) return cmd_transfer(targs, out, err);
    if (*train) return cmd_train(tr, out);
    if (*eval_gram) return cmd_eval_gram(g_images, g_against, g_config, g_out, out);
    if (*eval_quality) return cmd_eval_quality(q_images, q_scorer, q_timeout, q_out, out);
    if (*eval_ehm) return cmd_eval_ehm(e_sources, e_ref, e_bits, e_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace stylenorm
