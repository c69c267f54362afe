#include "stylenorm/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace stylenorm {

std::string_view to_string(HistogramMode m) { return m == HistogramMode::per_layer ? "per_layer" : "global"; }

HistogramMode parse_histogram_mode(std::string_view s) {
  if (s == "per_layer") return HistogramMode::per_layer;
  if (s == "global") return HistogramMode::global;
  throw Error("unknown histogram mode '" + std::string(s) + "' (expected per_layer or global)");
}

void TransferConfig::validate() const {
  if (steps < 0) throw Error("steps must be >= 0");
  if (n_refs < 1) throw Error("n_refs must be >= 1");
  if (scales.empty()) throw Error("at least one scale must be enabled");
  if (overlap < 0) throw Error("overlap must be >= 0");
  if (hist_bins < 2) throw Error("hist_bins must be >= 2");
  if (work_size < 8) throw Error("work_size must be >= 8");
  if (threads < 0) throw Error("threads must be >= 0");
  if (!(optimizer.learning_rate > 0.0) || optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 ||
      optimizer.beta2 >= 1.0 || !(optimizer.eps > 0.0)) {
    throw Error("invalid optimizer settings");
  }
  for (double w : layer_weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error("layer weights must be finite and non-negative");
  }
  for (std::size_t i = 0; i < scales.size(); ++i) {
    for (std::size_t j = i + 1; j < scales.size(); ++j) {
      if (scales[i] == scales[j]) throw Error("scale listed twice");
    }
  }
}

bool TransferConfig::has_scale(Scale s) const { return std::find(scales.begin(), scales.end(), s) != scales.end(); }

const ScaleResult* PipelineResult::scale(Scale s) const {
  const auto& r = scales[std::size_t(s)];
  return r ? &*r : nullptr;
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : std::size_t(threads);
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

ExtractorSpec extractor_for(const TransferConfig& config) {
  config.validate();
  ExtractorSpec spec = config.extractor;
  spec.input_size = config.work_size;
  return resolve(spec);
}

std::size_t layer_index(const std::vector<std::string>& layers, const std::string& name) {
  const auto it = std::find(layers.begin(), layers.end(), name);
  if (it == layers.end()) throw Error("layer '" + name + "' is not produced by the extractor");
  return std::size_t(it - layers.begin());
}

GramSet average_grams(const std::vector<GramSet>& sets) {
  GramSet avg = sets.front();
  for (std::size_t s = 1; s < sets.size(); ++s) {
    for (std::size_t l = 0; l < avg.grams.size(); ++l) {
      auto& dst = avg.grams[l].v;
      const auto& src = sets[s].grams[l].v;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / double(sets.size());
  for (auto& g : avg.grams) {
    for (double& v : g.v) v *= inv;
  }
  return avg;
}

std::string trace_text(const std::vector<LossRecord>& trace) {
  std::ostringstream out;
  out.precision(10);
  for (const auto& r : trace) out << "\n  step " << r.step << ": content " << r.content << ", style " << r.style;
  return out.str();
}

}  // namespace

StyleTransfer::StyleTransfer(TransferConfig config)
    : config_(std::move(config)), extractor_(extractor_for(config_)) {
  config_.extractor = extractor_.spec();
  const auto& style = extractor_.spec().style_layers;
  weights_ = config_.layer_weights.empty() ? uniform_weights(style.size()) : config_.layer_weights;
  if (weights_.size() != style.size()) {
    throw Error("layer_weights has " + std::to_string(weights_.size()) + " entries for " +
                std::to_string(style.size()) + " style layers");
  }
  content_index_ = layer_index(extractor_.layers(), extractor_.spec().content_layer);
  for (const auto& l : style) style_index_.push_back(layer_index(extractor_.layers(), l));
}

StyleTarget StyleTransfer::build_target_grams(std::span<const Image> references, Scale scale) const {
  if (references.empty()) throw Error("style target needs at least one reference");
  const auto& layers = extractor_.spec().style_layers;
  StyleTarget target;
  for (const Image& ref : references) {
    const TileGrid grid = plan_grid(ref.height(), ref.width(), scale, config_.overlap, config_.work_size);
    std::vector<GramSet> tile_grams;
    for (const Image& tile : decompose(ref, grid)) tile_grams.push_back(gram_set(extractor_.extract(tile), layers));
    target.references.push_back(average_grams(tile_grams));
  }
  target.fused = fuse_grams(target.references);
  if (config_.hist_mode == HistogramMode::global) {
    target.histograms.push_back(reference_histogram_all_layers(target.references, config_.hist_bins));
  } else {
    for (const auto& l : layers) target.histograms.push_back(reference_histogram(target.references, l, config_.hist_bins));
  }
  target.specified = hist_specify(target.fused, target.histograms);
  return target;
}

LossRecord StyleTransfer::evaluate(const Image& x, const nn::Tensor3& content_features, const GramSet& target,
                                   Image* grad) const {
  const auto& style_layers = extractor_.spec().style_layers;
  if (target.layers != style_layers) throw Error("target grams do not match the extractor's style layers");
  Extractor::Tape tape;
  const FeatureStack fs = extractor_.forward(x, tape);
  LossRecord rec;
  rec.content = content_loss(fs.maps[content_index_], content_features);
  GramSet g_hat;
  g_hat.layers = style_layers;
  for (std::size_t i : style_index_) g_hat.grams.push_back(gram(fs.maps[i]));
  rec.style = target.provenance == GramProvenance::specified ? multi_ref_style_loss(g_hat, target, weights_)
                                                              : style_loss_single(g_hat, target, weights_);
  rec.total = total_loss(rec.content, rec.style);
  if (grad) {
    std::vector<nn::Tensor3> layer_grads;
    for (const auto& m : fs.maps) layer_grads.emplace_back(m.channels(), m.height(), m.width());
    layer_grads[content_index_] = content_loss_grad(fs.maps[content_index_], content_features);
    for (std::size_t l = 0; l < style_index_.size(); ++l) {
      if (weights_[l] == 0.0) continue;
      const std::size_t i = style_index_[l];
      const nn::Tensor3 g = style_layer_grad(fs.maps[i], g_hat.grams[l], target.grams[l], weights_[l]);
      auto& dst = layer_grads[i].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.values()[k];
    }
    *grad = extractor_.backward(tape, layer_grads);
  }
  return rec;
}

TileResult StyleTransfer::transfer_tile(const Image& content, const GramSet& target) const {
  for (double v : content.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("content tile must lie in [0,1]");
  }
  const nn::Tensor3 content_features = extractor_.extract(content).maps[content_index_];
  const auto& opt = config_.optimizer;
  nn::Adam adam(content.size(), opt.learning_rate, opt.beta1, opt.beta2, opt.eps);

  TileResult res;
  Image x = content;
  Image best = content;
  double best_loss = 0.0;
  Image grad;
  for (int step = 0; step <= config_.steps; ++step) {
    const bool update = step < config_.steps;
    LossRecord rec;
    try {
      rec = evaluate(x, content_features, target, update ? &grad : nullptr);
    } catch (const Error& e) {
      throw Error(std::string("tile optimisation diverged at step ") + std::to_string(step) + " (" + e.what() +
                  "); loss trace:" + trace_text(res.trace));
    }
    rec.step = step;
    res.trace.push_back(rec);
    if (step == 0 || rec.total < best_loss) {
      best_loss = rec.total;
      res.best_step = step;
      if (step > 0) best = x;
    }
    if (!update) break;
    for (double g : grad.values()) {
      if (!std::isfinite(g)) {
        throw Error("tile optimisation diverged at step " + std::to_string(step) + " (non-finite gradient); loss trace:" +
                    trace_text(res.trace));
      }
    }
    adam.step(x.values(), grad.values());
  }
  res.initial_loss = res.trace.front().total;
  if (res.best_step == 0) {
    res.tile = content;
    res.final_loss = res.initial_loss;
    return res;
  }
  best = clamp(best, 0.0, 1.0);
  const double clamped_loss = evaluate(best, content_features, target).total;
  if (clamped_loss > res.initial_loss) {
    res.tile = content;
    res.final_loss = res.initial_loss;
    res.best_step = 0;
  } else {
    res.tile = std::move(best);
    res.final_loss = clamped_loss;
  }
  return res;
}

ScaleResult StyleTransfer::transfer_scale(const Image& source, std::span<const Image> references, Scale scale) const {
  const auto start = std::chrono::steady_clock::now();
  ScaleResult out;
  out.scale = scale;
  out.grid = plan_grid(source.height(), source.width(), scale, config_.overlap, config_.work_size);
  const StyleTarget target = build_target_grams(references, scale);
  const std::vector<Image> tiles = decompose(source, out.grid);
  out.tiles.resize(tiles.size());
  parallel_for(tiles.size(), config_.threads,
               [&](std::size_t k) { out.tiles[k] = transfer_tile(tiles[k], target.specified); });
  std::vector<Image> stylized;
  stylized.reserve(tiles.size());
  for (const auto& t : out.tiles) stylized.push_back(t.tile);
  out.image = clamp(reconstruct(stylized, out.grid), 0.0, 1.0);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

PipelineResult StyleTransfer::run_pipeline(const Mammogram& source, const ReferenceBank& bank,
                                           const RefinerModel* refiner, const ScaleCallback& on_scale) const {
  const auto start = std::chrono::steady_clock::now();
  validate(source);
  PipelineResult result;
  const auto chosen = rank_refs(source, bank, std::size_t(config_.n_refs));
  std::vector<Image> refs;
  for (std::size_t i : chosen) {
    result.reference_ids.push_back(bank.entries[i].id());
    refs.push_back(load_entry(bank.entries[i]).pixels);
  }
  if (refiner && config_.scales.size() != kAllScales.size()) {
    throw Error("a trained refiner needs all three scales enabled");
  }
  for (Scale s : kAllScales) {
    if (!config_.has_scale(s)) continue;
    ScaleResult r = transfer_scale(source.pixels, refs, s);
    if (on_scale) on_scale(r);
    result.scales[std::size_t(s)] = std::move(r);
  }

  std::vector<const Image*> images;
  std::vector<double> weights;
  if (refiner) {
    result.trained_refiner = true;
    result.fusion_weights = refiner->fusion_weights;
    result.final_image = clamp(
        fuse_and_refine(result.scales[0]->image, result.scales[1]->image, result.scales[2]->image, *refiner), 0.0, 1.0);
  } else {
    const double w = 1.0 / double(config_.scales.size());
    for (Scale s : kAllScales) {
      if (!result.scales[std::size_t(s)]) continue;
      images.push_back(&result.scales[std::size_t(s)]->image);
      weights.push_back(w);
      result.fusion_weights[std::size_t(s)] = w;
    }
    result.final_image = clamp(weighted_fusion(images, weights), 0.0, 1.0);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace stylenorm
