#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stylenorm/features.hpp"
#include "stylenorm/imaging.hpp"
#include "stylenorm/refbank.hpp"
#include "stylenorm/refiner.hpp"
#include "stylenorm/styleloss.hpp"
#include "stylenorm/tiler.hpp"

namespace stylenorm {

enum class HistogramMode { per_layer, global };

std::string_view to_string(HistogramMode m);
HistogramMode parse_histogram_mode(std::string_view s);

struct OptimizerConfig {
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TransferConfig {
  ExtractorSpec extractor;  // input_size is forced to work_size
  int steps = 400;
  OptimizerConfig optimizer;
  int n_refs = 5;
  int overlap = 0;
  std::vector<Scale> scales{kAllScales.begin(), kAllScales.end()};
  LayerWeights layer_weights;  // empty -> uniform over the style layers
  int hist_bins = 256;
  HistogramMode hist_mode = HistogramMode::per_layer;
  int work_size = 512;
  std::uint64_t seed = 0;
  /// Tile workers; 1 is the serial path, 0 uses every hardware thread.
  int threads = 1;

  /// Throws on out-of-range values.
  void validate() const;
  bool has_scale(Scale s) const;
};

/// One evaluation of the objective; step k is the iterate after k updates.
struct LossRecord {
  int step = 0;
  double content = 0.0;
  double style = 0.0;
  double total = 0.0;
};

/// Target statistics for one scale.
struct StyleTarget {
  std::vector<GramSet> references;  // one tile-averaged GramSet per reference
  GramSet fused;
  std::vector<DensityHistogram> histograms;  // per layer, or one when global
  GramSet specified;
};

struct TileResult {
  Image tile;  // clamped to [0,1]
  std::vector<LossRecord> trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // loss of the returned tile
  int best_step = 0;
};

struct ScaleResult {
  Scale scale = Scale::scale0;
  Image image;  // source resolution, clamped to [0,1]
  TileGrid grid;
  std::vector<TileResult> tiles;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<std::string> reference_ids;
  std::array<std::optional<ScaleResult>, 3> scales;
  Image final_image;
  std::array<double, 3> fusion_weights{};
  bool trained_refiner = false;
  double seconds = 0.0;

  const ScaleResult* scale(Scale s) const;
};

/// Multi-resolution, multi-reference style transfer against a fixed
/// extractor. All methods are const and safe to call concurrently.
class StyleTransfer {
 public:
  explicit StyleTransfer(TransferConfig config);

  const TransferConfig& config() const { return config_; }
  const Extractor& extractor() const { return extractor_; }
  const LayerWeights& layer_weights() const { return weights_; }

  /// Tiles every reference at `scale`, averages its tile grams, fuses across
  /// references and histogram-specifies the result.
  StyleTarget build_target_grams(std::span<const Image> references, Scale scale) const;

  /// Adam on the pixels from the content tile. Returns the best iterate seen,
  /// or the content tile when clamping made that iterate worse than it.
  TileResult transfer_tile(const Image& content, const GramSet& target) const;

  /// Objective at x for a content tile's features. Also returns d/dx when
  /// `grad` is non-null.
  LossRecord evaluate(const Image& x, const nn::Tensor3& content_features, const GramSet& target,
                      Image* grad = nullptr) const;

  /// Decompose, transfer every tile, reconstruct.
  ScaleResult transfer_scale(const Image& source, std::span<const Image> references, Scale scale) const;

  using ScaleCallback = std::function<void(const ScaleResult&)>;

  /// Selects references, runs every enabled scale and fuses the outputs. With
  /// no refiner the enabled scales are averaged with equal weights.
  PipelineResult run_pipeline(const Mammogram& source, const ReferenceBank& bank,
                              const RefinerModel* refiner = nullptr, const ScaleCallback& on_scale = {}) const;

 private:
  TransferConfig config_;
  Extractor extractor_;
  LayerWeights weights_;
  std::size_t content_index_ = 0;       // into extractor_.layers()
  std::vector<std::size_t> style_index_;  // aligned with style layers
};

/// Runs fn(0..count-1) on `threads` workers (1 = inline, in order).
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace stylenorm
