#pragma once

#include <span>
#include <string>
#include <vector>

#include "stylenorm/features.hpp"
#include "stylenorm/nn.hpp"

namespace stylenorm {

/// Dense square matrix, row-major.
struct SquareMatrix {
  int n = 0;
  std::vector<double> v;

  SquareMatrix() = default;
  explicit SquareMatrix(int size, double fill = 0.0) : n(size), v(std::size_t(size) * size, fill) {}

  double& operator()(int i, int j) { return v[std::size_t(i) * n + j]; }
  double operator()(int i, int j) const { return v[std::size_t(i) * n + j]; }
  bool operator==(const SquareMatrix&) const = default;
};

enum class GramProvenance { single_image, fused, specified };

struct GramSet {
  std::vector<std::string> layers;
  std::vector<SquareMatrix> grams;  // aligned with layers
  GramProvenance provenance = GramProvenance::single_image;
  /// Per layer, set by hist_specify when the target histogram was degenerate.
  std::vector<bool> degenerate;

  const SquareMatrix& at(const std::string& layer) const;
  bool operator==(const GramSet&) const = default;
};

/// Probability mass per equal-width bin; masses sum to one.
struct DensityHistogram {
  std::vector<double> edges;   // B + 1, strictly increasing
  std::vector<double> masses;  // B
  /// All source values were identical; quantile() returns `value`.
  bool degenerate = false;
  double value = 0.0;

  int bins() const { return int(masses.size()); }
  /// Piecewise-linear CDF.
  double cdf(double x) const;
  /// Inverse of cdf() with linear interpolation inside a bin; p in [0,1].
  double quantile(double p) const;
};

/// Per-layer weights w_l aligned with a layer list.
using LayerWeights = std::vector<double>;
LayerWeights uniform_weights(std::size_t layers);

/// G = F F^T / M over an N x H x W feature map (M = H*W).
SquareMatrix gram(const nn::Tensor3& features);

/// Grams of the given layers of a feature stack.
GramSet gram_set(const FeatureStack& features, const std::vector<std::string>& layers);

/// Mean over N*M of squared feature differences.
double content_loss(const nn::Tensor3& f_hat, const nn::Tensor3& f_content);
nn::Tensor3 content_loss_grad(const nn::Tensor3& f_hat, const nn::Tensor3& f_content);

/// sum_l w_l / (4 N_l^2) * ||G_hat_l - G_l||_F^2
double style_loss_single(const GramSet& g_hat, const GramSet& g_style, const LayerWeights& w);

/// Target grams must come out of hist_specify.
double multi_ref_style_loss(const GramSet& g_hat, const GramSet& g_target, const LayerWeights& w);

/// d/dF of w / (4 N^2) * ||F F^T / M - target||_F^2.
nn::Tensor3 style_layer_grad(const nn::Tensor3& features, const SquareMatrix& g_hat, const SquareMatrix& target,
                             double weight);

/// Element-wise max across references, layer by layer.
GramSet fuse_grams(std::span<const GramSet> gram_sets);

/// Equal-width histogram over every entry of the stacked layer grams.
DensityHistogram reference_histogram(std::span<const GramSet> gram_sets, const std::string& layer, int bins);
/// Same, but stacking every layer of every reference.
DensityHistogram reference_histogram_all_layers(std::span<const GramSet> gram_sets, int bins);
/// Histogram of an arbitrary value list (the shared construction above).
DensityHistogram density_histogram(std::span<const double> values, int bins);

/// Monotone CDF matching of every layer: v -> Q_h(C(v)), where C is the
/// mid-rank empirical CDF of that layer's entries. `targets` holds either one
/// histogram per layer or a single histogram shared by all layers.
GramSet hist_specify(const GramSet& fused, std::span<const DensityHistogram> targets);

double total_loss(double content_term, double style_term);

}  // namespace stylenorm
