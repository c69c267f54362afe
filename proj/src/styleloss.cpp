#include "stylenorm/styleloss.hpp"

#include <algorithm>
#include <cmath>

namespace stylenorm {

namespace {

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(std::string(what) + ": non-finite input");
  }
}

void check_aligned(const GramSet& a, const GramSet& b) {
  if (a.layers != b.layers) throw Error("gram sets have different layers");
  for (std::size_t l = 0; l < a.grams.size(); ++l) {
    if (a.grams[l].n != b.grams[l].n) throw Error("gram size mismatch at layer " + a.layers[l]);
  }
}

double weighted_gram_distance(const GramSet& g_hat, const GramSet& g_ref, const LayerWeights& w) {
  check_aligned(g_hat, g_ref);
  if (w.size() != g_hat.layers.size()) throw Error("one weight per layer expected");
  double total = 0.0;
  for (std::size_t l = 0; l < g_hat.grams.size(); ++l) {
    if (w[l] < 0.0 || !std::isfinite(w[l])) throw Error("layer weights must be finite and non-negative");
    const auto& a = g_hat.grams[l].v;
    const auto& b = g_ref.grams[l].v;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    const double n = g_hat.grams[l].n;
    total += w[l] * ss / (4.0 * n * n);
  }
  return total;
}

}  // namespace

const SquareMatrix& GramSet::at(const std::string& layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return grams[i];
  }
  throw Error("layer '" + layer + "' not in gram set");
}

LayerWeights uniform_weights(std::size_t layers) {
  if (layers == 0) return {};
  return LayerWeights(layers, 1.0 / double(layers));
}

SquareMatrix gram(const nn::Tensor3& f) {
  const int n = f.channels();
  const std::size_t m = f.plane();
  if (n < 1 || m < 1) throw Error("gram: empty feature map");
  require_finite(f.values(), "gram");
  SquareMatrix g(n);
  for (int i = 0; i < n; ++i) {
    const double* fi = f.channel(i);
    for (int j = i; j < n; ++j) {
      const double* fj = f.channel(j);
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t p = 0;
      for (; p + 4 <= m; p += 4) {
        for (int u = 0; u < 4; ++u) acc[u] += fi[p + u] * fj[p + u];
      }
      for (; p < m; ++p) acc[0] += fi[p] * fj[p];
      g(i, j) = g(j, i) = ((acc[0] + acc[1]) + (acc[2] + acc[3])) / double(m);
    }
  }
  return g;
}

GramSet gram_set(const FeatureStack& features, const std::vector<std::string>& layers) {
  GramSet gs;
  gs.layers = layers;
  for (const auto& l : layers) gs.grams.push_back(gram(features.at(l)));
  return gs;
}

double content_loss(const nn::Tensor3& a, const nn::Tensor3& b) {
  if (!a.same_shape(b)) throw Error("content_loss: shape mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    ss += d * d;
  }
  return ss / double(a.size());
}

nn::Tensor3 content_loss_grad(const nn::Tensor3& a, const nn::Tensor3& b) {
  if (!a.same_shape(b)) throw Error("content_loss: shape mismatch");
  nn::Tensor3 g(a.channels(), a.height(), a.width());
  const double scale = 2.0 / double(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g.values()[i] = scale * (a.values()[i] - b.values()[i]);
  return g;
}

double style_loss_single(const GramSet& g_hat, const GramSet& g_style, const LayerWeights& w) {
  return weighted_gram_distance(g_hat, g_style, w);
}

double multi_ref_style_loss(const GramSet& g_hat, const GramSet& g_target, const LayerWeights& w) {
  if (g_target.provenance != GramProvenance::specified) {
    throw Error("multi-reference style loss needs a histogram-specified target");
  }
  return weighted_gram_distance(g_hat, g_target, w);
}

nn::Tensor3 style_layer_grad(const nn::Tensor3& f, const SquareMatrix& g_hat, const SquareMatrix& target,
                             double weight) {
  const int n = f.channels();
  const std::size_t m = f.plane();
  if (g_hat.n != n || target.n != n) throw Error("style gradient: gram size mismatch");
  // dL/dG = w/(2N^2) (G - T) (symmetric), dL/dF = 2 (dL/dG) F / M.
  const double scale = weight / (double(n) * n * double(m));
  nn::Tensor3 g(n, f.height(), f.width());
  for (int i = 0; i < n; ++i) {
    double* gi = g.channel(i);
    for (int j = 0; j < n; ++j) {
      const double coef = scale * (g_hat(i, j) - target(i, j));
      if (coef == 0.0) continue;
      const double* fj = f.channel(j);
      for (std::size_t p = 0; p < m; ++p) gi[p] += coef * fj[p];
    }
  }
  return g;
}

GramSet fuse_grams(std::span<const GramSet> sets) {
  if (sets.empty()) throw Error("fuse_grams: no reference grams");
  GramSet out = sets.front();
  out.provenance = GramProvenance::fused;
  out.degenerate.clear();
  for (std::size_t r = 1; r < sets.size(); ++r) {
    check_aligned(out, sets[r]);
    for (std::size_t l = 0; l < out.grams.size(); ++l) {
      auto& dst = out.grams[l].v;
      const auto& src = sets[r].grams[l].v;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(dst[i], src[i]);
    }
  }
  return out;
}

DensityHistogram density_histogram(std::span<const double> values, int bins) {
  if (bins < 2) throw Error("histogram needs at least 2 bins");
  if (values.empty()) throw Error("histogram of no values");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("histogram: non-finite value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  DensityHistogram h;
  h.masses.assign(bins, 0.0);
  h.edges.resize(bins + 1);
  if (lo == hi) {
    // Single occupied bin centred on the value.
    h.degenerate = true;
    h.value = lo;
    const double half = std::max(0.5, std::abs(lo) * 0.5);
    for (int b = 0; b <= bins; ++b) h.edges[b] = lo - half + 2.0 * half * double(b) / bins;
    int bin = bins / 2;
    if (lo < h.edges[bin]) --bin;
    h.masses[bin] = 1.0;
    return h;
  }
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges[b] = lo + width * b;
  h.edges[bins] = hi;
  std::vector<std::int64_t> counts(bins, 0);
  for (double v : values) {
    int b = std::min(bins - 1, int((v - lo) / width));
    // Agree with the stored edges exactly: edges[b] <= v < edges[b+1], last bin closed.
    while (b > 0 && v < h.edges[b]) --b;
    while (b < bins - 1 && v >= h.edges[b + 1]) ++b;
    ++counts[b];
  }
  for (int b = 0; b < bins; ++b) h.masses[b] = double(counts[b]) / double(values.size());
  return h;
}

DensityHistogram reference_histogram(std::span<const GramSet> sets, const std::string& layer, int bins) {
  if (sets.empty()) throw Error("reference_histogram: no reference grams");
  std::vector<double> values;
  for (const auto& gs : sets) {
    const auto& g = gs.at(layer);
    values.insert(values.end(), g.v.begin(), g.v.end());
  }
  return density_histogram(values, bins);
}

DensityHistogram reference_histogram_all_layers(std::span<const GramSet> sets, int bins) {
  if (sets.empty()) throw Error("reference_histogram: no reference grams");
  std::vector<double> values;
  for (const auto& gs : sets) {
    for (const auto& g : gs.grams) values.insert(values.end(), g.v.begin(), g.v.end());
  }
  return density_histogram(values, bins);
}

double DensityHistogram::cdf(double x) const {
  if (x < edges.front()) return 0.0;
  if (x >= edges.back()) return 1.0;
  double acc = 0.0;
  for (int b = 0; b < bins(); ++b) {
    if (x < edges[b + 1]) return acc + masses[b] * (x - edges[b]) / (edges[b + 1] - edges[b]);
    acc += masses[b];
  }
  return 1.0;
}

double DensityHistogram::quantile(double p) const {
  if (degenerate) return value;
  p = std::clamp(p, 0.0, 1.0);
  double acc = 0.0;
  int last_occupied = 0;
  for (int b = 0; b < bins(); ++b) {
    if (masses[b] <= 0.0) continue;
    last_occupied = b;
    if (acc + masses[b] >= p) {
      const double t = std::clamp((p - acc) / masses[b], 0.0, 1.0);
      return edges[b] + t * (edges[b + 1] - edges[b]);
    }
    acc += masses[b];
  }
  return edges[last_occupied + 1];
}

GramSet hist_specify(const GramSet& fused, std::span<const DensityHistogram> targets) {
  if (targets.size() != 1 && targets.size() != fused.grams.size()) {
    throw Error("hist_specify: need one histogram per layer or a single shared histogram");
  }
  GramSet out = fused;
  out.provenance = GramProvenance::specified;
  out.degenerate.assign(fused.grams.size(), false);
  for (std::size_t l = 0; l < fused.grams.size(); ++l) {
    const DensityHistogram& h = targets.size() == 1 ? targets[0] : targets[l];
    out.degenerate[l] = h.degenerate;
    const auto& src = fused.grams[l].v;
    std::vector<double> sorted = src;
    std::sort(sorted.begin(), sorted.end());
    const double n = double(sorted.size());
    auto& dst = out.grams[l].v;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto [first, last] = std::equal_range(sorted.begin(), sorted.end(), src[i]);
      const double below = double(first - sorted.begin());
      const double equal = double(last - first);
      dst[i] = h.quantile((below + 0.5 * equal) / n);
    }
  }
  return out;
}

double total_loss(double content_term, double style_term) {
  if (!std::isfinite(content_term) || !std::isfinite(style_term)) throw Error("total_loss: non-finite term");
  if (content_term < 0.0 || style_term < 0.0) throw Error("total_loss: negative term");
  return content_term + style_term;
}

}  // namespace stylenorm
