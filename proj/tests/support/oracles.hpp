#pragma once

// Brute-force reference implementations written independently of the
// library code paths they check.

#include <cstdint>
#include <vector>

#include "stylenorm/image.hpp"
#include "stylenorm/nn.hpp"
#include "stylenorm/refiner.hpp"

namespace stylenorm::testing {

using Matrix = std::vector<std::vector<double>>;

Matrix oracle_gram(const nn::Tensor3& f);
double oracle_content_loss(const nn::Tensor3& a, const nn::Tensor3& b);
/// sum_l w_l / (4 N_l^2) sum_ij (a_l - b_l)_ij^2
double oracle_style_loss(const std::vector<Matrix>& a, const std::vector<Matrix>& b, const std::vector<double>& w);
/// Per-entry max over references, per layer.
std::vector<Matrix> oracle_fuse(const std::vector<std::vector<Matrix>>& refs);

/// Integer counts per equal-width bin over [min, max], last bin closed.
std::vector<std::int64_t> oracle_bin_counts(const std::vector<double>& values, const std::vector<double>& edges);

/// Bilinear resampling with half-pixel centres and edge clamping.
Image oracle_resize(const Image& src, int out_h, int out_w);

/// Sort-based exact histogram matching on integer levels.
std::vector<std::uint32_t> oracle_ehm(const std::vector<std::uint32_t>& src, int h, int w,
                                      const std::vector<std::uint32_t>& ref);

/// Per-pixel evaluation of a refiner as explicit matrix products.
double oracle_refine(const RefinerModel& m, double s0, double s1, double s2);

/// Size of the largest 4-connected component of pixels above a threshold.
std::int64_t oracle_largest_component(const Image& img, double threshold);

}  // namespace stylenorm::testing
