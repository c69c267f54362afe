#include "stylenorm/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stylenorm {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width), data_(std::size_t(height) * std::size_t(width), fill) {
  if (height < 0 || width < 0) throw Error("negative image dimensions");
}

Image::Image(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 0 || width < 0 || data_.size() != std::size_t(height) * std::size_t(width)) {
    throw Error("image data does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
}

std::int64_t Mask::area() const {
  return std::accumulate(data_.begin(), data_.end(), std::int64_t{0});
}

namespace {

struct Tap {
  int lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = double(in) / double(out);
  for (int d = 0; d < out; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, double(in - 1));
    int lo = int(std::floor(s));
    int hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, s - lo};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& src, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) throw Error("resize to empty size");
  if (src.empty()) throw Error("resize of empty image");
  if (src.height() == out_height && src.width() == out_width) return src;

  const auto ty = bilinear_taps(src.height(), out_height);
  const auto tx = bilinear_taps(src.width(), out_width);

  // Horizontal pass into an intermediate with the source row count.
  Image horiz(src.height(), out_width);
  for (int r = 0; r < src.height(); ++r) {
    auto in = src.row(r);
    auto out = horiz.row(r);
    for (int c = 0; c < out_width; ++c) {
      const Tap& t = tx[c];
      out[c] = in[t.lo] * (1.0 - t.frac) + in[t.hi] * t.frac;
    }
  }
  Image dst(out_height, out_width);
  for (int r = 0; r < out_height; ++r) {
    const Tap& t = ty[r];
    auto a = horiz.row(t.lo);
    auto b = horiz.row(t.hi);
    auto out = dst.row(r);
    for (int c = 0; c < out_width; ++c) out[c] = a[c] * (1.0 - t.frac) + b[c] * t.frac;
  }
  return dst;
}

Image crop(const Image& src, int row, int col, int height, int width) {
  if (row < 0 || col < 0 || height <= 0 || width <= 0 || row + height > src.height() ||
      col + width > src.width()) {
    throw Error("crop window outside image");
  }
  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    auto in = src.row(row + r);
    std::copy_n(in.begin() + col, width, out.row(r).begin());
  }
  return out;
}

Image clamp(Image img, double lo, double hi) {
  for (auto& v : img.values()) v = std::clamp(v, lo, hi);
  return img;
}

double mean(const Image& img) {
  if (img.empty()) return 0.0;
  return std::accumulate(img.values().begin(), img.values().end(), 0.0) / double(img.size());
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };

  const int h = src.height(), w = src.width();
  Image tmp(h, w), dst(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src.at(r, reflect(c + k, w));
      tmp.at(r, c) = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(r + k, h), c);
      dst.at(r, c) = acc;
    }
  }
  return dst;
}

}  // namespace stylenorm
