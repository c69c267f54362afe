#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylenorm {

/// Base error for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major single-channel image of doubles.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col) { return data_[index(row, col)]; }
  double at(int row, int col) const { return data_[index(row, col)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(int r) { return {data_.data() + index(r, 0), std::size_t(width_)}; }
  std::span<const double> row(int r) const {
    return {data_.data() + index(r, 0), std::size_t(width_)};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int row, int col) const { return std::size_t(row) * width_ + col; }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Binary mask; 0 or 1 per pixel.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width) : height_(height), width_(width), data_(std::size_t(height) * width, 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t& at(int row, int col) { return data_[std::size_t(row) * width_ + col]; }
  std::uint8_t at(int row, int col) const { return data_[std::size_t(row) * width_ + col]; }
  std::uint8_t& operator[](std::size_t i) { return data_[i]; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }
  std::size_t size() const { return data_.size(); }

  /// Number of set pixels.
  std::int64_t area() const;

  bool operator==(const Mask& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Bilinear resampling with half-pixel centres and edge clamping. Same-size
/// requests return an exact copy.
Image resize_bilinear(const Image& src, int out_height, int out_width);

/// Copies the [row, row+height) x [col, col+width) window.
Image crop(const Image& src, int row, int col, int height, int width);

/// Clamps every pixel to [lo, hi].
Image clamp(Image img, double lo = 0.0, double hi = 1.0);

double mean(const Image& img);
double max_abs_diff(const Image& a, const Image& b);

/// Separable Gaussian blur with reflected borders; sigma <= 0 returns a copy.
Image gaussian_blur(const Image& src, double sigma);

}  // namespace stylenorm
