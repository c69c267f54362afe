#pragma once

// Minimal CPU building blocks for the perceptual extractor, the refiner and
// the discriminators: a channel-major 3-D tensor, 2-D convolution with
// hand-written backward passes, pointwise activations, pooling and Adam.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stylenorm/image.hpp"

namespace stylenorm::nn {

/// Channels x height x width, channel-major.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0)
      : c_(channels), h_(height), w_(width), data_(std::size_t(channels) * height * width, fill) {}

  static Tensor3 from_image(const Image& img);
  Image channel_image(int c) const;

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t plane() const { return std::size_t(h_) * w_; }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) { return data_[c * plane() + std::size_t(y) * w_ + x]; }
  double at(int c, int y, int x) const { return data_[c * plane() + std::size_t(y) * w_ + x]; }
  double* channel(int c) { return data_.data() + c * plane(); }
  const double* channel(int c) const { return data_.data() + c * plane(); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor3& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  bool operator==(const Tensor3&) const = default;

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

/// Deterministic uniform draws in [lo, hi) that do not depend on the
/// standard library's distribution implementations.
double uniform(std::mt19937_64& rng, double lo, double hi);

/// Engine seeded from (seed, stream) through std::seed_seq.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// 2-D convolution with zero padding. Weights are [out][in][k][k].
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  std::vector<double> weight;
  std::vector<double> bias;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int padding);

  /// Uniform fan-in initialisation scaled by `gain`; biases in [-bias_scale, bias_scale].
  void init_uniform(std::mt19937_64& rng, double gain, double bias_scale);

  int output_size(int input) const { return (input + 2 * padding - kernel) / stride + 1; }
  double& w(int o, int i, int ky, int kx) { return weight[((std::size_t(o) * in_channels + i) * kernel + ky) * kernel + kx]; }
  double w(int o, int i, int ky, int kx) const { return weight[((std::size_t(o) * in_channels + i) * kernel + ky) * kernel + kx]; }

  Tensor3 forward(const Tensor3& x) const;
  /// Gradient w.r.t. the input for a given output gradient.
  Tensor3 backward_input(const Tensor3& grad_out, int in_height, int in_width) const;
  /// Accumulates weight and bias gradients into the given buffers.
  void backward_params(const Tensor3& x, const Tensor3& grad_out, std::span<double> grad_weight,
                       std::span<double> grad_bias) const;

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

enum class Activation { identity, relu, leaky_relu, tanh };

double activate(Activation a, double v);
/// Derivative expressed through the activation output (valid for all kinds above).
double activate_grad_from_output(Activation a, double y);

void apply_activation(Activation a, Tensor3& t);
/// grad *= f'(.) evaluated from the stored output.
void activation_backward(Activation a, const Tensor3& output, Tensor3& grad);

inline constexpr double kLeakySlope = 0.2;

/// 2x2 max pooling with stride 2 (odd trailing rows/cols dropped).
Tensor3 maxpool2(const Tensor3& x);
Tensor3 maxpool2_backward(const Tensor3& x, const Tensor3& grad_out);

/// 2x2 average pooling with stride 2.
Tensor3 avgpool2(const Tensor3& x);
Tensor3 avgpool2_backward(const Tensor3& grad_out, int in_height, int in_width);

/// Numerically stable log(sigmoid(z)).
double log_sigmoid(double z);
double sigmoid(double z);

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad);

  std::int64_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

  // Exposed for checkpointing.
  std::vector<double>& first_moment() { return m_; }
  std::vector<double>& second_moment() { return v_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace stylenorm::nn
