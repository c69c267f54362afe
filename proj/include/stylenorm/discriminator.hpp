#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "stylenorm/image.hpp"
#include "stylenorm/nn.hpp"

namespace stylenorm {

enum class DiscriminatorKind { tiny, resnet18 };

std::string_view to_string(DiscriminatorKind k);
DiscriminatorKind parse_discriminator(std::string_view s);

/// Binary critic: D(x) = sigmoid(logit(x)) is the probability that a
/// single-channel image is a genuine target-domain image.
///
/// tiny:     four 3x3 conv stages (8/16/32/32, leaky ReLU, 2x2 average pooling
///           after the first three), global average pool, linear head.
/// resnet18: 7x7/2 stem + 2x2 max pool, four stages of two basic residual
///           blocks (64/128/256/512, stride 2 from stage two on, 1x1
///           projection shortcuts), global average pool, linear head. No
///           normalisation layers; the second conv of every block starts at
///           zero so each block is the identity at initialisation.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(DiscriminatorKind kind, std::uint64_t seed);

  DiscriminatorKind kind() const { return kind_; }

  struct Tape;

  double logit(const Image& x) const;
  double probability(const Image& x) const { return nn::sigmoid(logit(x)); }

  /// Forward pass that records what backward() needs.
  double forward(const Image& x, Tape& tape) const;
  /// Back-propagates d(loss)/d(logit). Parameter gradients are added to
  /// grad_params (size parameter_count()); returns d(loss)/d(input).
  Image backward(const Tape& tape, double grad_logit, std::span<double> grad_params) const;

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);

  struct Block;

  bool operator==(const Discriminator& o) const { return kind_ == o.kind_ && parameters() == o.parameters(); }

 private:
  DiscriminatorKind kind_ = DiscriminatorKind::tiny;
  std::vector<Block> blocks_;
  std::vector<double> head_weight_;
  double head_bias_ = 0.0;
};

struct Discriminator::Block {
  enum Kind { conv, maxpool, avgpool, residual } kind = conv;
  nn::Conv2d a;             // conv / first residual conv
  nn::Conv2d b;             // second residual conv
  nn::Conv2d shortcut;      // projection, used when has_shortcut
  bool has_shortcut = false;
  nn::Activation act = nn::Activation::identity;
};

struct Discriminator::Tape {
  nn::Tensor3 input;
  // Per block: output, and for residual blocks the post-activation of conv a.
  std::vector<nn::Tensor3> outputs;
  std::vector<nn::Tensor3> mids;
  std::vector<double> pooled;
};

}  // namespace stylenorm
