#include "stylenorm/discriminator.hpp"

#include <cmath>
#include <string>

namespace stylenorm {

std::string_view to_string(DiscriminatorKind k) { return k == DiscriminatorKind::tiny ? "tiny" : "resnet18"; }

DiscriminatorKind parse_discriminator(std::string_view s) {
  if (s == "tiny") return DiscriminatorKind::tiny;
  if (s == "resnet18") return DiscriminatorKind::resnet18;
  throw Error("unknown discriminator '" + std::string(s) + "' (expected tiny or resnet18)");
}

namespace {

using Block = Discriminator::Block;

Block conv_block(int in, int out, int k, int stride, int pad, nn::Activation act, std::mt19937_64& rng, double gain) {
  Block b;
  b.kind = Block::conv;
  b.a = nn::Conv2d(in, out, k, stride, pad);
  b.a.init_uniform(rng, gain, 0.0);
  b.act = act;
  return b;
}

Block residual_block(int in, int out, int stride, std::mt19937_64& rng) {
  Block b;
  b.kind = Block::residual;
  b.a = nn::Conv2d(in, out, 3, stride, 1);
  b.a.init_uniform(rng, std::sqrt(2.0), 0.0);
  b.b = nn::Conv2d(out, out, 3, 1, 1);  // zero: identity block at init
  if (stride != 1 || in != out) {
    b.has_shortcut = true;
    b.shortcut = nn::Conv2d(in, out, 1, stride, 0);
    b.shortcut.init_uniform(rng, 1.0, 0.0);
  }
  b.act = nn::Activation::relu;
  return b;
}

template <typename F>
void for_each_conv(const Block& b, F&& f) {
  if (b.kind == Block::conv || b.kind == Block::residual) f(b.a);
  if (b.kind == Block::residual) {
    f(b.b);
    if (b.has_shortcut) f(b.shortcut);
  }
}

template <typename F>
void for_each_conv(Block& b, F&& f) {
  if (b.kind == Block::conv || b.kind == Block::residual) f(b.a);
  if (b.kind == Block::residual) {
    f(b.b);
    if (b.has_shortcut) f(b.shortcut);
  }
}

void add_into(nn::Tensor3& dst, const nn::Tensor3& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.values()[i] += src.values()[i];
}

}  // namespace

Discriminator::Discriminator(DiscriminatorKind kind, std::uint64_t seed) : kind_(kind) {
  auto rng = nn::make_rng(seed, 0xd15c);
  const double he = std::sqrt(2.0);
  int width = 0;
  if (kind == DiscriminatorKind::tiny) {
    const int widths[] = {1, 8, 16, 32, 32};
    for (int s = 0; s < 4; ++s) {
      blocks_.push_back(conv_block(widths[s], widths[s + 1], 3, 1, 1, nn::Activation::leaky_relu, rng, he));
      if (s < 3) {
        Block pool;
        pool.kind = Block::avgpool;
        blocks_.push_back(pool);
      }
    }
    width = 32;
  } else {
    blocks_.push_back(conv_block(1, 64, 7, 2, 3, nn::Activation::relu, rng, he));
    Block pool;
    pool.kind = Block::maxpool;
    blocks_.push_back(pool);
    int in = 64;
    const int widths[] = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
      blocks_.push_back(residual_block(in, widths[s], s == 0 ? 1 : 2, rng));
      blocks_.push_back(residual_block(widths[s], widths[s], 1, rng));
      in = widths[s];
    }
    width = 512;
  }
  head_weight_.resize(width);
  const double bound = std::sqrt(3.0 / width);
  for (auto& w : head_weight_) w = nn::uniform(rng, -bound, bound);
}

double Discriminator::logit(const Image& x) const {
  Tape tape;
  return forward(x, tape);
}

double Discriminator::forward(const Image& x, Tape& tape) const {
  if (blocks_.empty()) throw Error("discriminator is not initialised");
  tape.input = nn::Tensor3::from_image(x);
  tape.outputs.assign(blocks_.size(), {});
  tape.mids.assign(blocks_.size(), {});
  const nn::Tensor3* cur = &tape.input;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    nn::Tensor3 y;
    switch (b.kind) {
      case Block::conv:
        y = b.a.forward(*cur);
        nn::apply_activation(b.act, y);
        break;
      case Block::maxpool: y = nn::maxpool2(*cur); break;
      case Block::avgpool: y = nn::avgpool2(*cur); break;
      case Block::residual: {
        nn::Tensor3 m = b.a.forward(*cur);
        nn::apply_activation(nn::Activation::relu, m);
        y = b.b.forward(m);
        if (b.has_shortcut) {
          add_into(y, b.shortcut.forward(*cur));
        } else {
          add_into(y, *cur);
        }
        nn::apply_activation(nn::Activation::relu, y);
        tape.mids[k] = std::move(m);
        break;
      }
    }
    if (y.height() == 0 || y.width() == 0) throw Error("discriminator input too small");
    tape.outputs[k] = std::move(y);
    cur = &tape.outputs[k];
  }
  tape.pooled.assign(cur->channels(), 0.0);
  for (int c = 0; c < cur->channels(); ++c) {
    double s = 0.0;
    const double* p = cur->channel(c);
    for (std::size_t i = 0; i < cur->plane(); ++i) s += p[i];
    tape.pooled[c] = s / double(cur->plane());
  }
  double z = head_bias_;
  for (std::size_t c = 0; c < head_weight_.size(); ++c) z += head_weight_[c] * tape.pooled[c];
  return z;
}

Image Discriminator::backward(const Tape& tape, double grad_logit, std::span<double> grad_params) const {
  if (grad_params.size() != parameter_count()) throw Error("discriminator gradient buffer size mismatch");
  // Parameter offsets per block in flattening order.
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& b : blocks_) {
    offsets.push_back(off);
    for_each_conv(b, [&](const nn::Conv2d& c) { off += c.parameter_count(); });
  }
  const std::size_t head_off = off;

  const nn::Tensor3& last = tape.outputs.back();
  for (std::size_t c = 0; c < head_weight_.size(); ++c) grad_params[head_off + c] += grad_logit * tape.pooled[c];
  grad_params[head_off + head_weight_.size()] += grad_logit;

  nn::Tensor3 g(last.channels(), last.height(), last.width());
  for (int c = 0; c < last.channels(); ++c) {
    const double v = grad_logit * head_weight_[c] / double(last.plane());
    double* p = g.channel(c);
    for (std::size_t i = 0; i < last.plane(); ++i) p[i] = v;
  }

  auto conv_grads = [&](const nn::Conv2d& conv, std::size_t at, const nn::Tensor3& in, const nn::Tensor3& gout) {
    conv.backward_params(in, gout, grad_params.subspan(at, conv.weight.size()),
                         grad_params.subspan(at + conv.weight.size(), conv.bias.size()));
  };

  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const Block& b = blocks_[k];
    const nn::Tensor3& in = k == 0 ? tape.input : tape.outputs[k - 1];
    const nn::Tensor3& out = tape.outputs[k];
    switch (b.kind) {
      case Block::conv:
        nn::activation_backward(b.act, out, g);
        conv_grads(b.a, offsets[k], in, g);
        g = b.a.backward_input(g, in.height(), in.width());
        break;
      case Block::maxpool: g = nn::maxpool2_backward(in, g); break;
      case Block::avgpool: g = nn::avgpool2_backward(g, in.height(), in.width()); break;
      case Block::residual: {
        nn::activation_backward(nn::Activation::relu, out, g);
        const nn::Tensor3& m = tape.mids[k];
        std::size_t at = offsets[k];
        const std::size_t b_off = at + b.a.parameter_count();
        conv_grads(b.b, b_off, m, g);
        nn::Tensor3 gm = b.b.backward_input(g, m.height(), m.width());
        nn::activation_backward(nn::Activation::relu, m, gm);
        conv_grads(b.a, at, in, gm);
        nn::Tensor3 gx = b.a.backward_input(gm, in.height(), in.width());
        if (b.has_shortcut) {
          conv_grads(b.shortcut, b_off + b.b.parameter_count(), in, g);
          add_into(gx, b.shortcut.backward_input(g, in.height(), in.width()));
        } else {
          add_into(gx, g);
        }
        g = std::move(gx);
        break;
      }
    }
  }
  return g.channel_image(0);
}

std::size_t Discriminator::parameter_count() const {
  std::size_t n = head_weight_.size() + 1;
  for (const auto& b : blocks_) for_each_conv(b, [&](const nn::Conv2d& c) { n += c.parameter_count(); });
  return n;
}

std::vector<double> Discriminator::parameters() const {
  std::vector<double> p;
  p.reserve(parameter_count());
  for (const auto& b : blocks_) {
    for_each_conv(b, [&](const nn::Conv2d& c) {
      p.insert(p.end(), c.weight.begin(), c.weight.end());
      p.insert(p.end(), c.bias.begin(), c.bias.end());
    });
  }
  p.insert(p.end(), head_weight_.begin(), head_weight_.end());
  p.push_back(head_bias_);
  return p;
}

void Discriminator::set_parameters(std::span<const double> p) {
  if (p.size() != parameter_count()) throw Error("discriminator parameter count mismatch");
  std::size_t at = 0;
  for (auto& b : blocks_) {
    for_each_conv(b, [&](nn::Conv2d& c) {
      std::copy_n(p.begin() + at, c.weight.size(), c.weight.begin());
      at += c.weight.size();
      std::copy_n(p.begin() + at, c.bias.size(), c.bias.begin());
      at += c.bias.size();
    });
  }
  std::copy_n(p.begin() + at, head_weight_.size(), head_weight_.begin());
  at += head_weight_.size();
  head_bias_ = p[at];
}

}  // namespace stylenorm
