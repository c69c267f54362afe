#include "stylenorm/nn.hpp"

#include <algorithm>
#include <cmath>

namespace stylenorm::nn {

Tensor3 Tensor3::from_image(const Image& img) {
  Tensor3 t(1, img.height(), img.width());
  std::copy(img.values().begin(), img.values().end(), t.values().begin());
  return t;
}

Image Tensor3::channel_image(int c) const {
  std::vector<double> v(channel(c), channel(c) + plane());
  return Image(h_, w_, std::move(v));
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream),
                    std::uint32_t(stream >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

Conv2d::Conv2d(int in, int out, int k, int s, int p)
    : in_channels(in), out_channels(out), kernel(k), stride(s), padding(p),
      weight(std::size_t(out) * in * k * k, 0.0), bias(std::size_t(out), 0.0) {
  if (in <= 0 || out <= 0 || k <= 0 || s <= 0 || p < 0) throw Error("invalid convolution geometry");
}

void Conv2d::init_uniform(std::mt19937_64& rng, double gain, double bias_scale) {
  const double bound = gain * std::sqrt(3.0 / double(in_channels * kernel * kernel));
  for (auto& v : weight) v = uniform(rng, -bound, bound);
  for (auto& v : bias) v = bias_scale > 0 ? uniform(rng, -bias_scale, bias_scale) : 0.0;
}

namespace {

// Valid output index range [lo, hi) along one axis for tap offset k.
inline void tap_range(int out_size, int in_size, int stride, int padding, int k, int& lo, int& hi) {
  // need 0 <= o*stride - padding + k < in_size
  const int num = padding - k;
  lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  const int top = in_size - 1 + padding - k;
  hi = top < 0 ? 0 : std::min(out_size, top / stride + 1);
  if (hi < lo) hi = lo;
}

// y += correlation of one HxW plane with a 3x3 kernel, zero padding 1.
void corr3x3_same(const double* x, int H, int W, const double* k, double* __restrict y) {
  for (int r = 0; r < H; ++r) {
    const double* rows[3] = {r > 0 ? x + std::size_t(r - 1) * W : nullptr, x + std::size_t(r) * W,
                             r + 1 < H ? x + std::size_t(r + 1) * W : nullptr};
    double* __restrict yr = y + std::size_t(r) * W;
    for (int ky = 0; ky < 3; ++ky) {
      const double* __restrict xr = rows[ky];
      if (!xr) continue;
      const double k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
      if (W == 1) {
        yr[0] += k1 * xr[0];
        continue;
      }
      yr[0] += k1 * xr[0] + k2 * xr[1];
      for (int c = 1; c + 1 < W; ++c) yr[c] += k0 * xr[c - 1] + k1 * xr[c] + k2 * xr[c + 1];
      yr[W - 1] += k0 * xr[W - 2] + k1 * xr[W - 1];
    }
  }
}

}  // namespace

Tensor3 Conv2d::forward(const Tensor3& x) const {
  if (x.channels() != in_channels) throw Error("convolution input channel mismatch");
  const int H = x.height(), W = x.width();
  const int OH = output_size(H), OW = output_size(W);
  if (OH <= 0 || OW <= 0) throw Error("convolution input too small");
  Tensor3 y(out_channels, OH, OW);

  if (kernel == 3 && stride == 1 && padding == 1) {
    for (int o = 0; o < out_channels; ++o) {
      double* yo = y.channel(o);
      std::fill(yo, yo + y.plane(), bias[o]);
      for (int i = 0; i < in_channels; ++i) corr3x3_same(x.channel(i), H, W, weight.data() + (std::size_t(o) * in_channels + i) * 9, yo);
    }
    return y;
  }

  std::vector<int> xlo(kernel), xhi(kernel);
  for (int kx = 0; kx < kernel; ++kx) tap_range(OW, W, stride, padding, kx, xlo[kx], xhi[kx]);

  for (int o = 0; o < out_channels; ++o) {
    double* yo = y.channel(o);
    for (int oy = 0; oy < OH; ++oy) {
      double* yrow = yo + std::size_t(oy) * OW;
      std::fill(yrow, yrow + OW, bias[o]);
      for (int i = 0; i < in_channels; ++i) {
        const double* xi = x.channel(i);
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          const double* xrow = xi + std::size_t(iy) * W;
          for (int kx = 0; kx < kernel; ++kx) {
            const double wv = w(o, i, ky, kx);
            const int lo = xlo[kx], hi = xhi[kx];
            if (stride == 1) {
              const int shift = kx - padding;
              for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox + shift];
            } else {
              for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox * stride - padding + kx];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor3 Conv2d::backward_input(const Tensor3& g, int H, int W) const {
  const int OH = g.height(), OW = g.width();
  Tensor3 gx(in_channels, H, W);
  if (kernel == 3 && stride == 1 && padding == 1 && OH == H && OW == W) {
    double flipped[9];
    for (int i = 0; i < in_channels; ++i) {
      for (int o = 0; o < out_channels; ++o) {
        for (int t = 0; t < 9; ++t) flipped[t] = (weight.data() + (std::size_t(o) * in_channels + i) * 9)[8 - t];
        corr3x3_same(g.channel(o), H, W, flipped, gx.channel(i));
      }
    }
    return gx;
  }
  std::vector<int> xlo(kernel), xhi(kernel);
  for (int kx = 0; kx < kernel; ++kx) tap_range(OW, W, stride, padding, kx, xlo[kx], xhi[kx]);

  if (stride == 1) {
    // Gather form: each input row collects from the output rows that touch it.
    for (int i = 0; i < in_channels; ++i) {
      double* gi = gx.channel(i);
      for (int iy = 0; iy < H; ++iy) {
        double* grow = gi + std::size_t(iy) * W;
        for (int o = 0; o < out_channels; ++o) {
          const double* go = g.channel(o);
          for (int ky = 0; ky < kernel; ++ky) {
            const int oy = iy + padding - ky;
            if (oy < 0 || oy >= OH) continue;
            const double* gorow = go + std::size_t(oy) * OW;
            for (int kx = 0; kx < kernel; ++kx) {
              const double wv = w(o, i, ky, kx);
              // ix = ox - padding + kx for ox in [xlo, xhi)
              const int shift = kx - padding;
              for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) grow[ox + shift] += wv * gorow[ox];
            }
          }
        }
      }
    }
    return gx;
  }

  for (int o = 0; o < out_channels; ++o) {
    const double* go = g.channel(o);
    for (int oy = 0; oy < OH; ++oy) {
      const double* gorow = go + std::size_t(oy) * OW;
      for (int i = 0; i < in_channels; ++i) {
        double* gi = gx.channel(i);
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          double* grow = gi + std::size_t(iy) * W;
          for (int kx = 0; kx < kernel; ++kx) {
            const double wv = w(o, i, ky, kx);
            for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) grow[ox * stride - padding + kx] += wv * gorow[ox];
          }
        }
      }
    }
  }
  return gx;
}

void Conv2d::backward_params(const Tensor3& x, const Tensor3& g, std::span<double> gw,
                             std::span<double> gb) const {
  if (gw.size() != weight.size() || gb.size() != bias.size()) throw Error("gradient buffer size mismatch");
  const int H = x.height(), W = x.width();
  const int OH = g.height(), OW = g.width();
  std::vector<int> xlo(kernel), xhi(kernel);
  for (int kx = 0; kx < kernel; ++kx) tap_range(OW, W, stride, padding, kx, xlo[kx], xhi[kx]);

  for (int o = 0; o < out_channels; ++o) {
    const double* go = g.channel(o);
    double bsum = 0.0;
    for (std::size_t p = 0; p < g.plane(); ++p) bsum += go[p];
    gb[o] += bsum;
    for (int oy = 0; oy < OH; ++oy) {
      const double* gorow = go + std::size_t(oy) * OW;
      for (int i = 0; i < in_channels; ++i) {
        const double* xi = x.channel(i);
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          const double* xrow = xi + std::size_t(iy) * W;
          for (int kx = 0; kx < kernel; ++kx) {
            double acc = 0.0;
            if (stride == 1) {
              const int shift = kx - padding;
              for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) acc += gorow[ox] * xrow[ox + shift];
            } else {
              for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) acc += gorow[ox] * xrow[ox * stride - padding + kx];
            }
            gw[((std::size_t(o) * in_channels + i) * kernel + ky) * kernel + kx] += acc;
          }
        }
      }
    }
  }
}

double activate(Activation a, double v) {
  switch (a) {
    case Activation::identity: return v;
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::leaky_relu: return v > 0.0 ? v : kLeakySlope * v;
    case Activation::tanh: return std::tanh(v);
  }
  return v;
}

double activate_grad_from_output(Activation a, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu: return y > 0.0 ? 1.0 : kLeakySlope;
    case Activation::tanh: return 1.0 - y * y;
  }
  return 1.0;
}

void apply_activation(Activation a, Tensor3& t) {
  if (a == Activation::identity) return;
  for (auto& v : t.values()) v = activate(a, v);
}

void activation_backward(Activation a, const Tensor3& output, Tensor3& grad) {
  if (a == Activation::identity) return;
  auto& g = grad.values();
  const auto& y = output.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= activate_grad_from_output(a, y[i]);
}

Tensor3 maxpool2(const Tensor3& x) {
  const int OH = x.height() / 2, OW = x.width() / 2;
  Tensor3 y(x.channels(), OH, OW);
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        y.at(c, oy, ox) = std::max({x.at(c, 2 * oy, 2 * ox), x.at(c, 2 * oy, 2 * ox + 1),
                                    x.at(c, 2 * oy + 1, 2 * ox), x.at(c, 2 * oy + 1, 2 * ox + 1)});
      }
    }
  }
  return y;
}

Tensor3 maxpool2_backward(const Tensor3& x, const Tensor3& g) {
  Tensor3 gx(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < g.height(); ++oy) {
      for (int ox = 0; ox < g.width(); ++ox) {
        // First maximum in scan order receives the gradient.
        int by = 2 * oy, bx = 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            if (x.at(c, 2 * oy + dy, 2 * ox + dx) > x.at(c, by, bx)) {
              by = 2 * oy + dy;
              bx = 2 * ox + dx;
            }
          }
        }
        gx.at(c, by, bx) += g.at(c, oy, ox);
      }
    }
  }
  return gx;
}

Tensor3 avgpool2(const Tensor3& x) {
  const int OH = x.height() / 2, OW = x.width() / 2;
  Tensor3 y(x.channels(), OH, OW);
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        y.at(c, oy, ox) = 0.25 * (x.at(c, 2 * oy, 2 * ox) + x.at(c, 2 * oy, 2 * ox + 1) +
                                  x.at(c, 2 * oy + 1, 2 * ox) + x.at(c, 2 * oy + 1, 2 * ox + 1));
      }
    }
  }
  return y;
}

Tensor3 avgpool2_backward(const Tensor3& g, int H, int W) {
  Tensor3 gx(g.channels(), H, W);
  for (int c = 0; c < g.channels(); ++c) {
    for (int oy = 0; oy < g.height(); ++oy) {
      for (int ox = 0; ox < g.width(); ++ox) {
        const double v = 0.25 * g.at(c, oy, ox);
        gx.at(c, 2 * oy, 2 * ox) += v;
        gx.at(c, 2 * oy, 2 * ox + 1) += v;
        gx.at(c, 2 * oy + 1, 2 * ox) += v;
        gx.at(c, 2 * oy + 1, 2 * ox + 1) += v;
      }
    }
  }
  return gx;
}

double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw Error("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
  }
}

}  // namespace stylenorm::nn
