#include "stylenorm/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "stylenorm/digest.hpp"

namespace stylenorm {

namespace {

constexpr std::array<int, 5> kVggStageConvs = {2, 2, 4, 4, 4};
constexpr std::array<int, 5> kVggStageWidth = {64, 128, 256, 512, 512};
constexpr std::array<double, 3> kImagenetMean = {0.485, 0.456, 0.406};
constexpr std::array<double, 3> kImagenetStd = {0.229, 0.224, 0.225};

std::string vgg_layer(int stage, int conv) {
  return "stage" + std::to_string(stage) + "_conv" + std::to_string(conv);
}

}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::toy ? "toy" : "vgg19"; }

Backbone parse_backbone(std::string_view s) {
  if (s == "toy") return Backbone::toy;
  if (s == "vgg19" || s == "pretrained_vgg19") return Backbone::pretrained_vgg19;
  throw Error("unknown backbone '" + std::string(s) + "' (expected toy or vgg19)");
}

std::vector<std::string> available_layers(Backbone b) {
  if (b == Backbone::toy) return {"conv1", "conv2", "conv3"};
  std::vector<std::string> out;
  for (int s = 0; s < 5; ++s) {
    for (int c = 0; c < kVggStageConvs[s]; ++c) out.push_back(vgg_layer(s + 1, c + 1));
  }
  return out;
}

std::vector<std::string> default_style_layers(Backbone b) {
  if (b == Backbone::toy) return {"conv1", "conv2", "conv3"};
  return {"stage1_conv1", "stage2_conv1", "stage3_conv1", "stage4_conv1", "stage5_conv1"};
}

std::string default_content_layer(Backbone b) {
  return b == Backbone::toy ? "conv2" : "stage4_conv2";
}

ExtractorSpec resolve(ExtractorSpec spec) {
  if (spec.style_layers.empty()) spec.style_layers = default_style_layers(spec.backbone);
  if (spec.content_layer.empty()) spec.content_layer = default_content_layer(spec.backbone);
  const auto all = available_layers(spec.backbone);
  auto known = [&](const std::string& l) { return std::find(all.begin(), all.end(), l) != all.end(); };
  for (const auto& l : spec.style_layers) {
    if (!known(l)) throw Error("style layer '" + l + "' does not exist in the " + std::string(to_string(spec.backbone)) + " backbone");
  }
  if (!known(spec.content_layer)) {
    throw Error("content layer '" + spec.content_layer + "' does not exist in the " + std::string(to_string(spec.backbone)) + " backbone");
  }
  std::set<std::string> unique(spec.style_layers.begin(), spec.style_layers.end());
  if (unique.size() != spec.style_layers.size()) throw Error("duplicate style layer");
  if (spec.input_size <= 0) throw Error("extractor input size must be positive");
  return spec;
}

const nn::Tensor3& FeatureStack::at(const std::string& layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return maps[i];
  }
  throw Error("layer '" + layer + "' not in feature stack");
}

// --- weights archive -------------------------------------------------------

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("weights archive truncated");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

WeightArchive read_weight_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SNWT", 4) != 0) throw Error(path.string() + ": not a weights archive");
  if (get_u32(in) != 1) throw Error(path.string() + ": unsupported weights archive version");
  const std::uint32_t count = get_u32(in);
  WeightArchive archive;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t len = get_u32(in);
    if (len > 4096) throw Error("weights archive: implausible tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw Error("weights archive truncated");
    WeightTensor w;
    const std::uint32_t ndim = get_u32(in);
    if (ndim > 8) throw Error("weights archive: implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      w.shape.push_back(int(get_u32(in)));
      n *= std::size_t(w.shape.back());
    }
    w.data.resize(n);
    for (auto& v : w.data) {
      const std::uint32_t bits = get_u32(in);
      std::memcpy(&v, &bits, 4);
    }
    archive.emplace(std::move(name), std::move(w));
  }
  return archive;
}

void write_weight_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("SNWT", 4);
  put_u32(out, 1);
  put_u32(out, std::uint32_t(archive.size()));
  for (const auto& [name, w] : archive) {
    put_u32(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put_u32(out, std::uint32_t(w.shape.size()));
    for (int d : w.shape) put_u32(out, std::uint32_t(d));
    for (float v : w.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

WeightArchive random_vgg19_archive(std::uint64_t seed) {
  auto rng = nn::make_rng(seed, 19);
  WeightArchive archive;
  int in = 3;
  for (int s = 0; s < 5; ++s) {
    for (int c = 0; c < kVggStageConvs[s]; ++c) {
      const int out = kVggStageWidth[s];
      nn::Conv2d conv(in, out, 3, 1, 1);
      conv.init_uniform(rng, std::sqrt(2.0), 0.01);
      WeightTensor w{{out, in, 3, 3}, std::vector<float>(conv.weight.begin(), conv.weight.end())};
      WeightTensor b{{out}, std::vector<float>(conv.bias.begin(), conv.bias.end())};
      archive[vgg_layer(s + 1, c + 1) + ".weight"] = std::move(w);
      archive[vgg_layer(s + 1, c + 1) + ".bias"] = std::move(b);
      in = out;
    }
  }
  return archive;
}

// --- extractor ---------------------------------------------------------------

Extractor::Extractor(ExtractorSpec spec) : spec_(resolve(std::move(spec))) {
  if (spec_.backbone == Backbone::toy) {
    auto rng = nn::make_rng(spec_.toy_seed, 7);
    const int widths[] = {1, 4, 8, 8};
    for (int l = 0; l < 3; ++l) {
      Op op;
      op.conv_layer = nn::Conv2d(widths[l], widths[l + 1], 3, 1, 1);
      op.conv_layer.init_uniform(rng, 1.0, spec_.toy_bias_scale);
      op.act = nn::Activation::tanh;
      op.tap = "conv" + std::to_string(l + 1);
      ops_.push_back(std::move(op));
    }
  } else {
    if (spec_.weights_checksum.empty()) throw Error("vgg19 backbone requires a pinned weights digest");
    const std::string digest = sha256_file(spec_.weights_path);
    if (digest != spec_.weights_checksum) {
      throw Error("weights checksum mismatch for " + spec_.weights_path.string() + ": expected " +
                  spec_.weights_checksum + ", got " + digest);
    }
    const WeightArchive archive = read_weight_archive(spec_.weights_path);
    imagenet_input_ = true;
    int in = 3;
    for (int s = 0; s < 5; ++s) {
      if (s > 0) {
        Op pool;
        pool.kind = Op::maxpool;
        ops_.push_back(std::move(pool));
      }
      for (int c = 0; c < kVggStageConvs[s]; ++c) {
        const int out = kVggStageWidth[s];
        const std::string name = vgg_layer(s + 1, c + 1);
        auto wi = archive.find(name + ".weight");
        auto bi = archive.find(name + ".bias");
        if (wi == archive.end() || bi == archive.end()) throw Error("weights archive is missing " + name);
        if (wi->second.shape != std::vector<int>{out, in, 3, 3} || bi->second.shape != std::vector<int>{out}) {
          throw Error("weights archive has wrong shape for " + name);
        }
        Op op;
        op.conv_layer = nn::Conv2d(in, out, 3, 1, 1);
        std::copy(wi->second.data.begin(), wi->second.data.end(), op.conv_layer.weight.begin());
        std::copy(bi->second.data.begin(), bi->second.data.end(), op.conv_layer.bias.begin());
        op.act = nn::Activation::relu;
        op.tap = name;
        ops_.push_back(std::move(op));
        in = out;
      }
    }
  }

  // Requested layers in network order; forward stops at the deepest one.
  std::set<std::string> wanted(spec_.style_layers.begin(), spec_.style_layers.end());
  wanted.insert(spec_.content_layer);
  for (std::size_t k = 0; k < ops_.size(); ++k) {
    if (!ops_[k].tap.empty() && wanted.count(ops_[k].tap)) {
      layers_.push_back(ops_[k].tap);
      layer_op_.push_back(int(k));
      last_op_ = int(k);
    }
  }
}

int Extractor::channels(const std::string& layer) const {
  for (const auto& op : ops_) {
    if (op.tap == layer) return op.conv_layer.out_channels;
  }
  throw Error("unknown layer '" + layer + "'");
}

nn::Tensor3 Extractor::prepare_input(const Image& image) const {
  if (image.height() != spec_.input_size || image.width() != spec_.input_size) {
    throw Error("extractor expects a " + std::to_string(spec_.input_size) + "x" + std::to_string(spec_.input_size) +
                " input, got " + std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  if (!imagenet_input_) return nn::Tensor3::from_image(image);
  nn::Tensor3 x(3, image.height(), image.width());
  for (int c = 0; c < 3; ++c) {
    double* dst = x.channel(c);
    for (std::size_t i = 0; i < image.size(); ++i) dst[i] = (image[i] - kImagenetMean[c]) / kImagenetStd[c];
  }
  return x;
}

Image Extractor::input_gradient(const nn::Tensor3& g) const {
  Image out(g.height(), g.width());
  for (int c = 0; c < g.channels(); ++c) {
    const double scale = imagenet_input_ ? 1.0 / kImagenetStd[c] : 1.0;
    const double* src = g.channel(c);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * src[i];
  }
  return out;
}

FeatureStack Extractor::extract(const Image& image) const {
  Tape tape;
  return forward(image, tape);
}

FeatureStack Extractor::forward(const Image& image, Tape& tape) const {
  tape.input = prepare_input(image);
  tape.outputs.clear();
  tape.outputs.reserve(last_op_ + 1);
  const nn::Tensor3* x = &tape.input;
  for (int k = 0; k <= last_op_; ++k) {
    const Op& op = ops_[k];
    nn::Tensor3 y;
    if (op.kind == Op::maxpool) {
      y = nn::maxpool2(*x);
    } else {
      y = op.conv_layer.forward(*x);
      nn::apply_activation(op.act, y);
    }
    tape.outputs.push_back(std::move(y));
    x = &tape.outputs.back();
  }
  FeatureStack fs;
  fs.layers = layers_;
  fs.input_size = spec_.input_size;
  for (int k : layer_op_) fs.maps.push_back(tape.outputs[k]);
  return fs;
}

Image Extractor::backward(const Tape& tape, const std::vector<nn::Tensor3>& layer_grads) const {
  if (layer_grads.size() != layers_.size()) throw Error("backward: one gradient per layer expected");
  if (tape.outputs.size() != std::size_t(last_op_ + 1)) throw Error("backward: tape does not match extractor");
  nn::Tensor3 g;
  std::size_t next = layers_.size();
  for (int k = last_op_; k >= 0; --k) {
    const nn::Tensor3& out = tape.outputs[k];
    if (next > 0 && layer_op_[next - 1] == k) {
      --next;
      const nn::Tensor3& lg = layer_grads[next];
      if (!lg.same_shape(out)) throw Error("backward: gradient shape mismatch for " + layers_[next]);
      if (g.size() == 0) {
        g = lg;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += lg.values()[i];
      }
    }
    if (g.size() == 0) g = nn::Tensor3(out.channels(), out.height(), out.width());
    const nn::Tensor3& in = k == 0 ? tape.input : tape.outputs[k - 1];
    const Op& op = ops_[k];
    if (op.kind == Op::maxpool) {
      g = nn::maxpool2_backward(in, g);
    } else {
      nn::activation_backward(op.act, out, g);
      g = op.conv_layer.backward_input(g, in.height(), in.width());
    }
  }
  return input_gradient(g);
}

}  // namespace stylenorm
