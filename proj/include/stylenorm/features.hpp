#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stylenorm/image.hpp"
#include "stylenorm/nn.hpp"

namespace stylenorm {

enum class Backbone { pretrained_vgg19, toy };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view s);

struct ExtractorSpec {
  Backbone backbone = Backbone::toy;
  std::vector<std::string> style_layers;  // empty -> backbone default
  std::string content_layer;              // empty -> backbone default
  int input_size = 512;                   // square side the extractor accepts

  // pretrained_vgg19
  std::filesystem::path weights_path;
  std::string weights_checksum;  // expected sha256 of the weights file

  // toy
  std::uint64_t toy_seed = 0;
  double toy_bias_scale = 0.1;
};

/// Fills in backbone defaults and checks that every layer exists.
ExtractorSpec resolve(ExtractorSpec spec);

std::vector<std::string> default_style_layers(Backbone b);
std::string default_content_layer(Backbone b);
/// Every tap the backbone exposes, shallow to deep.
std::vector<std::string> available_layers(Backbone b);

struct FeatureStack {
  std::vector<std::string> layers;
  std::vector<nn::Tensor3> maps;  // N_l x H_l x W_l, aligned with layers
  int input_size = 0;

  const nn::Tensor3& at(const std::string& layer) const;
  bool operator==(const FeatureStack&) const = default;
};

/// Named float32 tensors as stored in a weights archive.
struct WeightTensor {
  std::vector<int> shape;
  std::vector<float> data;
};
using WeightArchive = std::map<std::string, WeightTensor>;

/// Archive layout (little endian): "SNWT", u32 version=1, u32 count, then per
/// tensor: u32 name length, name, u32 ndim, u32 dims[ndim], f32 data.
WeightArchive read_weight_archive(const std::filesystem::path& path);
void write_weight_archive(const std::filesystem::path& path, const WeightArchive& archive);

/// VGG19 conv parameters named "stageS_convK.weight" / ".bias".
WeightArchive random_vgg19_archive(std::uint64_t seed);

/// Fixed convolutional backbone with immutable weights. Layer outputs are
/// taken after the activation.
class Extractor {
 public:
  explicit Extractor(ExtractorSpec spec);

  const ExtractorSpec& spec() const { return spec_; }

  /// Union of style and content layers in network order.
  const std::vector<std::string>& layers() const { return layers_; }

  /// Channel count of a layer.
  int channels(const std::string& layer) const;

  /// Activations recorded by forward() and consumed by backward().
  struct Tape {
    nn::Tensor3 input;                 // prepared network input
    std::vector<nn::Tensor3> outputs;  // output of each op
  };

  FeatureStack extract(const Image& image) const;
  FeatureStack forward(const Image& image, Tape& tape) const;

  /// Gradient w.r.t. the input image given per-layer gradients aligned with
  /// the FeatureStack returned by forward().
  Image backward(const Tape& tape, const std::vector<nn::Tensor3>& layer_grads) const;

 private:
  struct Op {
    enum Kind { conv, maxpool } kind = conv;
    nn::Conv2d conv_layer;
    nn::Activation act = nn::Activation::identity;
    std::string tap;  // layer id when the op output is exposed
  };

  nn::Tensor3 prepare_input(const Image& image) const;
  Image input_gradient(const nn::Tensor3& grad) const;

  ExtractorSpec spec_;
  std::vector<Op> ops_;
  std::vector<std::string> layers_;
  std::vector<int> layer_op_;  // op index per entry of layers_
  int last_op_ = 0;
  bool imagenet_input_ = false;
};

}  // namespace stylenorm
