#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <tuple>

#include "stylenorm/digest.hpp"
#include "stylenorm/features.hpp"
#include "synthetic.hpp"

namespace stylenorm {
namespace {

ExtractorSpec toy_spec(int size, std::uint64_t seed = 3) {
  ExtractorSpec s;
  s.backbone = Backbone::toy;
  s.input_size = size;
  s.toy_seed = seed;
  return s;
}

TEST(Features, ToyDefaultsAndShapes) {
  const Extractor ex(toy_spec(24));
  EXPECT_EQ(ex.layers(), (std::vector<std::string>{"conv1", "conv2", "conv3"}));
  const FeatureStack fs = ex.extract(testing::random_image(24, 24, 1));
  ASSERT_EQ(fs.maps.size(), 3u);
  const int widths[] = {4, 8, 8};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(fs.maps[l].channels(), widths[l]);
    EXPECT_EQ(fs.maps[l].height(), 24);
    EXPECT_EQ(fs.maps[l].width(), 24);
  }
  EXPECT_EQ(ex.channels("conv2"), 8);
}

TEST(Features, ZeroImageWithZeroBiasesGivesZeroMaps) {
  ExtractorSpec s = toy_spec(16);
  s.toy_bias_scale = 0.0;
  const FeatureStack fs = Extractor(s).extract(Image(16, 16, 0.0));
  for (const auto& m : fs.maps) {
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Features, ExtractionIsDeterministic) {
  const Image img = testing::random_image(32, 32, 5);
  const Extractor a(toy_spec(32, 9));
  const Extractor b(toy_spec(32, 9));
  EXPECT_EQ(a.extract(img), a.extract(img));
  EXPECT_EQ(a.extract(img), b.extract(img));
  EXPECT_NE(a.extract(img), Extractor(toy_spec(32, 10)).extract(img));
}

TEST(Features, WrongInputSizeIsRejected) {
  const Extractor ex(toy_spec(16));
  EXPECT_THROW(ex.extract(Image(16, 17, 0.5)), Error);
  EXPECT_THROW(ex.extract(Image(8, 8, 0.5)), Error);
}

TEST(Features, UnknownOrDuplicateLayersAreRejected) {
  ExtractorSpec s = toy_spec(16);
  s.style_layers = {"conv1", "conv9"};
  EXPECT_THROW(Extractor{s}, Error);
  s.style_layers = {"conv1", "conv1"};
  EXPECT_THROW(Extractor{s}, Error);
  s.style_layers = {"conv1"};
  s.content_layer = "stage4_conv2";
  EXPECT_THROW(Extractor{s}, Error);
}

TEST(Features, ExtractionStopsAtDeepestRequestedLayer) {
  ExtractorSpec s = toy_spec(16);
  s.style_layers = {"conv1"};
  s.content_layer = "conv1";
  const Extractor ex(s);
  EXPECT_EQ(ex.layers(), std::vector<std::string>{"conv1"});
  EXPECT_EQ(ex.extract(testing::random_image(16, 16, 2)).maps.size(), 1u);
}

TEST(Features, TranslationCovarianceInTheInterior) {
  const int n = 32, shift = 3, border = 3;  // three 3x3 convs reach 3 px
  const Image big = testing::random_image(n + shift, n, 11);
  const Image a = crop(big, 0, 0, n, n);
  const Image b = crop(big, shift, 0, n, n);
  const Extractor ex(toy_spec(n));
  const FeatureStack fa = ex.extract(a), fb = ex.extract(b);
  for (std::size_t l = 0; l < fa.maps.size(); ++l) {
    for (int c = 0; c < fa.maps[l].channels(); ++c) {
      for (int y = border; y < n - shift - border; ++y) {
        for (int x = border; x < n - border; ++x) {
          ASSERT_NEAR(fb.maps[l].at(c, y, x), fa.maps[l].at(c, y + shift, x), 1e-12);
        }
      }
    }
  }
}

TEST(Features, InputGradientMatchesFiniteDifferences) {
  const int n = 10;
  const Extractor ex(toy_spec(n, 4));
  const Image img = testing::random_image(n, n, 6);
  // Scalar probe: sum over layers of <coeff_l, F_l>.
  Extractor::Tape tape;
  const FeatureStack fs = ex.forward(img, tape);
  std::vector<nn::Tensor3> coeff;
  for (std::size_t l = 0; l < fs.maps.size(); ++l) {
    const auto& m = fs.maps[l];
    coeff.push_back(testing::random_tensor(m.channels(), m.height(), m.width(), 100 + l));
  }
  auto probe = [&](const Image& x) {
    const FeatureStack f = ex.extract(x);
    double s = 0.0;
    for (std::size_t l = 0; l < f.maps.size(); ++l) {
      for (std::size_t i = 0; i < f.maps[l].size(); ++i) s += coeff[l].values()[i] * f.maps[l].values()[i];
    }
    return s;
  };
  const Image grad = ex.backward(tape, coeff);
  const double h = 1e-5;
  for (std::size_t i = 0; i < img.size(); i += 7) {
    Image p = img, m = img;
    p[i] += h;
    m[i] -= h;
    const double fd = (probe(p) - probe(m)) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << i;
  }
}

TEST(Features, WeightArchiveRoundTrip) {
  const auto dir = testing::make_temp_dir("archive");
  WeightArchive a;
  a["x.weight"] = {{2, 1, 3, 3}, std::vector<float>(18)};
  for (int i = 0; i < 18; ++i) a["x.weight"].data[i] = 0.25f * float(i) - 1.0f;
  a["x.bias"] = {{2}, {0.5f, -0.5f}};
  write_weight_archive(dir / "w.bin", a);
  const WeightArchive b = read_weight_archive(dir / "w.bin");
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b.at("x.weight").shape, a["x.weight"].shape);
  EXPECT_EQ(b.at("x.weight").data, a["x.weight"].data);
  EXPECT_EQ(b.at("x.bias").data, a["x.bias"].data);
}

TEST(Features, CorruptArchiveIsRejected) {
  const auto dir = testing::make_temp_dir("corrupt");
  {
    std::ofstream(dir / "bad.bin") << "NOPE";
  }
  EXPECT_THROW(read_weight_archive(dir / "bad.bin"), Error);
  EXPECT_THROW(read_weight_archive(dir / "missing.bin"), Error);
}

class Vgg19Test : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::make_temp_dir("vgg19");
    write_weight_archive(dir_ / "vgg19.snwt", random_vgg19_archive(1));
    digest_ = sha256_file(dir_ / "vgg19.snwt");
  }
  static ExtractorSpec spec() {
    ExtractorSpec s;
    s.backbone = Backbone::pretrained_vgg19;
    s.weights_path = dir_ / "vgg19.snwt";
    s.weights_checksum = digest_;
    return s;
  }
  static std::filesystem::path dir_;
  static std::string digest_;
};
std::filesystem::path Vgg19Test::dir_;
std::string Vgg19Test::digest_;

TEST_F(Vgg19Test, DefaultLayers) {
  const ExtractorSpec s = resolve(spec());
  EXPECT_EQ(s.style_layers,
            (std::vector<std::string>{"stage1_conv1", "stage2_conv1", "stage3_conv1", "stage4_conv1", "stage5_conv1"}));
  EXPECT_EQ(s.content_layer, "stage4_conv2");
  EXPECT_EQ(available_layers(Backbone::pretrained_vgg19).size(), 16u);
}

TEST_F(Vgg19Test, FirstLayerIs64ChannelsAtFullResolution) {
  ExtractorSpec s = spec();
  s.style_layers = {"stage1_conv1"};
  s.content_layer = "stage1_conv1";
  const Extractor ex(s);
  const FeatureStack fs = ex.extract(testing::random_image(512, 512, 3));
  ASSERT_EQ(fs.maps.size(), 1u);
  EXPECT_EQ(fs.maps[0].channels(), 64);
  EXPECT_EQ(fs.maps[0].height(), 512);
  EXPECT_EQ(fs.maps[0].width(), 512);
}

TEST_F(Vgg19Test, StageShapesFollowTheArchitecture) {
  ExtractorSpec s = spec();
  s.input_size = 32;
  const Extractor ex(s);
  const FeatureStack fs = ex.extract(testing::random_image(32, 32, 4));
  const std::vector<std::tuple<std::string, int, int>> expect = {
      {"stage1_conv1", 64, 32}, {"stage2_conv1", 128, 16}, {"stage3_conv1", 256, 8},
      {"stage4_conv1", 512, 4}, {"stage4_conv2", 512, 4},  {"stage5_conv1", 512, 2}};
  ASSERT_EQ(fs.layers.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& [name, ch, side] = expect[i];
    EXPECT_EQ(fs.layers[i], name);
    EXPECT_EQ(fs.maps[i].channels(), ch);
    EXPECT_EQ(fs.maps[i].height(), side);
  }
}

TEST_F(Vgg19Test, ChecksumMismatchIsRejected) {
  ExtractorSpec s = spec();
  s.weights_checksum = std::string(64, '0');
  try {
    Extractor ex(s);
    FAIL() << "expected a checksum error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum mismatch"), std::string::npos);
  }
  s.weights_checksum.clear();
  EXPECT_THROW(Extractor{s}, Error);
}

}  // namespace
}  // namespace stylenorm
