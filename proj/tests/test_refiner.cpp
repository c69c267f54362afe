#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "stylenorm/digest.hpp"
#include "stylenorm/refiner.hpp"
#include "synthetic.hpp"

namespace stylenorm {
namespace {

using testing::Style;

Image affine(Image img, double a, double b) {
  for (double& v : img.values()) v = a + b * v;
  return img;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Corpus {
  std::vector<Image> targets;
  std::vector<ScaleTriple> triples;
};

// Sharp targets versus blurred scale triples of other textures.
Corpus toy_corpus(int count, int size) {
  Corpus c;
  for (int i = 0; i < count; ++i) {
    c.targets.push_back(affine(testing::random_texture(size, size, 500 + i, 0.7), 0.2, 0.6));
    const Image t = affine(testing::random_texture(size, size, 600 + i, 0.7), 0.1, 0.4);
    c.triples.push_back({gaussian_blur(t, 2.0), gaussian_blur(t, 1.0), t});
  }
  return c;
}

GanConfig small_gan(int steps) {
  GanConfig g;
  g.steps = steps;
  g.batch_size = 2;
  g.crop_size = 24;
  g.learning_rate_refiner = 5e-3;
  g.learning_rate_discriminator = 1e-3;
  g.seed = 3;
  return g;
}

TEST(RefinerModel, IdentityIsExactOnNonNegativeInputs) {
  const RefinerModel m = RefinerModel::identity(7);
  for (double u : {0.0, 1e-9, 0.125, 0.5, 0.999, 1.0, 3.5}) EXPECT_EQ(m.refine(u), u);
  EXPECT_NE(m.w1[5], 0.0);  // hidden channels are seeded, not zero
  EXPECT_EQ(RefinerModel::identity(7), m);
  EXPECT_NE(RefinerModel::identity(8).digest(), m.digest());
}

TEST(RefinerModel, DegenerateWeightsSelectS0) {
  RefinerModel m = RefinerModel::identity(1);
  m.fusion_weights = {1.0, 0.0, 0.0};
  const Image s0 = testing::random_image(9, 11, 1), s1 = testing::random_image(9, 11, 2),
              s2 = testing::random_image(9, 11, 3);
  EXPECT_EQ(fuse_and_refine(s0, s1, s2, m), s0);
}

TEST(RefinerModel, IdenticalInputsReproduceExactly) {
  const Image x = testing::random_image(16, 16, 4);
  RefinerModel m = RefinerModel::identity(2);
  for (auto w : {std::array{1.0 / 3, 1.0 / 3, 1.0 / 3}, std::array{0.2, 0.3, 0.5}, std::array{0.75, 0.125, 0.125},
                 std::array{-0.5, 1.0, 0.5}}) {
    m.fusion_weights = w;
    EXPECT_EQ(fuse_and_refine(x, x, x, m), x);
  }
}

TEST(RefinerModel, MatchesPerPixelOracle) {
  RefinerModel m = RefinerModel::identity(3);
  auto rng = nn::make_rng(99);
  auto p = m.parameters();
  for (double& v : p) v = nn::uniform(rng, -0.8, 0.8);
  m.set_parameters(p);
  const Image s0 = testing::random_image(8, 8, 5), s1 = testing::random_image(8, 8, 6),
              s2 = testing::random_image(8, 8, 7);
  const Image out = fuse_and_refine(s0, s1, s2, m);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(out[i], testing::oracle_refine(m, s0[i], s1[i], s2[i]), 1e-6);
  }
}

TEST(RefinerModel, ParameterRoundTrip) {
  const RefinerModel a = RefinerModel::identity(4);
  RefinerModel b;
  b.set_parameters(a.parameters());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.parameters().size(), a.parameter_count());
  EXPECT_THROW(b.set_parameters(std::vector<double>(3)), Error);
}

TEST(WeightedFusion, RejectsMismatchedInputs) {
  const Image a(4, 4), b(4, 5);
  const Image* two[] = {&a, &b};
  EXPECT_THROW(weighted_fusion(two, std::vector<double>{0.5, 0.5}), Error);
  const Image* one[] = {&a};
  EXPECT_THROW(weighted_fusion(one, std::vector<double>{0.5, 0.5}), Error);
}

TEST(RandomCrop, StaysInsideAndIsSeeded) {
  const Image img = testing::random_image(40, 30, 8);
  auto r1 = nn::make_rng(5), r2 = nn::make_rng(5);
  int row = -1, col = -1;
  const Image a = random_crop(img, 16, r1, &row, &col);
  EXPECT_EQ(a, random_crop(img, 16, r2));
  EXPECT_GE(row, 0);
  EXPECT_LE(row, 24);
  EXPECT_LE(col, 14);
  EXPECT_EQ(a, crop(img, row, col, 16, 16));
  EXPECT_EQ(random_crop(img, 100, r1), img);
}

TEST(Discriminator, GradientsMatchFiniteDifferences) {
  for (DiscriminatorKind kind : {DiscriminatorKind::tiny, DiscriminatorKind::resnet18}) {
    Discriminator d(kind, 11);
    // Perturb so that zero-initialised residual branches carry gradient too.
    auto p = d.parameters();
    auto rng = nn::make_rng(12);
    for (double& v : p) v += nn::uniform(rng, -0.02, 0.02);
    d.set_parameters(p);
    const int side = kind == DiscriminatorKind::tiny ? 16 : 32;
    const Image x = testing::random_image(side, side, 13);
    Discriminator::Tape tape;
    d.forward(x, tape);
    std::vector<double> gp(d.parameter_count(), 0.0);
    const Image gx = d.backward(tape, 1.0, gp);
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.size(); i += x.size() / 7) {
      Image a = x, b = x;
      a[i] += h;
      b[i] -= h;
      const double fd = (d.logit(a) - d.logit(b)) / (2 * h);
      EXPECT_NEAR(gx[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << to_string(kind) << " pixel " << i;
    }
    for (std::size_t k = 0; k < p.size(); k += p.size() / 23) {
      auto pa = p, pb = p;
      pa[k] += h;
      pb[k] -= h;
      Discriminator da = d, db = d;
      da.set_parameters(pa);
      db.set_parameters(pb);
      const double fd = (da.logit(x) - db.logit(x)) / (2 * h);
      EXPECT_NEAR(gp[k], fd, 1e-5 * std::max(1.0, std::abs(fd))) << to_string(kind) << " param " << k;
    }
  }
}

TEST(Discriminator, ResidualBlocksStartAsIdentityAndNamesParse) {
  EXPECT_EQ(parse_discriminator("tiny"), DiscriminatorKind::tiny);
  EXPECT_EQ(parse_discriminator("resnet18"), DiscriminatorKind::resnet18);
  EXPECT_THROW(parse_discriminator("vgg"), Error);
  const Discriminator a(DiscriminatorKind::resnet18, 1), b(DiscriminatorKind::resnet18, 1);
  EXPECT_EQ(a, b);
  EXPECT_GT(a.parameter_count(), 10'000'000u);
  EXPECT_TRUE(std::isfinite(a.logit(testing::random_image(64, 64, 1))));
}

TEST(RefinerTrainer, ZeroStepsKeepsTheModel) {
  const Corpus c = toy_corpus(2, 32);
  const RefinerModel init = RefinerModel::identity(3);
  const TrainResult r = train_refiner(init, Discriminator(DiscriminatorKind::tiny, 3), c.targets, c.triples,
                                      small_gan(0));
  EXPECT_EQ(r.model.digest(), init.digest());
  EXPECT_TRUE(r.curves.empty());
}

TEST(RefinerTrainer, LogsEveryNthStepAndStaysConvex) {
  const Corpus c = toy_corpus(3, 32);
  GanConfig g = small_gan(12);
  g.log_every = 3;
  const TrainResult r =
      train_refiner(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), c.targets, c.triples, g);
  ASSERT_EQ(r.curves.size(), 4u);
  for (std::size_t i = 0; i < r.curves.size(); ++i) {
    EXPECT_EQ(r.curves[i].step, int(3 * i));
    EXPECT_LE(r.curves[i].g_term, 0.0);
    EXPECT_GE(r.curves[i].d_loss, 0.0);
  }
  double sum = 0.0;
  for (double w : r.model.fusion_weights) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NE(r.model.digest(), RefinerModel::identity(3).digest());
}

TEST(RefinerTrainer, WarmupFreezesTheRefiner) {
  const Corpus c = toy_corpus(2, 32);
  GanConfig g = small_gan(5);
  g.warmup_steps = 5;
  const TrainResult r =
      train_refiner(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), c.targets, c.triples, g);
  EXPECT_EQ(r.model, RefinerModel::identity(3));
  EXPECT_NE(r.discriminator, Discriminator(DiscriminatorKind::tiny, 3));
}

TEST(RefinerTrainer, ResumeReplaysTheUninterruptedRun) {
  const auto dir = testing::make_temp_dir("resume");
  const Corpus c = toy_corpus(3, 32);
  const GanConfig g = small_gan(10);
  RefinerTrainer full(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), g);
  full.train(c.targets, c.triples);

  RefinerTrainer part(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), g);
  part.train(c.targets, c.triples, 4);
  EXPECT_EQ(part.step(), 4);
  part.save_checkpoint(dir / "ck.bin");
  RefinerTrainer resumed = RefinerTrainer::load_checkpoint(dir / "ck.bin", g);
  EXPECT_EQ(resumed.step(), 4);
  resumed.train(c.targets, c.triples);

  EXPECT_EQ(resumed.model(), full.model());
  EXPECT_EQ(resumed.discriminator(), full.discriminator());
  write_curves_csv(full.curves(), dir / "a.csv");
  write_curves_csv(resumed.curves(), dir / "b.csv");
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
}

TEST(RefinerTrainer, CheckpointRoundTripAndValidation) {
  const auto dir = testing::make_temp_dir("checkpoint");
  const Corpus c = toy_corpus(2, 32);
  const GanConfig g = small_gan(3);
  RefinerTrainer t(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), g);
  t.train(c.targets, c.triples);
  t.save_checkpoint(dir / "ck.bin");
  EXPECT_FALSE(std::filesystem::exists(dir / "ck.bin.tmp"));
  EXPECT_EQ(load_refiner(dir / "ck.bin"), t.model());
  const RefinerTrainer back = RefinerTrainer::load_checkpoint(dir / "ck.bin", g);
  EXPECT_EQ(back.curves().size(), t.curves().size());
  GanConfig other = g;
  other.seed = 4;
  EXPECT_THROW(RefinerTrainer::load_checkpoint(dir / "ck.bin", other), Error);
  std::ofstream(dir / "junk.bin") << "junk";
  EXPECT_THROW(load_refiner(dir / "junk.bin"), Error);
}

TEST(RefinerTrainer, RejectsBadInputs) {
  GanConfig g = small_gan(1);
  g.crop_size = 4;
  EXPECT_THROW(RefinerTrainer(RefinerModel::identity(1), Discriminator(DiscriminatorKind::tiny, 1), g), Error);
  RefinerTrainer t(RefinerModel::identity(1), Discriminator(DiscriminatorKind::tiny, 1), small_gan(1));
  EXPECT_THROW(t.train({}, {}), Error);
  const std::vector<Image> targets = {Image(32, 32, 0.5)};
  const std::vector<ScaleTriple> bad = {{Image(32, 32), Image(32, 31), Image(32, 32)}};
  EXPECT_THROW(t.train(targets, bad), Error);
}

TEST(RefinerTrainer, IndistinguishableClassesStayAtChance) {
  // Targets and triples come from the same generator, so no critic can beat chance.
  std::vector<Image> targets, held_real, held_fake;
  std::vector<ScaleTriple> triples;
  for (int i = 0; i < 8; ++i) {
    targets.push_back(testing::random_texture(32, 32, 700 + i));
    const Image t = testing::random_texture(32, 32, 800 + i);
    triples.push_back({t, t, t});
  }
  GanConfig g = small_gan(100);
  g.crop_size = 32;
  g.batch_size = 4;
  const TrainResult r =
      train_refiner(RefinerModel::identity(3), Discriminator(DiscriminatorKind::tiny, 3), targets, triples, g);
  for (int i = 0; i < 100; ++i) {
    held_real.push_back(testing::random_texture(32, 32, 2000 + i));
    const Image t = testing::random_texture(32, 32, 3000 + i);
    held_fake.push_back(fuse_and_refine(t, t, t, r.model));
  }
  const double acc = discriminator_accuracy(r.discriminator, held_real, held_fake);
  EXPECT_GE(acc, 0.4);
  EXPECT_LE(acc, 0.6);
}

}  // namespace
}  // namespace stylenorm
