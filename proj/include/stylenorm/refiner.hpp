#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stylenorm/discriminator.hpp"
#include "stylenorm/image.hpp"
#include "stylenorm/nn.hpp"

namespace stylenorm {

/// Learnable fusion of the three scale outputs followed by a stack of three
/// 1x1 convolutions (1 -> 16 -> 16 -> 1, ReLU after the first two).
struct RefinerModel {
  static constexpr int kHidden = 16;

  std::array<double, 3> fusion_weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::vector<double> w1 = std::vector<double>(kHidden, 0.0);
  std::vector<double> b1 = std::vector<double>(kHidden, 0.0);
  std::vector<double> w2 = std::vector<double>(kHidden * kHidden, 0.0);  // [out][in]
  std::vector<double> b2 = std::vector<double>(kHidden, 0.0);
  std::vector<double> w3 = std::vector<double>(kHidden, 0.0);
  double b3 = 0.0;
  /// Re-normalise fusion weights to sum to one after each training update.
  bool normalize_fusion = true;

  /// r(x) == x exactly for x >= 0; hidden channels 1..15 are seeded random
  /// but carry zero weight into the output.
  static RefinerModel identity(std::uint64_t seed);

  /// The 1x1 stack applied to one fused value.
  double refine(double fused) const;

  std::size_t parameter_count() const { return 3 + w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1; }
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
  /// sha256 over the parameter bytes.
  std::string digest() const;

  bool operator==(const RefinerModel&) const = default;
};

/// Convex combination of equally shaped images. Written as
/// (sum w) * a_0 + sum_k w_k (a_k - a_0) so identical inputs reproduce exactly
/// whenever the weights sum to one.
Image weighted_fusion(std::span<const Image* const> images, std::span<const double> weights);

/// M_out = r(w0 S0 + w1 S1 + w2 S2).
Image fuse_and_refine(const Image& s0, const Image& s1, const Image& s2, const RefinerModel& model);

struct ScaleTriple {
  Image s0, s1, s2;
};

struct GanConfig {
  int steps = 1000;
  int batch_size = 4;
  int crop_size = 256;
  double learning_rate_refiner = 1e-3;
  double learning_rate_discriminator = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// Discriminator-only updates before the refiner starts moving.
  int warmup_steps = 0;
  int log_every = 1;
  std::uint64_t seed = 0;
};

/// One logged training step. g_term is log(1 - D(R(S0,S1,S2))) averaged over
/// the batch before that step's updates; d_loss is -(log D(real) + g_term).
struct CurvePoint {
  int step = 0;
  double d_loss = 0.0;
  double g_term = 0.0;
};

/// Alternating adversarial training of the refiner against a discriminator.
/// The refiner optimises the non-saturating objective -log D(R(.)); the
/// reported curve follows the minimax value above. Step t draws its batch from
/// an RNG seeded by (seed, t), so a run stopped and resumed from a checkpoint
/// replays exactly.
class RefinerTrainer {
 public:
  RefinerTrainer(RefinerModel model, Discriminator disc, GanConfig config);

  /// Runs until `config.steps` or until `max_steps` more steps were taken.
  void train(std::span<const Image> real_targets, std::span<const ScaleTriple> triples, int max_steps = -1);

  const RefinerModel& model() const { return model_; }
  const Discriminator& discriminator() const { return disc_; }
  const std::vector<CurvePoint>& curves() const { return curves_; }
  int step() const { return step_; }
  const GanConfig& config() const { return config_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores model, discriminator, optimiser state, step and curves.
  static RefinerTrainer load_checkpoint(const std::filesystem::path& path, GanConfig config);

 private:
  RefinerModel model_;
  Discriminator disc_;
  GanConfig config_;
  nn::Adam opt_refiner_;
  nn::Adam opt_disc_;
  int step_ = 0;
  std::vector<CurvePoint> curves_;
};

/// Stateless convenience wrapper; curves are returned alongside the model.
struct TrainResult {
  RefinerModel model;
  Discriminator discriminator;
  std::vector<CurvePoint> curves;
};
TrainResult train_refiner(RefinerModel model, Discriminator disc, std::span<const Image> real_targets,
                          std::span<const ScaleTriple> triples, const GanConfig& config);

/// Reads only the refiner part of a training checkpoint.
RefinerModel load_refiner(const std::filesystem::path& checkpoint);

/// Writes "step,d_loss,g_term" rows.
void write_curves_csv(const std::vector<CurvePoint>& curves, const std::filesystem::path& path);

/// Fraction of correctly classified samples (D > 0.5 means real).
double discriminator_accuracy(const Discriminator& disc, std::span<const Image> real, std::span<const Image> fake);

/// Random crop of side `size` (the whole image when it is smaller).
Image random_crop(const Image& img, int size, std::mt19937_64& rng, int* row = nullptr, int* col = nullptr);

}  // namespace stylenorm
