#include "stylenorm/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stylenorm/digest.hpp"

namespace stylenorm {

RefinerModel RefinerModel::identity(std::uint64_t seed) {
  RefinerModel m;
  auto rng = nn::make_rng(seed, 0x4ef1);
  const double bound2 = std::sqrt(3.0 / kHidden);
  for (int k = 1; k < kHidden; ++k) {
    m.w1[k] = nn::uniform(rng, -1.0, 1.0);
    m.b1[k] = nn::uniform(rng, -0.5, 0.5);
  }
  m.w1[0] = 1.0;
  for (int j = 1; j < kHidden; ++j) {
    for (int k = 0; k < kHidden; ++k) m.w2[j * kHidden + k] = nn::uniform(rng, -bound2, bound2);
    m.b2[j] = nn::uniform(rng, -0.1, 0.1);
  }
  m.w2[0] = 1.0;
  m.w3[0] = 1.0;
  return m;
}

double RefinerModel::refine(double u) const {
  double h1[kHidden];
  for (int k = 0; k < kHidden; ++k) h1[k] = std::max(0.0, w1[k] * u + b1[k]);
  double y = 0.0;
  for (int j = 0; j < kHidden; ++j) {
    double a = 0.0;
    const double* row = &w2[j * kHidden];
    for (int k = 0; k < kHidden; ++k) a += row[k] * h1[k];
    a += b2[j];
    y += w3[j] * std::max(0.0, a);
  }
  return y + b3;
}

std::vector<double> RefinerModel::parameters() const {
  std::vector<double> p(fusion_weights.begin(), fusion_weights.end());
  for (const auto* v : {&w1, &b1, &w2, &b2, &w3}) p.insert(p.end(), v->begin(), v->end());
  p.push_back(b3);
  return p;
}

void RefinerModel::set_parameters(std::span<const double> p) {
  if (p.size() != parameter_count()) throw Error("refiner parameter count mismatch");
  std::size_t at = 0;
  for (auto& w : fusion_weights) w = p[at++];
  for (auto* v : {&w1, &b1, &w2, &b2, &w3}) {
    std::copy_n(p.begin() + at, v->size(), v->begin());
    at += v->size();
  }
  b3 = p[at];
}

std::string RefinerModel::digest() const {
  const auto p = parameters();
  return sha256_hex(std::as_bytes(std::span(p)));
}

Image weighted_fusion(std::span<const Image* const> images, std::span<const double> weights) {
  if (images.empty() || images.size() != weights.size()) throw Error("fusion: one weight per image expected");
  const Image& base = *images[0];
  for (const Image* im : images) {
    if (!im->same_shape(base)) throw Error("fusion: image shapes differ");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  Image out(base.height(), base.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = wsum * base[i];
    for (std::size_t k = 1; k < images.size(); ++k) v += weights[k] * ((*images[k])[i] - base[i]);
    out[i] = v;
  }
  return out;
}

Image fuse_and_refine(const Image& s0, const Image& s1, const Image& s2, const RefinerModel& model) {
  const Image* imgs[] = {&s0, &s1, &s2};
  Image out = weighted_fusion(imgs, model.fusion_weights);
  for (auto& v : out.values()) v = model.refine(v);
  return out;
}

Image random_crop(const Image& img, int size, std::mt19937_64& rng, int* row, int* col) {
  const int h = std::min(size, img.height()), w = std::min(size, img.width());
  const int r = int(nn::uniform(rng, 0.0, double(img.height() - h + 1)));
  const int c = int(nn::uniform(rng, 0.0, double(img.width() - w + 1)));
  if (row) *row = r;
  if (col) *col = c;
  return crop(img, r, c, h, w);
}

namespace {

// Gradient of a scalar loss through fuse_and_refine for one crop.
void refiner_backward(const RefinerModel& m, const Image* s[3], const Image& grad_out, std::span<double> grad) {
  constexpr int H = RefinerModel::kHidden;
  const std::size_t o_w1 = 3, o_b1 = o_w1 + H, o_w2 = o_b1 + H, o_b2 = o_w2 + H * H, o_w3 = o_b2 + H,
                    o_b3 = o_w3 + H;
  const Image* imgs[] = {s[0], s[1], s[2]};
  const Image fused = weighted_fusion(imgs, m.fusion_weights);
  double h1[H], h2[H], gh2[H], gh1[H];
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const double gy = grad_out[i];
    if (gy == 0.0) continue;
    const double u = fused[i];
    for (int k = 0; k < H; ++k) h1[k] = std::max(0.0, m.w1[k] * u + m.b1[k]);
    for (int j = 0; j < H; ++j) {
      double a = m.b2[j];
      for (int k = 0; k < H; ++k) a += m.w2[j * H + k] * h1[k];
      h2[j] = std::max(0.0, a);
    }
    grad[o_b3] += gy;
    for (int j = 0; j < H; ++j) {
      grad[o_w3 + j] += gy * h2[j];
      gh2[j] = h2[j] > 0.0 ? gy * m.w3[j] : 0.0;
      grad[o_b2 + j] += gh2[j];
    }
    for (int k = 0; k < H; ++k) {
      double acc = 0.0;
      for (int j = 0; j < H; ++j) {
        grad[o_w2 + j * H + k] += gh2[j] * h1[k];
        acc += gh2[j] * m.w2[j * H + k];
      }
      gh1[k] = h1[k] > 0.0 ? acc : 0.0;
    }
    double gu = 0.0;
    for (int k = 0; k < H; ++k) {
      grad[o_w1 + k] += gh1[k] * u;
      grad[o_b1 + k] += gh1[k];
      gu += gh1[k] * m.w1[k];
    }
    for (int n = 0; n < 3; ++n) grad[n] += gu * (*s[n])[i];
  }
}

constexpr char kCheckpointMagic[4] = {'S', 'N', 'R', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("refiner checkpoint truncated");
  return v;
}
void put_vec(std::ostream& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
}
std::vector<double> get_vec(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (std::uint64_t(1) << 32)) throw Error("refiner checkpoint corrupt");
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)))) {
    throw Error("refiner checkpoint truncated");
  }
  return v;
}

struct CheckpointData {
  std::vector<double> refiner;
  bool normalize_fusion = true;
  DiscriminatorKind kind = DiscriminatorKind::tiny;
  std::uint64_t seed = 0;
  std::vector<double> disc;
  std::int32_t step = 0;
  std::int64_t refiner_t = 0, disc_t = 0;
  std::vector<double> rm, rv, dm, dv;
  std::vector<CurvePoint> curves;
};

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open refiner checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw Error(path.string() + ": not a refiner checkpoint");
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw Error(path.string() + ": unsupported checkpoint version");
  CheckpointData d;
  d.refiner = get_vec(in);
  d.normalize_fusion = get<std::uint8_t>(in) != 0;
  d.kind = DiscriminatorKind(get<std::uint32_t>(in));
  d.seed = get<std::uint64_t>(in);
  d.disc = get_vec(in);
  d.step = get<std::int32_t>(in);
  d.refiner_t = get<std::int64_t>(in);
  d.rm = get_vec(in);
  d.rv = get_vec(in);
  d.disc_t = get<std::int64_t>(in);
  d.dm = get_vec(in);
  d.dv = get_vec(in);
  const auto n = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    CurvePoint c;
    c.step = get<std::int32_t>(in);
    c.d_loss = get<double>(in);
    c.g_term = get<double>(in);
    d.curves.push_back(c);
  }
  return d;
}

}  // namespace

RefinerTrainer::RefinerTrainer(RefinerModel model, Discriminator disc, GanConfig config)
    : model_(std::move(model)), disc_(std::move(disc)), config_(config),
      opt_refiner_(model_.parameter_count(), config.learning_rate_refiner, config.beta1, config.beta2),
      opt_disc_(disc_.parameter_count(), config.learning_rate_discriminator, config.beta1, config.beta2) {
  if (config_.steps < 0 || config_.batch_size < 1 || config_.crop_size < 8 || config_.log_every < 1 ||
      config_.warmup_steps < 0) {
    throw Error("invalid refiner training configuration");
  }
}

void RefinerTrainer::train(std::span<const Image> real, std::span<const ScaleTriple> triples, int max_steps) {
  if (real.empty() || triples.empty()) throw Error("refiner training needs target images and scale triples");
  for (const auto& t : triples) {
    if (!t.s0.same_shape(t.s1) || !t.s0.same_shape(t.s2)) throw Error("scale triple images differ in shape");
  }
  const int stop = max_steps < 0 ? config_.steps : std::min(config_.steps, step_ + max_steps);
  const std::size_t np_d = disc_.parameter_count();
  const std::size_t np_r = model_.parameter_count();

  for (; step_ < stop; ++step_) {
    auto rng = nn::make_rng(config_.seed, 0x1000 + std::uint64_t(step_));
    struct FakeCrop {
      Image s[3];
    };
    std::vector<Image> real_crops;
    std::vector<FakeCrop> fakes;
    for (int b = 0; b < config_.batch_size; ++b) {
      const auto& target = real[std::size_t(nn::uniform(rng, 0.0, double(real.size())))];
      real_crops.push_back(random_crop(target, config_.crop_size, rng));
      const auto& t = triples[std::size_t(nn::uniform(rng, 0.0, double(triples.size())))];
      int r = 0, c = 0;
      FakeCrop f;
      f.s[0] = random_crop(t.s0, config_.crop_size, rng, &r, &c);
      f.s[1] = crop(t.s1, r, c, f.s[0].height(), f.s[0].width());
      f.s[2] = crop(t.s2, r, c, f.s[0].height(), f.s[0].width());
      fakes.push_back(std::move(f));
    }
    const double inv_b = 1.0 / config_.batch_size;

    // Discriminator ascent on log D(real) + log(1 - D(R(.))).
    std::vector<double> grad_d(np_d, 0.0);
    double log_real = 0.0, g_term = 0.0;
    for (int b = 0; b < config_.batch_size; ++b) {
      Discriminator::Tape tape;
      const double zr = disc_.forward(real_crops[b], tape);
      log_real += nn::log_sigmoid(zr) * inv_b;
      disc_.backward(tape, (nn::sigmoid(zr) - 1.0) * inv_b, grad_d);

      const Image refined = fuse_and_refine(fakes[b].s[0], fakes[b].s[1], fakes[b].s[2], model_);
      const double zf = disc_.forward(refined, tape);
      g_term += nn::log_sigmoid(-zf) * inv_b;
      disc_.backward(tape, nn::sigmoid(zf) * inv_b, grad_d);
    }
    for (double g : grad_d) {
      if (!std::isfinite(g)) throw Error("refiner training diverged at step " + std::to_string(step_));
    }
    if (step_ % config_.log_every == 0) curves_.push_back({step_, -(log_real + g_term), g_term});
    auto pd = disc_.parameters();
    opt_disc_.step(pd, grad_d);
    disc_.set_parameters(pd);

    if (step_ < config_.warmup_steps) continue;

    // Refiner descent on -log D(R(.)).
    std::vector<double> grad_r(np_r, 0.0);
    std::vector<double> scratch(np_d, 0.0);
    for (int b = 0; b < config_.batch_size; ++b) {
      const Image refined = fuse_and_refine(fakes[b].s[0], fakes[b].s[1], fakes[b].s[2], model_);
      Discriminator::Tape tape;
      const double zf = disc_.forward(refined, tape);
      const Image g_img = disc_.backward(tape, (nn::sigmoid(zf) - 1.0) * inv_b, scratch);
      const Image* s[3] = {&fakes[b].s[0], &fakes[b].s[1], &fakes[b].s[2]};
      refiner_backward(model_, s, g_img, grad_r);
    }
    for (double g : grad_r) {
      if (!std::isfinite(g)) throw Error("refiner training diverged at step " + std::to_string(step_));
    }
    auto pr = model_.parameters();
    opt_refiner_.step(pr, grad_r);
    model_.set_parameters(pr);
    if (model_.normalize_fusion) {
      double sum = 0.0;
      for (double w : model_.fusion_weights) sum += w;
      if (std::abs(sum) > 1e-12) {
        for (double& w : model_.fusion_weights) w /= sum;
      }
    }
  }
}

void RefinerTrainer::save_checkpoint(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_vec(out, model_.parameters());
    put<std::uint8_t>(out, model_.normalize_fusion ? 1 : 0);
    put<std::uint32_t>(out, std::uint32_t(disc_.kind()));
    put<std::uint64_t>(out, config_.seed);
    put_vec(out, disc_.parameters());
    put<std::int32_t>(out, step_);
    put<std::int64_t>(out, opt_refiner_.steps_taken());
    put_vec(out, opt_refiner_.first_moment());
    put_vec(out, opt_refiner_.second_moment());
    put<std::int64_t>(out, opt_disc_.steps_taken());
    put_vec(out, opt_disc_.first_moment());
    put_vec(out, opt_disc_.second_moment());
    put<std::uint64_t>(out, curves_.size());
    for (const auto& c : curves_) {
      put<std::int32_t>(out, c.step);
      put<double>(out, c.d_loss);
      put<double>(out, c.g_term);
    }
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RefinerTrainer RefinerTrainer::load_checkpoint(const std::filesystem::path& path, GanConfig config) {
  CheckpointData d = read_checkpoint(path);
  if (d.seed != config.seed) throw Error("checkpoint was trained with a different seed");
  RefinerModel model;
  model.set_parameters(d.refiner);
  model.normalize_fusion = d.normalize_fusion;
  Discriminator disc(d.kind, config.seed);
  disc.set_parameters(d.disc);
  RefinerTrainer t(std::move(model), std::move(disc), config);
  if (d.rm.size() != t.opt_refiner_.first_moment().size() || d.dm.size() != t.opt_disc_.first_moment().size()) {
    throw Error("checkpoint optimiser state does not match the model");
  }
  t.step_ = d.step;
  t.opt_refiner_.set_steps_taken(d.refiner_t);
  t.opt_refiner_.first_moment() = d.rm;
  t.opt_refiner_.second_moment() = d.rv;
  t.opt_disc_.set_steps_taken(d.disc_t);
  t.opt_disc_.first_moment() = d.dm;
  t.opt_disc_.second_moment() = d.dv;
  t.curves_ = std::move(d.curves);
  return t;
}

TrainResult train_refiner(RefinerModel model, Discriminator disc, std::span<const Image> real,
                          std::span<const ScaleTriple> triples, const GanConfig& config) {
  RefinerTrainer t(std::move(model), std::move(disc), config);
  t.train(real, triples);
  return {t.model(), t.discriminator(), t.curves()};
}

RefinerModel load_refiner(const std::filesystem::path& checkpoint) {
  CheckpointData d = read_checkpoint(checkpoint);
  RefinerModel m;
  m.set_parameters(d.refiner);
  m.normalize_fusion = d.normalize_fusion;
  return m;
}

void write_curves_csv(const std::vector<CurvePoint>& curves, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,d_loss,g_term\n";
  out.precision(17);
  for (const auto& c : curves) out << c.step << ',' << c.d_loss << ',' << c.g_term << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

double discriminator_accuracy(const Discriminator& disc, std::span<const Image> real, std::span<const Image> fake) {
  if (real.empty() && fake.empty()) throw Error("no samples to classify");
  std::size_t correct = 0;
  for (const auto& x : real) correct += disc.logit(x) > 0.0 ? 1 : 0;
  for (const auto& x : fake) correct += disc.logit(x) <= 0.0 ? 1 : 0;
  return double(correct) / double(real.size() + fake.size());
}

}  // namespace stylenorm
