#include "stylenorm/metrics.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numeric>

#include "stylenorm/digest.hpp"
#include "stylenorm/styleloss.hpp"

namespace stylenorm {

namespace {

void check_bit_depth(int bit_depth) {
  if (bit_depth < 1 || bit_depth > 16) throw Error("bit depth must be in [1,16]");
}

// Box mean of the given radius with edge clamping.
std::vector<double> box_mean(const std::vector<std::uint32_t>& v, int h, int w, int radius) {
  std::vector<double> out(v.size());
  const double inv = 1.0 / double((2 * radius + 1) * (2 * radius + 1));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint64_t s = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -radius; dx <= radius; ++dx) s += v[std::size_t(yy) * w + std::clamp(x + dx, 0, w - 1)];
      }
      out[std::size_t(y) * w + x] = double(s) * inv;
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint32_t> quantize(const Image& img, int bit_depth) {
  check_bit_depth(bit_depth);
  const double top = double((1u << bit_depth) - 1);
  std::vector<std::uint32_t> q(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!std::isfinite(img[i])) throw Error("cannot quantize non-finite pixels");
    q[i] = std::uint32_t(std::lround(std::clamp(img[i], 0.0, 1.0) * top));
  }
  return q;
}

Image dequantize(const std::vector<std::uint32_t>& levels, int height, int width, int bit_depth) {
  check_bit_depth(bit_depth);
  if (levels.size() != std::size_t(height) * width) throw Error("dequantize: size mismatch");
  const double top = double((1u << bit_depth) - 1);
  Image out(height, width);
  for (std::size_t i = 0; i < levels.size(); ++i) out[i] = double(levels[i]) / top;
  return out;
}

std::vector<std::uint64_t> level_histogram(const Image& img, int bit_depth) {
  std::vector<std::uint64_t> h(std::size_t(1) << bit_depth, 0);
  for (std::uint32_t q : quantize(img, bit_depth)) ++h[q];
  return h;
}

std::vector<std::uint32_t> ehm_levels(const std::vector<std::uint32_t>& source, int height, int width,
                                      const std::vector<std::uint32_t>& reference) {
  if (source.size() != std::size_t(height) * width) throw Error("ehm: source size does not match its shape");
  if (reference.size() != source.size()) throw Error("ehm: source and reference pixel counts differ");
  const auto m3 = box_mean(source, height, width, 1);
  const auto m5 = box_mean(source, height, width, 2);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (source[a] != source[b]) return source[a] < source[b];
    if (m3[a] != m3[b]) return m3[a] < m3[b];
    if (m5[a] != m5[b]) return m5[a] < m5[b];
    return a < b;
  });
  std::vector<std::uint32_t> sorted_ref = reference;
  std::sort(sorted_ref.begin(), sorted_ref.end());
  std::vector<std::uint32_t> out(source.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = sorted_ref[k];
  return out;
}

Image ehm(const Image& source, const Image& reference, int bit_depth) {
  if (source.empty() || reference.empty()) throw Error("ehm: empty image");
  const Image ref = reference.same_shape(source) ? reference
                                                 : resize_bilinear(reference, source.height(), source.width());
  const auto out = ehm_levels(quantize(source, bit_depth), source.height(), source.width(), quantize(ref, bit_depth));
  return dequantize(out, source.height(), source.width(), bit_depth);
}

double gram_distance(const Image& a, std::span<const Image> b_set, const Extractor& extractor) {
  if (b_set.empty()) throw Error("gram_distance: empty comparison set");
  const int n = extractor.spec().input_size;
  const auto& layers = extractor.spec().style_layers;
  auto grams = [&](const Image& img) {
    const Image in = img.height() == n && img.width() == n ? img : resize_bilinear(img, n, n);
    return gram_set(extractor.extract(in), layers);
  };
  const GramSet ga = grams(a);
  const LayerWeights ones(layers.size(), 1.0);
  double sum = 0.0;
  for (const Image& b : b_set) sum += style_loss_single(ga, grams(b), ones);
  return sum / double(b_set.size());
}

QualityScorer::QualityScorer(std::filesystem::path executable, std::chrono::milliseconds timeout)
    : exe_(std::move(executable)), timeout_(timeout) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(exe_, ec)) throw Error("quality scorer not found: " + exe_.string());
  if (::access(exe_.c_str(), X_OK) != 0) throw Error("quality scorer is not executable: " + exe_.string());
  if (timeout_.count() <= 0) throw Error("quality scorer timeout must be positive");
  digest_ = sha256_file(exe_);
}

double QualityScorer::score(const std::filesystem::path& image) const {
  // One child at a time per scorer instance.
  static std::mutex serial;
  std::lock_guard lock(serial);

  int fds[2];
  if (::pipe(fds) != 0) throw Error(std::string("pipe failed: ") + std::strerror(errno));
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw Error(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[0]);
    ::close(fds[1]);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    const std::string exe = exe_.string(), arg = image.string();
    ::execl(exe.c_str(), exe.c_str(), arg.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);

  std::string output;
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  bool timed_out = false;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd p{fds[0], POLLIN, 0};
    const int r = ::poll(&p, 1, int(std::min<long long>(left.count(), 1000000)));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) continue;
    char buf[4096];
    const ssize_t n = ::read(fds[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, std::size_t(n));
  }
  ::close(fds[0]);
  if (timed_out) ::kill(pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out) throw Error("quality scorer timed out on " + image.string());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error("quality scorer failed on " + image.string() + " (exit status " +
                std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) + ")");
  }
  const auto first = output.find_first_not_of(" \t\r\n");
  const auto last = output.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) throw Error("quality scorer printed nothing for " + image.string());
  const std::string text = output.substr(first, last - first + 1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw Error("quality scorer output is not a single number: '" + text + "'");
  }
  return value;
}

double score_quality(const std::filesystem::path& image, const QualityScorer& scorer) { return scorer.score(image); }

}  // namespace stylenorm
