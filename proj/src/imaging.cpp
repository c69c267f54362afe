#include "stylenorm/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <queue>

#include "stylenorm/dicom.hpp"

namespace stylenorm {

std::string_view to_string(View v) { return v == View::CC ? "CC" : "MLO"; }

View parse_view(std::string_view s) {
  std::string up(s);
  for (auto& c : up) c = char(std::toupper(static_cast<unsigned char>(c)));
  if (up == "CC") return View::CC;
  if (up == "MLO") return View::MLO;
  throw Error("unknown view '" + std::string(s) + "' (expected CC or MLO)");
}

void validate(const Mammogram& m) {
  for (double v : m.pixels.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw Error("pixel outside [0,1] or non-finite");
  }
  if (m.breast_mask.height() != m.pixels.height() || m.breast_mask.width() != m.pixels.width()) {
    throw Error("breast mask shape differs from pixel shape");
  }
}

Mask compute_breast_mask(const Image& pixels) {
  const int h = pixels.height(), w = pixels.width();
  Mask mask(h, w);
  if (h == 0 || w == 0) return mask;

  // Label 4-connected foreground components, keep the largest (first on ties).
  std::vector<int> label(pixels.size(), 0);
  std::vector<std::int64_t> sizes{0};
  std::vector<int> stack;
  auto fg = [&](std::size_t i) { return pixels[i] > kBreastThreshold; };
  for (std::size_t start = 0; start < pixels.size(); ++start) {
    if (!fg(start) || label[start] != 0) continue;
    const int id = int(sizes.size());
    std::int64_t count = 0;
    stack.assign(1, int(start));
    label[start] = id;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      ++count;
      const int r = i / w, c = i % w;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (auto [nr, nc] : nbr) {
        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
        const int j = nr * w + nc;
        if (label[j] == 0 && fg(j)) {
          label[j] = id;
          stack.push_back(j);
        }
      }
    }
    sizes.push_back(count);
  }
  if (sizes.size() == 1) return mask;
  const int best = int(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());

  // Hole fill: background reachable from the border stays background.
  std::vector<std::uint8_t> outside(pixels.size(), 0);
  std::queue<int> q;
  auto seed = [&](int r, int c) {
    const int i = r * w + c;
    if (label[i] != best && !outside[i]) {
      outside[i] = 1;
      q.push(i);
    }
  };
  for (int c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  for (int r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    const int r = i / w, c = i % w;
    if (r > 0) seed(r - 1, c);
    if (r + 1 < h) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < w) seed(r, c + 1);
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) mask[i] = outside[i] ? 0 : 1;
  return mask;
}

Mammogram make_mammogram(Image pixels, View view, std::string vendor, int bit_depth, std::string id) {
  Mammogram m;
  m.breast_mask = compute_breast_mask(pixels);
  m.pixels = std::move(pixels);
  m.view = view;
  m.vendor = std::move(vendor);
  m.source_bit_depth = bit_depth;
  m.id = std::move(id);
  validate(m);
  return m;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawGray {
  int height = 0, width = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

RawGray read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(path.string() + ": unreadable image (not PNG or DICOM)");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialisation failed");
  }
  RawGray out;
  std::string failure;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) {
    failure = "colour images are not supported";
  } else {
    if (depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // little-endian host order
    png_read_update_info(png, info);
    out.height = int(png_get_image_height(png, info));
    out.width = int(png_get_image_width(png, info));
    out.bit_depth = depth;
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * out.height);
    rows.resize(out.height);
    for (int r = 0; r < out.height; ++r) rows[r] = buffer.data() + stride * r;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    out.samples.resize(std::size_t(out.height) * out.width);
    for (int r = 0; r < out.height; ++r) {
      for (int c = 0; c < out.width; ++c) {
        const std::size_t i = std::size_t(r) * out.width + c;
        out.samples[i] = depth == 16 ? std::uint16_t(rows[r][2 * c] | (rows[r][2 * c + 1] << 8)) : rows[r][c];
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!failure.empty()) throw Error(path.string() + ": " + failure);
  return out;
}

void write_png(const std::filesystem::path& path, int height, int width, int bit_depth,
               const std::vector<std::uint16_t>& samples) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  const std::size_t stride = std::size_t(width) * (bit_depth / 8);
  std::vector<png_byte> buffer(stride * height);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = buffer.data() + stride * r;
    for (int c = 0; c < width; ++c) {
      const std::uint16_t v = samples[std::size_t(r) * width + c];
      if (bit_depth == 16) {
        rows[r][2 * c] = png_byte(v >> 8);
        rows[r][2 * c + 1] = png_byte(v & 0xff);
      } else {
        rows[r][c] = png_byte(v);
      }
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw Error("failed writing " + path.string());
}

Image normalise(const std::vector<std::uint16_t>& samples, int height, int width, int bits, bool invert,
                const std::filesystem::path& path) {
  const double full = double((1u << bits) - 1u);
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (samples.empty() || *lo == *hi) throw Error(path.string() + ": zero-variance image");
  Image img(height, width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = samples[i] / full;
    img[i] = invert ? 1.0 - v : v;
  }
  return img;
}

}  // namespace

Mammogram load_image(const std::filesystem::path& path, const ImageHints& hints) {
  if (!std::filesystem::exists(path)) throw Error(path.string() + ": file does not exist");
  Image pixels;
  int bits = 0;
  std::optional<View> view = hints.view;
  std::optional<std::string> vendor = hints.vendor;
  if (dicom::is_dicom(path)) {
    dicom::Frame f = dicom::read(path);
    bits = f.bits_stored;
    pixels = normalise(f.samples, f.rows, f.columns, bits, f.monochrome1, path);
    if (f.view_position && !f.view_position->empty()) view = parse_view(*f.view_position);
    if (f.manufacturer && !f.manufacturer->empty()) vendor = *f.manufacturer;
  } else {
    RawGray raw = read_png(path);
    bits = raw.bit_depth;
    pixels = normalise(raw.samples, raw.height, raw.width, bits, false, path);
  }
  if (!view) throw Error(path.string() + ": view (CC/MLO) not in file and not supplied");
  if (!vendor) throw Error(path.string() + ": vendor not in file and not supplied");
  return make_mammogram(std::move(pixels), *view, *vendor, bits, path.stem().string());
}

void save_png(const Image& pixels, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("bit depth must be 8 or 16");
  const double full = double((1u << bit_depth) - 1u);
  std::vector<std::uint16_t> q(pixels.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = std::uint16_t(std::lround(std::clamp(pixels[i], 0.0, 1.0) * full));
  }
  write_png(path, pixels.height(), pixels.width(), bit_depth, q);
}

void save_image(const Mammogram& m, const std::filesystem::path& path, int bit_depth) {
  save_png(m.pixels, path, bit_depth);
}

}  // namespace stylenorm
