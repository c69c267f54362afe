#include "stylenorm/dicom.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "stylenorm/image.hpp"

namespace stylenorm::dicom {

namespace {

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;
constexpr char kImplicitLE[] = "1.2.840.10008.1.2";
constexpr char kExplicitLE[] = "1.2.840.10008.1.2.1";

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (std::uint32_t(group) << 16) | element;
}

bool long_form_vr(const char vr[2]) {
  static constexpr const char* kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "UC", "UN", "UR", "UT"};
  return std::any_of(std::begin(kLong), std::end(kLong),
                     [&](const char* v) { return vr[0] == v[0] && vr[1] == v[1]; });
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  bool done() const { return pos_ >= buf_.size(); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint8_t(buf_[pos_]) | (std::uint16_t(std::uint8_t(buf_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t lo = u16();
    std::uint32_t hi = u16();
    return lo | (hi << 16);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error("DICOM: truncated file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

struct Element {
  std::uint32_t tag;
  char vr[2];
  std::uint32_t length;
};

Element read_header(Reader& r, bool explicit_vr) {
  Element e{};
  std::uint16_t g = r.u16();
  std::uint16_t el = r.u16();
  e.tag = tag(g, el);
  // Item and delimitation tags never carry a VR.
  if (g == 0xFFFE) {
    e.vr[0] = e.vr[1] = 0;
    e.length = r.u32();
    return e;
  }
  if (explicit_vr) {
    auto vr = r.bytes(2);
    e.vr[0] = vr[0];
    e.vr[1] = vr[1];
    if (long_form_vr(e.vr)) {
      r.skip(2);
      e.length = r.u32();
    } else {
      e.length = r.u16();
    }
  } else {
    e.vr[0] = e.vr[1] = 0;
    e.length = r.u32();
  }
  return e;
}

// Skips an undefined-length sequence or item body up to its delimiter.
void skip_undefined(Reader& r, bool explicit_vr) {
  while (!r.done()) {
    Element e = read_header(r, explicit_vr);
    if (e.tag == tag(0xFFFE, 0xE0DD)) return;  // sequence delimiter
    if (e.tag == tag(0xFFFE, 0xE00D)) return;  // item delimiter
    if (e.length == kUndefinedLength) {
      skip_undefined(r, explicit_vr);
    } else if (e.tag == tag(0xFFFE, 0xE000)) {
      r.skip(e.length);
    } else {
      r.skip(e.length);
    }
  }
  throw Error("DICOM: unterminated sequence");
}

std::uint16_t value_u16(Reader& r, const Element& e) {
  if (e.length < 2) throw Error("DICOM: short US element");
  std::uint16_t v = r.u16();
  r.skip(e.length - 2);
  return v;
}

}  // namespace

bool is_dicom(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char buf[132];
  in.read(buf, sizeof(buf));
  return in.gcount() == 132 && std::memcmp(buf + 128, "DICM", 4) == 0;
}

Frame read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0) {
    throw Error(path.string() + ": not a DICOM part-10 file");
  }
  Reader r(std::move(bytes));
  r.seek(132);

  Frame f;
  std::string transfer_syntax = kExplicitLE;
  int samples_per_pixel = 1, bits_allocated = 0, pixel_representation = 0, frames = 1;
  std::string photometric = "MONOCHROME2";
  bool explicit_vr = true;
  bool in_meta = true;
  std::vector<std::uint8_t> pixel_bytes;

  while (!r.done()) {
    std::size_t start = r.pos();
    std::uint16_t group = r.u16();
    r.seek(start);
    if (in_meta && group != 0x0002) {
      in_meta = false;
      transfer_syntax = trim(transfer_syntax);
      if (transfer_syntax == kImplicitLE) {
        explicit_vr = false;
      } else if (transfer_syntax == kExplicitLE) {
        explicit_vr = true;
      } else {
        throw Error(path.string() + ": unsupported transfer syntax " + transfer_syntax);
      }
    }
    Element e = read_header(r, in_meta ? true : explicit_vr);
    if (e.length == kUndefinedLength) {
      if (e.tag == tag(0x7FE0, 0x0010)) throw Error(path.string() + ": encapsulated pixel data not supported");
      skip_undefined(r, explicit_vr);
      continue;
    }
    switch (e.tag) {
      case tag(0x0002, 0x0010): transfer_syntax = r.bytes(e.length); break;
      case tag(0x0008, 0x0070): f.manufacturer = trim(r.bytes(e.length)); break;
      case tag(0x0018, 0x5101): f.view_position = trim(r.bytes(e.length)); break;
      case tag(0x0028, 0x0002): samples_per_pixel = value_u16(r, e); break;
      case tag(0x0028, 0x0004): photometric = trim(r.bytes(e.length)); break;
      case tag(0x0028, 0x0008): frames = std::stoi("0" + trim(r.bytes(e.length))); break;
      case tag(0x0028, 0x0010): f.rows = value_u16(r, e); break;
      case tag(0x0028, 0x0011): f.columns = value_u16(r, e); break;
      case tag(0x0028, 0x0100): bits_allocated = value_u16(r, e); break;
      case tag(0x0028, 0x0101): f.bits_stored = value_u16(r, e); break;
      case tag(0x0028, 0x0103): pixel_representation = value_u16(r, e); break;
      case tag(0x7FE0, 0x0010): {
        auto raw = r.bytes(e.length);
        pixel_bytes.assign(raw.begin(), raw.end());
        break;
      }
      default: r.skip(e.length); break;
    }
  }

  const std::string where = path.string() + ": ";
  if (samples_per_pixel != 1 || (photometric != "MONOCHROME1" && photometric != "MONOCHROME2")) {
    throw Error(where + "colour DICOM images are not supported");
  }
  if (frames > 1) throw Error(where + "multi-frame DICOM is not supported");
  if (pixel_representation != 0) throw Error(where + "signed pixel data is not supported");
  if (f.rows <= 0 || f.columns <= 0) throw Error(where + "missing image dimensions");
  if (bits_allocated != 8 && bits_allocated != 16) throw Error(where + "unsupported BitsAllocated");
  if (f.bits_stored <= 0 || f.bits_stored > bits_allocated) f.bits_stored = bits_allocated;
  f.monochrome1 = photometric == "MONOCHROME1";

  const std::size_t count = std::size_t(f.rows) * f.columns;
  const std::size_t bytes_per = bits_allocated / 8;
  if (pixel_bytes.size() < count * bytes_per) throw Error(where + "pixel data shorter than Rows*Columns");
  const std::uint16_t mask = std::uint16_t((1u << f.bits_stored) - 1u);
  f.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint16_t v = bytes_per == 1 ? pixel_bytes[i]
                                     : std::uint16_t(pixel_bytes[2 * i] | (pixel_bytes[2 * i + 1] << 8));
    f.samples[i] = v & mask;
  }
  return f;
}

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) {
    out_.push_back(char(v & 0xff));
    out_.push_back(char(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(std::uint16_t(v & 0xffff));
    u16(std::uint16_t(v >> 16));
  }
  void raw(const std::string& s) { out_.append(s); }

  void element(std::uint16_t g, std::uint16_t e, const char* vr, const std::string& value) {
    std::string v = value;
    if (v.size() % 2) v.push_back(std::string_view(vr) == "UI" ? '\0' : ' ');
    u16(g);
    u16(e);
    raw(std::string(vr, 2));
    if (long_form_vr(vr)) {
      u16(0);
      u32(std::uint32_t(v.size()));
    } else {
      u16(std::uint16_t(v.size()));
    }
    raw(v);
  }
  void us(std::uint16_t g, std::uint16_t e, std::uint16_t v) {
    std::string s{char(v & 0xff), char(v >> 8)};
    element(g, e, "US", s);
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

}  // namespace

void write(const std::filesystem::path& path, const Frame& frame) {
  if (frame.samples.size() != std::size_t(frame.rows) * frame.columns) {
    throw Error("DICOM write: sample count does not match dimensions");
  }
  Writer meta;
  meta.element(0x0002, 0x0010, "UI", kExplicitLE);

  Writer w;
  w.raw(std::string(128, '\0'));
  w.raw("DICM");
  w.element(0x0002, 0x0000, "UL", std::string{char(meta.buffer().size() & 0xff), char((meta.buffer().size() >> 8) & 0xff), 0, 0});
  w.raw(meta.buffer());
  if (frame.manufacturer) w.element(0x0008, 0x0070, "LO", *frame.manufacturer);
  if (frame.view_position) w.element(0x0018, 0x5101, "CS", *frame.view_position);
  w.us(0x0028, 0x0002, 1);
  w.element(0x0028, 0x0004, "CS", frame.monochrome1 ? "MONOCHROME1" : "MONOCHROME2");
  w.us(0x0028, 0x0010, std::uint16_t(frame.rows));
  w.us(0x0028, 0x0011, std::uint16_t(frame.columns));
  w.us(0x0028, 0x0100, 16);
  w.us(0x0028, 0x0101, std::uint16_t(frame.bits_stored));
  w.us(0x0028, 0x0102, std::uint16_t(frame.bits_stored - 1));
  w.us(0x0028, 0x0103, 0);
  std::string pixels;
  pixels.reserve(frame.samples.size() * 2);
  for (auto v : frame.samples) {
    pixels.push_back(char(v & 0xff));
    pixels.push_back(char(v >> 8));
  }
  w.element(0x7FE0, 0x0010, "OW", pixels);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(w.buffer().data(), std::streamsize(w.buffer().size()));
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace stylenorm::dicom
