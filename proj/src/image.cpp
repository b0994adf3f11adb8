#include "bvap/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace bvap {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Image read_png(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.message);
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img{png.width, png.height, gray ? 1 : 3, {}};
  img.data.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < img.channels; ++c)
        img.at(c, y, x) = buf[(y * img.width + x) * img.channels + c] / 255.0;
  return img;
}

class PnmParser {
 public:
  PnmParser(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
      : path_(path), bytes_(bytes) {}

  Image parse() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') fail("not a PNG or PNM file");
    const char kind = static_cast<char>(bytes_[1]);
    pos_ = 2;
    const bool binary = kind == '5' || kind == '6';
    const std::int64_t channels = (kind == '3' || kind == '6') ? 3 : 1;
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') fail("unsupported PNM variant");
    Image img;
    img.width = number();
    img.height = number();
    const std::int64_t maxval = number();
    if (img.width < 1 || img.height < 1) fail("bad dimensions");
    if (maxval < 1 || maxval > 65535) fail("bad maxval");
    img.channels = channels;
    img.data.resize(static_cast<std::size_t>(img.width * img.height * channels));
    if (binary) ++pos_;  // single whitespace after maxval
    const std::size_t bps = maxval > 255 ? 2 : 1;
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        for (std::int64_t c = 0; c < channels; ++c) {
          std::int64_t v;
          if (binary) {
            if (pos_ + bps > bytes_.size()) fail("truncated pixel data");
            v = bps == 2 ? (bytes_[pos_] << 8) | bytes_[pos_ + 1] : bytes_[pos_];
            pos_ += bps;
          } else {
            v = number();
          }
          if (v > maxval) fail("sample exceeds maxval");
          img.at(c, y, x) = static_cast<double>(v) / static_cast<double>(maxval);
        }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("cannot decode " + path_.string() + ": " + what);
  }

  std::int64_t number() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header or data");
    std::int64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1 << 30)) fail("number too large");
    }
    return v;
  }

  const std::filesystem::path& path_;
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<unsigned char> interleave(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("image writers support 1 or 3 channels");
  std::vector<unsigned char> buf(img.data.size());
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < img.channels; ++c)
        buf[(y * img.width + x) * img.channels + c] = to_byte(img.at(c, y, x));
  return buf;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kSig, kSig + 8, bytes.begin())) return read_png(path, bytes);
  return PnmParser(path, bytes).parse();
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto buf = interleave(img);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  const auto buf = interleave(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << (img.channels == 1 ? "P5\n" : "P6\n") << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize target must be positive");
  if (width == img.width && height == img.height) return img;
  Image out{width, height, img.channels, {}};
  out.data.resize(static_cast<std::size_t>(width * height * img.channels));
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (std::int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (std::int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (std::int64_t c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace bvap
