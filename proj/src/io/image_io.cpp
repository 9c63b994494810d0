#include "msplat/io/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace msplat {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

bool host_is_little_endian() {
  const uint16_t probe = 1;
  return *reinterpret_cast<const uint8_t*>(&probe) == 1;
}

float byteswap_float(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  bits = ((bits & 0xff000000u) >> 24) | ((bits & 0x00ff0000u) >> 8) |
         ((bits & 0x0000ff00u) << 8) | ((bits & 0x000000ffu) << 24);
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string next_token(std::istream& in) {
  std::string token;
  in >> token;
  return token;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image load_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "PF") {
    channels = 3;
  } else if (magic == "Pf") {
    channels = 1;
  } else {
    fail(path, "not a PFM file");
  }
  int width = 0, height = 0;
  double scale = 0.0;
  if (!(in >> width >> height >> scale)) fail(path, "malformed PFM header");
  if (width <= 0 || height <= 0) fail(path, "invalid PFM dimensions");
  if (scale == 0.0) fail(path, "invalid PFM scale");
  in.get();  // single whitespace byte terminates the header

  const bool file_little = scale < 0.0;
  const bool swap = file_little != host_is_little_endian();
  Image image(height, width, channels);
  std::vector<float> row(static_cast<size_t>(width) * channels);
  // PFM rows run bottom-to-top.
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) fail(path, "truncated PFM data");
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        float v = row[static_cast<size_t>(x) * channels + c];
        if (swap) v = byteswap_float(v);
        image.at(y, x, c) = v;
      }
    }
  }
  return image;
}

void save_pfm(const std::string& path, const Image& image) {
  if (image.empty()) throw std::invalid_argument("save_pfm: empty image");
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("save_pfm: channels must be 1 or 3");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << (image.channels() == 3 ? "PF" : "Pf") << "\n"
      << image.width() << " " << image.height() << "\n"
      << "-1\n";
  const bool swap = !host_is_little_endian();
  std::vector<float> row(static_cast<size_t>(image.width()) * image.channels());
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        float v = static_cast<float>(image.at(y, x, c));
        if (swap) v = byteswap_float(v);
        row[static_cast<size_t>(x) * image.channels() + c] = v;
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

Image load_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(path, "cannot open");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  std::vector<std::vector<uint8_t>> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "libpng read error");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (depth != 8 && depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported PNG bit depth");
  }

  const size_t row_bytes = png_get_rowbytes(png, info);
  rows.assign(height, std::vector<uint8_t>(row_bytes));
  std::vector<png_bytep> row_ptrs(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(height, width, channels);
  const double denom = depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < height; ++y) {
    const uint8_t* row = rows[y].data();
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        double v;
        if (depth == 8) {
          v = row[static_cast<size_t>(x) * channels + c];
        } else {
          // PNG stores 16-bit samples big-endian.
          const size_t i = (static_cast<size_t>(x) * channels + c) * 2;
          v = static_cast<double>((static_cast<uint16_t>(row[i]) << 8) |
                                  row[i + 1]);
        }
        image.at(y, x, c) = v / denom;
      }
    }
  }
  return image;
}

void save_png(const std::string& path, const Image& image, int bit_depth) {
  if (image.empty()) throw std::invalid_argument("save_png: empty image");
  if (bit_depth != 8 && bit_depth != 16) {
    throw std::invalid_argument("save_png: bit depth must be 8 or 16");
  }
  int color_type;
  switch (image.channels()) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default:
      throw std::invalid_argument("save_png: channels must be 1, 3, or 4");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(path, "cannot open for writing");

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "libpng write error");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width(), image.height(), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const double peak = bit_depth == 8 ? 255.0 : 65535.0;
  const int bytes_per_sample = bit_depth / 8;
  std::vector<uint8_t> row(static_cast<size_t>(image.width()) *
                           image.channels() * bytes_per_sample);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        const double clamped = std::clamp(image.at(y, x, c), 0.0, 1.0);
        const auto q = static_cast<uint32_t>(std::lround(clamped * peak));
        const size_t i =
            (static_cast<size_t>(x) * image.channels() + c) * bytes_per_sample;
        if (bit_depth == 8) {
          row[i] = static_cast<uint8_t>(q);
        } else {
          row[i] = static_cast<uint8_t>(q >> 8);
          row[i + 1] = static_cast<uint8_t>(q & 0xff);
        }
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image load_normal_map(const std::string& path) {
  const bool is_pfm = path.size() >= 4 && path.substr(path.size() - 4) == ".pfm";
  if (is_pfm) {
    Image image = load_pfm(path);
    if (image.channels() != 3) fail(path, "normal map must have 3 channels");
    return image;
  }
  Image image = load_png(path);
  if (image.channels() != 3) fail(path, "normal map must have 3 channels");
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(y, x, c) = 2.0 * image.at(y, x, c) - 1.0;
      }
    }
  }
  return image;
}

void save_normal_map(const std::string& path, const Image& image) {
  if (image.channels() != 3) {
    throw std::invalid_argument("save_normal_map: image must have 3 channels");
  }
  const bool is_pfm = path.size() >= 4 && path.substr(path.size() - 4) == ".pfm";
  if (is_pfm) {
    save_pfm(path, image);
    return;
  }
  Image mapped(image.height(), image.width(), 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        mapped.at(y, x, c) = 0.5 * (image.at(y, x, c) + 1.0);
      }
    }
  }
  save_png(path, mapped, 16);
}

}  // namespace msplat
