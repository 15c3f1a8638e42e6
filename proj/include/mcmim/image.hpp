#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mcmim/errors.hpp"

namespace mcmim {

// Planar CxHxW pixel tensor with values in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;            // channels*height*width, planar
  std::optional<int> label;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w),
        pixels(static_cast<size_t>(c) * h * w, 0.0f) {}

  float& at(int c, int y, int x) {
    return pixels[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

inline Image hflip(const Image& img) {
  Image out(img.channels, img.height, img.width);
  out.label = img.label;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

namespace detail {

inline int pnm_token(std::istream& in) {
  // Skips whitespace and '#' comment lines, then reads one integer.
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF) throw FormatError("pnm: unexpected end of header");
  int value = 0;
  bool any = false;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw FormatError("pnm: malformed header token");
  return value;
}

}  // namespace detail

// Binary P6 (color) / P5 (gray) reader, maxval <= 255.
inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("pnm: not a binary P5/P6 file: " + path);
  const int channels = magic[1] == '6' ? 3 : 1;
  const int width = detail::pnm_token(in);
  const int height = detail::pnm_token(in);
  const int maxval = detail::pnm_token(in);
  if (maxval <= 0 || maxval > 255)
    throw FormatError("pnm: unsupported maxval " + std::to_string(maxval));
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw FormatError("pnm: truncated pixel data in " + path);
  Image img(channels, height, width);
  size_t idx = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(raw[idx++]) / static_cast<float>(maxval);
  return img;
}

inline void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) throw ConfigError("write_ppm: image must have 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        out.put(static_cast<char>(std::lround(v * 255.0f)));
      }
}

// P5 grayscale writer used for heatmap dumps. Values are scaled by
// 255/scale; the scale is recorded in a header comment so the caller can
// recover approximate magnitudes.
inline void write_pgm_scaled(const std::vector<double>& values, int rows, int cols,
                             double scale, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file: " + path);
  out << "P5\n# scale " << scale << "\n" << cols << " " << rows << "\n255\n";
  for (int i = 0; i < rows * cols; ++i) {
    const double v = scale > 0.0 ? std::clamp(values[i] / scale, 0.0, 1.0) : 0.0;
    out.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

// Import a directory of PPM/PGM files, sorted by filename. A leading
// integer in the filename (e.g. "2_house.ppm") becomes the class label.
inline std::vector<Image> import_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ppm/.pgm files in " + dir);
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    Image img = read_pnm(f);
    const std::string name = fs::path(f).filename().string();
    if (!name.empty() && std::isdigit(static_cast<unsigned char>(name[0]))) {
      img.label = std::stoi(name);
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace mcmim
