#pragma once

#include <string>

#include "mcmim/errors.hpp"
#include "mcmim/image.hpp"
#include "mcmim/matrix.hpp"

namespace mcmim {

// An image decomposed into N flattened patch vectors plus grid geometry.
// Patch i covers the pixel block at (i / cols, i % cols). Each patch vector
// is flattened row-major, channel-last.
struct PatchGrid {
  Matrix<float> patches;  // N x (C*P*P)
  int rows = 0;
  int cols = 0;
  int patch_size = 0;
  int channels = 0;

  int count() const { return rows * cols; }
  int dim() const { return channels * patch_size * patch_size; }
};

inline PatchGrid patchify(const Image& img, int patch_size) {
  if (patch_size <= 0 || img.height % patch_size != 0 || img.width % patch_size != 0)
    throw ConfigError("patchify: image " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " not divisible by patch size " +
                      std::to_string(patch_size));
  PatchGrid pg;
  pg.rows = img.height / patch_size;
  pg.cols = img.width / patch_size;
  pg.patch_size = patch_size;
  pg.channels = img.channels;
  pg.patches = Matrix<float>(pg.rows * pg.cols, pg.dim());
  for (int gy = 0; gy < pg.rows; ++gy)
    for (int gx = 0; gx < pg.cols; ++gx) {
      float* v = pg.patches.row(gy * pg.cols + gx);
      int idx = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int c = 0; c < img.channels; ++c)
            v[idx++] = img.at(c, gy * patch_size + py, gx * patch_size + px);
    }
  return pg;
}

inline Image unpatchify(const PatchGrid& pg) {
  Image img(pg.channels, pg.rows * pg.patch_size, pg.cols * pg.patch_size);
  for (int gy = 0; gy < pg.rows; ++gy)
    for (int gx = 0; gx < pg.cols; ++gx) {
      const float* v = pg.patches.row(gy * pg.cols + gx);
      int idx = 0;
      for (int py = 0; py < pg.patch_size; ++py)
        for (int px = 0; px < pg.patch_size; ++px)
          for (int c = 0; c < pg.channels; ++c)
            img.at(c, gy * pg.patch_size + py, gx * pg.patch_size + px) = v[idx++];
    }
  return img;
}

}  // namespace mcmim
