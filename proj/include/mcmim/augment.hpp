#pragma once

#include <cmath>

#include "mcmim/image.hpp"
#include "mcmim/rng.hpp"

namespace mcmim {

// Bilinear resize with align-corners mapping; resizing to the source size
// reproduces the input exactly.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image out(src.channels, out_h, out_w);
  out.label = src.label;
  const float sy = out_h > 1 ? static_cast<float>(src.height - 1) / (out_h - 1) : 0.0f;
  const float sx = out_w > 1 ? static_cast<float>(src.width - 1) / (out_w - 1) : 0.0f;
  for (int y = 0; y < out_h; ++y) {
    const float fy = y * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const float fx = x * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const float top = (1.0f - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        const float bot = (1.0f - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        out.at(c, y, x) = (1.0f - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

inline Image crop(const Image& src, int y0, int x0, int h, int w) {
  Image out(src.channels, h, w);
  out.label = src.label;
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

// Deterministic core of the training augmentation; the rng variant below
// samples the parameters. scale=1 with flip=false is the identity.
inline Image augmented(const Image& img, float scale, int y0, int x0, bool flip) {
  const int ch = std::max(1, static_cast<int>(std::lround(scale * img.height)));
  const int cw = std::max(1, static_cast<int>(std::lround(scale * img.width)));
  Image out = (ch == img.height && cw == img.width && y0 == 0 && x0 == 0)
                  ? img
                  : resize_bilinear(crop(img, y0, x0, ch, cw), img.height, img.width);
  if (flip) out = hflip(out);
  return out;
}

// Random resized crop (scale in [0.67, 1.0], bilinear) + horizontal flip
// with probability 0.5. Output shape and value range match the input.
inline Image augment_train(const Image& img, Rng& rng) {
  const float scale = static_cast<float>(rng.uniform(0.67, 1.0));
  const int ch = std::max(1, static_cast<int>(std::lround(scale * img.height)));
  const int cw = std::max(1, static_cast<int>(std::lround(scale * img.width)));
  const int y0 = rng.uniform_int(0, img.height - ch);
  const int x0 = rng.uniform_int(0, img.width - cw);
  const bool flip = rng.bernoulli(0.5);
  return augmented(img, scale, y0, x0, flip);
}

}  // namespace mcmim
