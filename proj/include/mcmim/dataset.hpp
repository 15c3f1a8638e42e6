#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/image.hpp"
#include "mcmim/rng.hpp"

namespace mcmim {

struct Dataset {
  std::vector<Image> train;
  std::vector<Image> test;
  int classes = 0;
};

namespace detail {

// Kind order puts the most geometrically distinct shapes first so small
// class counts stay separable by structure alone.
constexpr int kShapeKinds = 6;  // disk, triangle, cross, ring, square, diamond

// Signed "inside" test with a soft half-pixel edge, evaluated at pixel centers.
inline float shape_coverage(int kind, float dx, float dy, float r) {
  float d;  // negative inside
  switch (kind) {
    case 0:  // disk
      d = std::sqrt(dx * dx + dy * dy) - r;
      break;
    case 1: {  // upward triangle
      const float k = 0.57735f;  // tan(30deg)
      d = std::max(std::abs(dx) * 0.866f + dy * 0.5f, -dy - r * k) - r * 0.5f;
      break;
    }
    case 2: {  // plus sign
      const float arm = r * 0.32f;
      const float dh = std::max(std::abs(dx) - r, std::abs(dy) - arm);
      const float dv = std::max(std::abs(dx) - arm, std::abs(dy) - r);
      d = std::min(dh, dv);
      break;
    }
    case 3: {  // ring
      const float rad = std::sqrt(dx * dx + dy * dy);
      d = std::max(rad - r, (r * 0.5f) - rad);
      break;
    }
    case 4:  // axis-aligned square
      d = std::max(std::abs(dx), std::abs(dy)) - r;
      break;
    default:  // diamond
      d = (std::abs(dx) + std::abs(dy)) - r;
      break;
  }
  return std::clamp(0.5f - d, 0.0f, 1.0f);
}

inline Image render_toy_image(Rng& rng, int classes, int image_size, int cls) {
  Image img(3, image_size, image_size);
  img.label = cls;
  const float s = static_cast<float>(image_size);

  // Textured background: base color plus one low-frequency wave and light
  // pixel noise. Sub-patch-scale texture would make masked tokens
  // unpredictable from context, so frequencies stay below the patch scale.
  float base[3], amp[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = static_cast<float>(rng.uniform(0.15, 0.55));
    amp[c] = static_cast<float>(rng.uniform(0.06, 0.18));
  }
  const float fx1 = static_cast<float>(rng.uniform(0.5, 2.5));
  const float fy1 = static_cast<float>(rng.uniform(0.5, 2.5));
  const float ph1 = static_cast<float>(rng.uniform(0.0, 2.0 * M_PI));
  const float noise_amp = static_cast<float>(rng.uniform(0.005, 0.02));
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      const float u = static_cast<float>(x) / s;
      const float v = static_cast<float>(y) / s;
      const float wave =
          std::sin(2.0f * static_cast<float>(M_PI) * (fx1 * u + fy1 * v) + ph1);
      const float n = noise_amp * static_cast<float>(rng.uniform(-1.0, 1.0));
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(base[c] + amp[c] * wave + n, 0.0f, 1.0f);
    }

  // 1-3 instances of the class shape, random color/size/position.
  const int kind = cls % kShapeKinds;
  const int count = rng.uniform_int(1, 3);
  for (int inst = 0; inst < count; ++inst) {
    // large shapes: sparse visible context still overlaps them, which keeps
    // masked shape patches inferable
    const float r = static_cast<float>(rng.uniform(0.2, 0.36)) * s;
    const float cx = static_cast<float>(rng.uniform(r * 0.8, s - r * 0.8));
    const float cy = static_cast<float>(rng.uniform(r * 0.8, s - r * 0.8));
    // Bright, near-neutral shapes: class information lives in geometry, so
    // shape pixels must differ from the background in structure, not hue.
    const float brightness = static_cast<float>(rng.uniform(0.82, 1.0));
    float color[3];
    for (int c = 0; c < 3; ++c)
      color[c] = std::clamp(
          brightness + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
    const int x0 = std::max(0, static_cast<int>(cx - r - 2.0f));
    const int x1 = std::min(image_size - 1, static_cast<int>(cx + r + 2.0f));
    const int y0 = std::max(0, static_cast<int>(cy - r - 2.0f));
    const int y1 = std::min(image_size - 1, static_cast<int>(cy + r + 2.0f));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float cov = shape_coverage(kind, static_cast<float>(x) + 0.5f - cx,
                                         static_cast<float>(y) + 0.5f - cy, r);
        if (cov <= 0.0f) continue;
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = (1.0f - cov) * img.at(c, y, x) + cov * color[c];
      }
  }
  return img;
}

inline std::vector<Image> generate_split(uint64_t seed, uint64_t split_tag, int n,
                                         int classes, int image_size) {
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, split_tag, static_cast<uint64_t>(i)));
    out.push_back(render_toy_image(rng, classes, image_size, i % classes));
  }
  return out;
}

}  // namespace detail

// Procedural labeled images: class id = shape type drawn on a textured
// background. Pure function of (seed, sizes); class-balanced by construction.
inline Dataset generate_toy_dataset(uint64_t seed, int n_train, int n_test, int classes,
                                    int image_size) {
  if (classes < 2) throw ConfigError("generate_toy_dataset: classes must be >= 2");
  if (classes > detail::kShapeKinds)
    throw ConfigError("generate_toy_dataset: at most " +
                      std::to_string(detail::kShapeKinds) + " classes supported");
  Dataset ds;
  ds.classes = classes;
  ds.train = detail::generate_split(seed, 0x7261696eULL, n_train, classes, image_size);
  ds.test = detail::generate_split(seed, 0x74657374ULL, n_test, classes, image_size);
  return ds;
}

}  // namespace mcmim
