#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>

#include "mcmim/augment.hpp"
#include "mcmim/dataset.hpp"
#include "mcmim/image.hpp"
#include "mcmim/patchify.hpp"

using namespace mcmim;

namespace {

// FNV-1a over the raw pixel bytes; independent of any library hashing.
uint64_t pixel_checksum(const std::vector<Image>& images) {
  uint64_t h = 1469598103934665603ULL;
  for (const Image& img : images)
    for (float v : img.pixels) {
      uint32_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  return h;
}

}  // namespace

TEST_CASE("toy dataset: sizes, balance, determinism") {
  const Dataset ds = generate_toy_dataset(1, 512, 128, 4, 32);
  CHECK(ds.train.size() == 512);
  CHECK(ds.test.size() == 128);
  std::vector<int> per_class(4, 0);
  for (const Image& img : ds.train) {
    REQUIRE(img.label.has_value());
    ++per_class[*img.label];
  }
  for (int c = 0; c < 4; ++c) CHECK(per_class[c] == 128);

  const Dataset again = generate_toy_dataset(1, 512, 128, 4, 32);
  CHECK(pixel_checksum(ds.train) == pixel_checksum(again.train));
  CHECK(pixel_checksum(ds.test) == pixel_checksum(again.test));

  const Dataset other = generate_toy_dataset(2, 512, 128, 4, 32);
  CHECK(pixel_checksum(ds.train) != pixel_checksum(other.train));
}

TEST_CASE("toy dataset: pixel range and class count guard") {
  const Dataset ds = generate_toy_dataset(7, 12, 4, 3, 16);
  for (const Image& img : ds.train)
    for (float v : img.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  CHECK_THROWS_AS(generate_toy_dataset(1, 8, 4, 1, 16), ConfigError);
}

TEST_CASE("patchify: grid arithmetic") {
  Image img(3, 32, 32);
  const PatchGrid pg = patchify(img, 8);
  CHECK(pg.count() == 16);
  CHECK(pg.rows == 4);
  CHECK(pg.cols == 4);

  Image big(3, 224, 224);
  CHECK(patchify(big, 16).count() == 196);

  CHECK_THROWS_AS(patchify(img, 5), ConfigError);
}

TEST_CASE("patchify: constant image gives constant patch vectors") {
  Image img(2, 16, 16);
  std::fill(img.pixels.begin(), img.pixels.end(), 0.25f);
  const PatchGrid pg = patchify(img, 4);
  for (int i = 0; i < pg.count(); ++i)
    for (int j = 0; j < pg.dim(); ++j) CHECK(pg.patches(i, j) == 0.25f);
}

TEST_CASE("patchify/unpatchify round trip is exact") {
  Rng rng(99);
  for (const auto& [h, w, p] : std::vector<std::tuple<int, int, int>>{
           {32, 32, 8}, {16, 24, 8}, {12, 12, 4}, {8, 8, 8}, {40, 16, 8}}) {
    Image img(3, h, w);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
    const Image back = unpatchify(patchify(img, p));
    REQUIRE(back.pixels.size() == img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
  }
}

TEST_CASE("augment: forced scale 1 without flip is the identity") {
  const Dataset ds = generate_toy_dataset(3, 1, 1, 2, 32);
  const Image out = augmented(ds.train[0], 1.0f, 0, 0, false);
  for (size_t i = 0; i < out.pixels.size(); ++i) CHECK(out.pixels[i] == ds.train[0].pixels[i]);
}

TEST_CASE("augment: flip is an involution") {
  const Dataset ds = generate_toy_dataset(4, 1, 1, 2, 32);
  const Image flipped = augmented(ds.train[0], 1.0f, 0, 0, true);
  bool any_diff = false;
  for (size_t i = 0; i < flipped.pixels.size(); ++i)
    any_diff |= flipped.pixels[i] != ds.train[0].pixels[i];
  CHECK(any_diff);
  const Image restored = hflip(flipped);
  for (size_t i = 0; i < restored.pixels.size(); ++i)
    CHECK(restored.pixels[i] == ds.train[0].pixels[i]);
}

TEST_CASE("augment: shape and range preserved for random draws") {
  const Dataset ds = generate_toy_dataset(5, 1, 1, 2, 32);
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Image out = augment_train(ds.train[0], rng);
    CHECK(out.height == 32);
    CHECK(out.width == 32);
    CHECK(out.channels == 3);
    for (float v : out.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("ppm/pgm: round trip through files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mcmim_pnm_test";
  fs::create_directories(dir);
  const Dataset ds = generate_toy_dataset(6, 2, 1, 2, 16);
  write_ppm(ds.train[0], (dir / "0_a.ppm").string());
  write_ppm(ds.train[1], (dir / "1_b.ppm").string());
  const std::vector<Image> back = import_image_dir(dir.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].label == 0);
  CHECK(back[1].label == 1);
  CHECK(back[0].height == 16);
  // 8-bit quantization error only
  for (size_t i = 0; i < back[0].pixels.size(); ++i)
    CHECK(std::abs(back[0].pixels[i] - ds.train[0].pixels[i]) <= 0.5f / 255.0f + 1e-6f);
  fs::remove_all(dir);
}
