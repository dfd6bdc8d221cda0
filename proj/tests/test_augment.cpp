#include <cmath>

#include "augment.hpp"
#include "doctest.h"

using namespace simmil;

namespace {

Image random_image(int h, int w, int c, RngStream& rng) {
  Image img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.pixels.resize(size_t(h) * w * c);
  for (auto& v : img.pixels) v = float(rng.uniform(0, 1));
  return img;
}

AugmentPolicy identity_policy(int size) {
  AugmentPolicy p;
  p.output_size = size;
  p.crop_scale_min = 1.0;
  p.crop_scale_max = 1.0;
  p.jitter_p = 0.0;
  p.grayscale_p = 0.0;
  p.blur_p = 0.0;
  p.hflip_p = 0.0;
  return p;
}

}  // namespace

TEST_CASE("augment: identity policy copies the input bit-exactly") {
  RngStream rng(1);
  Image img = random_image(16, 16, 3, rng);
  Image out = augment(img, identity_policy(16), RngStream(42).derive("aug"));
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("augment: horizontal flip swaps columns") {
  AugmentPolicy p = identity_policy(2);
  p.hflip_p = 1.0;
  Image img;
  img.h = img.w = 2;
  img.c = 1;
  img.pixels = {0.1f, 0.2f, 0.3f, 0.4f};
  Image out = augment(img, p, RngStream(7).derive("aug"));
  CHECK(out.at(0, 0, 0) == 0.2f);
  CHECK(out.at(0, 1, 0) == 0.1f);
  CHECK(out.at(1, 0, 0) == 0.4f);
  CHECK(out.at(1, 1, 0) == 0.3f);
}

TEST_CASE("augment: deterministic given (seed, instance, epoch) stream") {
  RngStream rng(2);
  Image img = random_image(20, 20, 3, rng);
  AugmentPolicy p;  // defaults: full pipeline
  p.output_size = 16;
  auto stream = [](uint64_t seed, uint64_t inst, uint64_t epoch) {
    return RngStream(seed).derive("augment", inst, epoch);
  };
  Image a = augment(img, p, stream(17, 3, 5));
  Image b = augment(img, p, stream(17, 3, 5));
  CHECK(a.pixels == b.pixels);
  Image c = augment(img, p, stream(17, 3, 6));
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("augment: output shape and range invariants") {
  RngStream rng(3);
  AugmentPolicy p;
  p.output_size = 24;
  for (int t = 0; t < 20; ++t) {
    const int h = 8 + int(rng.uniform_int(40));
    const int w = 8 + int(rng.uniform_int(40));
    Image img = random_image(h, w, 3, rng);
    Image out = augment(img, p, RngStream(9).derive("t", uint64_t(t)));
    CHECK(out.h == 24);
    CHECK(out.w == 24);
    CHECK(out.c == 3);
    for (float v : out.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("augment: grayscale fraction approaches its probability") {
  RngStream rng(4);
  Image img = random_image(12, 12, 3, rng);
  AugmentPolicy p = identity_policy(12);
  p.grayscale_p = 0.2;
  int gray = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    Image out = augment(img, p, RngStream(100).derive("g", uint64_t(t)));
    bool is_gray = true;
    for (int y = 0; y < out.h && is_gray; ++y)
      for (int x = 0; x < out.w && is_gray; ++x)
        is_gray = std::fabs(out.at(y, x, 0) - out.at(y, x, 1)) < 1e-7f &&
                  std::fabs(out.at(y, x, 1) - out.at(y, x, 2)) < 1e-7f;
    if (is_gray) ++gray;
  }
  const double frac = double(gray) / draws;
  CHECK(frac > 0.18);
  CHECK(frac < 0.22);
}

TEST_CASE("color adjustments") {
  RngStream rng(5);
  Image img = random_image(10, 10, 3, rng);

  SUBCASE("saturation factor 0 equals grayscale conversion") {
    Image sat0 = adjust_colors(img, 1.0f, 1.0f, 0.0f, 0.0f);
    Image gray = to_grayscale(img);
    for (size_t i = 0; i < img.pixels.size(); ++i)
      CHECK(sat0.pixels[i] == doctest::Approx(gray.pixels[i]).epsilon(1e-6));
  }
  SUBCASE("identity factors are the identity") {
    Image same = adjust_colors(img, 1.0f, 1.0f, 1.0f, 0.0f);
    for (size_t i = 0; i < img.pixels.size(); ++i)
      CHECK(same.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
  }
  SUBCASE("rgb/hsv round trip on 1000 random pixels") {
    float worst = 0.0f;
    for (int t = 0; t < 1000; ++t) {
      const float r = float(rng.uniform(0, 1));
      const float g = float(rng.uniform(0, 1));
      const float b = float(rng.uniform(0, 1));
      float h, s, v, r2, g2, b2;
      rgb_to_hsv(r, g, b, h, s, v);
      hsv_to_rgb(h, s, v, r2, g2, b2);
      worst = std::max({worst, std::fabs(r - r2), std::fabs(g - g2), std::fabs(b - b2)});
    }
    CHECK(worst < 1e-5f);
  }
  SUBCASE("grayscale uses luma weights") {
    Image px;
    px.h = px.w = 1;
    px.c = 3;
    px.pixels = {1.0f, 0.0f, 0.0f};
    Image g = to_grayscale(px);
    CHECK(g.pixels[0] == doctest::Approx(0.299));
    CHECK(g.pixels[1] == doctest::Approx(0.299));
    CHECK(g.pixels[2] == doctest::Approx(0.299));
  }
}

TEST_CASE("policy validation") {
  AugmentPolicy p;
  p.hue = 0.6;
  CHECK_THROWS_AS(p.validate(), config_error);
  AugmentPolicy q;
  q.blur_p = 1.5;
  CHECK_THROWS_AS(q.validate(), config_error);
  AugmentPolicy ok;
  CHECK_NOTHROW(ok.validate());
}
