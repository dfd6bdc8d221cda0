#include "augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simmil {
namespace {

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

float luma(const Image& img, int y, int x) {
  if (img.c == 1) return img.at(y, x, 0);
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

// Bilinear resize of the crop window [y0, y0+ch) x [x0, x0+cw) to out x out.
// Sample positions use the half-pixel convention, so an identity window at
// equal size copies pixels exactly.
Image resize_window(const Image& img, int y0, int x0, int ch_, int cw, int out) {
  Image dst;
  dst.h = out;
  dst.w = out;
  dst.c = img.c;
  dst.pixels.resize(size_t(out) * out * img.c);
  const float sy = float(ch_) / float(out);
  const float sx = float(cw) / float(out);
  for (int i = 0; i < out; ++i) {
    float fy = (float(i) + 0.5f) * sy - 0.5f;
    fy = std::clamp(fy, 0.0f, float(ch_ - 1));
    const int yA = int(fy);
    const int yB = std::min(yA + 1, ch_ - 1);
    const float wy = fy - float(yA);
    for (int j = 0; j < out; ++j) {
      float fx = (float(j) + 0.5f) * sx - 0.5f;
      fx = std::clamp(fx, 0.0f, float(cw - 1));
      const int xA = int(fx);
      const int xB = std::min(xA + 1, cw - 1);
      const float wx = fx - float(xA);
      for (int c = 0; c < img.c; ++c) {
        const float p00 = img.at(y0 + yA, x0 + xA, c);
        const float p01 = img.at(y0 + yA, x0 + xB, c);
        const float p10 = img.at(y0 + yB, x0 + xA, c);
        const float p11 = img.at(y0 + yB, x0 + xB, c);
        const float top = (1.0f - wx) * p00 + wx * p01;
        const float bot = (1.0f - wx) * p10 + wx * p11;
        dst.at(i, j, c) = (1.0f - wy) * top + wy * bot;
      }
    }
  }
  return dst;
}

Image random_resized_crop(const Image& img, const AugmentPolicy& p, RngStream& rng) {
  const double area = double(img.h) * double(img.w);
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  int cw = 0, ch_ = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.crop_scale_min, p.crop_scale_max);
    const double ar = std::exp(rng.uniform(log_lo, log_hi));
    const int w = int(std::lround(std::sqrt(target * ar)));
    const int h = int(std::lround(std::sqrt(target / ar)));
    if (w >= 1 && h >= 1 && w <= img.w && h <= img.h) {
      cw = w;
      ch_ = h;
      break;
    }
  }
  int y0, x0;
  if (cw == 0) {  // degenerate or oversized draws: fall back to a center crop
    cw = ch_ = std::min(img.h, img.w);
    y0 = (img.h - ch_) / 2;
    x0 = (img.w - cw) / 2;
  } else {
    y0 = int(rng.uniform_int(uint64_t(img.h - ch_ + 1)));
    x0 = int(rng.uniform_int(uint64_t(img.w - cw + 1)));
  }
  return resize_window(img, y0, x0, ch_, cw, p.output_size);
}

Image gaussian_blur(const Image& img, float sigma) {
  const int r = int(std::ceil(3.0f * sigma));
  if (r < 1) return img;
  std::vector<float> kern(size_t(2 * r + 1));
  float ksum = 0.0f;
  for (int i = -r; i <= r; ++i) {
    kern[size_t(i + r)] = std::exp(-0.5f * float(i * i) / (sigma * sigma));
    ksum += kern[size_t(i + r)];
  }
  for (auto& k : kern) k /= ksum;

  Image tmp = img, dst = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i)
          acc += kern[size_t(i + r)] * img.at(y, std::clamp(x + i, 0, img.w - 1), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i)
          acc += kern[size_t(i + r)] * tmp.at(std::clamp(y + i, 0, img.h - 1), x, c);
        dst.at(y, x, c) = acc;
      }
  return dst;
}

Image hflip(const Image& img) {
  Image dst = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) dst.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return dst;
}

}  // namespace

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  float hh;
  if (mx == r) hh = (g - b) / d;
  else if (mx == g) hh = 2.0f + (b - r) / d;
  else hh = 4.0f + (r - g) / d;
  hh /= 6.0f;
  if (hh < 0.0f) hh += 1.0f;
  h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int i = std::min(int(hh), 5);
  const float f = hh - float(i);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

Image to_grayscale(const Image& img) {
  Image dst = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < img.c; ++c) dst.at(y, x, c) = g;
    }
  return dst;
}

Image adjust_colors(const Image& img, float brightness, float contrast, float saturation,
                    float hue_shift) {
  if (img.c != 3) throw std::invalid_argument("adjust_colors: expected 3 channels");
  Image out = img;

  // brightness: scale
  for (auto& v : out.pixels) v = clamp01(v * brightness);

  // contrast: blend against the mean luma of the whole patch
  double mean = 0.0;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) mean += double(luma(out, y, x));
  mean /= double(out.h) * double(out.w);
  for (auto& v : out.pixels) v = clamp01(contrast * v + (1.0f - contrast) * float(mean));

  // saturation: blend against the per-pixel luma gray
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      const float g = luma(out, y, x);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = clamp01(saturation * out.at(y, x, c) + (1.0f - saturation) * g);
    }

  // hue: rotate in HSV
  if (hue_shift != 0.0f) {
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        float h, s, v;
        rgb_to_hsv(out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2), h, s, v);
        float r, g, b;
        hsv_to_rgb(h + hue_shift, s, v, r, g, b);
        out.at(y, x, 0) = clamp01(r);
        out.at(y, x, 1) = clamp01(g);
        out.at(y, x, 2) = clamp01(b);
      }
  }
  return out;
}

AugmentPolicy AugmentPolicy::from_config(const Config& cfg, int default_size) {
  AugmentPolicy p;
  p.output_size = int(cfg.get_int("augment", "output_size", default_size));
  p.crop_scale_min = cfg.get_double("augment", "crop_scale_min", p.crop_scale_min);
  p.crop_scale_max = cfg.get_double("augment", "crop_scale_max", p.crop_scale_max);
  p.jitter_p = cfg.get_double("augment", "jitter_p", p.jitter_p);
  p.brightness = cfg.get_double("augment", "brightness", p.brightness);
  p.contrast = cfg.get_double("augment", "contrast", p.contrast);
  p.saturation = cfg.get_double("augment", "saturation", p.saturation);
  p.hue = cfg.get_double("augment", "hue", p.hue);
  p.grayscale_p = cfg.get_double("augment", "grayscale_p", p.grayscale_p);
  p.blur_p = cfg.get_double("augment", "blur_p", p.blur_p);
  p.blur_sigma_min = cfg.get_double("augment", "blur_sigma_min", p.blur_sigma_min);
  p.blur_sigma_max = cfg.get_double("augment", "blur_sigma_max", p.blur_sigma_max);
  p.hflip_p = cfg.get_double("augment", "hflip_p", p.hflip_p);
  p.validate();
  return p;
}

void AugmentPolicy::validate() const {
  auto prob = [](double v, const char* name) {
    if (v < 0.0 || v > 1.0)
      throw config_error(std::string("augment.") + name + " must lie in [0,1]");
  };
  prob(jitter_p, "jitter_p");
  prob(grayscale_p, "grayscale_p");
  prob(blur_p, "blur_p");
  prob(hflip_p, "hflip_p");
  if (hue > 0.5 || hue < 0.0) throw config_error("augment.hue must lie in [0, 0.5]");
  if (output_size < 1) throw config_error("augment.output_size must be positive");
  if (crop_scale_min <= 0.0 || crop_scale_max < crop_scale_min)
    throw config_error("augment.crop_scale range is invalid");
}

Image augment(const Image& patch, const AugmentPolicy& policy, RngStream rng) {
  // independent sub-streams per stage so skipped stages never shift later draws
  RngStream crop_rng = rng.derive("crop");
  RngStream jitter_rng = rng.derive("jitter");
  RngStream gray_rng = rng.derive("gray");
  RngStream blur_rng = rng.derive("blur");
  RngStream flip_rng = rng.derive("flip");

  Image out = random_resized_crop(patch, policy, crop_rng);

  if (patch.c == 3 && jitter_rng.uniform() < policy.jitter_p) {
    const float fb = float(jitter_rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness));
    const float fc = float(jitter_rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast));
    const float fs = float(jitter_rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation));
    const float dh = float(jitter_rng.uniform(-policy.hue, policy.hue));
    out = adjust_colors(out, fb, fc, fs, dh);
  }
  if (patch.c == 3 && gray_rng.uniform() < policy.grayscale_p) out = to_grayscale(out);
  if (blur_rng.uniform() < policy.blur_p) {
    const float sigma = float(blur_rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
    out = gaussian_blur(out, sigma);
  }
  if (flip_rng.uniform() < policy.hflip_p) out = hflip(out);

  for (auto& v : out.pixels) v = clamp01(v);
  return out;
}

}  // namespace simmil
