#pragma once

#include <vector>

#include "config.hpp"
#include "rng.hpp"

namespace simmil {

// Small HWC float raster in [0,1].
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> pixels;

  float at(int y, int x, int ch) const { return pixels[(size_t(y) * w + x) * c + ch]; }
  float& at(int y, int x, int ch) { return pixels[(size_t(y) * w + x) * c + ch]; }
};

// Strong augmentation policy applied in a fixed order: random resized crop,
// color jitter, random grayscale, gaussian blur, horizontal flip.
struct AugmentPolicy {
  int output_size = 32;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // fraction of the hue circle, at most 0.5
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double hflip_p = 0.5;

  static AugmentPolicy from_config(const Config& cfg, int default_size);
  void validate() const;
};

// Pure given the stream: the same (patch, policy, stream) always produces
// the same output. Output is clamped to [0,1] at output_size.
Image augment(const Image& patch, const AugmentPolicy& policy, RngStream rng);

// luma-weighted grayscale replicated across channels
Image to_grayscale(const Image& img);

// brightness/contrast/saturation blend factors + hue rotation (HSV round trip)
Image adjust_colors(const Image& img, float brightness, float contrast, float saturation,
                    float hue_shift);

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

}  // namespace simmil
