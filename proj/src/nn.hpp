#pragma once

#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace simmil {

struct LinearLayer {
  Var w;  // [in, out]
  Var b;  // [out]
  Var operator()(const Var& x) const { return linear(x, w, b); }
};

LinearLayer make_linear(int in, int out, const std::string& name, RngStream rng);

struct Conv2dLayer {
  Var w;  // [out_ch, in_ch, k, k]
  Var b;  // [out_ch]
  int stride = 1;
  int pad = 0;
  Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

Conv2dLayer make_conv(int in_ch, int out_ch, int k, int stride, int pad,
                      const std::string& name, RngStream rng);

struct BatchNormLayer {
  Var gamma;
  Var beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
  std::string name;

  Var operator()(const Var& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
};

BatchNormLayer make_batchnorm(int channels, const std::string& name);

}  // namespace simmil
