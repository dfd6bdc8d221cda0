#include "nn.hpp"

#include <cmath>

namespace simmil {

// He-normal fan-in init for weights, zero biases.
LinearLayer make_linear(int in, int out, const std::string& name, RngStream rng) {
  LinearLayer l;
  l.w = make_param({in, out}, name + ".weight");
  l.b = make_param({out}, name + ".bias");
  const double std = std::sqrt(2.0 / double(in));
  for (auto& v : l.w->value) v = float(rng.normal(0.0, std));
  return l;
}

Conv2dLayer make_conv(int in_ch, int out_ch, int k, int stride, int pad,
                      const std::string& name, RngStream rng) {
  Conv2dLayer c;
  c.w = make_param({out_ch, in_ch, k, k}, name + ".weight");
  c.b = make_param({out_ch}, name + ".bias");
  c.stride = stride;
  c.pad = pad;
  const double std = std::sqrt(2.0 / double(in_ch * k * k));
  for (auto& v : c.w->value) v = float(rng.normal(0.0, std));
  return c;
}

BatchNormLayer make_batchnorm(int channels, const std::string& name) {
  BatchNormLayer bn;
  bn.gamma = make_param({channels}, name + ".gamma");
  bn.beta = make_param({channels}, name + ".beta");
  std::fill(bn.gamma->value.begin(), bn.gamma->value.end(), 1.0f);
  bn.running_mean.assign(size_t(channels), 0.0f);
  bn.running_var.assign(size_t(channels), 1.0f);
  bn.name = name;
  return bn;
}

}  // namespace simmil
