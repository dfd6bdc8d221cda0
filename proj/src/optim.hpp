#pragma once

#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace simmil {

// v <- momentum*v + (g + wd*p); p <- p - lr*v
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Var> params, float lr, float momentum = 0.9f,
              float weight_decay = 0.0f);
  void step();
  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  std::vector<Var> params_;
  std::vector<std::vector<float>> velocity_;
  float lr_, momentum_, weight_decay_;
};

// Bias-corrected Adam with L2 regularization folded into the gradient.
class Adam {
 public:
  Adam(std::vector<Var> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f, float weight_decay = 0.0f);
  void step();
  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t step_count() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

struct LrSchedule {
  enum class Kind { Constant, Step, Cosine };
  Kind kind = Kind::Constant;
  std::vector<int> milestones;  // Step
  float gamma = 0.1f;           // Step
  int total_epochs = 0;
};

// Learning rate for the given epoch; requires 0 <= epoch < total_epochs.
float schedule_lr(const LrSchedule& s, float base_lr, int epoch);

}  // namespace simmil
