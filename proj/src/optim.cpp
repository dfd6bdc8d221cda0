#include "optim.hpp"

#include <cmath>

#include "threadpool.hpp"

namespace simmil {
namespace {

void check_grads(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (p->grad.size() != p->value.size())
      throw std::invalid_argument("optimizer: parameter '" + p->name + "' has no gradient");
  }
}

}  // namespace

SgdMomentum::SgdMomentum(std::vector<Var> params, float lr, float momentum,
                         float weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p->value.size(), 0.0f);
}

void SgdMomentum::step() {
  check_grads(params_);
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    std::vector<float>& vel = velocity_[k];
    const float lr = lr_, mu = momentum_, wd = weight_decay_;
    parallel_for_chunks(int64_t(p.value.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const float g = p.grad[size_t(i)] + wd * p.value[size_t(i)];
        vel[size_t(i)] = mu * vel[size_t(i)] + g;
        p.value[size_t(i)] -= lr * vel[size_t(i)];
      }
    });
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Adam::Adam(std::vector<Var> params, float lr, float beta1, float beta2, float eps,
           float weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  check_grads(params_);
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, float(t_));
  const float bc2 = 1.0f - std::pow(beta2_, float(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    std::vector<float>& m = m_[k];
    std::vector<float>& v = v_[k];
    const float lr = lr_, b1 = beta1_, b2 = beta2_, eps = eps_, wd = weight_decay_;
    parallel_for_chunks(int64_t(p.value.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const float g = p.grad[size_t(i)] + wd * p.value[size_t(i)];
        m[size_t(i)] = b1 * m[size_t(i)] + (1.0f - b1) * g;
        v[size_t(i)] = b2 * v[size_t(i)] + (1.0f - b2) * g * g;
        const float mhat = m[size_t(i)] / bc1;
        const float vhat = v[size_t(i)] / bc2;
        p.value[size_t(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    });
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

float schedule_lr(const LrSchedule& s, float base_lr, int epoch) {
  if (s.kind != LrSchedule::Kind::Constant) {
    if (epoch < 0 || epoch >= s.total_epochs)
      throw std::invalid_argument("schedule_lr: epoch " + std::to_string(epoch) +
                                  " outside [0, " + std::to_string(s.total_epochs) + ")");
  }
  switch (s.kind) {
    case LrSchedule::Kind::Constant:
      return base_lr;
    case LrSchedule::Kind::Step: {
      float lr = base_lr;
      for (int m : s.milestones)
        if (m <= epoch) lr *= s.gamma;
      return lr;
    }
    case LrSchedule::Kind::Cosine:
      return base_lr * 0.5f *
             (1.0f + std::cos(3.14159265358979323846f * float(epoch) / float(s.total_epochs)));
  }
  return base_lr;
}

}  // namespace simmil
