#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "threadpool.hpp"

namespace simmil {
namespace {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool any_grad(const std::vector<Var>& inputs) {
  for (const auto& v : inputs)
    if (v->requires_grad) return true;
  return false;
}

// Builds an op node. When no input needs gradients the node is detached:
// inputs and backfn are dropped so eval-mode forwards build no tape.
Var make_node(std::vector<int> shape, std::vector<Var> inputs,
              std::function<void(Tensor&)> backfn) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value.resize(size_t(t->numel()));
  if (any_grad(inputs)) {
    t->requires_grad = true;
    t->inputs = std::move(inputs);
    t->backfn = std::move(backfn);
  }
  return t;
}

float stable_sigmoid(float x) {
  if (x >= 0.0f) {
    float z = std::exp(-x);
    return 1.0f / (1.0f + z);
  }
  float z = std::exp(x);
  return z / (1.0f + z);
}

float stable_softplus(float x) {
  if (x > 0.0f) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Var unary(const Var& a, const std::function<float(float)>& f,
          // dval(x, y) -> dy/dx given input x and output y
          const std::function<float(float, float)>& dval) {
  Var out = make_node(a->shape, {a},
                      [a, dval](Tensor& o) {
                        if (!a->requires_grad) return;
                        a->ensure_grad();
                        const int64_t n = o.numel();
                        for (int64_t i = 0; i < n; ++i)
                          a->grad[size_t(i)] +=
                              o.grad[size_t(i)] * dval(a->value[size_t(i)], o.value[size_t(i)]);
                      });
  const int64_t n = a->numel();
  parallel_for_chunks(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) out->value[size_t(i)] = f(a->value[size_t(i)]);
  });
  return out;
}

}  // namespace

Var make_tensor(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value.assign(size_t(t->numel()), 0.0f);
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

Var make_param(std::vector<int> shape, std::string name) {
  Var t = make_tensor(std::move(shape), true);
  t->name = std::move(name);
  return t;
}

Var make_const(std::vector<int> shape, std::vector<float> data) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  check(int64_t(data.size()) == t->numel(), "make_const: data length does not match shape");
  t->value = std::move(data);
  return t;
}

Var scalar_const(float v) { return make_const({1}, {v}); }

void backward(const Var& loss) {
  check(loss != nullptr, "backward: null loss");
  check(loss->numel() == 1, "backward: loss must be a scalar, got shape " + shape_str(loss->shape));

  // Iterative post-order DFS; the resulting order has every node after all
  // of its inputs.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<std::pair<Tensor*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Tensor* in = node->inputs[idx].get();
      ++idx;
      if (in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor* t : order) t->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* t = *it;
    if (t->backfn) t->backfn(*t);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check(a->shape == b->shape, "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  Var out = make_node(a->shape, {a, b}, [a, b](Tensor& o) {
    const int64_t n = o.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += o.grad[size_t(i)];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[size_t(i)] += o.grad[size_t(i)];
    }
  });
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->value[size_t(i)] = a->value[size_t(i)] + b->value[size_t(i)];
  return out;
}

Var sub(const Var& a, const Var& b) {
  check(a->shape == b->shape, "sub: shape mismatch");
  Var out = make_node(a->shape, {a, b}, [a, b](Tensor& o) {
    const int64_t n = o.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += o.grad[size_t(i)];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[size_t(i)] -= o.grad[size_t(i)];
    }
  });
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->value[size_t(i)] = a->value[size_t(i)] - b->value[size_t(i)];
  return out;
}

Var mul(const Var& a, const Var& b) {
  check(a->shape == b->shape, "mul: shape mismatch");
  Var out = make_node(a->shape, {a, b}, [a, b](Tensor& o) {
    const int64_t n = o.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += o.grad[size_t(i)] * b->value[size_t(i)];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[size_t(i)] += o.grad[size_t(i)] * a->value[size_t(i)];
    }
  });
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->value[size_t(i)] = a->value[size_t(i)] * b->value[size_t(i)];
  return out;
}

Var add_scalar(const Var& a, float s) {
  return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var mul_scalar(const Var& a, float s) {
  return unary(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0f); }

Var relu(const Var& a) {
  return unary(a, [](float x) { return x > 0.0f ? x : 0.0f; },
               [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](float, float y) { return y * (1.0f - y); });
}

Var tanh_act(const Var& a) {
  return unary(a, [](float x) { return std::tanh(x); },
               [](float, float y) { return 1.0f - y * y; });
}

Var log_act(const Var& a) {
  return unary(a, [](float x) { return std::log(x); },
               [](float x, float) { return 1.0f / x; });
}

Var exp_act(const Var& a) {
  return unary(a, [](float x) { return std::exp(x); },
               [](float, float y) { return y; });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus, [](float x, float) { return stable_sigmoid(x); });
}

Var square(const Var& a) {
  return unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  check(n == a->numel(), "reshape: element count mismatch");
  Var out = make_node(std::move(shape), {a}, [a](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const int64_t n = o.numel();
    for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += o.grad[size_t(i)];
  });
  out->value = a->value;
  return out;
}

Var transpose2d(const Var& a) {
  check(a->rank() == 2, "transpose2d: expected 2-D input");
  const int m = a->dim(0), n = a->dim(1);
  Var out = make_node({n, m}, {a}, [a, m, n](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        a->grad[size_t(i) * n + j] += o.grad[size_t(j) * m + i];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[size_t(j) * m + i] = a->value[size_t(i) * n + j];
  return out;
}

Var gather_rows(const Var& a, std::vector<int> rows) {
  check(a->rank() == 2, "gather_rows: expected 2-D input");
  const int n = a->dim(0), c = a->dim(1);
  for (int r : rows) check(r >= 0 && r < n, "gather_rows: row index out of range");
  const int out_rows = int(rows.size());
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  Var out = make_node({out_rows, c}, {a}, [a, idx, c](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    // rows may repeat; accumulate column-parallel so each destination cell
    // has a single writer
    parallel_for(c, [&](int64_t j) {
      for (size_t i = 0; i < idx->size(); ++i)
        a->grad[size_t((*idx)[i]) * c + size_t(j)] += o.grad[i * size_t(c) + size_t(j)];
    });
  });
  for (size_t i = 0; i < idx->size(); ++i)
    std::copy_n(a->value.begin() + size_t((*idx)[i]) * c, c,
                out->value.begin() + i * size_t(c));
  return out;
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  check(a->rank() == 2 && b->rank() == 2, "matmul: expected 2-D inputs");
  check(a->dim(1) == b->dim(0), "matmul: inner dimension mismatch");
  const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
  Var out = make_node({m, n}, {a, b}, [a, b, m, k, n](Tensor& o) {
    if (a->requires_grad) {
      a->ensure_grad();
      parallel_for(m, [&](int64_t i) {
        for (int64_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (int64_t l = 0; l < n; ++l)
            acc += double(o.grad[size_t(i) * n + size_t(l)]) * double(b->value[size_t(j) * n + size_t(l)]);
          a->grad[size_t(i) * k + size_t(j)] += float(acc);
        }
      });
    }
    if (b->requires_grad) {
      b->ensure_grad();
      parallel_for(k, [&](int64_t i) {
        for (int64_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int64_t l = 0; l < m; ++l)
            acc += double(a->value[size_t(l) * k + size_t(i)]) * double(o.grad[size_t(l) * n + size_t(j)]);
          b->grad[size_t(i) * n + size_t(j)] += float(acc);
        }
      });
    }
  });
  parallel_for(m, [&](int64_t i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t l = 0; l < k; ++l)
        acc += double(a->value[size_t(i) * k + size_t(l)]) * double(b->value[size_t(l) * n + size_t(j)]);
      out->value[size_t(i) * n + size_t(j)] = float(acc);
    }
  });
  return out;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check(x->rank() == 2 && w->rank() == 2, "linear: expected 2-D input and weight");
  check(x->dim(1) == w->dim(0), "linear: input width does not match weight");
  check(b->rank() == 1 && b->dim(0) == w->dim(1), "linear: bias shape mismatch");
  const int B = x->dim(0), in = x->dim(1), out_dim = w->dim(1);
  Var out = make_node({B, out_dim}, {x, w, b}, [x, w, b, B, in, out_dim](Tensor& o) {
    if (x->requires_grad) {
      x->ensure_grad();
      parallel_for(B, [&](int64_t r) {
        for (int64_t i = 0; i < in; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < out_dim; ++j)
            acc += double(o.grad[size_t(r) * out_dim + size_t(j)]) * double(w->value[size_t(i) * out_dim + size_t(j)]);
          x->grad[size_t(r) * in + size_t(i)] += float(acc);
        }
      });
    }
    if (w->requires_grad) {
      w->ensure_grad();
      parallel_for(in, [&](int64_t i) {
        for (int64_t j = 0; j < out_dim; ++j) {
          double acc = 0.0;
          for (int64_t r = 0; r < B; ++r)
            acc += double(x->value[size_t(r) * in + size_t(i)]) * double(o.grad[size_t(r) * out_dim + size_t(j)]);
          w->grad[size_t(i) * out_dim + size_t(j)] += float(acc);
        }
      });
    }
    if (b->requires_grad) {
      b->ensure_grad();
      parallel_for(out_dim, [&](int64_t j) {
        double acc = 0.0;
        for (int64_t r = 0; r < B; ++r) acc += double(o.grad[size_t(r) * out_dim + size_t(j)]);
        b->grad[size_t(j)] += float(acc);
      });
    }
  });
  parallel_for(B, [&](int64_t r) {
    for (int64_t j = 0; j < out_dim; ++j) {
      double acc = double(b->value[size_t(j)]);
      for (int64_t i = 0; i < in; ++i)
        acc += double(x->value[size_t(r) * in + size_t(i)]) * double(w->value[size_t(i) * out_dim + size_t(j)]);
      out->value[size_t(r) * out_dim + size_t(j)] = float(acc);
    }
  });
  return out;
}

// -------------------------------------------------------- convolution/pooling

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check(x->rank() == 4 && w->rank() == 4, "conv2d: expected 4-D input and weight");
  check(x->dim(1) == w->dim(1), "conv2d: channel mismatch between input and weight");
  check(b->rank() == 1 && b->dim(0) == w->dim(0), "conv2d: bias shape mismatch");
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int B = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int O = w->dim(0), KH = w->dim(2), KW = w->dim(3);
  const int HO = (H + 2 * pad - KH) / stride + 1;
  const int WO = (W + 2 * pad - KW) / stride + 1;
  check(HO >= 1 && WO >= 1, "conv2d: kernel larger than padded input");

  // valid output column range for a kernel column: 0 <= x*stride + kx - pad < W
  auto col_range = [=](int kx, int& lo, int& hi) {
    lo = 0;
    while (lo < WO && lo * stride + kx - pad < 0) ++lo;
    hi = WO;
    while (hi > lo && (hi - 1) * stride + kx - pad >= W) --hi;
  };

  Var out = make_node({B, O, HO, WO}, {x, w, b},
                      [x, w, b, B, C, H, W, O, KH, KW, HO, WO, stride, pad, col_range](Tensor& o) {
    const float* xv = x->value.data();
    const float* wv = w->value.data();
    const float* og = o.grad.data();
    if (x->requires_grad) {
      x->ensure_grad();
      float* xg = x->grad.data();
      parallel_for(B, [&](int64_t bb) {
        for (int oc = 0; oc < O; ++oc)
          for (int y = 0; y < HO; ++y) {
            const float* g_row = og + ((size_t(bb) * O + oc) * HO + y) * WO;
            for (int c = 0; c < C; ++c)
              for (int ky = 0; ky < KH; ++ky) {
                const int iy = y * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                float* dx_row = xg + ((size_t(bb) * C + c) * H + iy) * W;
                const float* w_row = wv + ((size_t(oc) * C + c) * KH + ky) * KW;
                for (int kx = 0; kx < KW; ++kx) {
                  const float wk = w_row[kx];
                  int lo, hi;
                  col_range(kx, lo, hi);
                  const float* g = g_row + lo;
                  float* dx = dx_row + lo * stride + kx - pad;
                  for (int n = hi - lo; n > 0; --n) {
                    *dx += wk * *g++;
                    dx += stride;
                  }
                }
              }
          }
      });
    }
    if (w->requires_grad) {
      w->ensure_grad();
      float* wg = w->grad.data();
      parallel_for(O, [&](int64_t oc) {
        for (int bb = 0; bb < B; ++bb)
          for (int y = 0; y < HO; ++y) {
            const float* g_row = og + ((size_t(bb) * O + oc) * HO + y) * WO;
            for (int c = 0; c < C; ++c)
              for (int ky = 0; ky < KH; ++ky) {
                const int iy = y * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                const float* x_row = xv + ((size_t(bb) * C + c) * H + iy) * W;
                float* dw_row = wg + ((size_t(oc) * C + c) * KH + ky) * KW;
                for (int kx = 0; kx < KW; ++kx) {
                  int lo, hi;
                  col_range(kx, lo, hi);
                  const float* g = g_row + lo;
                  const float* xr = x_row + lo * stride + kx - pad;
                  float acc = 0.0f;
                  for (int n = hi - lo; n > 0; --n) {
                    acc += *g++ * *xr;
                    xr += stride;
                  }
                  dw_row[kx] += acc;
                }
              }
          }
      });
    }
    if (b->requires_grad) {
      b->ensure_grad();
      parallel_for(O, [&](int64_t oc) {
        double acc = 0.0;
        for (int bb = 0; bb < B; ++bb) {
          const float* g_row = og + ((size_t(bb) * O + oc) * HO) * WO;
          for (int i = 0; i < HO * WO; ++i) acc += double(g_row[i]);
        }
        b->grad[size_t(oc)] += float(acc);
      });
    }
  });

  const float* xv = x->value.data();
  const float* wv = w->value.data();
  const float* bv = b->value.data();
  float* ov = out->value.data();
  parallel_for(int64_t(B) * O, [&](int64_t bo) {
    const int bb = int(bo / O), oc = int(bo % O);
    for (int y = 0; y < HO; ++y) {
      float* out_row = ov + ((size_t(bb) * O + oc) * HO + y) * WO;
      for (int i = 0; i < WO; ++i) out_row[i] = bv[oc];
      for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const float* x_row = xv + ((size_t(bb) * C + c) * H + iy) * W;
          const float* w_row = wv + ((size_t(oc) * C + c) * KH + ky) * KW;
          for (int kx = 0; kx < KW; ++kx) {
            const float wk = w_row[kx];
            int lo, hi;
            col_range(kx, lo, hi);
            float* o_ptr = out_row + lo;
            const float* xr = x_row + lo * stride + kx - pad;
            for (int n = hi - lo; n > 0; --n) {
              *o_ptr++ += wk * *xr;
              xr += stride;
            }
          }
        }
    }
  });
  return out;
}

Var global_avg_pool(const Var& x) {
  check(x->rank() == 4, "global_avg_pool: expected 4-D input");
  const int B = x->dim(0), C = x->dim(1), HW = x->dim(2) * x->dim(3);
  Var out = make_node({B, C}, {x}, [x, B, C, HW](Tensor& o) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const float inv = 1.0f / float(HW);
    parallel_for(int64_t(B) * C, [&](int64_t bc) {
      const float g = o.grad[size_t(bc)] * inv;
      float* xg = x->grad.data() + size_t(bc) * HW;
      for (int i = 0; i < HW; ++i) xg[i] += g;
    });
  });
  parallel_for(int64_t(B) * C, [&](int64_t bc) {
    const float* xv = x->value.data() + size_t(bc) * HW;
    double acc = 0.0;
    for (int i = 0; i < HW; ++i) acc += double(xv[i]);
    out->value[size_t(bc)] = float(acc / HW);
  });
  return out;
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               std::vector<float>& running_mean, std::vector<float>& running_var,
               bool training, float momentum, float eps) {
  check(x->rank() == 2 || x->rank() == 4, "batch_norm: expected 2-D or 4-D input");
  const int B = x->dim(0), C = x->dim(1);
  const int S = x->rank() == 4 ? x->dim(2) * x->dim(3) : 1;
  const int64_t n = int64_t(B) * S;
  check(gamma->numel() == C && beta->numel() == C, "batch_norm: affine shape mismatch");
  check(int(running_mean.size()) == C && int(running_var.size()) == C,
        "batch_norm: running stats shape mismatch");

  auto idx = [=](int bb, int c, int s) { return (size_t(bb) * C + c) * S + s; };

  auto mean_c = std::make_shared<std::vector<float>>(C);
  auto invstd_c = std::make_shared<std::vector<float>>(C);
  auto xhat = std::make_shared<std::vector<float>>(size_t(x->numel()));

  if (training) {
    parallel_for(C, [&](int64_t c) {
      double sum = 0.0, sq = 0.0;
      for (int bb = 0; bb < B; ++bb)
        for (int s = 0; s < S; ++s) {
          const double v = double(x->value[idx(bb, int(c), s)]);
          sum += v;
          sq += v * v;
        }
      const double m = sum / double(n);
      const double var = std::max(0.0, sq / double(n) - m * m);
      (*mean_c)[size_t(c)] = float(m);
      (*invstd_c)[size_t(c)] = float(1.0 / std::sqrt(var + double(eps)));
    });
    // fold batch stats into running estimates (unbiased variance when n > 1)
    for (int c = 0; c < C; ++c) {
      const float m = (*mean_c)[size_t(c)];
      const float is = (*invstd_c)[size_t(c)];
      float var = 1.0f / (is * is) - eps;
      if (var < 0.0f) var = 0.0f;
      const float var_unbiased = n > 1 ? var * float(n) / float(n - 1) : var;
      running_mean[size_t(c)] = (1.0f - momentum) * running_mean[size_t(c)] + momentum * m;
      running_var[size_t(c)] = (1.0f - momentum) * running_var[size_t(c)] + momentum * var_unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean_c)[size_t(c)] = running_mean[size_t(c)];
      (*invstd_c)[size_t(c)] = 1.0f / std::sqrt(running_var[size_t(c)] + eps);
    }
  }

  Var out = make_node(x->shape, {x, gamma, beta},
                      [x, gamma, beta, mean_c, invstd_c, xhat, B, C, S, n, training, idx](Tensor& o) {
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    parallel_for(C, [&](int64_t ci) {
      const int c = int(ci);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int bb = 0; bb < B; ++bb)
        for (int s = 0; s < S; ++s) {
          const size_t i = idx(bb, c, s);
          sum_dy += double(o.grad[i]);
          sum_dy_xhat += double(o.grad[i]) * double((*xhat)[i]);
        }
      if (gamma->requires_grad) gamma->grad[size_t(c)] += float(sum_dy_xhat);
      if (beta->requires_grad) beta->grad[size_t(c)] += float(sum_dy);
      if (x->requires_grad) {
        const float g = gamma->value[size_t(c)];
        const float is = (*invstd_c)[size_t(c)];
        if (training) {
          const float mean_dy = float(sum_dy / double(n));
          const float mean_dy_xhat = float(sum_dy_xhat / double(n));
          for (int bb = 0; bb < B; ++bb)
            for (int s = 0; s < S; ++s) {
              const size_t i = idx(bb, c, s);
              x->grad[i] += g * is * (o.grad[i] - mean_dy - (*xhat)[i] * mean_dy_xhat);
            }
        } else {
          for (int bb = 0; bb < B; ++bb)
            for (int s = 0; s < S; ++s) {
              const size_t i = idx(bb, c, s);
              x->grad[i] += g * is * o.grad[i];
            }
        }
      }
    });
  });

  parallel_for(C, [&](int64_t ci) {
    const int c = int(ci);
    const float m = (*mean_c)[size_t(c)];
    const float is = (*invstd_c)[size_t(c)];
    const float g = gamma->value[size_t(c)];
    const float bta = beta->value[size_t(c)];
    for (int bb = 0; bb < B; ++bb)
      for (int s = 0; s < S; ++s) {
        const size_t i = idx(bb, c, s);
        const float xh = (x->value[i] - m) * is;
        (*xhat)[i] = xh;
        out->value[i] = g * xh + bta;
      }
  });
  return out;
}

// ----------------------------------------------------------------------- rows

Var softmax_rows(const Var& a) {
  check(a->rank() == 2, "softmax_rows: expected 2-D input");
  const int B = a->dim(0), C = a->dim(1);
  Var out = make_node(a->shape, {a}, [a, B, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    parallel_for(B, [&](int64_t r) {
      const float* y = o.value.data() + size_t(r) * C;
      const float* dy = o.grad.data() + size_t(r) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += double(dy[j]) * double(y[j]);
      float* da = a->grad.data() + size_t(r) * C;
      for (int j = 0; j < C; ++j) da[j] += y[j] * (dy[j] - float(dot));
    });
  });
  parallel_for(B, [&](int64_t r) {
    const float* x = a->value.data() + size_t(r) * C;
    float* y = out->value.data() + size_t(r) * C;
    float mx = x[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < C; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += double(y[j]);
    }
    const float inv = float(1.0 / sum);
    for (int j = 0; j < C; ++j) y[j] *= inv;
  });
  return out;
}

Var log_softmax_rows(const Var& a) {
  check(a->rank() == 2, "log_softmax_rows: expected 2-D input");
  const int B = a->dim(0), C = a->dim(1);
  Var out = make_node(a->shape, {a}, [a, B, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    parallel_for(B, [&](int64_t r) {
      const float* y = o.value.data() + size_t(r) * C;
      const float* dy = o.grad.data() + size_t(r) * C;
      double sum_dy = 0.0;
      for (int j = 0; j < C; ++j) sum_dy += double(dy[j]);
      float* da = a->grad.data() + size_t(r) * C;
      for (int j = 0; j < C; ++j) da[j] += dy[j] - std::exp(y[j]) * float(sum_dy);
    });
  });
  parallel_for(B, [&](int64_t r) {
    const float* x = a->value.data() + size_t(r) * C;
    float* y = out->value.data() + size_t(r) * C;
    float mx = x[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < C; ++j) sum += std::exp(double(x[j]) - mx);
    const float lse = mx + float(std::log(sum));
    for (int j = 0; j < C; ++j) y[j] = x[j] - lse;
  });
  return out;
}

Var pick_rows(const Var& a, std::vector<int> cols) {
  check(a->rank() == 2, "pick_rows: expected 2-D input");
  const int B = a->dim(0), C = a->dim(1);
  check(int(cols.size()) == B, "pick_rows: one column index per row required");
  for (int c : cols) check(c >= 0 && c < C, "pick_rows: column index out of range");
  auto idx = std::make_shared<std::vector<int>>(std::move(cols));
  Var out = make_node({B}, {a}, [a, idx, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (size_t r = 0; r < idx->size(); ++r)
      a->grad[r * size_t(C) + size_t((*idx)[r])] += o.grad[r];
  });
  for (size_t r = 0; r < idx->size(); ++r)
    out->value[r] = a->value[r * size_t(C) + size_t((*idx)[r])];
  return out;
}

Var l2_normalize_rows(const Var& a) {
  check(a->rank() == 2, "l2_normalize_rows: expected 2-D input");
  const int B = a->dim(0), C = a->dim(1);
  auto norms = std::make_shared<std::vector<float>>(B);
  Var out = make_node(a->shape, {a}, [a, norms, B, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    parallel_for(B, [&](int64_t r) {
      const float* y = o.value.data() + size_t(r) * C;
      const float* dy = o.grad.data() + size_t(r) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += double(dy[j]) * double(y[j]);
      const float inv = 1.0f / (*norms)[size_t(r)];
      float* da = a->grad.data() + size_t(r) * C;
      for (int j = 0; j < C; ++j) da[j] += inv * (dy[j] - float(dot) * y[j]);
    });
  });
  parallel_for(B, [&](int64_t r) {
    const float* x = a->value.data() + size_t(r) * C;
    double sq = 0.0;
    for (int j = 0; j < C; ++j) sq += double(x[j]) * double(x[j]);
    const float nrm = std::max(float(std::sqrt(sq)), 1e-12f);
    (*norms)[size_t(r)] = nrm;
    float* y = out->value.data() + size_t(r) * C;
    for (int j = 0; j < C; ++j) y[j] = x[j] / nrm;
  });
  return out;
}

// ----------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
  Var out = make_node({1}, {a}, [a](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float g = o.grad[0];
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += g;
  });
  double acc = 0.0;
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) acc += double(a->value[size_t(i)]);
  out->value[0] = float(acc);
  return out;
}

Var mean_all(const Var& a) {
  const int64_t n = a->numel();
  check(n > 0, "mean_all: empty tensor");
  Var out = make_node({1}, {a}, [a, n](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float g = o.grad[0] / float(n);
    for (int64_t i = 0; i < n; ++i) a->grad[size_t(i)] += g;
  });
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += double(a->value[size_t(i)]);
  out->value[0] = float(acc / double(n));
  return out;
}

Var colwise_max(const Var& a) {
  check(a->rank() == 2, "colwise_max: expected 2-D input");
  const int N = a->dim(0), C = a->dim(1);
  check(N >= 1, "colwise_max: needs at least one row");
  auto arg = std::make_shared<std::vector<int>>(C);
  Var out = make_node({C}, {a}, [a, arg, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int j = 0; j < C; ++j)
      a->grad[size_t((*arg)[size_t(j)]) * C + size_t(j)] += o.grad[size_t(j)];
  });
  for (int j = 0; j < C; ++j) {
    float best = a->value[size_t(j)];
    int bi = 0;
    for (int i = 1; i < N; ++i) {
      const float v = a->value[size_t(i) * C + size_t(j)];
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    (*arg)[size_t(j)] = bi;
    out->value[size_t(j)] = best;
  }
  return out;
}

Var colwise_mean(const Var& a) {
  check(a->rank() == 2, "colwise_mean: expected 2-D input");
  const int N = a->dim(0), C = a->dim(1);
  check(N >= 1, "colwise_mean: needs at least one row");
  Var out = make_node({C}, {a}, [a, N, C](Tensor& o) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const float inv = 1.0f / float(N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j)
        a->grad[size_t(i) * C + size_t(j)] += o.grad[size_t(j)] * inv;
  });
  for (int j = 0; j < C; ++j) {
    double acc = 0.0;
    for (int i = 0; i < N; ++i) acc += double(a->value[size_t(i) * C + size_t(j)]);
    out->value[size_t(j)] = float(acc / N);
  }
  return out;
}

}  // namespace simmil
