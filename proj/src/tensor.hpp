#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace simmil {

struct Tensor;
using Var = std::shared_ptr<Tensor>;

// Dense row-major float tensor participating in a reverse-mode tape.
// Nodes reference their inputs, so a graph is acyclic by construction;
// backward() walks the tape in reverse topological order. Leaves
// (parameters, inputs) have no backfn and their grads accumulate across
// calls until zeroed by the optimizer.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;  // same length as value when requires_grad
  bool requires_grad = false;
  std::string name;  // set for named parameters / state arrays

  std::vector<Var> inputs;
  std::function<void(Tensor&)> backfn;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

Var make_tensor(std::vector<int> shape, bool requires_grad = false);
Var make_param(std::vector<int> shape, std::string name);
Var make_const(std::vector<int> shape, std::vector<float> data);
Var scalar_const(float v);

// Reverse-mode sweep from a scalar loss. Populates grad on every tensor in
// the graph that requires gradients.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_act(const Var& a);
Var log_act(const Var& a);
Var exp_act(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var transpose2d(const Var& a);
Var gather_rows(const Var& a, std::vector<int> rows);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                    // [m,k] x [k,n]
Var linear(const Var& x, const Var& w, const Var& b);      // [B,i] x [i,o] + b

// ---- convolution / pooling ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var global_avg_pool(const Var& x);                         // [B,C,H,W] -> [B,C]

// Batch norm over the channel axis (input [B,C] or [B,C,H,W]). Training
// mode normalizes with batch statistics and folds them into the running
// estimates; eval mode normalizes with the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               std::vector<float>& running_mean, std::vector<float>& running_var,
               bool training, float momentum = 0.1f, float eps = 1e-5f);

// ---- rows of a 2-D tensor ----
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var pick_rows(const Var& a, std::vector<int> cols);        // [B,C] -> [B]
Var l2_normalize_rows(const Var& a);

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var colwise_max(const Var& a);   // [N,d] -> [d]; first index wins ties
Var colwise_mean(const Var& a);  // [N,d] -> [d]

}  // namespace simmil
