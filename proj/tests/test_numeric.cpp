#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "nn.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace simmil;
using simmil::testing::fd_gradcheck;

namespace {

Var randu(std::vector<int> shape, RngStream& rng, bool requires_grad,
          float lo = -1.0f, float hi = 1.0f) {
  Var t = make_tensor(std::move(shape), requires_grad);
  for (auto& v : t->value) v = float(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("backward: y = x^2 at x=3 gives dy/dx = 6") {
  Var x = make_param({1}, "x");
  x->value[0] = 3.0f;
  Var y = square(x);
  backward(y);
  CHECK(y->value[0] == doctest::Approx(9.0));
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: softmax followed by sum has zero gradient") {
  RngStream rng(7);
  Var x = make_param({1, 5}, "x");
  for (auto& v : x->value) v = float(rng.uniform(-2, 2));
  Var loss = sum_all(softmax_rows(x));
  backward(loss);
  CHECK(loss->value[0] == doctest::Approx(1.0));
  for (float g : x->grad) CHECK(std::fabs(g) < 1e-6);
}

TEST_CASE("backward: rejects non-scalar loss") {
  Var x = make_param({2, 2}, "x");
  Var y = relu(x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("backward: 3-layer perceptron matches finite differences") {
  RngStream rng(11);
  RngStream init(12);
  Var x = randu({4, 3}, rng, false);
  auto l1 = make_linear(3, 5, "l1", init.derive("l1"));
  auto l2 = make_linear(5, 4, "l2", init.derive("l2"));
  auto l3 = make_linear(4, 2, "l3", init.derive("l3"));
  std::vector<Var> params = {l1.w, l1.b, l2.w, l2.b, l3.w, l3.b};

  auto loss_fn = [&]() {
    Var h = tanh_act(l1(x));
    h = sigmoid(l2(h));
    Var out = l3(h);
    Var loss = mean_all(square(out));
    return double(loss->value[0]);
  };
  // analytic pass
  for (auto& p : params) p->zero_grad();
  {
    Var h = tanh_act(l1(x));
    h = sigmoid(l2(h));
    Var loss = mean_all(square(l3(h)));
    backward(loss);
  }
  auto rep = fd_gradcheck(params, loss_fn);
  CHECK(rep.checked >= 20);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("gradients: elementwise, matmul, conv, pools, norms vs finite differences") {
  RngStream master(99);
  for (int trial = 0; trial < 8; ++trial) {
    // composite graph touching every op family
    auto rep = simmil::testing::fd_gradcheck_robust([&](int attempt) {
      RngStream rng = master.derive("trial", uint64_t(trial), uint64_t(attempt));
      auto x = randu({3, 2, 6, 6}, rng, false, 0.0f, 1.0f);
      auto conv = std::make_shared<Conv2dLayer>(make_conv(2, 4, 3, 2, 1, "c", rng.derive("conv")));
      auto bn2 = std::make_shared<BatchNormLayer>(make_batchnorm(4, "bn2"));
      auto lin = std::make_shared<LinearLayer>(make_linear(4, 3, "lin", rng.derive("lin")));
      auto forward = [x, conv, bn2, lin]() {
        Var h = (*conv)(x);
        h = (*bn2)(h, true);
        h = relu(h);
        Var f = global_avg_pool(h);
        Var o = (*lin)(f);
        Var sm = log_softmax_rows(o);
        return neg(mean_all(pick_rows(sm, {0, 1, 2})));
      };
      simmil::testing::FdTrial t;
      t.params = {conv->w, conv->b, bn2->gamma, bn2->beta, lin->w, lin->b};
      for (auto& p : t.params) p->zero_grad();
      backward(forward());
      t.loss_fn = [forward]() { return double(forward()->value[0]); };
      return t;
    });
    CHECK(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("gradients: batch norm eval mode, max/mean reductions, normalize") {
  RngStream rng(1234);
  Var x = randu({5, 3}, rng, false);
  auto lin = make_linear(3, 3, "l", rng.derive("l"));
  auto bn = make_batchnorm(3, "bn");
  for (auto& v : bn.running_mean) v = 0.3f;
  for (auto& v : bn.running_var) v = 1.7f;
  std::vector<Var> params = {lin.w, lin.b, bn.gamma, bn.beta};

  auto loss_fn = [&]() {
    Var h = bn(lin(x), false);
    Var mx = colwise_max(h);
    Var mn = colwise_mean(h);
    Var nrm = l2_normalize_rows(reshape(add(mx, mn), {1, 3}));
    return double(sum_all(mul(nrm, nrm))->value[0] + mean_all(softplus(h))->value[0]);
  };
  for (auto& p : params) p->zero_grad();
  {
    Var h = bn(lin(x), false);
    Var mx = colwise_max(h);
    Var mn = colwise_mean(h);
    Var nrm = l2_normalize_rows(reshape(add(mx, mn), {1, 3}));
    Var loss = add(sum_all(mul(nrm, nrm)), mean_all(softplus(h)));
    backward(loss);
  }
  auto rep = fd_gradcheck(params, loss_fn);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("gradients: gather/transpose/exp/log path") {
  RngStream rng(555);
  Var w = randu({4, 3}, rng, true, 0.2f, 1.5f);
  w->name = "w";
  auto loss_fn = [&]() {
    Var g = gather_rows(w, {0, 2, 2, 3});
    Var t = transpose2d(g);
    Var s = sigmoid(matmul(t, g));
    return double(mean_all(log_act(add_scalar(exp_act(s), 1.0f)))->value[0]);
  };
  w->zero_grad();
  {
    Var g = gather_rows(w, {0, 2, 2, 3});
    Var t = transpose2d(g);
    Var s = sigmoid(matmul(t, g));
    backward(mean_all(log_act(add_scalar(exp_act(s), 1.0f))));
  }
  auto rep = fd_gradcheck({w}, loss_fn);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("sgd momentum: spec update sequence") {
  SUBCASE("momentum 0 reduces to vanilla") {
    Var p = make_param({1}, "p");
    p->value[0] = 1.0f;
    SgdMomentum opt({p}, 0.1f, 0.0f);
    p->ensure_grad();
    p->grad[0] = 2.0f;
    opt.step();
    CHECK(p->value[0] == doctest::Approx(0.8));
  }
  SUBCASE("two steps with momentum 0.9, lr 1, g=1") {
    Var p = make_param({1}, "p");
    p->value[0] = 0.0f;
    SgdMomentum opt({p}, 1.0f, 0.9f);
    p->ensure_grad();
    p->grad[0] = 1.0f;
    opt.step();
    CHECK(p->value[0] == doctest::Approx(-1.0));
    p->grad[0] = 1.0f;
    opt.step();
    CHECK(p->value[0] == doctest::Approx(-2.9));
  }
  SUBCASE("zero gradient and zero velocity leaves params unchanged") {
    Var p = make_param({3}, "p");
    p->value = {1.0f, -2.0f, 0.5f};
    SgdMomentum opt({p}, 0.5f, 0.9f);
    p->ensure_grad();
    opt.step();
    CHECK(p->value[0] == 1.0f);
    CHECK(p->value[1] == -2.0f);
    CHECK(p->value[2] == 0.5f);
  }
  SUBCASE("missing grads rejected") {
    Var p = make_param({2}, "p");
    p->grad.clear();
    SgdMomentum opt({p}, 0.1f);
    CHECK_THROWS_AS(opt.step(), std::invalid_argument);
  }
}

TEST_CASE("adam: first-step magnitude, zero-grad fixpoint, monotone movement") {
  SUBCASE("first step moves by ~lr regardless of gradient scale") {
    for (float g : {0.5f, 3.0f, 40.0f}) {
      Var p = make_param({1}, "p");
      p->value[0] = 1.0f;
      Adam opt({p}, 1e-3f);
      p->ensure_grad();
      p->grad[0] = g;
      opt.step();
      CHECK(std::fabs(std::fabs(p->value[0] - 1.0f) - 1e-3f) < 1e-5f);
    }
  }
  SUBCASE("all-zero gradients from fresh state leave params unchanged") {
    Var p = make_param({4}, "p");
    p->value = {1, 2, 3, 4};
    Adam opt({p}, 1e-2f);
    p->ensure_grad();
    opt.step();
    for (size_t i = 0; i < 4; ++i) CHECK(p->value[i] == doctest::Approx(float(i + 1)));
  }
  SUBCASE("two steps with constant gradient move monotonically against its sign") {
    Var p = make_param({1}, "p");
    p->value[0] = 0.0f;
    Adam opt({p}, 1e-3f);
    p->ensure_grad();
    p->grad[0] = 2.5f;
    opt.step();
    const float after1 = p->value[0];
    p->grad[0] = 2.5f;
    opt.step();
    const float after2 = p->value[0];
    CHECK(after1 < 0.0f);
    CHECK(after2 < after1);
  }
}

TEST_CASE("optimizer steps are deterministic") {
  auto run = [](uint64_t seed) {
    RngStream rng(seed);
    Var p = randu({64}, rng, true);
    p->ensure_grad();
    for (auto& g : p->grad) g = float(rng.uniform(-1, 1));
    Adam a({p}, 1e-3f);
    a.step();
    SgdMomentum s({p}, 1e-2f, 0.9f);
    s.step();
    return p->value;
  };
  CHECK(run(42) == run(42));
}

TEST_CASE("lr schedules: spec examples and monotonicity") {
  LrSchedule step{LrSchedule::Kind::Step, {60, 80}, 0.1f, 100};
  CHECK(schedule_lr(step, 1e-3f, 0) == doctest::Approx(1e-3));
  CHECK(schedule_lr(step, 1e-3f, 61) == doctest::Approx(1e-4));
  CHECK(schedule_lr(step, 1e-3f, 85) == doctest::Approx(1e-5));

  LrSchedule cos{LrSchedule::Kind::Cosine, {}, 0.1f, 100};
  CHECK(schedule_lr(cos, 2.0f, 50) == doctest::Approx(1.0));
  CHECK(schedule_lr(cos, 2.0f, 0) == doctest::Approx(2.0));

  // non-increasing over the whole range
  float prev_s = 1e9f, prev_c = 1e9f;
  for (int e = 0; e < 100; ++e) {
    const float ls = schedule_lr(step, 1e-3f, e);
    const float lc = schedule_lr(cos, 1e-3f, e);
    CHECK(ls <= prev_s);
    CHECK(lc <= prev_c);
    prev_s = ls;
    prev_c = lc;
  }
  CHECK_THROWS_AS(schedule_lr(step, 1e-3f, 100), std::invalid_argument);
  CHECK_THROWS_AS(schedule_lr(cos, 1e-3f, -1), std::invalid_argument);
}

TEST_CASE("rng streams: deterministic, component-sensitive") {
  RngStream a(17);
  RngStream b(17);
  CHECK(a.next_u64() == b.next_u64());
  RngStream c = RngStream(17).derive("aug", 3, 5);
  RngStream d = RngStream(17).derive("aug", 3, 6);
  CHECK(c.next_u64() != d.next_u64());
  RngStream e = RngStream(17).derive("aug", 3, 5);
  CHECK(RngStream(17).derive("aug", 3, 5).next_u64() == e.next_u64());
  // uniforms in range
  RngStream u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.uniform_int(10) < 10);
  }
}
