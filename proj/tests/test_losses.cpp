#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "losses.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace simmil;

namespace {

// direct-evaluation oracles, independent of the graph ops
double oracle_ce(const std::vector<double>& logits, int target) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return -(logits[size_t(target)] - mx - std::log(sum));
}

double oracle_softmax_at(const std::vector<double>& logits, int idx) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::exp(logits[size_t(idx)] - mx) / sum;
}

double oracle_survival_nll(const std::vector<double>& logits, int bin, bool censored) {
  auto hazard = [&](int j) { return 1.0 / (1.0 + std::exp(-logits[size_t(j)])); };
  if (censored) {
    double acc = 0.0;
    for (int j = 0; j <= bin; ++j) acc += -std::log(1.0 - hazard(j));
    return acc;
  }
  double acc = -std::log(hazard(bin));
  for (int j = 0; j < bin; ++j) acc += -std::log(1.0 - hazard(j));
  return acc;
}

Var logits_from(const std::vector<float>& vals, int rows, int cols) {
  return make_const({rows, cols}, vals);
}

}  // namespace

TEST_CASE("ce_loss: examples and oracle agreement") {
  SUBCASE("probability one at the target gives zero loss") {
    Var l = logits_from({40.0f, 0.0f, 0.0f}, 1, 3);
    CHECK(ce_loss(l, {0})->value[0] == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("uniform logits over four classes give ln 4") {
    Var l = logits_from({0.3f, 0.3f, 0.3f, 0.3f}, 1, 4);
    CHECK(ce_loss(l, {2})->value[0] == doctest::Approx(std::log(4.0)));
  }
  SUBCASE("random cases match the softmax+log oracle") {
    RngStream rng(31);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> raw(5);
      std::vector<float> rawf(5);
      for (size_t i = 0; i < 5; ++i) {
        raw[i] = rng.uniform(-3, 3);
        rawf[i] = float(raw[i]);
      }
      const int target = int(rng.uniform_int(5));
      // the op sees f32 logits; feed the oracle the same rounded values
      for (size_t i = 0; i < 5; ++i) raw[i] = double(rawf[i]);
      Var l = logits_from(rawf, 1, 5);
      CHECK(ce_loss(l, {target})->value[0] ==
            doctest::Approx(oracle_ce(raw, target)).epsilon(1e-6));
    }
  }
  SUBCASE("target out of range rejected") {
    Var l = logits_from({0.0f, 0.0f}, 1, 2);
    CHECK_THROWS_AS(ce_loss(l, {2}), std::invalid_argument);
  }
}

TEST_CASE("sce_loss: frozen example, identities") {
  SUBCASE("p=[0.7,0.3], target 0, alpha=beta=1, A=-4") {
    // logits chosen so softmax is exactly [0.7, 0.3]
    Var l = logits_from({std::log(0.7f), std::log(0.3f)}, 1, 2);
    const double ce = -std::log(0.7);
    const double rce = 1.2;  // -(0.3 * (-4))
    const double total = double(sce_loss(l, {0}, 1.0f, 1.0f, -4.0f)->value[0]);
    CHECK(total == doctest::Approx(ce + rce).epsilon(1e-5));
    CHECK(total == doctest::Approx(1.55667).epsilon(1e-4));
  }
  SUBCASE("one-hot correct prediction gives zero") {
    Var l = logits_from({60.0f, 0.0f, 0.0f}, 1, 3);
    CHECK(std::fabs(sce_loss(l, {0}, 1.0f, 1.0f, -4.0f)->value[0]) < 1e-6);
  }
  SUBCASE("alpha = 0 reduces to ce_loss to 1e-12") {
    RngStream rng(77);
    for (int t = 0; t < 30; ++t) {
      std::vector<float> raw(8);
      for (auto& v : raw) v = float(rng.uniform(-2, 2));
      const int target = int(rng.uniform_int(4));
      Var a = logits_from(raw, 2, 4);
      Var b = logits_from(raw, 2, 4);
      const double sce = double(sce_loss(a, {target, 3 - target}, 0.0f, 1.0f, -4.0f)->value[0]);
      const double ce = double(ce_loss(b, {target, 3 - target})->value[0]);
      CHECK(sce == doctest::Approx(ce).epsilon(1e-12));
    }
  }
  SUBCASE("random cases match the direct-evaluation oracle") {
    RngStream rng(78);
    for (int t = 0; t < 30; ++t) {
      std::vector<float> raw(6);
      std::vector<double> rawd(6);
      for (size_t i = 0; i < 6; ++i) {
        raw[i] = float(rng.uniform(-3, 3));
        rawd[i] = double(raw[i]);
      }
      const int target = int(rng.uniform_int(6));
      const float alpha = float(rng.uniform(0, 2));
      const float beta = float(rng.uniform(0, 2));
      Var l = logits_from(raw, 1, 6);
      const double expected = beta * oracle_ce(rawd, target) +
                              alpha * 4.0 * (1.0 - oracle_softmax_at(rawd, target));
      CHECK(sce_loss(l, {target}, alpha, beta, -4.0f)->value[0] ==
            doctest::Approx(expected).epsilon(1e-5));
    }
  }
}

TEST_CASE("ranking_loss: frozen values, empty set, monotonicity") {
  SUBCASE("equal scores give exactly -0.5") {
    Var s = make_const({4, 1}, {1.3f, 1.3f, 0.2f, 0.2f});
    Var loss = ranking_loss(s, {{0, 1}, {2, 3}});
    CHECK(loss->value[0] == -0.5f);
  }
  SUBCASE("one pair with scores (2,0) gives -sigmoid(2)") {
    Var s = make_const({2, 1}, {2.0f, 0.0f});
    CHECK(ranking_loss(s, {{0, 1}})->value[0] ==
          doctest::Approx(-1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-6));
    CHECK(ranking_loss(s, {{0, 1}})->value[0] == doctest::Approx(-0.88080).epsilon(1e-4));
  }
  SUBCASE("empty pair set gives 0 and warns") {
    Var s = make_const({2, 1}, {1.0f, 2.0f});
    bool warned = false;
    CHECK(ranking_loss(s, {}, &warned)->value[0] == 0.0f);
    CHECK(warned);
  }
  SUBCASE("loss strictly decreases as the score gap grows") {
    double prev = 1.0;
    for (double gap = -3.0; gap <= 3.0; gap += 0.25) {
      Var s = make_const({2, 1}, {float(gap), 0.0f});
      const double v = double(ranking_loss(s, {{0, 1}})->value[0]);
      CHECK(v < prev);
      prev = v;
    }
  }
  SUBCASE("loss lies in [-1, 0]") {
    RngStream rng(5);
    for (int t = 0; t < 20; ++t) {
      std::vector<float> raw(6);
      for (auto& v : raw) v = float(rng.uniform(-5, 5));
      Var s = make_const({6, 1}, raw);
      const double v = double(ranking_loss(s, {{0, 1}, {2, 3}, {4, 5}})->value[0]);
      CHECK(v >= -1.0);
      CHECK(v <= 0.0);
    }
  }
}

TEST_CASE("survival_nll: trivial cases and product-form oracle") {
  SUBCASE("single bin, uncensored, hazard ~ 1 tends to 0") {
    Var l = logits_from({30.0f}, 1, 1);
    CHECK(std::fabs(survival_nll(l, {0}, {false})->value[0]) < 1e-6);
  }
  SUBCASE("censored with all hazards ~ 0 gives ~ 0") {
    Var l = logits_from({-30.0f, -30.0f, -30.0f}, 1, 3);
    CHECK(std::fabs(survival_nll(l, {2}, {true})->value[0]) < 1e-6);
  }
  SUBCASE("random cases match the explicit product-form oracle") {
    RngStream rng(91);
    for (int t = 0; t < 50; ++t) {
      std::vector<float> raw(4);
      std::vector<double> rawd(4);
      for (size_t i = 0; i < 4; ++i) {
        raw[i] = float(rng.uniform(-2.5, 2.5));
        rawd[i] = double(raw[i]);
      }
      const int bin = int(rng.uniform_int(4));
      const bool censored = rng.uniform() < 0.5;
      Var l = logits_from(raw, 1, 4);
      CHECK(survival_nll(l, {bin}, {censored})->value[0] ==
            doctest::Approx(oracle_survival_nll(rawd, bin, censored)).epsilon(1e-6));
    }
  }
  SUBCASE("bin out of range rejected") {
    Var l = logits_from({0.0f, 0.0f}, 1, 2);
    CHECK_THROWS_AS(survival_nll(l, {2}, {false}), std::invalid_argument);
  }
  SUBCASE("loss is non-negative") {
    RngStream rng(92);
    for (int t = 0; t < 20; ++t) {
      std::vector<float> raw(6);
      for (auto& v : raw) v = float(rng.uniform(-4, 4));
      Var l = logits_from(raw, 2, 3);
      CHECK(survival_nll(l, {1, 2}, {false, true})->value[0] >= 0.0f);
    }
  }
}

TEST_CASE("nt_xent: closed-form case and invariances") {
  SUBCASE("two identical orthogonal pairs at tau=1") {
    // pairs (e0, e0) and (e1, e1) in 4-d
    Var z = make_const({4, 4}, {1, 0, 0, 0,  // anchor 0
                                0, 1, 0, 0,  // anchor 1
                                1, 0, 0, 0,  // positive of 0
                                0, 1, 0, 0});
    const double expected = std::log(std::exp(1.0) + 2.0) - 1.0;  // 0.55144...
    CHECK(nt_xent(z, 1.0f)->value[0] == doctest::Approx(expected).epsilon(1e-6));
    CHECK(nt_xent(z, 1.0f)->value[0] == doctest::Approx(0.55144).epsilon(1e-4));
  }
  SUBCASE("invariant to per-vector rescaling") {
    RngStream rng(17);
    std::vector<float> raw(6 * 5);
    for (auto& v : raw) v = float(rng.uniform(-1, 1));
    Var a = make_const({6, 5}, raw);
    std::vector<float> scaled = raw;
    for (int i = 0; i < 6; ++i) {
      const float s = float(rng.uniform(0.2, 4.0));
      for (int j = 0; j < 5; ++j) scaled[size_t(i) * 5 + j] *= s;
    }
    Var b = make_const({6, 5}, scaled);
    CHECK(nt_xent(a, 0.7f)->value[0] ==
          doctest::Approx(nt_xent(b, 0.7f)->value[0]).epsilon(1e-4));
  }
  SUBCASE("fewer than two pairs rejected") {
    Var z = make_const({2, 3}, {1, 0, 0, 0, 1, 0});
    CHECK_THROWS_AS(nt_xent(z, 1.0f), std::invalid_argument);
  }
}

TEST_CASE("loss gradients match finite differences") {
  RngStream master(404);
  auto randparam = [](std::vector<int> shape, RngStream rng) {
    Var t = make_tensor(std::move(shape), true);
    for (auto& v : t->value) v = float(rng.uniform(-1.5, 1.5));
    return t;
  };

  SUBCASE("ce + sce") {
    Var l = randparam({3, 4}, master.derive("sce"));
    auto fn = [&]() { return sce_loss(l, {0, 2, 1}, 0.7f, 1.3f, -4.0f); };
    l->zero_grad();
    backward(fn());
    auto rep = simmil::testing::fd_gradcheck({l}, [&]() { return double(fn()->value[0]); });
    CHECK(rep.max_rel_err < 1e-3);
  }
  SUBCASE("ranking") {
    Var s = randparam({6, 1}, master.derive("rank"));
    auto fn = [&]() { return ranking_loss(s, {{0, 1}, {2, 3}, {4, 5}, {1, 4}}); };
    s->zero_grad();
    backward(fn());
    auto rep = simmil::testing::fd_gradcheck({s}, [&]() { return double(fn()->value[0]); });
    CHECK(rep.max_rel_err < 1e-3);
  }
  SUBCASE("survival nll") {
    Var l = randparam({3, 4}, master.derive("surv"));
    auto fn = [&]() { return survival_nll(l, {0, 3, 2}, {false, true, false}); };
    l->zero_grad();
    backward(fn());
    auto rep = simmil::testing::fd_gradcheck({l}, [&]() { return double(fn()->value[0]); });
    CHECK(rep.max_rel_err < 1e-3);
  }
  SUBCASE("nt_xent") {
    Var z = randparam({6, 8}, master.derive("ntxent"));
    auto fn = [&]() { return nt_xent(z, 0.5f); };
    z->zero_grad();
    backward(fn());
    auto rep = simmil::testing::fd_gradcheck({z}, [&]() { return double(fn()->value[0]); });
    CHECK(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("loss config validation") {
  Config cfg = Config::parse_text("[loss]\nkind = sce\nalpha = 1\nbeta = 1\n");
  LossConfig lc = LossConfig::from_config(cfg, LossConfig::Kind::CE);
  CHECK(lc.kind == LossConfig::Kind::SCE);
  CHECK_THROWS_AS(Config::parse_text("[loss]\nbogus = 1\n"), config_error);
  Config bad = Config::parse_text("[loss]\ntemperature = -1\n");
  CHECK_THROWS_AS(LossConfig::from_config(bad, LossConfig::Kind::NTXent), config_error);
  Config bad2 = Config::parse_text("[loss]\nA = 1\n");
  CHECK_THROWS_AS(LossConfig::from_config(bad2, LossConfig::Kind::SCE), config_error);
}
