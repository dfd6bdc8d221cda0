#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "losses.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace simmil {
namespace {

struct Trial {
  std::vector<Var> params;
  std::function<Var()> forward;
};

Var randomized(std::vector<int> shape, RngStream& rng, float lo = -1.0f, float hi = 1.0f) {
  Var t = make_tensor(std::move(shape), true);
  for (auto& v : t->value) v = float(rng.uniform(lo, hi));
  t->name = "x";
  return t;
}

// Central differences with one step/4 refinement for coordinates whose first
// estimate straddles a kink; a wrong gradient keeps disagreeing at both steps.
double fd_max_rel_err(const Trial& trial, double step = 1e-3) {
  for (auto& p : trial.params) p->zero_grad();
  backward(trial.forward());
  auto eval = [&]() { return double(trial.forward()->value[0]); };
  auto central = [&](float& slot, float keep, double h) {
    slot = keep + float(h);
    const double up = eval();
    slot = keep - float(h);
    const double down = eval();
    slot = keep;
    return (up - down) / (2.0 * h);
  };
  double worst = 0.0;
  for (const auto& p : trial.params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const float keep = p->value[i];
      const double ad = double(p->grad[i]);
      double fd = central(p->value[i], keep, step);
      double rel = std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1.0});
      if (rel >= 1e-3) {
        fd = central(p->value[i], keep, step / 4.0);
        rel = std::min(rel, std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1.0}));
      }
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Run one component's trial with up to three redraws: a measurement taken on
// top of a ReLU kink is not a valid central-difference sample.
double run_component(const std::function<Trial(RngStream)>& build, RngStream rng) {
  double best = 1e9;
  for (int attempt = 0; attempt < 3; ++attempt) {
    Trial t = build(rng.derive("attempt", uint64_t(attempt)));
    best = std::min(best, fd_max_rel_err(t));
    if (best < 1e-3) break;
  }
  return best;
}

int64_t count_params(const std::vector<Var>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p->numel();
  return n;
}

}  // namespace

GradCheckResult run_gradcheck(int trials, uint64_t seed) {
  GradCheckResult result;
  RngStream root(seed);

  struct Component {
    const char* name;
    std::function<Trial(RngStream)> build;
  };

  const std::vector<Component> components = {
      {"ce_loss",
       [](RngStream rng) {
         Trial t;
         Var logits = randomized({3, 4}, rng, -2.0f, 2.0f);
         t.params = {logits};
         t.forward = [logits]() { return ce_loss(logits, {1, 3, 0}); };
         return t;
       }},
      {"sce_loss",
       [](RngStream rng) {
         Trial t;
         Var logits = randomized({3, 4}, rng, -2.0f, 2.0f);
         t.params = {logits};
         t.forward = [logits]() { return sce_loss(logits, {2, 0, 1}, 1.0f, 1.0f, -4.0f); };
         return t;
       }},
      {"ranking_loss",
       [](RngStream rng) {
         Trial t;
         Var scores = randomized({6, 1}, rng, -2.0f, 2.0f);
         t.params = {scores};
         t.forward = [scores]() {
           return ranking_loss(scores, {{0, 1}, {2, 3}, {4, 5}, {0, 5}});
         };
         return t;
       }},
      {"survival_nll",
       [](RngStream rng) {
         Trial t;
         Var logits = randomized({3, 4}, rng, -2.0f, 2.0f);
         t.params = {logits};
         t.forward = [logits]() {
           return survival_nll(logits, {0, 2, 3}, {false, true, false});
         };
         return t;
       }},
      {"nt_xent",
       [](RngStream rng) {
         Trial t;
         Var z = randomized({6, 8}, rng, -1.0f, 1.0f);
         t.params = {z};
         t.forward = [z]() { return nt_xent(z, 0.5f); };
         return t;
       }},
      {"extractor",
       [](RngStream rng) {
         Trial t;
         auto ext = std::make_shared<Extractor>(
             make_extractor({4, 6}, 3, rng.derive("init")));
         Var x = randomized({2, 3, 8, 8}, rng, 0.0f, 1.0f);
         x->requires_grad = false;
         t.params = ext->params();
         auto readout = std::make_shared<LinearLayer>(
             make_linear(6, 1, "readout", rng.derive("readout")));
         t.params.push_back(readout->w);
         t.params.push_back(readout->b);
         t.forward = [ext, x, readout]() {
           return mean_all((*readout)(ext->forward(x, true)));
         };
         return t;
       }},
      {"head",
       [](RngStream rng) {
         Trial t;
         auto head = std::make_shared<PredictionHead>(make_head(6, 5, 3, rng.derive("init")));
         Var f = randomized({4, 6}, rng);
         f->requires_grad = false;
         t.params = head->params();
         t.forward = [head, f]() { return ce_loss(head->forward(f, true), {0, 2, 1, 1}); };
         return t;
       }},
      {"abmil",
       [](RngStream rng) {
         Trial t;
         auto agg = std::make_shared<AbmilAggregator>(make_abmil(6, 3, 2, rng.derive("init")));
         Var feats = randomized({5, 6}, rng);
         feats->requires_grad = false;
         t.params = agg->params();
         t.forward = [agg, feats]() { return ce_loss(agg->forward(feats).bag_logits, {1}); };
         return t;
       }},
      {"dsmil",
       [](RngStream rng) {
         Trial t;
         auto agg = std::make_shared<DsmilAggregator>(make_dsmil(6, 2, rng.derive("init")));
         Var feats = randomized({5, 6}, rng);
         feats->requires_grad = false;
         t.params = agg->params();
         t.forward = [agg, feats]() { return ce_loss(agg->forward(feats).bag_logits, {0}); };
         return t;
       }},
  };

  for (const auto& comp : components) {
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      RngStream rng = root.derive(comp.name, uint64_t(trial));
      worst = std::max(worst, run_component(comp.build, rng));
      // tally checked coordinates once per trial
      Trial t = comp.build(rng.derive("attempt", 0));
      result.coordinates_checked += count_params(t.params);
    }
    result.per_component[comp.name] = worst;
    result.max_rel_err = std::max(result.max_rel_err, worst);
  }
  return result;
}

}  // namespace simmil
