#include "losses.hpp"

#include <stdexcept>

namespace simmil {

LossConfig LossConfig::from_config(const Config& cfg, Kind fallback) {
  LossConfig lc;
  const std::string kind = cfg.get_str("loss", "kind", "");
  if (kind.empty()) lc.kind = fallback;
  else if (kind == "ce") lc.kind = Kind::CE;
  else if (kind == "sce") lc.kind = Kind::SCE;
  else if (kind == "ranking") lc.kind = Kind::Ranking;
  else if (kind == "survival_nll") lc.kind = Kind::SurvivalNLL;
  else if (kind == "ntxent") lc.kind = Kind::NTXent;
  else throw config_error("loss.kind: unknown loss '" + kind + "'");
  lc.alpha = float(cfg.get_double("loss", "alpha", 1.0));
  lc.beta = float(cfg.get_double("loss", "beta", 1.0));
  lc.A = float(cfg.get_double("loss", "A", -4.0));
  lc.bins = int(cfg.get_int("loss", "bins", 4));
  lc.temperature = float(cfg.get_double("loss", "temperature", 0.5));
  lc.validate();
  return lc;
}

void LossConfig::validate() const {
  if (alpha < 0.0f || beta < 0.0f) throw config_error("loss: alpha and beta must be >= 0");
  if (A >= 0.0f) throw config_error("loss.A must be negative");
  if (temperature <= 0.0f) throw config_error("loss.temperature must be positive");
  if (bins < 2) throw config_error("loss.bins must be at least 2");
}

namespace {

void check_targets(const Var& logits, const std::vector<int>& targets) {
  if (logits->rank() != 2) throw std::invalid_argument("loss: expected [B,C] logits");
  if (int(targets.size()) != logits->dim(0))
    throw std::invalid_argument("loss: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= logits->dim(1))
      throw std::invalid_argument("loss: target class out of range");
}

}  // namespace

Var ce_loss(const Var& logits, const std::vector<int>& targets) {
  check_targets(logits, targets);
  Var lsm = log_softmax_rows(logits);
  return neg(mean_all(pick_rows(lsm, targets)));
}

Var sce_loss(const Var& logits, const std::vector<int>& targets, float alpha, float beta,
             float A) {
  check_targets(logits, targets);
  if (A >= 0.0f) throw std::invalid_argument("sce_loss: A must be negative");
  Var ce = ce_loss(logits, targets);
  // RCE = -sum_c p_c log(y_c) with one-hot y and log(0) := A, which leaves
  // -A * (1 - p_target)
  Var p_target = pick_rows(softmax_rows(logits), targets);
  Var rce = mul_scalar(mean_all(add_scalar(neg(p_target), 1.0f)), -A);
  return add(mul_scalar(ce, beta), mul_scalar(rce, alpha));
}

Var ranking_loss(const Var& scores, const std::vector<std::pair<int, int>>& pairs,
                 bool* warned) {
  if (warned) *warned = false;
  if (pairs.empty()) {
    if (warned) *warned = true;
    return scalar_const(0.0f);
  }
  Var flat = reshape(scores, {int(scores->numel()), 1});
  std::vector<int> rows_a, rows_b;
  rows_a.reserve(pairs.size());
  rows_b.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    rows_a.push_back(a);
    rows_b.push_back(b);
  }
  Var sa = gather_rows(flat, rows_a);
  Var sb = gather_rows(flat, rows_b);
  return neg(mean_all(sigmoid(sub(sa, sb))));
}

Var survival_nll(const Var& hazard_logits, const std::vector<int>& bin_index,
                 const std::vector<bool>& censored) {
  if (hazard_logits->rank() != 2) throw std::invalid_argument("survival_nll: expected [B,bins]");
  const int B = hazard_logits->dim(0);
  const int bins = hazard_logits->dim(1);
  if (int(bin_index.size()) != B || int(censored.size()) != B)
    throw std::invalid_argument("survival_nll: one (bin, censored) pair per row required");
  for (int k : bin_index)
    if (k < 0 || k >= bins) throw std::invalid_argument("survival_nll: bin index out of range");

  // with h = sigmoid(z):  -log h = softplus(-z), -log(1-h) = softplus(z).
  // uncensored: -log h_k - log S_{k-1} = softplus(-z_k) + sum_{j<k} softplus(z_j)
  // censored:   -log S_k             = sum_{j<=k} softplus(z_j)
  std::vector<float> mask_event(size_t(B) * bins, 0.0f);    // coefficient on softplus(-z)
  std::vector<float> mask_survive(size_t(B) * bins, 0.0f);  // coefficient on softplus(z)
  for (int i = 0; i < B; ++i) {
    const int k = bin_index[size_t(i)];
    if (censored[size_t(i)]) {
      for (int j = 0; j <= k; ++j) mask_survive[size_t(i) * bins + j] = 1.0f;
    } else {
      mask_event[size_t(i) * bins + k] = 1.0f;
      for (int j = 0; j < k; ++j) mask_survive[size_t(i) * bins + j] = 1.0f;
    }
  }
  Var me = make_const({B, bins}, std::move(mask_event));
  Var ms = make_const({B, bins}, std::move(mask_survive));
  Var total = add(sum_all(mul(softplus(neg(hazard_logits)), me)),
                  sum_all(mul(softplus(hazard_logits), ms)));
  return mul_scalar(total, 1.0f / float(B));
}

Var nt_xent(const Var& embeddings, float temperature) {
  if (embeddings->rank() != 2) throw std::invalid_argument("nt_xent: expected [2B,d]");
  const int n = embeddings->dim(0);
  if (n < 4 || n % 2 != 0)
    throw std::invalid_argument("nt_xent: needs at least 2 pairs arranged as [2B,d]");
  if (temperature <= 0.0f) throw std::invalid_argument("nt_xent: temperature must be positive");
  const int B = n / 2;

  Var z = l2_normalize_rows(embeddings);
  Var sims = mul_scalar(matmul(z, transpose2d(z)), 1.0f / temperature);  // [2B,2B]

  // exclude self-similarity from every softmax row
  std::vector<float> diag(size_t(n) * n, 0.0f);
  for (int i = 0; i < n; ++i) diag[size_t(i) * n + i] = -1e9f;
  sims = add(sims, make_const({n, n}, std::move(diag)));

  std::vector<int> positive(size_t(n), 0);
  for (int i = 0; i < B; ++i) {
    positive[size_t(i)] = i + B;
    positive[size_t(i + B)] = i;
  }
  return neg(mean_all(pick_rows(log_softmax_rows(sims), positive)));
}

}  // namespace simmil
