#pragma once

#include <utility>
#include <vector>

#include "config.hpp"
#include "tensor.hpp"

namespace simmil {

struct LossConfig {
  enum class Kind { CE, SCE, Ranking, SurvivalNLL, NTXent };
  Kind kind = Kind::CE;
  float alpha = 1.0f;
  float beta = 1.0f;
  float A = -4.0f;  // floor substituted for log(0) in the reverse term
  int bins = 4;
  float temperature = 0.5f;

  static LossConfig from_config(const Config& cfg, Kind fallback);
  void validate() const;
};

// Mean cross-entropy over the batch: -log softmax(logits)[target].
Var ce_loss(const Var& logits, const std::vector<int>& targets);

// Symmetric cross-entropy: beta*CE + alpha*RCE, where the reverse term uses
// log(0) := A on the off-target one-hot entries, i.e. RCE = -A*(1 - p_target).
Var sce_loss(const Var& logits, const std::vector<int>& targets, float alpha, float beta,
             float A);

// Pairwise ranking surrogate: -(1/|pairs|) * sum sigmoid(s_a - s_b), where a
// is the higher-risk member. Empty pair set gives 0 and sets *warned.
Var ranking_loss(const Var& scores, const std::vector<std::pair<int, int>>& pairs,
                 bool* warned = nullptr);

// Discrete-time hazard NLL with hazards sigmoid(logits) per bin.
Var survival_nll(const Var& hazard_logits, const std::vector<int>& bin_index,
                 const std::vector<bool>& censored);

// Normalized-temperature cross-entropy over cosine similarities; embeddings
// [2B,d] arranged so rows i and i+B are the positive pair.
Var nt_xent(const Var& embeddings, float temperature);

}  // namespace simmil
