#pragma once

#include <string>
#include <vector>

#include "augment.hpp"
#include "io.hpp"
#include "nn.hpp"

namespace simmil {

// Conv stack with stride-2 downsampling blocks (conv -> BN -> ReLU) and a
// global average pool; feature dimension is the last width.
struct Extractor {
  std::vector<Conv2dLayer> convs;
  std::vector<BatchNormLayer> bns;
  int in_channels = 3;
  int feature_dim = 0;

  Var forward(const Var& x, bool training);  // x [B,C,H,W] -> [B,d]
  std::vector<Var> params() const;
};

Extractor make_extractor(const std::vector<int>& widths, int in_channels, RngStream rng);

// Two-layer head with batch norm and ReLU between; pretraining scaffolding,
// dropped before feature extraction.
struct PredictionHead {
  LinearLayer l1;
  BatchNormLayer bn;
  LinearLayer l2;

  Var forward(const Var& features, bool training);
  std::vector<Var> params() const;
};

PredictionHead make_head(int d, int hidden, int out_dim, RngStream rng);

// ---- aggregators over a bag's feature matrix [N,d] ----

Var agg_max(const Var& features);   // -> [1,d]
Var agg_mean(const Var& features);  // -> [1,d]

struct AbmilAggregator {
  LinearLayer v_proj, u_proj, attn, classifier;

  struct Output {
    Var bag_logits;  // [1,n_out]
    Var weights;     // [1,N], non-negative, sums to 1
  };
  Output forward(const Var& features) const;
  std::vector<Var> params() const;
};

// Gated attention: e_k = w . (tanh(V h_k) * sigmoid(U h_k))
AbmilAggregator make_abmil(int d, int attn_hidden, int n_out, RngStream rng);

struct DsmilAggregator {
  LinearLayer scorer, query, value, classifier;

  struct Output {
    Var bag_logits;  // [1,n_out]: 0.5 * (critical instance score + bag stream)
    int critical = 0;
    Var weights;  // [1,N]
  };
  Output forward(const Var& features) const;
  std::vector<Var> params() const;
};

// Instance stream scores and selects the top instance (first index on tie);
// attention comes from inner products of projected queries against the
// critical instance's query.
DsmilAggregator make_dsmil(int d, int n_out, RngStream rng);

// ---- checkpoint packing ----

// Named view over a model's arrays: trainable parameters plus batch-norm
// running state.
struct StateRef {
  std::string name;
  std::vector<int> shape;
  std::vector<float>* data;
};

std::vector<StateRef> state_refs(Extractor& e, const std::string& prefix);
std::vector<StateRef> state_refs(PredictionHead& h, const std::string& prefix);

Checkpoint pack_checkpoint(const std::vector<StateRef>& refs,
                           const std::array<uint8_t, 32>& fingerprint);
void unpack_checkpoint(const Checkpoint& ckpt, const std::vector<StateRef>& refs);

// Stacks HWC images into a [B,C,H,W] input tensor.
Var batch_to_tensor(const std::vector<const Image*>& batch);

}  // namespace simmil
