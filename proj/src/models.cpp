#include "models.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace simmil {

Var Extractor::forward(const Var& x, bool training) {
  if (x->rank() != 4 || x->dim(1) != in_channels)
    throw std::invalid_argument("extractor: input channel mismatch");
  Var h = x;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = convs[i](h);
    h = bns[i](h, training);
    h = relu(h);
  }
  return global_avg_pool(h);
}

std::vector<Var> Extractor::params() const {
  std::vector<Var> out;
  for (size_t i = 0; i < convs.size(); ++i) {
    out.push_back(convs[i].w);
    out.push_back(convs[i].b);
    out.push_back(bns[i].gamma);
    out.push_back(bns[i].beta);
  }
  return out;
}

Extractor make_extractor(const std::vector<int>& widths, int in_channels, RngStream rng) {
  if (widths.empty()) throw config_error("extractor: needs at least one conv width");
  Extractor e;
  e.in_channels = in_channels;
  e.feature_dim = widths.back();
  int ch = in_channels;
  for (size_t i = 0; i < widths.size(); ++i) {
    const std::string name = "extractor.block" + std::to_string(i);
    e.convs.push_back(make_conv(ch, widths[i], 3, 2, 1, name + ".conv", rng.derive("conv", i)));
    e.bns.push_back(make_batchnorm(widths[i], name + ".bn"));
    ch = widths[i];
  }
  return e;
}

Var PredictionHead::forward(const Var& features, bool training) {
  Var h = l1(features);
  h = bn(h, training);
  h = relu(h);
  return l2(h);
}

std::vector<Var> PredictionHead::params() const {
  return {l1.w, l1.b, bn.gamma, bn.beta, l2.w, l2.b};
}

PredictionHead make_head(int d, int hidden, int out_dim, RngStream rng) {
  PredictionHead h;
  h.l1 = make_linear(d, hidden, "head.l1", rng.derive("l1"));
  h.bn = make_batchnorm(hidden, "head.bn");
  h.l2 = make_linear(hidden, out_dim, "head.l2", rng.derive("l2"));
  return h;
}

Var agg_max(const Var& features) {
  if (features->dim(0) < 1) throw std::invalid_argument("agg_max: empty bag");
  return reshape(colwise_max(features), {1, features->dim(1)});
}

Var agg_mean(const Var& features) {
  if (features->dim(0) < 1) throw std::invalid_argument("agg_mean: empty bag");
  return reshape(colwise_mean(features), {1, features->dim(1)});
}

AbmilAggregator::Output AbmilAggregator::forward(const Var& features) const {
  Var gated = mul(tanh_act(v_proj(features)), sigmoid(u_proj(features)));
  Var scores = transpose2d(attn(gated));      // [1,N]
  Var weights = softmax_rows(scores);         // [1,N]
  Var embedding = matmul(weights, features);  // [1,d]
  return {classifier(embedding), weights};
}

std::vector<Var> AbmilAggregator::params() const {
  return {v_proj.w, v_proj.b, u_proj.w, u_proj.b, attn.w, attn.b, classifier.w, classifier.b};
}

AbmilAggregator make_abmil(int d, int attn_hidden, int n_out, RngStream rng) {
  if (attn_hidden <= 0) attn_hidden = std::max(1, d / 2);
  AbmilAggregator a;
  a.v_proj = make_linear(d, attn_hidden, "abmil.v", rng.derive("v"));
  a.u_proj = make_linear(d, attn_hidden, "abmil.u", rng.derive("u"));
  a.attn = make_linear(attn_hidden, 1, "abmil.w", rng.derive("w"));
  a.classifier = make_linear(d, n_out, "abmil.cls", rng.derive("cls"));
  return a;
}

DsmilAggregator::Output DsmilAggregator::forward(const Var& features) const {
  const int n = features->dim(0);
  Var inst_scores = scorer(features);  // [N,n_out]

  // critical instance: highest per-instance score, first index on ties
  int crit = 0;
  float best = -std::numeric_limits<float>::infinity();
  const int n_out = inst_scores->dim(1);
  for (int i = 0; i < n; ++i) {
    float row_max = inst_scores->value[size_t(i) * n_out];
    for (int j = 1; j < n_out; ++j)
      row_max = std::max(row_max, inst_scores->value[size_t(i) * n_out + j]);
    if (row_max > best) {
      best = row_max;
      crit = i;
    }
  }

  Var queries = query(features);                              // [N,q]
  Var q_crit = gather_rows(queries, {crit});                  // [1,q]
  Var sims = transpose2d(matmul(queries, transpose2d(q_crit)));  // [1,N]
  Var weights = softmax_rows(sims);
  Var embedding = matmul(weights, value(features));           // [1,v]
  Var bag_stream = classifier(embedding);                     // [1,n_out]
  Var crit_scores = gather_rows(inst_scores, {crit});         // [1,n_out]
  Var bag_logits = mul_scalar(add(crit_scores, bag_stream), 0.5f);
  return {bag_logits, crit, weights};
}

std::vector<Var> DsmilAggregator::params() const {
  return {scorer.w, scorer.b, query.w, query.b, value.w, value.b, classifier.w, classifier.b};
}

DsmilAggregator make_dsmil(int d, int n_out, RngStream rng) {
  DsmilAggregator m;
  m.scorer = make_linear(d, n_out, "dsmil.scorer", rng.derive("scorer"));
  m.query = make_linear(d, d, "dsmil.query", rng.derive("query"));
  m.value = make_linear(d, d, "dsmil.value", rng.derive("value"));
  m.classifier = make_linear(d, n_out, "dsmil.cls", rng.derive("cls"));
  return m;
}

// ------------------------------------------------------- checkpoint packing

namespace {

void push_param(std::vector<StateRef>& refs, const Var& p) {
  refs.push_back({p->name, p->shape, &p->value});
}

}  // namespace

std::vector<StateRef> state_refs(Extractor& e, const std::string& prefix) {
  std::vector<StateRef> refs;
  for (size_t i = 0; i < e.convs.size(); ++i) {
    push_param(refs, e.convs[i].w);
    push_param(refs, e.convs[i].b);
    push_param(refs, e.bns[i].gamma);
    push_param(refs, e.bns[i].beta);
    const int c = e.bns[i].gamma->dim(0);
    refs.push_back({e.bns[i].name + ".running_mean", {c}, &e.bns[i].running_mean});
    refs.push_back({e.bns[i].name + ".running_var", {c}, &e.bns[i].running_var});
  }
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

std::vector<StateRef> state_refs(PredictionHead& h, const std::string& prefix) {
  std::vector<StateRef> refs;
  push_param(refs, h.l1.w);
  push_param(refs, h.l1.b);
  push_param(refs, h.bn.gamma);
  push_param(refs, h.bn.beta);
  const int c = h.bn.gamma->dim(0);
  refs.push_back({h.bn.name + ".running_mean", {c}, &h.bn.running_mean});
  refs.push_back({h.bn.name + ".running_var", {c}, &h.bn.running_var});
  push_param(refs, h.l2.w);
  push_param(refs, h.l2.b);
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

Checkpoint pack_checkpoint(const std::vector<StateRef>& refs,
                           const std::array<uint8_t, 32>& fingerprint) {
  Checkpoint ckpt;
  ckpt.fingerprint = fingerprint;
  for (const auto& r : refs) ckpt.arrays.push_back({r.name, r.shape, *r.data});
  return ckpt;
}

void unpack_checkpoint(const Checkpoint& ckpt, const std::vector<StateRef>& refs) {
  for (const auto& r : refs) {
    const NamedArray* a = ckpt.find(r.name);
    if (!a)
      throw std::invalid_argument("checkpoint: missing array '" + r.name +
                                  "' (architecture mismatch)");
    if (a->shape != r.shape || a->data.size() != r.data->size())
      throw std::invalid_argument("checkpoint: shape mismatch for '" + r.name +
                                  "' (architecture mismatch)");
    *r.data = a->data;
  }
}

Var batch_to_tensor(const std::vector<const Image*>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_to_tensor: empty batch");
  const int h = batch[0]->h, w = batch[0]->w, c = batch[0]->c;
  Var t = make_tensor({int(batch.size()), c, h, w});
  for (size_t b = 0; b < batch.size(); ++b) {
    const Image& img = *batch[b];
    if (img.h != h || img.w != w || img.c != c)
      throw std::invalid_argument("batch_to_tensor: mixed image sizes");
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          t->value[((b * size_t(c) + ch) * h + y) * w + x] = img.at(y, x, ch);
  }
  return t;
}

}  // namespace simmil
