#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "augment.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "optim.hpp"
#include "tensor.hpp"
#include "threadpool.hpp"

namespace simmil {
namespace {

Image to_image(const Instance& inst) {
  return Image{inst.h, inst.w, inst.c, inst.pixels};
}

RngStream aug_stream(uint64_t seed, const std::string& instance_id, int epoch, int view) {
  return RngStream(seed).derive(view == 0 ? "augment" : "augment2",
                                RngStream::hash_bytes(instance_id), uint64_t(epoch));
}

std::vector<int> model_widths(const Config& cfg) {
  return cfg.get_ints("model", "widths", {16, 32, 64, 128});
}

LrSchedule schedule_from_config(const Config& cfg, int total_epochs, const char* fallback) {
  LrSchedule s;
  const std::string kind = cfg.get_str("schedule", "kind", fallback);
  if (kind == "step") s.kind = LrSchedule::Kind::Step;
  else if (kind == "cosine") s.kind = LrSchedule::Kind::Cosine;
  else if (kind == "constant") s.kind = LrSchedule::Kind::Constant;
  else throw config_error("schedule.kind: unknown schedule '" + kind + "'");
  s.milestones = cfg.get_ints("schedule", "milestones", {60, 80});
  s.gamma = float(cfg.get_double("schedule", "gamma", 0.1));
  s.total_epochs = total_epochs;
  return s;
}

struct OptimConfig {
  std::string kind;
  float lr, momentum, weight_decay, beta1, beta2, eps;
  int batch_size;
};

OptimConfig optim_from_config(const Config& cfg) {
  OptimConfig o;
  o.kind = cfg.get_str("optim", "kind", "sgd");
  o.lr = float(cfg.get_double("optim", "lr", 1e-3));
  o.momentum = float(cfg.get_double("optim", "momentum", 0.9));
  o.weight_decay = float(cfg.get_double("optim", "weight_decay", 0.0));
  o.beta1 = float(cfg.get_double("optim", "beta1", 0.9));
  o.beta2 = float(cfg.get_double("optim", "beta2", 0.999));
  o.eps = float(cfg.get_double("optim", "eps", 1e-8));
  o.batch_size = int(cfg.get_int("optim", "batch_size", 64));
  if (o.kind != "sgd" && o.kind != "adam")
    throw config_error("optim.kind: unknown optimizer '" + o.kind + "'");
  if (o.batch_size < 1) throw config_error("optim.batch_size must be positive");
  return o;
}

// One optimizer slot that can hold either kind.
struct AnyOptim {
  std::unique_ptr<SgdMomentum> sgd;
  std::unique_ptr<Adam> adam;

  AnyOptim(const OptimConfig& oc, std::vector<Var> params) {
    if (oc.kind == "adam")
      adam = std::make_unique<Adam>(std::move(params), oc.lr, oc.beta1, oc.beta2, oc.eps,
                                    oc.weight_decay);
    else
      sgd = std::make_unique<SgdMomentum>(std::move(params), oc.lr, oc.momentum,
                                          oc.weight_decay);
  }
  void set_lr(float lr) { sgd ? sgd->set_lr(lr) : adam->set_lr(lr); }
  void zero_grad() { sgd ? sgd->zero_grad() : adam->zero_grad(); }
  void step() { sgd ? sgd->step() : adam->step(); }
};

// Instance ids in deterministic dataset order (bag order, then position).
std::vector<std::string> training_instance_ids(const MILDataset& ds) {
  std::vector<std::string> ids;
  for (const auto& bag : ds.bags)
    for (const auto& id : bag.instance_ids) ids.push_back(id);
  return ids;
}

void require_propagated(const MILDataset& ds) {
  for (const auto& bag : ds.bags)
    for (const auto& id : bag.instance_ids)
      if (!ds.instance(id).propagated)
        throw std::invalid_argument("pretrain: instance " + id +
                                    " has no propagated label; run propagate_labels first");
}

// Shuffled batches; a trailing single-element batch is folded into its
// predecessor so batch norm always sees at least two samples.
std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch, RngStream rng) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  for (size_t i = n; i > 1; --i) {
    const size_t k = rng.uniform_int(i);
    std::swap(order[i - 1], order[k]);
  }
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += batch)
    batches.emplace_back(order.begin() + at, order.begin() + std::min(n, at + batch));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

struct PretrainModel {
  Extractor extractor;
  PredictionHead head;

  std::vector<Var> params() const {
    std::vector<Var> out = extractor.params();
    for (const auto& p : head.params()) out.push_back(p);
    return out;
  }
  std::vector<StateRef> refs() {
    std::vector<StateRef> r = state_refs(extractor, "");
    for (auto& h : state_refs(head, "")) r.push_back(h);
    return r;
  }
};

PretrainModel build_pretrain_model(const Config& cfg, int out_dim, uint64_t seed) {
  const std::vector<int> widths = model_widths(cfg);
  const int channels = int(cfg.get_int("dataset", "channels", 3));
  const int hidden = int(cfg.get_int("model", "head_hidden", 128));
  RngStream init = RngStream(seed).derive("init");
  PretrainModel m;
  m.extractor = make_extractor(widths, channels, init.derive("extractor"));
  m.head = make_head(m.extractor.feature_dim, hidden, out_dim, init.derive("head"));
  return m;
}

int head_out_dim_for(const Config& cfg, const MILDataset& ds, TaskKind task) {
  if (task == TaskKind::Survival) return 1;
  (void)cfg;
  return std::max<int>(2, int(ds.class_names.size()));
}

// Shared label-propagation training loop (SCE / CE over propagated labels).
Checkpoint run_simmil_loop(const Config& cfg, const MILDataset& train, uint64_t seed,
                           TrainStats* stats, PretrainModel& model) {
  require_propagated(train);
  const TaskKind task = train.assumption == Assumption::MutuallyExclusive
                            ? TaskKind::Subtyping
                            : TaskKind::Classification;
  LossConfig loss_cfg = LossConfig::from_config(
      cfg, task == TaskKind::Classification ? LossConfig::Kind::SCE : LossConfig::Kind::CE);
  if (loss_cfg.kind != LossConfig::Kind::CE && loss_cfg.kind != LossConfig::Kind::SCE)
    throw config_error("pretrain: classification pretraining expects ce or sce loss");

  const int epochs = int(cfg.get_int("train", "epochs", 20));
  const OptimConfig oc = optim_from_config(cfg);
  const LrSchedule sched = schedule_from_config(cfg, epochs, "step");
  const AugmentPolicy policy =
      AugmentPolicy::from_config(cfg, int(cfg.get_int("dataset", "resolution", 32)));

  AnyOptim opt(oc, model.params());
  const std::vector<std::string> ids = training_instance_ids(train);
  RngStream order_rng = RngStream(seed).derive("order");

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(schedule_lr(sched, oc.lr, epoch));
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (const auto& batch : make_batches(ids.size(), size_t(oc.batch_size),
                                          order_rng.derive("epoch", uint64_t(epoch)))) {
      std::vector<Image> images(batch.size());
      std::vector<int> targets(batch.size());
      parallel_for(int64_t(batch.size()), [&](int64_t i) {
        const Instance& inst = train.instance(ids[batch[size_t(i)]]);
        images[size_t(i)] = augment(to_image(inst), policy, aug_stream(seed, inst.id, epoch, 0));
        targets[size_t(i)] = inst.propagated->label.class_id;
      });
      std::vector<const Image*> ptrs(images.size());
      for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];

      Var x = batch_to_tensor(ptrs);
      Var logits = model.head.forward(model.extractor.forward(x, true), true);
      Var loss = loss_cfg.kind == LossConfig::Kind::SCE
                     ? sce_loss(logits, targets, loss_cfg.alpha, loss_cfg.beta, loss_cfg.A)
                     : ce_loss(logits, targets);
      opt.zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += double(loss->value[0]) * double(batch.size());
      seen += batch.size();
      if (stats) stats->total_batches++;
    }
    if (stats) stats->epoch_losses.push_back(seen ? epoch_loss / double(seen) : 0.0);
  }
  return pack_checkpoint(model.refs(), cfg.fingerprint());
}

float cumulative_hazard(const std::vector<float>& logits) {
  float acc = 0.0f;
  for (float z : logits) acc += z > 0.0f ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return acc;
}

std::vector<double> survival_bin_edges(const FeatureCache& train_cache, int bins) {
  std::vector<double> times;
  for (const auto& bag : train_cache.bags)
    if (!bag.label.censored) times.push_back(double(bag.label.time));
  if (times.size() < size_t(bins)) {
    times.clear();
    for (const auto& bag : train_cache.bags) times.push_back(double(bag.label.time));
  }
  std::sort(times.begin(), times.end());
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b)
    edges.push_back(times[std::min(times.size() - 1, times.size() * size_t(b) / size_t(bins))]);
  return edges;
}

int time_bin(double t, const std::vector<double>& edges) {
  int b = 0;
  for (double e : edges)
    if (t >= e) ++b;
  return b;
}

}  // namespace

TaskKind task_from_config(const Config& cfg) {
  const std::string task = cfg.get_str("dataset", "task", "classification");
  if (task == "classification") return TaskKind::Classification;
  if (task == "subtyping") return TaskKind::Subtyping;
  if (task == "survival") return TaskKind::Survival;
  throw config_error("dataset.task: unknown task '" + task + "'");
}

Checkpoint pretrain_simmil(const Config& cfg, const MILDataset& train, uint64_t seed,
                           TrainStats* stats) {
  if (train.is_survival())
    throw std::invalid_argument("pretrain_simmil: survival dataset; use the survival variant");
  PretrainModel model = build_pretrain_model(
      cfg, head_out_dim_for(cfg, train, TaskKind::Classification), seed);
  return run_simmil_loop(cfg, train, seed, stats, model);
}

Checkpoint pretrain_simmil_survival(const Config& cfg, const MILDataset& train, uint64_t seed,
                                    TrainStats* stats) {
  if (!train.is_survival())
    throw std::invalid_argument("pretrain_simmil_survival: expected a survival dataset");
  require_propagated(train);

  PretrainModel model = build_pretrain_model(cfg, 1, seed);
  const int epochs = int(cfg.get_int("train", "epochs", 20));
  const OptimConfig oc = optim_from_config(cfg);
  const LrSchedule sched = schedule_from_config(cfg, epochs, "cosine");
  const AugmentPolicy policy =
      AugmentPolicy::from_config(cfg, int(cfg.get_int("dataset", "resolution", 32)));

  AnyOptim opt(oc, model.params());
  const std::vector<std::string> ids = training_instance_ids(train);
  RngStream order_rng = RngStream(seed).derive("order");

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(schedule_lr(sched, oc.lr, epoch));
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (const auto& batch : make_batches(ids.size(), size_t(oc.batch_size),
                                          order_rng.derive("epoch", uint64_t(epoch)))) {
      if (stats) stats->total_batches++;
      std::vector<std::pair<float, bool>> tc(batch.size());
      for (size_t i = 0; i < batch.size(); ++i) {
        const auto& p = *train.instance(ids[batch[i]]).propagated;
        tc[i] = {p.label.time, p.label.censored};
      }
      const auto pairs = comparable_pairs(tc);
      if (pairs.empty()) {
        if (stats) stats->skipped_batches++;
        continue;
      }
      std::vector<Image> images(batch.size());
      parallel_for(int64_t(batch.size()), [&](int64_t i) {
        const Instance& inst = train.instance(ids[batch[size_t(i)]]);
        images[size_t(i)] = augment(to_image(inst), policy, aug_stream(seed, inst.id, epoch, 0));
      });
      std::vector<const Image*> ptrs(images.size());
      for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];

      Var scores = model.head.forward(model.extractor.forward(batch_to_tensor(ptrs), true), true);
      Var loss = ranking_loss(scores, pairs);
      opt.zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += double(loss->value[0]) * double(batch.size());
      seen += batch.size();
    }
    if (stats) stats->epoch_losses.push_back(seen ? epoch_loss / double(seen) : 0.0);
  }
  return pack_checkpoint(model.refs(), cfg.fingerprint());
}

Checkpoint pretrain_contrastive(const Config& cfg, const MILDataset& train, uint64_t seed,
                                TrainStats* stats) {
  PretrainModel model = [&] {
    const std::vector<int> widths = model_widths(cfg);
    return build_pretrain_model(cfg, widths.back(), seed);  // projection to feature dim
  }();
  const int epochs = int(cfg.get_int("train", "epochs", 20));
  const OptimConfig oc = optim_from_config(cfg);
  if (oc.batch_size < 2)
    throw std::invalid_argument("pretrain_contrastive: batch size must be at least 2");
  const LossConfig loss_cfg = LossConfig::from_config(cfg, LossConfig::Kind::NTXent);
  const LrSchedule sched = schedule_from_config(cfg, epochs, "cosine");
  const AugmentPolicy policy =
      AugmentPolicy::from_config(cfg, int(cfg.get_int("dataset", "resolution", 32)));

  AnyOptim opt(oc, model.params());
  const std::vector<std::string> ids = training_instance_ids(train);
  RngStream order_rng = RngStream(seed).derive("order");

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(schedule_lr(sched, oc.lr, epoch));
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (const auto& batch : make_batches(ids.size(), size_t(oc.batch_size),
                                          order_rng.derive("epoch", uint64_t(epoch)))) {
      if (batch.size() < 2) {
        if (stats) stats->skipped_batches++;
        continue;
      }
      const size_t B = batch.size();
      std::vector<Image> images(2 * B);
      parallel_for(int64_t(2 * B), [&](int64_t i) {
        const int view = i < int64_t(B) ? 0 : 1;
        const Instance& inst = train.instance(ids[batch[size_t(i) % B]]);
        images[size_t(i)] =
            augment(to_image(inst), policy, aug_stream(seed, inst.id, epoch, view));
      });
      std::vector<const Image*> ptrs(images.size());
      for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];

      Var z = model.head.forward(model.extractor.forward(batch_to_tensor(ptrs), true), true);
      Var loss = nt_xent(z, loss_cfg.temperature);
      opt.zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += double(loss->value[0]) * double(B);
      seen += B;
      if (stats) stats->total_batches++;
    }
    if (stats) stats->epoch_losses.push_back(seen ? epoch_loss / double(seen) : 0.0);
  }
  return pack_checkpoint(model.refs(), cfg.fingerprint());
}

Checkpoint continue_pretrain(const Checkpoint& parent, const Config& cfg,
                             const MILDataset& train, uint64_t seed, TrainStats* stats) {
  if (train.is_survival())
    throw std::invalid_argument("continue_pretrain: survival dataset; use the survival variant");
  PretrainModel model = build_pretrain_model(
      cfg, head_out_dim_for(cfg, train, TaskKind::Classification), seed);
  unpack_checkpoint(parent, model.refs());  // architecture mismatch throws here
  return run_simmil_loop(cfg, train, seed, stats, model);
}

Checkpoint init_checkpoint(const Config& cfg, uint64_t seed) {
  const TaskKind task = task_from_config(cfg);
  int out_dim = 2;
  if (task == TaskKind::Survival) out_dim = 1;
  else if (task == TaskKind::Subtyping)
    out_dim = std::max<int>(2, int(cfg.get_int("dataset", "subtypes", 2)));
  PretrainModel model = build_pretrain_model(cfg, out_dim, seed);
  return pack_checkpoint(model.refs(), cfg.fingerprint());
}

FeatureCache extract_features(const Config& cfg, const Checkpoint& ckpt, const MILDataset& ds) {
  const std::vector<int> widths = model_widths(cfg);
  const int channels = int(cfg.get_int("dataset", "channels", 3));
  Extractor extractor = make_extractor(widths, channels, RngStream(0).derive("unused"));
  auto refs = state_refs(extractor, "");
  unpack_checkpoint(ckpt, refs);

  FeatureCache cache;
  cache.d = extractor.feature_dim;
  cache.fingerprint = ckpt.fingerprint;
  cache.bags.reserve(ds.bags.size());

  constexpr size_t kChunk = 128;
  for (const auto& bag : ds.bags) {
    FeatureCache::BagEntry entry;
    entry.id = bag.id;
    entry.label = bag.label;
    entry.n = int(bag.instance_ids.size());
    entry.features.resize(size_t(entry.n) * size_t(cache.d));
    for (size_t at = 0; at < bag.instance_ids.size(); at += kChunk) {
      const size_t hi = std::min(bag.instance_ids.size(), at + kChunk);
      std::vector<Image> images(hi - at);
      for (size_t i = at; i < hi; ++i) images[i - at] = to_image(ds.instance(bag.instance_ids[i]));
      std::vector<const Image*> ptrs(images.size());
      for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];
      Var feats = extractor.forward(batch_to_tensor(ptrs), false);
      std::copy(feats->value.begin(), feats->value.end(),
                entry.features.begin() + at * size_t(cache.d));
    }
    cache.bags.push_back(std::move(entry));
  }
  return cache;
}

Report train_aggregator(const Config& cfg, const FeatureCache& train_cache,
                        const FeatureCache& test_cache, const std::string& aggregator,
                        uint64_t seed, const std::string& method) {
  if (train_cache.bags.empty() || test_cache.bags.empty())
    throw std::invalid_argument("train_aggregator: empty feature cache");
  const TaskKind task = task_from_config(cfg);
  const bool survival = train_cache.bags.front().label.kind == BagLabel::Kind::Survival;
  if (survival != (task == TaskKind::Survival))
    throw std::invalid_argument("train_aggregator: cache task does not match requested task");
  if (aggregator != "max" && aggregator != "mean" && aggregator != "abmil" &&
      aggregator != "dsmil")
    throw config_error("downstream.aggregator: unknown aggregator '" + aggregator + "'");

  const int d = train_cache.d;
  const int epochs = int(cfg.get_int("downstream", "epochs", 50));
  const float lr = float(cfg.get_double("downstream", "lr", 1e-4));
  const float wd = float(cfg.get_double("downstream", "weight_decay", 1e-4));
  const int batch_bags = int(cfg.get_int("downstream", "batch_size", 32));
  const int bins = int(cfg.get_int("downstream", "bins", 4));

  int n_out;
  std::vector<double> edges;
  if (survival) {
    n_out = bins;
    edges = survival_bin_edges(train_cache, bins);
  } else {
    int max_class = 0;
    for (const auto& b : train_cache.bags) max_class = std::max(max_class, b.label.class_id);
    for (const auto& b : test_cache.bags) max_class = std::max(max_class, b.label.class_id);
    n_out = max_class + 1;
    if (n_out < 2) n_out = 2;
  }

  RngStream init = RngStream(seed).derive("agg-init");
  LinearLayer probe;  // max/mean probing
  AbmilAggregator abmil;
  DsmilAggregator dsmil;
  std::vector<Var> params;
  if (aggregator == "abmil") {
    abmil = make_abmil(d, int(cfg.get_int("model", "attention_hidden", 0)), n_out, init);
    params = abmil.params();
  } else if (aggregator == "dsmil") {
    dsmil = make_dsmil(d, n_out, init);
    params = dsmil.params();
  } else {
    probe = make_linear(d, n_out, "probe", init);
    params = {probe.w, probe.b};
  }

  auto bag_logits = [&](const FeatureCache::BagEntry& bag) {
    Var feats = make_const({bag.n, d}, bag.features);
    if (aggregator == "max") return probe(agg_max(feats));
    if (aggregator == "mean") return probe(agg_mean(feats));
    if (aggregator == "abmil") return abmil.forward(feats).bag_logits;
    return dsmil.forward(feats).bag_logits;
  };

  Adam opt(params, lr, 0.9f, 0.999f, 1e-8f, wd);
  LrSchedule sched{LrSchedule::Kind::Cosine, {}, 0.1f, epochs};
  RngStream order_rng = RngStream(seed).derive("agg-order");

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(schedule_lr(sched, lr, epoch));
    for (const auto& batch : make_batches(train_cache.bags.size(), size_t(batch_bags),
                                          order_rng.derive("epoch", uint64_t(epoch)))) {
      Var total;
      for (size_t idx : batch) {
        const auto& bag = train_cache.bags[idx];
        Var logits = bag_logits(bag);
        Var loss;
        if (survival) {
          const int k = time_bin(double(bag.label.time), edges);
          loss = survival_nll(logits, {k}, {bag.label.censored});
        } else {
          loss = ce_loss(logits, {bag.label.class_id});
        }
        total = total ? add(total, loss) : loss;
      }
      Var mean_loss = mul_scalar(total, 1.0f / float(batch.size()));
      opt.zero_grad();
      backward(mean_loss);
      opt.step();
    }
  }

  // test-split evaluation
  Report report;
  report.task = survival ? "survival" : (task == TaskKind::Subtyping ? "subtyping" : "classification");
  report.dataset = cfg.get_str("dataset", "name", "synthetic");
  report.method = method;
  report.aggregator = aggregator;
  report.seed = seed;

  if (survival) {
    std::vector<double> risks, times;
    std::vector<bool> censored;
    for (const auto& bag : test_cache.bags) {
      Var logits = bag_logits(bag);
      risks.push_back(double(cumulative_hazard(logits->value)));
      times.push_back(double(bag.label.time));
      censored.push_back(bag.label.censored);
    }
    report.metrics["c_index"] = c_index(risks, times, censored);
  } else {
    std::vector<int> preds, labels;
    std::vector<double> prob_matrix;
    for (const auto& bag : test_cache.bags) {
      Var probs = softmax_rows(bag_logits(bag));
      int arg = 0;
      for (int c = 1; c < n_out; ++c)
        if (probs->value[size_t(c)] > probs->value[size_t(arg)]) arg = c;
      preds.push_back(arg);
      labels.push_back(bag.label.class_id);
      for (int c = 0; c < n_out; ++c) prob_matrix.push_back(double(probs->value[size_t(c)]));
    }
    report.metrics["accuracy"] = accuracy(preds, labels);
    if (n_out == 2) {
      std::vector<double> pos_scores(labels.size());
      for (size_t i = 0; i < labels.size(); ++i) pos_scores[i] = prob_matrix[i * 2 + 1];
      report.metrics["auc"] = roc_auc(pos_scores, labels);
    } else {
      report.metrics["auc"] = roc_auc_ovr(prob_matrix, n_out, labels);
    }
  }
  return report;
}

Report instance_eval(const Config& cfg, const Checkpoint& ckpt, const MILDataset& train,
                     const MILDataset& test, const std::string& mode, uint64_t seed,
                     const std::string& method) {
  if (mode != "lp" && mode != "ft")
    throw config_error("eval.mode: expected 'lp' or 'ft', got '" + mode + "'");

  // evaluation-only path: generator ground truth must be present
  auto collect = [](const MILDataset& ds) {
    std::vector<const Instance*> insts;
    for (const auto& bag : ds.bags)
      for (const auto& id : bag.instance_ids) {
        const Instance& inst = ds.instance(id);
        if (!inst.true_label)
          throw std::invalid_argument("instance_eval: instance " + id + " has no true label");
        insts.push_back(&inst);
      }
    return insts;
  };
  const auto train_insts = collect(train);
  const auto test_insts = collect(test);

  int classes = 0;
  for (const auto* i : train_insts) classes = std::max(classes, *i->true_label + 1);
  for (const auto* i : test_insts) classes = std::max(classes, *i->true_label + 1);

  const std::vector<int> widths = model_widths(cfg);
  const int channels = int(cfg.get_int("dataset", "channels", 3));
  Extractor extractor = make_extractor(widths, channels, RngStream(0).derive("unused"));
  auto refs = state_refs(extractor, "");
  unpack_checkpoint(ckpt, refs);
  const int d = extractor.feature_dim;

  RngStream init = RngStream(seed).derive("eval-init");
  LinearLayer clf = make_linear(d, classes, "clf", init);

  auto features_of = [&](const std::vector<const Instance*>& insts) {
    std::vector<float> out(insts.size() * size_t(d));
    constexpr size_t kChunk = 128;
    for (size_t at = 0; at < insts.size(); at += kChunk) {
      const size_t hi = std::min(insts.size(), at + kChunk);
      std::vector<Image> images(hi - at);
      for (size_t i = at; i < hi; ++i) images[i - at] = to_image(*insts[i]);
      std::vector<const Image*> ptrs(images.size());
      for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];
      Var f = extractor.forward(batch_to_tensor(ptrs), false);
      std::copy(f->value.begin(), f->value.end(), out.begin() + at * size_t(d));
    }
    return out;
  };

  RngStream order_rng = RngStream(seed).derive("eval-order");

  if (mode == "lp") {
    const int epochs = int(cfg.get_int("eval", "lp_epochs", 30));
    const float lr = float(cfg.get_double("eval", "lp_lr", 1e-2));
    const std::vector<float> feats = features_of(train_insts);
    Adam opt({clf.w, clf.b}, lr);
    const int batch = 256;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (const auto& idxs : make_batches(train_insts.size(), size_t(batch),
                                           order_rng.derive("epoch", uint64_t(epoch)))) {
        Var x = make_tensor({int(idxs.size()), d});
        std::vector<int> targets(idxs.size());
        for (size_t i = 0; i < idxs.size(); ++i) {
          std::copy_n(feats.begin() + idxs[i] * size_t(d), d, x->value.begin() + i * size_t(d));
          targets[i] = *train_insts[idxs[i]]->true_label;
        }
        Var loss = ce_loss(clf(x), targets);
        opt.zero_grad();
        backward(loss);
        opt.step();
      }
    }
  } else {
    const int epochs = int(cfg.get_int("eval", "ft_epochs", 10));
    const float lr = float(cfg.get_double("eval", "ft_lr", 1e-3));
    std::vector<Var> params = extractor.params();
    params.push_back(clf.w);
    params.push_back(clf.b);
    SgdMomentum opt(params, lr, 0.9f, 0.0f);
    const int batch = 64;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (const auto& idxs : make_batches(train_insts.size(), size_t(batch),
                                           order_rng.derive("epoch", uint64_t(epoch)))) {
        std::vector<Image> images(idxs.size());
        std::vector<int> targets(idxs.size());
        for (size_t i = 0; i < idxs.size(); ++i) {
          images[i] = to_image(*train_insts[idxs[i]]);
          targets[i] = *train_insts[idxs[i]]->true_label;
        }
        std::vector<const Image*> ptrs(images.size());
        for (size_t i = 0; i < images.size(); ++i) ptrs[i] = &images[i];
        Var logits = clf(extractor.forward(batch_to_tensor(ptrs), true));
        Var loss = ce_loss(logits, targets);
        opt.zero_grad();
        backward(loss);
        opt.step();
      }
    }
  }

  // frozen eval-mode accuracy on the held-out instances
  const std::vector<float> test_feats = features_of(test_insts);
  std::vector<int> preds(test_insts.size()), labels(test_insts.size());
  for (size_t i = 0; i < test_insts.size(); ++i) {
    Var x = make_const({1, d}, std::vector<float>(test_feats.begin() + i * size_t(d),
                                                  test_feats.begin() + (i + 1) * size_t(d)));
    Var logits = clf(x);
    int arg = 0;
    for (int c = 1; c < classes; ++c)
      if (logits->value[size_t(c)] > logits->value[size_t(arg)]) arg = c;
    preds[i] = arg;
    labels[i] = *test_insts[i]->true_label;
  }

  Report report;
  report.task = mode == "lp" ? "instance_lp" : "instance_ft";
  report.dataset = cfg.get_str("dataset", "name", "synthetic");
  report.method = method;
  report.aggregator = "";
  report.seed = seed;
  report.metrics["accuracy"] = accuracy(preds, labels);
  return report;
}

}  // namespace simmil
