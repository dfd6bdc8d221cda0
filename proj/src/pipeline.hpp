#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bags.hpp"
#include "config.hpp"
#include "io.hpp"
#include "metrics.hpp"

namespace simmil {

enum class TaskKind { Classification, Subtyping, Survival };
TaskKind task_from_config(const Config& cfg);

struct TrainStats {
  std::vector<double> epoch_losses;
  int skipped_batches = 0;
  int total_batches = 0;
};

// Bag-to-instance label propagation pretraining: augmented instances carry
// their bag's class label; SCE for binary classification, CE for subtyping
// and merged class spaces. Requires propagated labels on every instance.
Checkpoint pretrain_simmil(const Config& cfg, const MILDataset& train, uint64_t seed,
                           TrainStats* stats = nullptr);

// Ranking-loss pretraining over a scalar head output; batches without a
// comparable pair are skipped and counted.
Checkpoint pretrain_simmil_survival(const Config& cfg, const MILDataset& train, uint64_t seed,
                                    TrainStats* stats = nullptr);

// Contrastive baseline: two augmented views per instance, NT-Xent objective.
Checkpoint pretrain_contrastive(const Config& cfg, const MILDataset& train, uint64_t seed,
                                TrainStats* stats = nullptr);

// Resumes label-propagation training from existing weights with a fresh
// optimizer; the architecture implied by cfg must match the checkpoint.
Checkpoint continue_pretrain(const Checkpoint& parent, const Config& cfg,
                             const MILDataset& train, uint64_t seed,
                             TrainStats* stats = nullptr);

// Eval-mode extractor over un-augmented instances, head discarded; one
// feature matrix per bag in dataset order.
FeatureCache extract_features(const Config& cfg, const Checkpoint& ckpt, const MILDataset& ds);

// Builds a checkpoint of freshly initialized weights (epoch-0 baseline).
Checkpoint init_checkpoint(const Config& cfg, uint64_t seed);

// Downstream training over frozen cached features: linear MIL probing for
// max/mean, two-stage bag MIL for abmil/dsmil. Classification uses CE on bag
// scores, survival uses the discrete hazard NLL with quantile bins fit on
// the training fold.
Report train_aggregator(const Config& cfg, const FeatureCache& train_cache,
                        const FeatureCache& test_cache, const std::string& aggregator,
                        uint64_t seed, const std::string& method = "");

// Instance-level evaluation against generator ground truth: linear probing
// on frozen features or end-to-end fine-tuning.
Report instance_eval(const Config& cfg, const Checkpoint& ckpt, const MILDataset& train,
                     const MILDataset& test, const std::string& mode, uint64_t seed,
                     const std::string& method = "");

}  // namespace simmil
