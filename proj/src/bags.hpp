#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "config.hpp"
#include "rng.hpp"

namespace simmil {

struct BagLabel {
  enum class Kind { Class, Survival };
  Kind kind = Kind::Class;
  int class_id = 0;
  float time = 0.0f;      // survival only, > 0
  bool censored = false;  // survival only

  static BagLabel make_class(int id) { return {Kind::Class, id, 0.0f, false}; }
  static BagLabel make_survival(float time, bool censored);
};

// Copy of the bag label assigned to an instance, plus the per-instance share
// of the bag risk proxy for survival datasets.
struct PropagatedLabel {
  BagLabel label;
  float risk_share = 0.0f;
};

struct Instance {
  std::string id;
  int h = 0, w = 0, c = 0;
  std::vector<float> pixels;  // HWC row-major, values in [0,1]
  std::optional<int> true_label;  // generator ground truth; evaluation only
  std::optional<PropagatedLabel> propagated;
};

struct Bag {
  std::string id;
  std::vector<std::string> instance_ids;
  BagLabel label;
  std::string source;
  std::vector<float> true_instance_risks;  // generator ground truth; evaluation only
};

enum class Assumption { Standard, MutuallyExclusive, Accumulative };

std::string assumption_name(Assumption a);
Assumption assumption_from_name(const std::string& s);

struct MILDataset {
  std::vector<Bag> bags;
  std::unordered_map<std::string, Instance> instances;
  std::vector<std::string> class_names;
  Assumption assumption = Assumption::Standard;
  std::string provenance;
  std::string name = "synthetic";
  std::vector<int> positive_texture_classes;  // generator ground truth

  const Instance& instance(const std::string& id) const;
  Instance& instance(const std::string& id);
  int64_t instance_count() const { return int64_t(instances.size()); }
  bool is_survival() const { return assumption == Assumption::Accumulative; }
  void validate() const;
};

// Standard MIL assumption: 0 iff every instance label is 0.
int bag_label_standard(const std::vector<int>& instance_labels);

// Accumulative assumption: bag risk is the sum of non-negative instance risks.
double bag_risk_accumulative(const std::vector<double>& instance_risks);

// Assigns every instance its bag's label. Survival datasets also receive the
// per-instance share of the bag risk proxy (negated normalized time rank,
// split uniformly across the bag).
void propagate_labels(MILDataset& ds);

struct GeneratorConfig {
  enum class Task { Classification, Subtyping, Survival };
  Task task = Task::Classification;
  std::string name = "synthetic";
  std::string split_tag = "train";
  int classes = 9;
  std::vector<int> positive_class_ids;  // empty -> {classes / 2}
  int subtypes = 2;
  int bags = 500;
  int bag_size = 50;
  int pool_size = 0;  // 0 -> bags * bag_size
  double positive_ratio_min = 0.05;
  double positive_ratio_max = 0.2;
  double positive_bag_fraction = 0.5;
  int resolution = 32;
  int channels = 3;
  double noise = 0.06;
  double censor_rate = 0.3;
  double time_noise = 0.25;
  double time_scale = 1.0;
  double risk_rate = 10.0;

  static GeneratorConfig from_config(const Config& cfg, const std::string& split_tag,
                                     int bag_count);
};

MILDataset synthesize_bags(const GeneratorConfig& gen, uint64_t seed);

// Concatenates class spaces as disjoint namespaced blocks and remaps labels.
MILDataset merge_datasets(const std::vector<const MILDataset*>& datasets);

struct SplitMode {
  enum class Kind { Holdout, KFold };
  Kind kind = Kind::Holdout;
  double train_fraction = 0.8;
  int k = 5;
  int fold = 0;
};

std::pair<MILDataset, MILDataset> split(const MILDataset& ds, const SplitMode& mode,
                                        uint64_t seed);

// Ordered comparable pairs under the standard concordance rule: (i, j) with
// t_i < t_j and i uncensored; ties in time emit nothing.
std::vector<std::pair<int, int>> comparable_pairs(
    const std::vector<std::pair<float, bool>>& time_censored);

}  // namespace simmil
