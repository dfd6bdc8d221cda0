#include "bags.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace simmil {

BagLabel BagLabel::make_survival(float time, bool censored) {
  if (!(time > 0.0f)) throw std::invalid_argument("BagLabel: survival time must be positive");
  BagLabel l;
  l.kind = Kind::Survival;
  l.time = time;
  l.censored = censored;
  return l;
}

std::string assumption_name(Assumption a) {
  switch (a) {
    case Assumption::Standard: return "standard";
    case Assumption::MutuallyExclusive: return "mutually_exclusive";
    case Assumption::Accumulative: return "accumulative";
  }
  return "standard";
}

Assumption assumption_from_name(const std::string& s) {
  if (s == "standard") return Assumption::Standard;
  if (s == "mutually_exclusive") return Assumption::MutuallyExclusive;
  if (s == "accumulative") return Assumption::Accumulative;
  throw config_error("unknown MIL assumption: " + s);
}

const Instance& MILDataset::instance(const std::string& id) const {
  auto it = instances.find(id);
  if (it == instances.end()) throw std::invalid_argument("dataset: unresolved instance id " + id);
  return it->second;
}

Instance& MILDataset::instance(const std::string& id) {
  auto it = instances.find(id);
  if (it == instances.end()) throw std::invalid_argument("dataset: unresolved instance id " + id);
  return it->second;
}

void MILDataset::validate() const {
  for (const auto& bag : bags) {
    if (bag.instance_ids.empty())
      throw std::invalid_argument("dataset: bag " + bag.id + " has no instances");
    for (const auto& id : bag.instance_ids) instance(id);
    if (bag.label.kind == BagLabel::Kind::Class &&
        (bag.label.class_id < 0 || bag.label.class_id >= int(class_names.size())))
      throw std::invalid_argument("dataset: bag " + bag.id + " label outside class space");
  }
}

int bag_label_standard(const std::vector<int>& instance_labels) {
  if (instance_labels.empty())
    throw std::invalid_argument("bag_label_standard: empty instance list");
  for (int y : instance_labels)
    if (y != 0) return 1;
  return 0;
}

double bag_risk_accumulative(const std::vector<double>& instance_risks) {
  double sum = 0.0;
  for (double r : instance_risks) {
    if (r < 0.0) throw std::invalid_argument("bag_risk_accumulative: negative instance risk");
    sum += r;
  }
  return sum;
}

void propagate_labels(MILDataset& ds) {
  // survival risk proxy: rank bags by observed time ascending (shortest time
  // = highest risk), negate the normalized rank, split uniformly over the bag
  std::vector<float> proxy(ds.bags.size(), 0.0f);
  if (ds.is_survival() && ds.bags.size() > 1) {
    std::vector<size_t> order(ds.bags.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return ds.bags[a].label.time < ds.bags[b].label.time;
    });
    for (size_t rank = 0; rank < order.size(); ++rank)
      proxy[order[rank]] = -float(rank) / float(order.size() - 1);
  }
  for (size_t b = 0; b < ds.bags.size(); ++b) {
    const Bag& bag = ds.bags[b];
    for (const auto& id : bag.instance_ids) {
      Instance& inst = ds.instance(id);
      PropagatedLabel p;
      p.label = bag.label;
      if (ds.is_survival()) p.risk_share = proxy[b] / float(bag.instance_ids.size());
      inst.propagated = p;
    }
  }
}

// ------------------------------------------------------------------ generator

namespace {

constexpr double kPi = 3.14159265358979323846;

// Oriented plaid texture: class identity is carried by the orientation of a
// mirror-symmetric pair of sinusoid gratings, so a horizontal flip maps a
// class onto itself. Noise gets a class-dependent amount of smoothing
// (renormalized afterwards) so classes differ in spectrum, not energy.
void render_instance(Instance& inst, int class_id, const GeneratorConfig& gen,
                     RngStream rng) {
  const int s = gen.resolution;
  const int ch = gen.channels;
  inst.h = s;
  inst.w = s;
  inst.c = ch;
  inst.pixels.assign(size_t(s) * s * ch, 0.0f);

  const double base_theta =
      gen.classes > 1 ? (kPi / 2.0) * double(class_id) / double(gen.classes - 1) : 0.0;
  const double theta = base_theta + rng.uniform(-1.0, 1.0) * (kPi / 72.0);
  const double freq = 4.0 * (1.0 + rng.uniform(-0.1, 0.1));
  const double amp = rng.uniform(0.16, 0.24);
  const double phase1 = rng.uniform(0.0, 2.0 * kPi);
  const double phase2 = rng.uniform(0.0, 2.0 * kPi);
  const double cx = std::cos(theta), sx = std::sin(theta);

  std::vector<double> noise(size_t(s) * s);
  for (auto& n : noise) n = rng.normal();
  const double noise_sigma = 0.35 * double(class_id % 3);
  if (noise_sigma > 0.0) {
    // separable gaussian smoothing, then rescale back to unit variance
    const int r = int(std::ceil(3.0 * noise_sigma));
    std::vector<double> kern(size_t(2 * r + 1));
    double ksum = 0.0;
    for (int i = -r; i <= r; ++i) {
      kern[size_t(i + r)] = std::exp(-0.5 * (i * i) / (noise_sigma * noise_sigma));
      ksum += kern[size_t(i + r)];
    }
    for (auto& k : kern) k /= ksum;
    std::vector<double> tmp(noise.size());
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          int xx = std::clamp(x + i, 0, s - 1);
          acc += kern[size_t(i + r)] * noise[size_t(y) * s + xx];
        }
        tmp[size_t(y) * s + x] = acc;
      }
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          int yy = std::clamp(y + i, 0, s - 1);
          acc += kern[size_t(i + r)] * tmp[size_t(yy) * s + x];
        }
        noise[size_t(y) * s + x] = acc;
      }
    double var = 0.0;
    for (double n : noise) var += n * n;
    var /= double(noise.size());
    const double rescale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    for (auto& n : noise) n *= rescale;
  }

  std::vector<double> tint(size_t(ch), 0.0);
  for (auto& t : tint) t = rng.uniform(-0.08, 0.08);

  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double u = (double(x) + 0.5) / double(s);
      const double v = (double(y) + 0.5) / double(s);
      const double g1 = std::sin(2.0 * kPi * freq * (u * cx + v * sx) + phase1);
      const double g2 = std::sin(2.0 * kPi * freq * (-u * cx + v * sx) + phase2);
      const double tex = 0.5 + amp * 0.5 * (g1 + g2) + gen.noise * noise[size_t(y) * s + x];
      for (int c = 0; c < ch; ++c) {
        const double val = std::clamp(tex + tint[size_t(c)], 0.0, 1.0);
        inst.pixels[(size_t(y) * s + x) * ch + c] = float(val);
      }
    }
}

struct BagPlan {
  std::vector<int> instance_classes;
  int subtype = -1;
};

}  // namespace

GeneratorConfig GeneratorConfig::from_config(const Config& cfg, const std::string& split_tag,
                                             int bag_count) {
  GeneratorConfig g;
  const std::string task = cfg.get_str("dataset", "task", "classification");
  if (task == "classification") g.task = Task::Classification;
  else if (task == "subtyping") g.task = Task::Subtyping;
  else if (task == "survival") g.task = Task::Survival;
  else throw config_error("dataset.task: unknown task '" + task + "'");
  g.name = cfg.get_str("dataset", "name", "synthetic");
  g.split_tag = split_tag;
  g.classes = int(cfg.get_int("dataset", "classes", 9));
  g.positive_class_ids = cfg.get_ints("dataset", "positive_class_ids", {});
  g.subtypes = int(cfg.get_int("dataset", "subtypes", 2));
  g.bags = bag_count;
  g.bag_size = int(cfg.get_int("dataset", "bag_size", 50));
  g.pool_size = int(cfg.get_int("dataset", "pool_size", 0));
  g.positive_ratio_min = cfg.get_double("dataset", "positive_ratio_min", 0.05);
  g.positive_ratio_max = cfg.get_double("dataset", "positive_ratio_max", 0.2);
  g.positive_bag_fraction = cfg.get_double("dataset", "positive_bag_fraction", 0.5);
  g.resolution = int(cfg.get_int("dataset", "resolution", 32));
  g.channels = int(cfg.get_int("dataset", "channels", 3));
  g.noise = cfg.get_double("dataset", "noise", 0.06);
  g.censor_rate = cfg.get_double("dataset", "censor_rate", 0.3);
  g.time_noise = cfg.get_double("dataset", "time_noise", 0.25);
  g.time_scale = cfg.get_double("dataset", "time_scale", 1.0);
  g.risk_rate = cfg.get_double("dataset", "risk_rate", 10.0);
  return g;
}

MILDataset synthesize_bags(const GeneratorConfig& gen, uint64_t seed) {
  if (gen.bags < 1 || gen.bag_size < 1)
    throw std::invalid_argument("synthesize_bags: need at least one bag and one instance");
  if (gen.classes < 1) throw std::invalid_argument("synthesize_bags: need at least one class");
  const int64_t need = int64_t(gen.bags) * gen.bag_size;
  const int64_t pool = gen.pool_size > 0 ? gen.pool_size : need;
  if (gen.bag_size > pool || need > pool)
    throw std::invalid_argument("synthesize_bags: bag demand exceeds instance pool");

  std::vector<int> positives = gen.positive_class_ids;
  if (positives.empty()) positives = {gen.classes / 2};
  std::vector<bool> is_positive(size_t(gen.classes), false);
  for (int p : positives) {
    if (p < 0 || p >= gen.classes)
      throw std::invalid_argument("synthesize_bags: positive class id outside pool");
    is_positive[size_t(p)] = true;
  }
  std::vector<int> negatives;
  for (int c = 0; c < gen.classes; ++c)
    if (!is_positive[size_t(c)]) negatives.push_back(c);

  const bool subtyping = gen.task == GeneratorConfig::Task::Subtyping;
  if (subtyping) {
    if (gen.subtypes < 2 || gen.subtypes >= gen.classes)
      throw std::invalid_argument("synthesize_bags: subtyping needs 2 <= subtypes < classes");
    negatives.clear();
    for (int c = gen.subtypes; c < gen.classes; ++c) negatives.push_back(c);
  }
  if (negatives.empty())
    throw std::invalid_argument("synthesize_bags: no negative classes left in the pool");

  RngStream root = RngStream(seed).derive(gen.split_tag);
  RngStream plan_rng = root.derive("plan");

  std::vector<BagPlan> plans(size_t(gen.bags));
  for (int b = 0; b < gen.bags; ++b) {
    BagPlan& plan = plans[size_t(b)];
    plan.instance_classes.assign(size_t(gen.bag_size), 0);
    int n_pos = 0;
    if (subtyping) {
      plan.subtype = int(plan_rng.uniform_int(uint64_t(gen.subtypes)));
      const double ratio = plan_rng.uniform(gen.positive_ratio_min, gen.positive_ratio_max);
      n_pos = std::clamp(int(std::lround(ratio * gen.bag_size)), 1, gen.bag_size);
      for (int j = 0; j < n_pos; ++j) plan.instance_classes[size_t(j)] = plan.subtype;
    } else {
      const bool positive_bag = plan_rng.uniform() < gen.positive_bag_fraction;
      if (positive_bag) {
        // the stored label is derived from true instance labels below, so a
        // ratio rounding to zero instances honestly yields a negative bag
        const double ratio = plan_rng.uniform(gen.positive_ratio_min, gen.positive_ratio_max);
        n_pos = std::clamp(int(std::lround(ratio * gen.bag_size)), 0, gen.bag_size);
        for (int j = 0; j < n_pos; ++j)
          plan.instance_classes[size_t(j)] =
              positives[plan_rng.uniform_int(positives.size())];
      }
    }
    for (int j = n_pos; j < gen.bag_size; ++j)
      plan.instance_classes[size_t(j)] = negatives[plan_rng.uniform_int(negatives.size())];
    // place positives at random positions within the bag
    for (int j = gen.bag_size - 1; j > 0; --j) {
      const int k = int(plan_rng.uniform_int(uint64_t(j) + 1));
      std::swap(plan.instance_classes[size_t(j)], plan.instance_classes[size_t(k)]);
    }
  }

  MILDataset ds;
  ds.name = gen.name;
  ds.positive_texture_classes = subtyping ? std::vector<int>{} : positives;
  switch (gen.task) {
    case GeneratorConfig::Task::Classification:
      ds.assumption = Assumption::Standard;
      ds.class_names = {"negative", "positive"};
      break;
    case GeneratorConfig::Task::Subtyping:
      ds.assumption = Assumption::MutuallyExclusive;
      for (int s = 0; s < gen.subtypes; ++s) ds.class_names.push_back("subtype_" + std::to_string(s));
      break;
    case GeneratorConfig::Task::Survival:
      ds.assumption = Assumption::Accumulative;
      break;
  }
  ds.provenance = "generator seed=" + std::to_string(seed) + " split=" + gen.split_tag +
                  " bags=" + std::to_string(gen.bags) + " bag_size=" + std::to_string(gen.bag_size);

  char idbuf[64];
  for (int b = 0; b < gen.bags; ++b) {
    const BagPlan& plan = plans[size_t(b)];
    Bag bag;
    std::snprintf(idbuf, sizeof(idbuf), "%s/b%05d", gen.split_tag.c_str(), b);
    bag.id = idbuf;
    bag.source = gen.name;

    std::vector<int> true_labels;
    std::vector<double> risks;
    for (int j = 0; j < gen.bag_size; ++j) {
      const int cls = plan.instance_classes[size_t(j)];
      Instance inst;
      std::snprintf(idbuf, sizeof(idbuf), "%s/b%05d/i%04d", gen.split_tag.c_str(), b, j);
      inst.id = idbuf;
      render_instance(inst, cls, gen, root.derive("pixels", uint64_t(b), uint64_t(j)));
      inst.true_label = cls;
      bag.instance_ids.push_back(inst.id);
      true_labels.push_back(is_positive[size_t(cls)] ? 1 : 0);
      risks.push_back(is_positive[size_t(cls)] ? 1.0 : 0.0);
      ds.instances.emplace(inst.id, std::move(inst));
    }

    switch (gen.task) {
      case GeneratorConfig::Task::Classification:
        bag.label = BagLabel::make_class(bag_label_standard(true_labels));
        break;
      case GeneratorConfig::Task::Subtyping:
        bag.label = BagLabel::make_class(plan.subtype);
        break;
      case GeneratorConfig::Task::Survival: {
        RngStream trng = root.derive("time", uint64_t(b));
        const double risk = bag_risk_accumulative(risks) / double(gen.bag_size);
        double t = gen.time_scale *
                   std::exp(-gen.risk_rate * risk + trng.normal(0.0, gen.time_noise));
        bool censored = trng.uniform() < gen.censor_rate;
        if (censored) t *= trng.uniform(0.25, 1.0);
        bag.label = BagLabel::make_survival(float(std::max(t, 1e-6)), censored);
        bag.true_instance_risks.assign(risks.begin(), risks.end());
        break;
      }
    }
    ds.bags.push_back(std::move(bag));
  }

  // fill the remainder of an explicitly sized pool with unattached instances
  for (int64_t e = need; e < pool; ++e) {
    Instance inst;
    std::snprintf(idbuf, sizeof(idbuf), "%s/extra/i%06lld", gen.split_tag.c_str(),
                  (long long)e);
    inst.id = idbuf;
    const int cls = int(plan_rng.uniform_int(uint64_t(gen.classes)));
    render_instance(inst, cls, gen, root.derive("pixels-extra", uint64_t(e)));
    inst.true_label = cls;
    ds.instances.emplace(inst.id, std::move(inst));
  }

  ds.validate();
  return ds;
}

// -------------------------------------------------------------- merge / split

MILDataset merge_datasets(const std::vector<const MILDataset*>& datasets) {
  if (datasets.empty()) throw std::invalid_argument("merge_datasets: nothing to merge");
  MILDataset out;
  out.name = "merged";
  bool all_standard = true;
  for (const auto* ds : datasets) {
    if (ds->is_survival())
      throw std::invalid_argument("merge_datasets: survival datasets cannot be merged with class datasets");
    if (ds->assumption != Assumption::Standard) all_standard = false;
  }
  out.assumption = all_standard ? Assumption::Standard : Assumption::MutuallyExclusive;

  int offset = 0;
  for (size_t j = 0; j < datasets.size(); ++j) {
    const MILDataset& ds = *datasets[j];
    const std::string ns = "d" + std::to_string(j);
    for (const auto& cname : ds.class_names) out.class_names.push_back(ns + ":" + cname);
    for (const auto& [id, inst] : ds.instances) {
      Instance copy = inst;
      copy.id = ns + "/" + id;
      copy.propagated.reset();  // stale class ids from the source space
      out.instances.emplace(copy.id, std::move(copy));
    }
    for (const auto& bag : ds.bags) {
      Bag copy = bag;
      copy.id = ns + "/" + bag.id;
      copy.source = ds.name;
      copy.instance_ids.clear();
      for (const auto& id : bag.instance_ids) copy.instance_ids.push_back(ns + "/" + id);
      copy.label = BagLabel::make_class(bag.label.class_id + offset);
      out.bags.push_back(std::move(copy));
    }
    offset += int(ds.class_names.size());
  }
  out.provenance = "merged from " + std::to_string(datasets.size()) + " datasets";
  out.validate();
  return out;
}

namespace {

MILDataset subset(const MILDataset& ds, const std::vector<size_t>& bag_indices) {
  MILDataset out;
  out.class_names = ds.class_names;
  out.assumption = ds.assumption;
  out.name = ds.name;
  out.positive_texture_classes = ds.positive_texture_classes;
  out.provenance = ds.provenance;
  for (size_t i : bag_indices) {
    out.bags.push_back(ds.bags[i]);
    for (const auto& id : ds.bags[i].instance_ids) out.instances.emplace(id, ds.instance(id));
  }
  return out;
}

}  // namespace

std::pair<MILDataset, MILDataset> split(const MILDataset& ds, const SplitMode& mode,
                                        uint64_t seed) {
  const size_t n = ds.bags.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  RngStream rng = RngStream(seed).derive("split");
  for (size_t i = n; i > 1; --i) {
    const size_t k = rng.uniform_int(i);
    std::swap(order[i - 1], order[k]);
  }

  std::vector<size_t> train_idx, test_idx;
  if (mode.kind == SplitMode::Kind::Holdout) {
    if (!(mode.train_fraction > 0.0 && mode.train_fraction < 1.0))
      throw std::invalid_argument("split: train fraction must lie in (0,1)");
    const size_t n_train = size_t(std::lround(mode.train_fraction * double(n)));
    train_idx.assign(order.begin(), order.begin() + std::min(n, n_train));
    test_idx.assign(order.begin() + std::min(n, n_train), order.end());
  } else {
    if (mode.k < 2 || size_t(mode.k) > n)
      throw std::invalid_argument("split: fold count must lie in [2, bag count]");
    if (mode.fold < 0 || mode.fold >= mode.k)
      throw std::invalid_argument("split: fold index out of range");
    const size_t lo = size_t(mode.fold) * n / size_t(mode.k);
    const size_t hi = size_t(mode.fold + 1) * n / size_t(mode.k);
    for (size_t i = 0; i < n; ++i)
      (i >= lo && i < hi ? test_idx : train_idx).push_back(order[i]);
  }
  // stable order within each part for reproducible downstream iteration
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {subset(ds, train_idx), subset(ds, test_idx)};
}

std::vector<std::pair<int, int>> comparable_pairs(
    const std::vector<std::pair<float, bool>>& time_censored) {
  std::vector<std::pair<int, int>> out;
  const int n = int(time_censored.size());
  for (int i = 0; i < n; ++i) {
    if (time_censored[size_t(i)].second) continue;  // censored first member: no event observed
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (time_censored[size_t(i)].first < time_censored[size_t(j)].first)
        out.emplace_back(i, j);
    }
  }
  return out;
}

}  // namespace simmil
