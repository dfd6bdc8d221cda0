#include <cmath>
#include <set>

#include "bags.hpp"
#include "doctest.h"

using namespace simmil;

namespace {

Config tiny_cfg(const std::string& extra = "") {
  return Config::parse_text(
      "[dataset]\n"
      "task = classification\n"
      "classes = 4\n"
      "bag_size = 8\n"
      "resolution = 12\n" +
      extra);
}

MILDataset tiny_ds(int bags, uint64_t seed, const std::string& extra = "") {
  GeneratorConfig gen = GeneratorConfig::from_config(tiny_cfg(extra), "train", bags);
  return synthesize_bags(gen, seed);
}

}  // namespace

TEST_CASE("bag_label_standard: examples and exhaustive oracle") {
  CHECK(bag_label_standard({0, 0, 0}) == 0);
  CHECK(bag_label_standard({0, 1, 0}) == 1);
  CHECK_THROWS_AS(bag_label_standard({}), std::invalid_argument);
  // all label sets of size <= 8 against the (max > 0) oracle
  for (int sz = 1; sz <= 8; ++sz) {
    for (int mask = 0; mask < (1 << sz); ++mask) {
      std::vector<int> labels(size_t(sz), 0);
      int mx = 0;
      for (int i = 0; i < sz; ++i) {
        labels[size_t(i)] = (mask >> i) & 1;
        mx = std::max(mx, labels[size_t(i)]);
      }
      CHECK(bag_label_standard(labels) == (mx > 0 ? 1 : 0));
    }
  }
}

TEST_CASE("bag_risk_accumulative: examples and summation oracle") {
  CHECK(bag_risk_accumulative({0, 0, 0}) == 0.0);
  CHECK(bag_risk_accumulative({1.5, 0, 2.5}) == doctest::Approx(4.0));
  CHECK_THROWS_AS(bag_risk_accumulative({1.0, -0.1}), std::invalid_argument);
  RngStream rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> risks(20);
    double expected = 0.0;
    for (auto& r : risks) {
      r = rng.uniform(0, 3);
      expected += r;
    }
    CHECK(bag_risk_accumulative(risks) == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("propagate_labels: class propagation") {
  MILDataset ds = tiny_ds(6, 11);
  propagate_labels(ds);
  for (const auto& bag : ds.bags)
    for (const auto& id : bag.instance_ids) {
      const auto& p = ds.instance(id).propagated;
      REQUIRE(p.has_value());
      CHECK(p->label.class_id == bag.label.class_id);
    }

  SUBCASE("single-instance bag carries the bag label") {
    MILDataset one;
    one.class_names = {"negative", "positive"};
    Instance inst;
    inst.id = "solo";
    inst.h = inst.w = 2;
    inst.c = 1;
    inst.pixels = {0.1f, 0.2f, 0.3f, 0.4f};
    one.instances.emplace("solo", inst);
    Bag b;
    b.id = "bag";
    b.instance_ids = {"solo"};
    b.label = BagLabel::make_class(1);
    one.bags.push_back(b);
    propagate_labels(one);
    CHECK(one.instance("solo").propagated->label.class_id == 1);
  }
  SUBCASE("orphan instance rejected") {
    MILDataset broken;
    broken.class_names = {"negative", "positive"};
    Bag b;
    b.id = "bag";
    b.instance_ids = {"missing"};
    b.label = BagLabel::make_class(0);
    broken.bags.push_back(b);
    CHECK_THROWS_AS(propagate_labels(broken), std::invalid_argument);
  }
}

TEST_CASE("propagate_labels: survival risk proxy is the negated normalized time rank") {
  MILDataset ds;
  for (int i = 0; i < 3; ++i) {
    Bag b;
    b.id = "b" + std::to_string(i);
    for (int j = 0; j < 2; ++j) {
      Instance inst;
      inst.id = b.id + "/i" + std::to_string(j);
      inst.h = inst.w = inst.c = 1;
      inst.pixels = {0.5f};
      b.instance_ids.push_back(inst.id);
      ds.instances.emplace(inst.id, inst);
    }
    ds.bags.push_back(b);
  }
  ds.assumption = Assumption::Accumulative;
  ds.bags[0].label = BagLabel::make_survival(5.0f, false);  // rank 2 -> proxy -1
  ds.bags[1].label = BagLabel::make_survival(1.0f, false);  // rank 0 -> proxy 0
  ds.bags[2].label = BagLabel::make_survival(3.0f, true);   // rank 1 -> proxy -0.5
  propagate_labels(ds);
  CHECK(ds.instance("b0/i0").propagated->risk_share == doctest::Approx(-0.5));
  CHECK(ds.instance("b1/i0").propagated->risk_share == doctest::Approx(0.0));
  CHECK(ds.instance("b2/i1").propagated->risk_share == doctest::Approx(-0.25));
  CHECK(ds.instance("b0/i0").propagated->label.time == 5.0f);
  CHECK(ds.instance("b2/i0").propagated->label.censored);
}

TEST_CASE("synthesize_bags: determinism, Eq.1 consistency, ratio edge cases") {
  SUBCASE("same seed regenerates bit-identical pixels and identical label counts") {
    MILDataset a = tiny_ds(10, 17);
    MILDataset b = tiny_ds(10, 17);
    REQUIRE(a.bags.size() == b.bags.size());
    int pos_a = 0, pos_b = 0;
    for (size_t i = 0; i < a.bags.size(); ++i) {
      CHECK(a.bags[i].label.class_id == b.bags[i].label.class_id);
      pos_a += a.bags[i].label.class_id;
      pos_b += b.bags[i].label.class_id;
    }
    CHECK(pos_a == pos_b);
    for (const auto& [id, inst] : a.instances) {
      const Instance& other = b.instance(id);
      CHECK(inst.pixels == other.pixels);
    }
  }
  SUBCASE("stored labels satisfy the standard assumption against true labels") {
    MILDataset ds = tiny_ds(40, 23);
    for (const auto& bag : ds.bags) {
      std::vector<int> truth;
      for (const auto& id : bag.instance_ids) {
        const auto& t = ds.instance(id).true_label;
        REQUIRE(t.has_value());
        bool pos = false;
        for (int p : ds.positive_texture_classes) pos |= (*t == p);
        truth.push_back(pos ? 1 : 0);
      }
      CHECK(bag.label.class_id == bag_label_standard(truth));
    }
  }
  SUBCASE("every positive bag contains at least one positive instance") {
    MILDataset ds = tiny_ds(40, 29);
    for (const auto& bag : ds.bags) {
      if (bag.label.class_id == 0) continue;
      int positives = 0;
      for (const auto& id : bag.instance_ids) {
        for (int p : ds.positive_texture_classes)
          if (*ds.instance(id).true_label == p) ++positives;
      }
      CHECK(positives >= 1);
    }
  }
  SUBCASE("positive ratio 0 labels every bag 0") {
    MILDataset ds = tiny_ds(20, 31,
                            "positive_ratio_min = 0\n"
                            "positive_ratio_max = 0\n");
    for (const auto& bag : ds.bags) CHECK(bag.label.class_id == 0);
  }
  SUBCASE("pixels stay in [0,1]") {
    MILDataset ds = tiny_ds(5, 37);
    for (const auto& [id, inst] : ds.instances)
      for (float v : inst.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
  }
  SUBCASE("bag demand beyond the pool is rejected") {
    GeneratorConfig gen = GeneratorConfig::from_config(tiny_cfg(), "train", 4);
    gen.pool_size = 8;  // 4 bags x 8 instances > 8
    CHECK_THROWS_AS(synthesize_bags(gen, 1), std::invalid_argument);
  }
}

TEST_CASE("synthesize_bags: survival bags expose a monotone risk-time relation") {
  Config cfg = Config::parse_text(
      "[dataset]\n"
      "task = survival\n"
      "classes = 4\n"
      "bag_size = 10\n"
      "resolution = 12\n"
      "censor_rate = 0.2\n"
      "time_noise = 0.05\n");
  GeneratorConfig gen = GeneratorConfig::from_config(cfg, "train", 60);
  MILDataset ds = synthesize_bags(gen, 41);
  REQUIRE(ds.is_survival());
  double risky_time = 0.0, safe_time = 0.0;
  int risky = 0, safe = 0;
  for (const auto& bag : ds.bags) {
    REQUIRE(!bag.true_instance_risks.empty());
    double r = 0.0;
    for (float v : bag.true_instance_risks) r += double(v);
    CHECK(bag.label.time > 0.0f);
    if (r > 0) {
      risky_time += bag.label.time;
      ++risky;
    } else {
      safe_time += bag.label.time;
      ++safe;
    }
  }
  REQUIRE(risky > 5);
  REQUIRE(safe > 5);
  CHECK(risky_time / risky < safe_time / safe);  // higher risk -> shorter time
}

TEST_CASE("merge_datasets: class space concatenation") {
  MILDataset a = tiny_ds(4, 1);
  MILDataset b = tiny_ds(4, 2);
  MILDataset c = tiny_ds(4, 3);

  SUBCASE("three 2-class datasets merge into 6 classes") {
    MILDataset merged = merge_datasets({&a, &b, &c});
    CHECK(merged.class_names.size() == 6);
    CHECK(merged.bags.size() == 12);
    // labels remap bijectively into their namespace block
    for (size_t j = 0; j < 3; ++j) {
      const MILDataset& src = j == 0 ? a : (j == 1 ? b : c);
      const int offset = int(j) * 2;
      for (size_t i = 0; i < src.bags.size(); ++i) {
        const Bag& m = merged.bags[j * 4 + i];
        CHECK(m.label.class_id == src.bags[i].label.class_id + offset);
        CHECK(m.label.class_id >= offset);
        CHECK(m.label.class_id < offset + 2);
      }
    }
  }
  SUBCASE("merging a single dataset is the identity up to namespacing") {
    MILDataset merged = merge_datasets({&a});
    CHECK(merged.class_names.size() == a.class_names.size());
    REQUIRE(merged.bags.size() == a.bags.size());
    for (size_t i = 0; i < a.bags.size(); ++i) {
      CHECK(merged.bags[i].label.class_id == a.bags[i].label.class_id);
      CHECK(merged.bags[i].id == "d0/" + a.bags[i].id);
    }
  }
  SUBCASE("survival datasets cannot be merged") {
    Config cfg = Config::parse_text("[dataset]\ntask = survival\nclasses = 4\nbag_size = 4\nresolution = 12\n");
    MILDataset surv = synthesize_bags(GeneratorConfig::from_config(cfg, "train", 4), 5);
    CHECK_THROWS_AS(merge_datasets({&a, &surv}), std::invalid_argument);
  }
  SUBCASE("propagated labels after merging lie in the merged class space") {
    MILDataset merged = merge_datasets({&a, &b, &c});
    propagate_labels(merged);
    for (const auto& bag : merged.bags)
      for (const auto& id : bag.instance_ids) {
        const int cls = merged.instance(id).propagated->label.class_id;
        CHECK(cls >= 0);
        CHECK(cls < 6);
      }
  }
}

TEST_CASE("split: holdout and k-fold") {
  MILDataset ds = tiny_ds(10, 53);

  SUBCASE("holdout 0.8 on 10 bags gives 8/2") {
    auto [train, test] = split(ds, {SplitMode::Kind::Holdout, 0.8, 5, 0}, 99);
    CHECK(train.bags.size() == 8);
    CHECK(test.bags.size() == 2);
  }
  SUBCASE("same seed gives identical membership") {
    auto [a_train, a_test] = split(ds, {SplitMode::Kind::Holdout, 0.7, 5, 0}, 4);
    auto [b_train, b_test] = split(ds, {SplitMode::Kind::Holdout, 0.7, 5, 0}, 4);
    REQUIRE(a_train.bags.size() == b_train.bags.size());
    for (size_t i = 0; i < a_train.bags.size(); ++i)
      CHECK(a_train.bags[i].id == b_train.bags[i].id);
  }
  SUBCASE("5 folds partition the dataset") {
    std::set<std::string> seen;
    size_t total = 0;
    for (int fold = 0; fold < 5; ++fold) {
      SplitMode mode{SplitMode::Kind::KFold, 0.8, 5, fold};
      auto [train, test] = split(ds, mode, 7);
      total += test.bags.size();
      for (const auto& bag : test.bags) {
        CHECK(seen.insert(bag.id).second);  // pairwise disjoint
      }
      CHECK(train.bags.size() + test.bags.size() == ds.bags.size());
    }
    CHECK(total == ds.bags.size());  // folds cover everything
  }
  SUBCASE("bad parameters rejected") {
    CHECK_THROWS_AS(split(ds, {SplitMode::Kind::Holdout, 0.0, 5, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(ds, {SplitMode::Kind::KFold, 0.8, 11, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(ds, {SplitMode::Kind::KFold, 0.8, 5, 5}, 1), std::invalid_argument);
  }
  SUBCASE("no bag is ever split across parts") {
    auto [train, test] = split(ds, {SplitMode::Kind::Holdout, 0.6, 5, 0}, 13);
    std::set<std::string> train_insts;
    for (const auto& bag : train.bags)
      for (const auto& id : bag.instance_ids) train_insts.insert(id);
    for (const auto& bag : test.bags)
      for (const auto& id : bag.instance_ids) CHECK(train_insts.count(id) == 0);
  }
}

TEST_CASE("comparable_pairs: rules and antisymmetry") {
  SUBCASE("both members censored emit nothing") {
    CHECK(comparable_pairs({{2.0f, true}, {5.0f, true}}).empty());
  }
  SUBCASE("uncensored shorter time vs censored longer emits one ordered pair") {
    auto pairs = comparable_pairs({{2.0f, false}, {5.0f, true}});
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].first == 0);   // shorter time, uncensored = higher risk
    CHECK(pairs[0].second == 1);
  }
  SUBCASE("equal times emit nothing") {
    CHECK(comparable_pairs({{3.0f, false}, {3.0f, false}}).empty());
  }
  SUBCASE("antisymmetry on random batches") {
    RngStream rng(123);
    for (int t = 0; t < 30; ++t) {
      std::vector<std::pair<float, bool>> tc(16);
      for (auto& [time, cens] : tc) {
        time = float(1 + rng.uniform_int(6));
        cens = rng.uniform() < 0.4;
      }
      auto pairs = comparable_pairs(tc);
      std::set<std::pair<int, int>> seen(pairs.begin(), pairs.end());
      for (const auto& [a, b] : pairs) {
        CHECK(seen.count({b, a}) == 0);
        CHECK(tc[size_t(a)].first < tc[size_t(b)].first);
        CHECK(!tc[size_t(a)].second);
      }
    }
  }
}
