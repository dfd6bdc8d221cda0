#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "bags.hpp"
#include "config.hpp"
#include "doctest.h"
#include "io.hpp"

using namespace simmil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("simmil_test_" + std::to_string(uint64_t(std::rand()) * 100003 + uint64_t(::getpid())));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config: canonicalization is a fixed point") {
  const std::string text =
      "# a comment\n"
      "[train]\n"
      "epochs = 20\n"
      "[optim]\n"
      "lr = 1e-3\n"
      "batch_size =  64\n"
      "momentum=0.9\n"
      "[dataset]\n"
      "task = classification\n"
      "positive_ratio_max = 0.20\n";
  Config cfg = Config::parse_text(text);
  const std::string canon = cfg.canonical();
  Config reparsed = Config::parse_text(canon);
  CHECK(reparsed.canonical() == canon);
  // normalized floats: 1e-3 -> 0.001, 0.20 -> 0.2
  CHECK(canon.find("lr = 0.001") != std::string::npos);
  CHECK(canon.find("positive_ratio_max = 0.2\n") != std::string::npos);
  // sections and keys sorted
  CHECK(canon.find("[dataset]") < canon.find("[optim]"));
  CHECK(canon.find("[optim]") < canon.find("[train]"));
  CHECK(canon.find("batch_size") < canon.find("momentum"));
}

TEST_CASE("config: fingerprints track content") {
  Config a = Config::parse_text("[train]\nepochs = 5\n");
  Config b = Config::parse_text("[train]\nepochs  =   5\n");
  Config c = Config::parse_text("[train]\nepochs = 6\n");
  CHECK(a.fingerprint_hex() == b.fingerprint_hex());
  CHECK(a.fingerprint_hex() != c.fingerprint_hex());
  CHECK(a.fingerprint_hex().size() == 64);
}

TEST_CASE("config: diagnostics carry line and key information") {
  try {
    Config::parse_text("[train]\nepochs = 5\nbogus_key = 3\n");
    FAIL("expected config_error");
  } catch (const config_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("bogus_key") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse_text("epochs = 5\n"), config_error);        // outside section
  CHECK_THROWS_AS(Config::parse_text("[train]\nepochs = abc\n"), config_error);
  CHECK_THROWS_AS(Config::parse_text("[train\nepochs = 5\n"), config_error);
  CHECK_THROWS_AS(Config::parse_file("/nonexistent/simmil.ini"), config_error);
}

TEST_CASE("config: typed getters with defaults") {
  Config cfg = Config::parse_text("[model]\nwidths = 8, 16,24\n[optim]\nlr = 0.5\n");
  CHECK(cfg.get_ints("model", "widths", {}) == std::vector<int>{8, 16, 24});
  CHECK(cfg.get_double("optim", "lr", 0.0) == 0.5);
  CHECK(cfg.get_int("train", "epochs", 20) == 20);
  CHECK(cfg.get_str("schedule", "kind", "step") == "step");
}

TEST_CASE("checkpoint: save/load round trip and header validation") {
  TempDir dir;
  Checkpoint ckpt;
  ckpt.arrays.push_back({"layer.weight", {2, 3}, {1, 2, 3, 4, 5, 6}});
  ckpt.arrays.push_back({"layer.bias", {3}, {0.5f, -0.5f, 0.0f}});
  for (size_t i = 0; i < 32; ++i) ckpt.fingerprint[i] = uint8_t(i);
  const std::string path = dir.str() + "/model.smck";
  save_checkpoint(ckpt, path);

  Checkpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.arrays.size() == 2);
  CHECK(loaded.arrays[0].name == "layer.weight");
  CHECK(loaded.arrays[0].shape == std::vector<int>{2, 3});
  CHECK(loaded.arrays[0].data == ckpt.arrays[0].data);
  CHECK(loaded.fingerprint == ckpt.fingerprint);

  SUBCASE("magic bytes are enforced") {
    std::ofstream bad(dir.str() + "/bad.smck", std::ios::binary);
    bad << "NOPE12345678";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(dir.str() + "/bad.smck"), std::runtime_error);
  }
  SUBCASE("file starts with its declared magic") {
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "SMCK");
  }
}

TEST_CASE("feature cache: save/load round trip for both label kinds") {
  TempDir dir;
  FeatureCache cache;
  cache.d = 3;
  for (size_t i = 0; i < 32; ++i) cache.fingerprint[i] = uint8_t(31 - i);
  cache.bags.push_back({"bag0", BagLabel::make_class(1), 2, {1, 2, 3, 4, 5, 6}});
  cache.bags.push_back({"bag1", BagLabel::make_survival(2.5f, true), 1, {7, 8, 9}});
  const std::string path = dir.str() + "/feats.smfc";
  save_feature_cache(cache, path);

  FeatureCache loaded = load_feature_cache(path);
  CHECK(loaded.d == 3);
  CHECK(loaded.fingerprint == cache.fingerprint);
  REQUIRE(loaded.bags.size() == 2);
  CHECK(loaded.bags[0].label.kind == BagLabel::Kind::Class);
  CHECK(loaded.bags[0].label.class_id == 1);
  CHECK(loaded.bags[0].features == cache.bags[0].features);
  CHECK(loaded.bags[1].label.kind == BagLabel::Kind::Survival);
  CHECK(loaded.bags[1].label.time == 2.5f);
  CHECK(loaded.bags[1].label.censored);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "SMFC");
}

TEST_CASE("dataset: save/load round trip with and without truth") {
  TempDir dir;
  Config cfg = Config::parse_text(
      "[dataset]\ntask = classification\nclasses = 4\nbag_size = 6\nresolution = 10\n");
  MILDataset ds = synthesize_bags(GeneratorConfig::from_config(cfg, "train", 5), 77);
  save_dataset(ds, dir.str());

  SUBCASE("full round trip with truth") {
    MILDataset loaded = load_dataset(dir.str(), true);
    CHECK(loaded.bags.size() == ds.bags.size());
    CHECK(loaded.class_names == ds.class_names);
    CHECK(loaded.assumption == ds.assumption);
    CHECK(loaded.positive_texture_classes == ds.positive_texture_classes);
    for (const auto& bag : ds.bags) {
      bool found = false;
      for (const auto& lb : loaded.bags)
        if (lb.id == bag.id) {
          found = true;
          CHECK(lb.label.class_id == bag.label.class_id);
          CHECK(lb.instance_ids == bag.instance_ids);
        }
      CHECK(found);
    }
    for (const auto& [id, inst] : ds.instances) {
      const Instance& li = loaded.instance(id);
      CHECK(li.pixels == inst.pixels);
      CHECK(li.true_label == inst.true_label);
    }
  }
  SUBCASE("loading without truth withholds true labels") {
    MILDataset loaded = load_dataset(dir.str(), false);
    for (const auto& [id, inst] : loaded.instances) CHECK(!inst.true_label.has_value());
  }
  SUBCASE("instance store declares its magic") {
    std::ifstream in(dir.str() + "/instances.smix", std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "SMIX");
  }
}

TEST_CASE("run manifest round trip") {
  TempDir dir;
  RunManifest m;
  m.command = "pretrain";
  m.config_fingerprint = "abcd";
  m.canonical_config = "[train]\nepochs = 1\n";
  m.seed = 17;
  m.artifact_hashes["checkpoint.smck"] = "deadbeef";
  m.extra["parent_fingerprint"] = "1234";
  write_manifest(m, dir.str());

  RunManifest r = read_manifest(dir.str());
  CHECK(r.command == "pretrain");
  CHECK(r.seed == 17);
  CHECK(r.artifact_hashes.at("checkpoint.smck") == "deadbeef");
  CHECK(r.extra.at("parent_fingerprint") == "1234");
}

TEST_CASE("sha256 file hashing is stable") {
  TempDir dir;
  const std::string path = dir.str() + "/blob.bin";
  std::ofstream(path) << "hello";
  // echo -n hello | sha256sum
  CHECK(sha256_file_hex(path) ==
        "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
}
