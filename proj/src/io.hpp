#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bags.hpp"

namespace simmil {

// ------------------------------------------------------------ checkpoints

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

// Serialized extractor + head parameters (plus batch-norm running state)
// with the fingerprint of the config that produced them.
struct Checkpoint {
  std::vector<NamedArray> arrays;
  std::array<uint8_t, 32> fingerprint{};

  const NamedArray* find(const std::string& name) const;
  std::string fingerprint_hex() const { return hex_string(fingerprint.data(), 32); }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------- feature cache

struct FeatureCache {
  int d = 0;
  std::array<uint8_t, 32> fingerprint{};  // checkpoint that produced the features
  struct BagEntry {
    std::string id;
    BagLabel label;
    int n = 0;
    std::vector<float> features;  // n x d row-major
  };
  std::vector<BagEntry> bags;

  std::string fingerprint_hex() const { return hex_string(fingerprint.data(), 32); }
};

void save_feature_cache(const FeatureCache& cache, const std::string& path);
FeatureCache load_feature_cache(const std::string& path);

// ----------------------------------------------------------- MIL datasets

// Writes dir/bags.jsonl + dir/instances.smix; ground truth (true instance
// labels, bag risks, positive class set) goes to the separate dir/truth.json
// so that training paths can load a dataset with the truth withheld.
void save_dataset(const MILDataset& ds, const std::string& dir, bool with_truth = true);
MILDataset load_dataset(const std::string& dir, bool with_truth = false);

// ------------------------------------------------------------- run manifest

struct RunManifest {
  std::string command;
  std::string config_fingerprint;
  std::string canonical_config;
  uint64_t seed = 0;
  std::map<std::string, std::string> artifact_hashes;  // relative path -> sha256
  std::map<std::string, std::string> extra;            // free-form fields
};

void write_manifest(const RunManifest& m, const std::string& dir);
RunManifest read_manifest(const std::string& dir);

std::string sha256_file_hex(const std::string& path);
void ensure_dir(const std::string& dir);

}  // namespace simmil
