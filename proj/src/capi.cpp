#include "simmil/simmil.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "bags.hpp"
#include "config.hpp"
#include "gradcheck.hpp"
#include "io.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"

namespace {

using namespace simmil;
using nlohmann::json;

thread_local std::string g_last_error;

template <typename Fn>
simmil_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SIMMIL_OK;
  } catch (const config_error& e) {
    g_last_error = e.what();
    return SIMMIL_ERR_USAGE;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return SIMMIL_ERR_USAGE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SIMMIL_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return SIMMIL_ERR_RUNTIME;
  }
}

std::string require(const char* value, const char* what) {
  if (!value || !*value) throw config_error(std::string("missing ") + what);
  return value;
}

// Refuses to reuse an output directory whose recorded fingerprint matches a
// different canonical config text.
void check_fingerprint_collision(const std::string& out_dir, const Config& cfg) {
  const std::string manifest_path = out_dir + "/manifest.json";
  if (!std::filesystem::exists(manifest_path)) return;
  RunManifest old = read_manifest(out_dir);
  if (old.config_fingerprint == cfg.fingerprint_hex() && old.canonical_config != cfg.canonical())
    throw std::runtime_error(out_dir + ": existing manifest has the same fingerprint for a different config");
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const Config& cfg, uint64_t seed,
                        const std::vector<std::string>& artifacts,
                        const std::map<std::string, std::string>& extra = {}) {
  RunManifest m;
  m.command = command;
  m.config_fingerprint = cfg.fingerprint_hex();
  m.canonical_config = cfg.canonical();
  m.seed = seed;
  for (const auto& rel : artifacts) m.artifact_hashes[rel] = sha256_file_hex(out_dir + "/" + rel);
  m.extra = extra;
  write_manifest(m, out_dir);
}

void write_train_log(const std::string& out_dir, const TrainStats& stats) {
  json j{{"epoch_losses", stats.epoch_losses},
         {"total_batches", stats.total_batches},
         {"skipped_batches", stats.skipped_batches}};
  std::ofstream out(out_dir + "/train_log.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

void write_report_files(const std::string& out_dir, const Report& report,
                        const std::string& run_id) {
  ensure_dir(out_dir);
  std::ofstream(out_dir + "/report.json", std::ios::trunc) << report.to_json() << "\n";
  std::ofstream(out_dir + "/report.csv", std::ios::trunc) << report.to_csv(run_id);
}

std::string method_from_sibling_manifest(const std::string& artifact_path) {
  const std::string dir = std::filesystem::path(artifact_path).parent_path().string();
  const std::string manifest = dir + "/manifest.json";
  if (!std::filesystem::exists(manifest)) return "";
  try {
    RunManifest m = read_manifest(dir);
    auto it = m.extra.find("method");
    return it == m.extra.end() ? "" : it->second;
  } catch (...) {
    return "";
  }
}

using PretrainFn = Checkpoint (*)(const Config&, const MILDataset&, uint64_t, TrainStats*);

simmil_status run_pretrain(const char* config_path, const char* data_dir, const char* out_dir,
                           uint64_t seed, const char* command, PretrainFn fn) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string data = require(data_dir, "--data");
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    MILDataset train = load_dataset(data + "/train", /*with_truth=*/false);
    propagate_labels(train);
    TrainStats stats;
    Checkpoint ckpt = fn(cfg, train, seed, &stats);
    ensure_dir(out);
    save_checkpoint(ckpt, out + "/checkpoint.smck");
    write_train_log(out, stats);
    write_run_manifest(out, command, cfg, seed, {"checkpoint.smck"}, {{"method", command}});
  });
}

}  // namespace

extern "C" {

const char* simmil_version(void) { return "0.1.0"; }

const char* simmil_last_error(void) { return g_last_error.c_str(); }

simmil_status simmil_synth_bags(const char* config_path, const char* out_dir, uint64_t seed) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    const int train_bags = int(cfg.get_int("dataset", "train_bags", 500));
    const int test_bags = int(cfg.get_int("dataset", "test_bags", 140));
    MILDataset train = synthesize_bags(GeneratorConfig::from_config(cfg, "train", train_bags), seed);
    MILDataset test = synthesize_bags(GeneratorConfig::from_config(cfg, "test", test_bags), seed);
    save_dataset(train, out + "/train");
    save_dataset(test, out + "/test");
    write_run_manifest(out, "synth-bags", cfg, seed,
                       {"train/bags.jsonl", "train/instances.smix", "test/bags.jsonl",
                        "test/instances.smix"});
  });
}

simmil_status simmil_pretrain(const char* config_path, const char* data_dir, const char* out_dir,
                              uint64_t seed) {
  return run_pretrain(config_path, data_dir, out_dir, seed, "pretrain", &pretrain_simmil);
}

simmil_status simmil_pretrain_survival(const char* config_path, const char* data_dir,
                                       const char* out_dir, uint64_t seed) {
  return run_pretrain(config_path, data_dir, out_dir, seed, "pretrain-survival",
                      &pretrain_simmil_survival);
}

simmil_status simmil_pretrain_contrastive(const char* config_path, const char* data_dir,
                                          const char* out_dir, uint64_t seed) {
  return run_pretrain(config_path, data_dir, out_dir, seed, "pretrain-contrastive",
                      &pretrain_contrastive);
}

simmil_status simmil_continue_pretrain(const char* config_path, const char* parent_checkpoint,
                                       const char* data_dir, const char* out_dir, uint64_t seed) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string parent_path = require(parent_checkpoint, "--ckpt");
    const std::string data = require(data_dir, "--data");
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    Checkpoint parent = load_checkpoint(parent_path);
    MILDataset train = load_dataset(data + "/train", /*with_truth=*/false);
    propagate_labels(train);
    TrainStats stats;
    Checkpoint ckpt = continue_pretrain(parent, cfg, train, seed, &stats);
    ensure_dir(out);
    save_checkpoint(ckpt, out + "/checkpoint.smck");
    write_train_log(out, stats);
    write_run_manifest(out, "continue", cfg, seed, {"checkpoint.smck"},
                       {{"method", "continue"},
                        {"parent_fingerprint", parent.fingerprint_hex()}});
  });
}

simmil_status simmil_extract(const char* config_path, const char* checkpoint_path,
                             const char* data_dir, const char* out_dir) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string ckpt_path = require(checkpoint_path, "--ckpt");
    const std::string data = require(data_dir, "--data");
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ensure_dir(out);
    for (const char* split : {"train", "test"}) {
      MILDataset ds = load_dataset(data + "/" + split, /*with_truth=*/false);
      FeatureCache cache = extract_features(cfg, ckpt, ds);
      save_feature_cache(cache, out + "/" + split + ".smfc");
    }
    write_run_manifest(out, "extract", cfg, 0, {"train.smfc", "test.smfc"},
                       {{"method", method_from_sibling_manifest(ckpt_path)},
                        {"checkpoint_fingerprint", ckpt.fingerprint_hex()}});
  });
}

simmil_status simmil_train_aggregator(const char* config_path, const char* features_dir,
                                      const char* aggregator, const char* out_dir,
                                      uint64_t seed) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string features = require(features_dir, "--features");
    const std::string agg = require(aggregator, "--agg");
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    FeatureCache train_cache = load_feature_cache(features + "/train.smfc");
    FeatureCache test_cache = load_feature_cache(features + "/test.smfc");
    if (train_cache.fingerprint != test_cache.fingerprint)
      throw std::runtime_error("train/test caches come from different checkpoints");
    const std::string method = method_from_sibling_manifest(features + "/train.smfc");
    Report report = train_aggregator(cfg, train_cache, test_cache, agg, seed, method);
    write_report_files(out, report, "train-agg-" + std::to_string(seed));
    write_run_manifest(out, "train-agg", cfg, seed, {"report.json", "report.csv"},
                       {{"method", method}, {"aggregator", agg}});
  });
}

simmil_status simmil_eval_instance(const char* config_path, const char* checkpoint_path,
                                   const char* data_dir, const char* out_dir, uint64_t seed) {
  return guarded([&] {
    Config cfg = Config::parse_file(require(config_path, "--config"));
    const std::string ckpt_path = require(checkpoint_path, "--ckpt");
    const std::string data = require(data_dir, "--data");
    const std::string out = require(out_dir, "--out");
    check_fingerprint_collision(out, cfg);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    MILDataset train = load_dataset(data + "/train", /*with_truth=*/true);
    MILDataset test = load_dataset(data + "/test", /*with_truth=*/true);
    const std::string mode = cfg.get_str("eval", "mode", "lp");
    const std::string method = method_from_sibling_manifest(ckpt_path);
    Report report = instance_eval(cfg, ckpt, train, test, mode, seed, method);
    write_report_files(out, report, "eval-instance-" + std::to_string(seed));
    write_run_manifest(out, "eval-instance", cfg, seed, {"report.json", "report.csv"},
                       {{"method", method}, {"mode", mode}});
  });
}

simmil_status simmil_gradcheck(int trials, uint64_t seed, const char* out_dir,
                               double* max_rel_err) {
  std::string failure;
  const simmil_status st = guarded([&] {
    if (trials < 1) throw config_error("gradcheck: trials must be positive");
    GradCheckResult result = run_gradcheck(trials, seed);
    if (max_rel_err) *max_rel_err = result.max_rel_err;
    if (out_dir && *out_dir) {
      ensure_dir(out_dir);
      json j{{"trials", trials},
             {"seed", seed},
             {"max_rel_err", result.max_rel_err},
             {"coordinates_checked", result.coordinates_checked},
             {"per_component", result.per_component},
             {"passed", result.passed()}};
      std::ofstream(std::string(out_dir) + "/gradcheck.json", std::ios::trunc)
          << j.dump(2) << "\n";
    }
    if (!result.passed()) failure = "gradient check exceeded tolerance";
  });
  if (st != SIMMIL_OK) return st;
  if (!failure.empty()) {
    g_last_error = failure;
    return SIMMIL_ERR_RUNTIME;
  }
  return SIMMIL_OK;
}

simmil_status simmil_report(const char* const* run_dirs, size_t count, const char* out_dir) {
  return guarded([&] {
    if (!run_dirs || count == 0) throw config_error("report: at least one run directory required");
    const std::string out = require(out_dir, "--out");

    struct Key {
      std::string task, dataset, method, aggregator, metric;
      bool operator<(const Key& o) const {
        return std::tie(task, dataset, method, aggregator, metric) <
               std::tie(o.task, o.dataset, o.method, o.aggregator, o.metric);
      }
    };
    // seed-tagged values per group; missing entries become explicit nulls
    std::map<Key, std::map<uint64_t, double>> groups;
    std::set<uint64_t> seeds;
    for (size_t i = 0; i < count; ++i) {
      const std::string dir = require(run_dirs[i], "run directory");
      std::ifstream in(dir + "/report.json");
      if (!in) throw std::runtime_error("cannot read " + dir + "/report.json");
      json j = json::parse(in);
      const uint64_t seed = j.at("seed").get<uint64_t>();
      seeds.insert(seed);
      for (const auto& [metric, value] : j.at("metrics").items()) {
        Key k{j.at("task").get<std::string>(), j.at("dataset").get<std::string>(),
              j.at("method").get<std::string>(), j.at("aggregator").get<std::string>(), metric};
        groups[k][seed] = value.get<double>();
      }
    }

    ensure_dir(out);
    json rows = json::array();
    std::string csv = "task,dataset,method,aggregator,metric,n,mean,std\n";
    for (const auto& [key, by_seed] : groups) {
      std::vector<double> values;
      json per_seed = json::object();
      for (uint64_t s : seeds) {
        auto it = by_seed.find(s);
        if (it == by_seed.end()) {
          per_seed[std::to_string(s)] = nullptr;  // explicit null padding
        } else {
          per_seed[std::to_string(s)] = it->second;
          values.push_back(it->second);
        }
      }
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= double(values.size());
      const double std_dev = sample_std(values);
      rows.push_back(json{{"task", key.task},
                          {"dataset", key.dataset},
                          {"method", key.method},
                          {"aggregator", key.aggregator},
                          {"metric", key.metric},
                          {"n", values.size()},
                          {"mean", mean},
                          {"std", std_dev},
                          {"per_seed", per_seed}});
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", values.size(), mean, std_dev);
      csv += key.task + "," + key.dataset + "," + key.method + "," + key.aggregator + "," +
             key.metric + "," + buf;
    }
    std::ofstream(out + "/summary.json", std::ios::trunc) << rows.dump(2) << "\n";
    std::ofstream(out + "/summary.csv", std::ios::trunc) << csv;
  });
}

// ---- opaque handles ----

struct simmil_dataset {
  MILDataset ds;
};

simmil_status simmil_dataset_open(const char* dir, simmil_dataset** out) {
  return guarded([&] {
    if (!out) throw config_error("dataset_open: null output handle");
    auto handle = std::make_unique<simmil_dataset>();
    handle->ds = load_dataset(require(dir, "dataset directory"), /*with_truth=*/false);
    *out = handle.release();
  });
}

void simmil_dataset_close(simmil_dataset* ds) { delete ds; }

int64_t simmil_dataset_bag_count(const simmil_dataset* ds) {
  return ds ? int64_t(ds->ds.bags.size()) : -1;
}

int64_t simmil_dataset_instance_count(const simmil_dataset* ds) {
  return ds ? ds->ds.instance_count() : -1;
}

int simmil_dataset_class_count(const simmil_dataset* ds) {
  return ds ? int(ds->ds.class_names.size()) : -1;
}

struct simmil_checkpoint {
  Checkpoint ckpt;
};

simmil_status simmil_checkpoint_open(const char* path, simmil_checkpoint** out) {
  return guarded([&] {
    if (!out) throw config_error("checkpoint_open: null output handle");
    auto handle = std::make_unique<simmil_checkpoint>();
    handle->ckpt = load_checkpoint(require(path, "checkpoint path"));
    *out = handle.release();
  });
}

void simmil_checkpoint_close(simmil_checkpoint* ckpt) { delete ckpt; }

int64_t simmil_checkpoint_array_count(const simmil_checkpoint* ckpt) {
  return ckpt ? int64_t(ckpt->ckpt.arrays.size()) : -1;
}

simmil_status simmil_checkpoint_fingerprint(const simmil_checkpoint* ckpt, char* hex,
                                            size_t len) {
  return guarded([&] {
    if (!ckpt || !hex) throw config_error("checkpoint_fingerprint: null argument");
    const std::string fp = ckpt->ckpt.fingerprint_hex();
    if (len < fp.size() + 1) throw config_error("checkpoint_fingerprint: buffer too small");
    std::memcpy(hex, fp.c_str(), fp.size() + 1);
  });
}

struct simmil_features {
  FeatureCache cache;
};

simmil_status simmil_features_open(const char* path, simmil_features** out) {
  return guarded([&] {
    if (!out) throw config_error("features_open: null output handle");
    auto handle = std::make_unique<simmil_features>();
    handle->cache = load_feature_cache(require(path, "feature cache path"));
    *out = handle.release();
  });
}

void simmil_features_close(simmil_features* features) { delete features; }

int simmil_features_dim(const simmil_features* features) {
  return features ? features->cache.d : -1;
}

int64_t simmil_features_bag_count(const simmil_features* features) {
  return features ? int64_t(features->cache.bags.size()) : -1;
}

}  // extern "C"
