#include "io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace simmil {
namespace {

using nlohmann::json;

void write_u16(std::ostream& out, uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8)};
  out.write(b, 2);
}

void write_u32(std::ostream& out, uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                     char(v >> 24)};
  out.write(b, 4);
}

void write_u8(std::ostream& out, uint8_t v) { out.put(char(v)); }

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

void write_f32_array(std::ostream& out, const float* data, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), std::streamsize(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) write_f32(out, data[i]);
  }
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0] | (uint16_t(b[1]) << 8));
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

uint8_t read_u8(std::istream& in) {
  return uint8_t(in.get());
}

float read_f32(std::istream& in) {
  uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void read_f32_array(std::istream& in, float* data, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data), std::streamsize(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) data[i] = read_f32(in);
  }
}

void write_string(std::ostream& out, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("io: string too long for u16 length");
  write_u16(out, uint16_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in) {
  const uint16_t n = read_u16(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

void expect_magic(std::istream& in, const char* magic, const std::string& path) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error(path + ": bad magic, expected " + std::string(magic, 4));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

json label_to_json(const BagLabel& l) {
  if (l.kind == BagLabel::Kind::Class) return json{{"kind", "class"}, {"class", l.class_id}};
  return json{{"kind", "survival"}, {"time", l.time}, {"censored", l.censored}};
}

BagLabel label_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "class") return BagLabel::make_class(j.at("class").get<int>());
  if (kind == "survival")
    return BagLabel::make_survival(j.at("time").get<float>(), j.at("censored").get<bool>());
  throw std::runtime_error("bag label: unknown kind '" + kind + "'");
}

constexpr uint32_t kFormatVersion = 1;

}  // namespace

// -------------------------------------------------------------- checkpoints

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  auto out = open_out(path);
  out.write("SMCK", 4);
  write_u32(out, kFormatVersion);
  write_u32(out, uint32_t(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    write_string(out, a.name);
    if (a.shape.size() > 0xff) throw std::invalid_argument("checkpoint: rank too large");
    write_u8(out, uint8_t(a.shape.size()));
    size_t n = 1;
    for (int d : a.shape) {
      write_u32(out, uint32_t(d));
      n *= size_t(d);
    }
    if (n != a.data.size()) throw std::invalid_argument("checkpoint: shape/data mismatch for " + a.name);
    write_f32_array(out, a.data.data(), n);
  }
  out.write(reinterpret_cast<const char*>(ckpt.fingerprint.data()), 32);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "SMCK", path);
  const uint32_t version = read_u32(in);
  if (version != kFormatVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const uint32_t count = read_u32(in);
  ckpt.arrays.resize(count);
  for (auto& a : ckpt.arrays) {
    a.name = read_string(in);
    const uint8_t rank = read_u8(in);
    size_t n = 1;
    a.shape.resize(rank);
    for (auto& d : a.shape) {
      d = int(read_u32(in));
      n *= size_t(d);
    }
    a.data.resize(n);
    read_f32_array(in, a.data.data(), n);
  }
  in.read(reinterpret_cast<char*>(ckpt.fingerprint.data()), 32);
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  return ckpt;
}

// ------------------------------------------------------------ feature cache

void save_feature_cache(const FeatureCache& cache, const std::string& path) {
  auto out = open_out(path);
  out.write("SMFC", 4);
  write_u32(out, kFormatVersion);
  out.write(reinterpret_cast<const char*>(cache.fingerprint.data()), 32);
  write_u32(out, uint32_t(cache.d));
  write_u32(out, uint32_t(cache.bags.size()));
  for (const auto& bag : cache.bags) {
    write_string(out, bag.id);
    if (bag.label.kind == BagLabel::Kind::Class) {
      write_u8(out, 0);
      write_u32(out, uint32_t(bag.label.class_id));
    } else {
      write_u8(out, 1);
      write_f32(out, bag.label.time);
      write_u8(out, bag.label.censored ? 1 : 0);
    }
    if (size_t(bag.n) * size_t(cache.d) != bag.features.size())
      throw std::invalid_argument("feature cache: feature matrix shape mismatch for " + bag.id);
    write_u32(out, uint32_t(bag.n));
    write_f32_array(out, bag.features.data(), bag.features.size());
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

FeatureCache load_feature_cache(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "SMFC", path);
  const uint32_t version = read_u32(in);
  if (version != kFormatVersion)
    throw std::runtime_error(path + ": unsupported feature cache version " + std::to_string(version));
  FeatureCache cache;
  in.read(reinterpret_cast<char*>(cache.fingerprint.data()), 32);
  cache.d = int(read_u32(in));
  const uint32_t count = read_u32(in);
  cache.bags.resize(count);
  for (auto& bag : cache.bags) {
    bag.id = read_string(in);
    const uint8_t tag = read_u8(in);
    if (tag == 0) {
      bag.label = BagLabel::make_class(int(read_u32(in)));
    } else if (tag == 1) {
      const float time = read_f32(in);
      const bool censored = read_u8(in) != 0;
      bag.label = BagLabel::make_survival(time, censored);
    } else {
      throw std::runtime_error(path + ": unknown label tag");
    }
    bag.n = int(read_u32(in));
    bag.features.resize(size_t(bag.n) * size_t(cache.d));
    read_f32_array(in, bag.features.data(), bag.features.size());
  }
  if (!in) throw std::runtime_error(path + ": truncated feature cache");
  return cache;
}

// -------------------------------------------------------------- MIL datasets

void save_dataset(const MILDataset& ds, const std::string& dir, bool with_truth) {
  ensure_dir(dir);

  // bag manifest, one JSON object per line, in bag order
  {
    std::ofstream out(dir + "/bags.jsonl", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + dir + "/bags.jsonl");
    for (const auto& bag : ds.bags) {
      json j{{"bag_id", bag.id},
             {"label", label_to_json(bag.label)},
             {"instances", bag.instance_ids},
             {"source", bag.source}};
      out << j.dump() << "\n";
    }
    json meta{{"bag_id", "__meta__"},
              {"class_names", ds.class_names},
              {"assumption", assumption_name(ds.assumption)},
              {"name", ds.name},
              {"provenance", ds.provenance}};
    out << meta.dump() << "\n";
  }

  // instance pixel store; all instances share one raster geometry
  {
    if (ds.instances.empty()) throw std::invalid_argument("save_dataset: no instances");
    std::vector<const Instance*> order;
    order.reserve(ds.instances.size());
    for (const auto& [id, inst] : ds.instances) order.push_back(&inst);
    std::sort(order.begin(), order.end(),
              [](const Instance* a, const Instance* b) { return a->id < b->id; });
    const Instance& first = *order.front();
    auto out = open_out(dir + "/instances.smix");
    out.write("SMIX", 4);
    write_u32(out, kFormatVersion);
    write_u32(out, uint32_t(order.size()));
    write_u16(out, uint16_t(first.h));
    write_u16(out, uint16_t(first.w));
    write_u8(out, uint8_t(first.c));
    for (const Instance* inst : order) {
      if (inst->h != first.h || inst->w != first.w || inst->c != first.c)
        throw std::invalid_argument("save_dataset: mixed instance raster sizes");
      write_string(out, inst->id);
      write_f32_array(out, inst->pixels.data(), inst->pixels.size());
    }
    if (!out) throw std::runtime_error("failed writing " + dir + "/instances.smix");
  }

  if (with_truth) {
    json labels = json::object();
    bool have_truth = false;
    for (const auto& [id, inst] : ds.instances)
      if (inst.true_label) {
        labels[id] = *inst.true_label;
        have_truth = true;
      }
    json risks = json::object();
    for (const auto& bag : ds.bags)
      if (!bag.true_instance_risks.empty()) risks[bag.id] = bag.true_instance_risks;
    if (have_truth) {
      json truth{{"positive_class_ids", ds.positive_texture_classes},
                 {"instance_labels", labels},
                 {"bag_risks", risks}};
      std::ofstream out(dir + "/truth.json", std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + dir + "/truth.json");
      out << truth.dump(2) << "\n";
    }
  }
}

MILDataset load_dataset(const std::string& dir, bool with_truth) {
  MILDataset ds;

  {
    std::ifstream in(dir + "/bags.jsonl");
    if (!in) throw std::runtime_error("cannot read " + dir + "/bags.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (j.at("bag_id").get<std::string>() == "__meta__") {
        ds.class_names = j.at("class_names").get<std::vector<std::string>>();
        ds.assumption = assumption_from_name(j.at("assumption").get<std::string>());
        ds.name = j.at("name").get<std::string>();
        ds.provenance = j.at("provenance").get<std::string>();
        continue;
      }
      Bag bag;
      bag.id = j.at("bag_id").get<std::string>();
      bag.label = label_from_json(j.at("label"));
      bag.instance_ids = j.at("instances").get<std::vector<std::string>>();
      bag.source = j.at("source").get<std::string>();
      ds.bags.push_back(std::move(bag));
    }
  }

  {
    auto in = open_in(dir + "/instances.smix");
    expect_magic(in, "SMIX", dir + "/instances.smix");
    const uint32_t version = read_u32(in);
    if (version != kFormatVersion)
      throw std::runtime_error(dir + ": unsupported instance store version " + std::to_string(version));
    const uint32_t count = read_u32(in);
    const int h = read_u16(in);
    const int w = read_u16(in);
    const int c = read_u8(in);
    for (uint32_t i = 0; i < count; ++i) {
      Instance inst;
      inst.id = read_string(in);
      inst.h = h;
      inst.w = w;
      inst.c = c;
      inst.pixels.resize(size_t(h) * w * c);
      read_f32_array(in, inst.pixels.data(), inst.pixels.size());
      ds.instances.emplace(inst.id, std::move(inst));
    }
    if (!in) throw std::runtime_error(dir + ": truncated instance store");
  }

  if (with_truth && std::filesystem::exists(dir + "/truth.json")) {
    std::ifstream in(dir + "/truth.json");
    json truth = json::parse(in);
    ds.positive_texture_classes = truth.at("positive_class_ids").get<std::vector<int>>();
    for (const auto& [id, v] : truth.at("instance_labels").items())
      ds.instance(id).true_label = v.get<int>();
    for (auto& bag : ds.bags)
      if (truth.at("bag_risks").contains(bag.id))
        bag.true_instance_risks = truth.at("bag_risks").at(bag.id).get<std::vector<float>>();
  }

  ds.validate();
  return ds;
}

// -------------------------------------------------------------- run manifest

void write_manifest(const RunManifest& m, const std::string& dir) {
  ensure_dir(dir);
  json j{{"command", m.command},
         {"config_fingerprint", m.config_fingerprint},
         {"canonical_config", m.canonical_config},
         {"seed", m.seed},
         {"artifacts", m.artifact_hashes},
         {"extra", m.extra}};
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("cannot read " + dir + "/manifest.json");
  json j = json::parse(in);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  m.canonical_config = j.at("canonical_config").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.artifact_hashes = j.at("artifacts").get<std::map<std::string, std::string>>();
  m.extra = j.at("extra").get<std::map<std::string, std::string>>();
  return m;
}

std::string sha256_file_hex(const std::string& path) {
  auto in = open_in(path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto digest = sha256_bytes(data);
  return hex_string(digest.data(), digest.size());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace simmil
