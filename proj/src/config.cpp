#include "config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace simmil {
namespace {

enum class ValueType { Str, Int, Double, Bool, IntList };

struct KeySpec {
  const char* section;
  const char* key;
  ValueType type;
};

// Known configuration surface. Anything else is rejected at parse time.
const KeySpec kSchema[] = {
    {"dataset", "name", ValueType::Str},
    {"dataset", "task", ValueType::Str},
    {"dataset", "classes", ValueType::Int},
    {"dataset", "positive_class_ids", ValueType::IntList},
    {"dataset", "subtypes", ValueType::Int},
    {"dataset", "train_bags", ValueType::Int},
    {"dataset", "test_bags", ValueType::Int},
    {"dataset", "bag_size", ValueType::Int},
    {"dataset", "pool_size", ValueType::Int},
    {"dataset", "positive_ratio_min", ValueType::Double},
    {"dataset", "positive_ratio_max", ValueType::Double},
    {"dataset", "positive_bag_fraction", ValueType::Double},
    {"dataset", "resolution", ValueType::Int},
    {"dataset", "channels", ValueType::Int},
    {"dataset", "noise", ValueType::Double},
    {"dataset", "censor_rate", ValueType::Double},
    {"dataset", "time_noise", ValueType::Double},
    {"dataset", "time_scale", ValueType::Double},
    {"dataset", "risk_rate", ValueType::Double},
    {"augment", "output_size", ValueType::Int},
    {"augment", "crop_scale_min", ValueType::Double},
    {"augment", "crop_scale_max", ValueType::Double},
    {"augment", "jitter_p", ValueType::Double},
    {"augment", "brightness", ValueType::Double},
    {"augment", "contrast", ValueType::Double},
    {"augment", "saturation", ValueType::Double},
    {"augment", "hue", ValueType::Double},
    {"augment", "grayscale_p", ValueType::Double},
    {"augment", "blur_p", ValueType::Double},
    {"augment", "blur_sigma_min", ValueType::Double},
    {"augment", "blur_sigma_max", ValueType::Double},
    {"augment", "hflip_p", ValueType::Double},
    {"model", "widths", ValueType::IntList},
    {"model", "head_hidden", ValueType::Int},
    {"model", "attention_hidden", ValueType::Int},
    {"loss", "kind", ValueType::Str},
    {"loss", "alpha", ValueType::Double},
    {"loss", "beta", ValueType::Double},
    {"loss", "A", ValueType::Double},
    {"loss", "bins", ValueType::Int},
    {"loss", "temperature", ValueType::Double},
    {"optim", "kind", ValueType::Str},
    {"optim", "lr", ValueType::Double},
    {"optim", "momentum", ValueType::Double},
    {"optim", "weight_decay", ValueType::Double},
    {"optim", "beta1", ValueType::Double},
    {"optim", "beta2", ValueType::Double},
    {"optim", "eps", ValueType::Double},
    {"optim", "batch_size", ValueType::Int},
    {"schedule", "kind", ValueType::Str},
    {"schedule", "milestones", ValueType::IntList},
    {"schedule", "gamma", ValueType::Double},
    {"train", "epochs", ValueType::Int},
    {"downstream", "aggregator", ValueType::Str},
    {"downstream", "epochs", ValueType::Int},
    {"downstream", "lr", ValueType::Double},
    {"downstream", "weight_decay", ValueType::Double},
    {"downstream", "batch_size", ValueType::Int},
    {"downstream", "bins", ValueType::Int},
    {"eval", "mode", ValueType::Str},
    {"eval", "lp_epochs", ValueType::Int},
    {"eval", "lp_lr", ValueType::Double},
    {"eval", "ft_epochs", ValueType::Int},
    {"eval", "ft_lr", ValueType::Double},
};

const KeySpec* find_spec(const std::string& section, const std::string& key) {
  for (const auto& s : kSchema)
    if (section == s.section && key == s.key) return &s;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

int64_t parse_int(const std::string& raw, const std::string& where) {
  int64_t out = 0;
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || p != e)
    throw config_error(where + ": expected integer, got '" + raw + "'");
  return out;
}

double parse_double(const std::string& raw, const std::string& where) {
  try {
    size_t pos = 0;
    double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw config_error(where + ": expected number, got '" + raw + "'");
  }
}

std::string normalize(const std::string& raw, ValueType type, const std::string& where) {
  switch (type) {
    case ValueType::Str:
      return trim(raw);
    case ValueType::Int:
      return std::to_string(parse_int(trim(raw), where));
    case ValueType::Double:
      return format_double(parse_double(trim(raw), where));
    case ValueType::Bool: {
      std::string t = trim(raw);
      if (t == "true" || t == "1" || t == "yes") return "true";
      if (t == "false" || t == "0" || t == "no") return "false";
      throw config_error(where + ": expected boolean, got '" + raw + "'");
    }
    case ValueType::IntList: {
      std::string out;
      std::stringstream ss(raw);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        if (!out.empty()) out += ",";
        out += std::to_string(parse_int(item, where));
      }
      return out;
    }
  }
  return raw;
}

}  // namespace

std::array<uint8_t, 32> sha256_bytes(const std::string& data) {
  std::array<uint8_t, 32> out{};
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

std::string hex_string(const uint8_t* data, size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(n * 2);
  for (size_t i = 0; i < n; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 0xf];
  }
  return out;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

Config Config::parse_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw config_error(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw config_error(where + ": empty section name");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(where + ": expected 'key = value', got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty()) throw config_error(where + ": key '" + key + "' outside any section");
    const KeySpec* spec = find_spec(section, key);
    if (!spec)
      throw config_error(where + ": unknown key '" + section + "." + key + "'");
    cfg.values_[section][key] = normalize(value, spec->type, where + " (" + section + "." + key + ")");
  }
  return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(section, key);
  if (!spec) throw config_error("unknown key '" + section + "." + key + "'");
  values_[section][key] = normalize(value, spec->type, section + "." + key);
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto s = values_.find(section);
  if (s == values_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

int64_t Config::get_int(const std::string& section, const std::string& key, int64_t fallback) const {
  if (!has(section, key)) return fallback;
  return parse_int(values_.at(section).at(key), section + "." + key);
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  if (!has(section, key)) return fallback;
  return parse_double(values_.at(section).at(key), section + "." + key);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  return values_.at(section).at(key) == "true";
}

std::vector<int> Config::get_ints(const std::string& section, const std::string& key,
                                  const std::vector<int>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<int> out;
  std::stringstream ss(values_.at(section).at(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(int(parse_int(item, section + "." + key)));
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [section, keys] : values_) {  // std::map keeps both sorted
    out += "[" + section + "]\n";
    for (const auto& [key, value] : keys) out += key + " = " + value + "\n";
  }
  return out;
}

std::string Config::fingerprint_hex() const {
  auto fp = fingerprint();
  return hex_string(fp.data(), fp.size());
}

}  // namespace simmil
