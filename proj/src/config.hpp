#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace simmil {

// User-facing configuration / input errors; the C API maps these to the
// usage exit code.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::array<uint8_t, 32> sha256_bytes(const std::string& data);
std::string hex_string(const uint8_t* data, size_t n);

// Flat INI-style configuration: [section] blocks of key = value lines.
// Keys are validated against the known schema at parse time; the canonical
// form (sorted sections and keys, normalized values) is what gets hashed
// into the config fingerprint.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_text(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<int> get_ints(const std::string& section, const std::string& key,
                            const std::vector<int>& fallback) const;

  std::string canonical() const;
  std::array<uint8_t, 32> fingerprint() const { return sha256_bytes(canonical()); }
  std::string fingerprint_hex() const;

 private:
  // section -> key -> normalized value
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace simmil
