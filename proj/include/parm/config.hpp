#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace parm {

// Flat key=value config. Blank lines and '#' comments ignored.
// Keys: k, r, slo_ms, group_timeout_ms, eager_decode, workers,
//       slowdown_p, slowdown_ms, seed.
class Config {
 public:
  static Config parse(std::istream& in) {
    Config cfg;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::invalid_argument("config: malformed line: " + line);
        continue;
      }
      cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    return parse(f);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoll(it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return it->second == "1" || it->second == "true" || it->second == "yes";
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  static std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace parm
