#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebt {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Plain-text key=value config. '#' starts a comment, blank lines are
// ignored, later keys override earlier ones.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // comma-separated ints
  std::vector<int> get_int_list(const std::string& key,
                                std::vector<int> fallback) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace ebt
