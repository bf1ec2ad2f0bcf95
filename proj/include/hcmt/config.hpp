#ifndef HCMT_CONFIG_HPP
#define HCMT_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hcmt {

// Flat dotted-key configuration: "key = value" lines, '#' comments, lists as
// comma-separated values. Tracks which keys were set explicitly (file or
// --set) versus defaulted, so mode presets can defer to explicit overrides.
class ConfigStore {
 public:
  static ConfigStore from_file(const std::filesystem::path& path);

  void merge_file(const std::filesystem::path& path);
  // "key=value" as passed to --set.
  void apply_override(const std::string& assignment);

  void set(const std::string& key, const std::string& value, bool is_explicit = true);
  void set_default(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  bool was_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  // All keys, sorted; used to detect unknown keys and to snapshot.
  std::vector<std::string> keys() const;

  // Resolved snapshot, one sorted "key = value" line per entry.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace hcmt

#endif  // HCMT_CONFIG_HPP
