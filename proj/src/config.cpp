#include "hcmt/config.hpp"

#include <fstream>
#include <sstream>

#include "hcmt/errors.hpp"

namespace hcmt {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

ConfigStore ConfigStore::from_file(const std::filesystem::path& path) {
  ConfigStore store;
  store.merge_file(path);
  return store;
}

void ConfigStore::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    set(key, value);
  }
}

void ConfigStore::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("--set has an empty key: '" + assignment + "'");
  set(key, value);
}

void ConfigStore::set(const std::string& key, const std::string& value, bool is_explicit) {
  values_[key] = value;
  if (is_explicit) explicit_.insert(key);
}

void ConfigStore::set_default(const std::string& key, const std::string& value) {
  if (!has(key)) values_[key] = value;
}

std::string ConfigStore::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::int64_t ConfigStore::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    const std::int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: '" + v + "'");
  }
}

double ConfigStore::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: '" + v + "'");
  }
}

bool ConfigStore::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

namespace {
std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) parts.push_back(trim(item));
  return parts;
}
}  // namespace

std::vector<double> ConfigStore::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_list(get_string(key))) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' has a non-numeric list entry: '" + part + "'");
    }
  }
  return out;
}

std::vector<std::int64_t> ConfigStore::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& part : split_list(get_string(key))) {
    try {
      out.push_back(std::stoll(part));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' has a non-integer list entry: '" + part + "'");
    }
  }
  return out;
}

std::vector<std::string> ConfigStore::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::string ConfigStore::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace hcmt
