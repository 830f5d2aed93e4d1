#include "parot/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace parot::cfg {

namespace {

enum class Kind { kInt, kU64, kReal, kBool, kString, kEnum };

struct KeySpec {
  Kind kind;
  std::string def;                 // default value, registry-rendered
  double lo = 0, hi = 0;           // numeric range (inclusive), ints/reals
  std::vector<std::string> allowed;  // enum choices
};

const std::map<std::string, KeySpec>& registry() {
  static const std::map<std::string, KeySpec> reg = {
      {"seed", {Kind::kU64, "0"}},
      {"out", {Kind::kString, "out"}},
      {"data_dir", {Kind::kString, ""}},
      {"checkpoint", {Kind::kString, ""}},
      {"protocol", {Kind::kEnum, "zso3", 0, 0, {"zz", "zso3", "so3so3"}}},
      {"task", {Kind::kEnum, "cls", 0, 0, {"cls", "seg"}}},
      // model
      {"n_points", {Kind::kInt, "256", 64, 65536}},
      {"n_local", {Kind::kInt, "64", 4, 4096}},
      {"n_global", {Kind::kInt, "16", 4, 1024}},
      {"k_local", {Kind::kInt, "32", 4, 512}},
      {"k_intra", {Kind::kInt, "16", 2, 64}},
      {"k_prop", {Kind::kInt, "11", 3, 13}},
      {"relation_mode",
       {Kind::kEnum, "full", 0, 0, {"full", "orientation", "position", "none"}}},
      {"neighbor_search", {Kind::kEnum, "knn", 0, 0, {"knn", "ball"}}},
      {"radius", {Kind::kReal, "0.2", 1e-6, 100}},
      {"disable_intra", {Kind::kBool, "false"}},
      {"disable_inter", {Kind::kBool, "false"}},
      {"interp_baseline", {Kind::kBool, "false"}},
      {"dropout", {Kind::kReal, "0.5", 0, 0.999}},
      // training
      {"epochs", {Kind::kInt, "60", 1, 100000}},
      {"batch_size", {Kind::kInt, "32", 1, 4096}},
      {"lr_start", {Kind::kReal, "1e-3", 1e-12, 10}},
      {"lr_end", {Kind::kReal, "1e-5", 0, 10}},
      {"weight_decay", {Kind::kReal, "1e-6", 0, 1}},
      {"alpha_local", {Kind::kReal, "0.2", 0, 100}},
      {"alpha_global", {Kind::kReal, "0.1", 0, 100}},
      {"beta_local", {Kind::kReal, "0", 0, 100}},
      {"beta_global", {Kind::kReal, "0", 0, 100}},
      {"augment_scale", {Kind::kBool, "true"}},
      // data generation
      {"train_per_class", {Kind::kInt, "100", 1, 100000}},
      {"test_per_class", {Kind::kInt, "40", 1, 100000}},
      {"train_samples", {Kind::kInt, "200", 1, 100000}},
      {"test_samples", {Kind::kInt, "50", 1, 100000}},
      // feature export
      {"channels", {Kind::kString, "0,1,2"}},
  };
  return reg;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_real(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  ss.imbue(std::locale::classic());
  double v;
  std::string rest;
  if (!(ss >> v) || (ss >> rest))
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" +
                                value + "'");
  return v;
}

void validate(const std::string& key, const std::string& value) {
  auto it = registry().find(key);
  if (it == registry().end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  const KeySpec& spec = it->second;
  switch (spec.kind) {
    case Kind::kString:
      return;
    case Kind::kBool:
      if (value != "true" && value != "false" && value != "0" && value != "1")
        throw std::invalid_argument("config: key '" + key +
                                    "' expects true/false, got '" + value + "'");
      return;
    case Kind::kEnum:
      if (std::find(spec.allowed.begin(), spec.allowed.end(), value) == spec.allowed.end()) {
        std::string choices;
        for (const auto& c : spec.allowed) choices += (choices.empty() ? "" : "|") + c;
        throw std::invalid_argument("config: key '" + key + "' expects one of " + choices +
                                    ", got '" + value + "'");
      }
      return;
    case Kind::kU64: {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size())
        throw std::invalid_argument("config: key '" + key +
                                    "' expects an unsigned integer, got '" + value + "'");
      return;
    }
    case Kind::kInt:
    case Kind::kReal: {
      double v = parse_real(key, value);
      if (spec.kind == Kind::kInt && v != std::floor(v))
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" +
                                    value + "'");
      if (v < spec.lo || v > spec.hi)
        throw std::invalid_argument("config: key '" + key + "' = " + value +
                                    " outside [" + std::to_string(spec.lo) + ", " +
                                    std::to_string(spec.hi) + "]");
      return;
    }
  }
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  Config c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: '" + path + "' line " + std::to_string(line_no) +
                               ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      c.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("config: '" + path + "' line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  validate(key, value);
  values_[key] = value;
}

std::string Config::get_string(const std::string& key) const {
  auto v = values_.find(key);
  if (v != values_.end()) return v->second;
  auto r = registry().find(key);
  if (r == registry().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return r->second.def;
}

std::int64_t Config::get_int(const std::string& key) const {
  return std::int64_t(parse_real(key, get_string(key)));
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string s = get_string(key);
  std::uint64_t v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

double Config::get_real(const std::string& key) const {
  return parse_real(key, get_string(key));
}

bool Config::get_bool(const std::string& key) const {
  const std::string s = get_string(key);
  return s == "true" || s == "1";
}

std::string Config::render() const {
  std::string out;
  for (const auto& [key, spec] : registry()) {
    out += key;
    out += " = ";
    out += get_string(key);
    out += "\n";
  }
  return out;
}

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, spec] : registry()) k.push_back(key);
    return k;
  }();
  return keys;
}

}  // namespace parot::cfg
