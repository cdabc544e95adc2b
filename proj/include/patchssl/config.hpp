#pragma once

#include "patchssl/core.hpp"

#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

// Run configuration: a TOML subset (sections, dotted keys, strings, numbers,
// booleans, flat arrays) layered over a complete table of defaults.
namespace patchssl::config {

inline constexpr const char* kConfigVersion = "1";

class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& msg)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  [[nodiscard]] int line() const { return line_; }

 private:
  int line_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

/// Drops a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline std::vector<std::string> split_key(const std::string& key, int line) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string p;
  while (std::getline(ss, p, '.')) {
    p = trim(p);
    if (p.empty()) throw ConfigError(line, "empty key component in '" + key + "'");
    for (char c : p)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
        throw ConfigError(line, "invalid key '" + key + "'");
    parts.push_back(p);
  }
  if (parts.empty()) throw ConfigError(line, "missing key");
  return parts;
}

inline nlohmann::json parse_scalar(const std::string& raw, int line) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError(line, "missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError(line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char e = v[++i];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string num;
  for (char c : v)
    if (c != '_') num += c;
  try {
    std::size_t pos = 0;
    if (num.find_first_of(".eE") == std::string::npos || num.find("0x") == 0) {
      const long long i = std::stoll(num, &pos, 0);
      if (pos == num.size()) return i;
    } else {
      const double d = std::stod(num, &pos);
      if (pos == num.size()) return d;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(line, "cannot parse value '" + v + "'");
}

inline nlohmann::json parse_value(const std::string& raw, int line) {
  const std::string v = trim(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError(line, "arrays must close on the same line");
    nlohmann::json arr = nlohmann::json::array();
    std::string body = v.substr(1, v.size() - 2), cur;
    bool in_str = false;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!trim(cur).empty()) arr.push_back(parse_scalar(cur, line));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) arr.push_back(parse_scalar(cur, line));
    return arr;
  }
  return parse_scalar(v, line);
}

}  // namespace detail

/// A parsed document plus the source line of every leaf key ("a.b.c" → line).
struct Document {
  nlohmann::json values = nlohmann::json::object();
  std::map<std::string, int> lines;
};

inline Document parse_toml(std::istream& in) {
  Document doc;
  std::vector<std::string> section;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = detail::trim(detail::strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3 || s[1] == '[') throw ConfigError(line, "malformed section header");
      section = detail::split_key(s.substr(1, s.size() - 2), line);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
    auto path = section;
    for (auto& p : detail::split_key(detail::trim(s.substr(0, eq)), line)) path.push_back(p);
    nlohmann::json* node = &doc.values;
    std::string dotted;
    for (std::size_t i = 0; i < path.size(); ++i) {
      dotted += (i ? "." : "") + path[i];
      if (i + 1 == path.size()) {
        if (node->contains(path[i])) throw ConfigError(line, "duplicate key '" + dotted + "'");
        (*node)[path[i]] = detail::parse_value(s.substr(eq + 1), line);
        doc.lines[dotted] = line;
      } else {
        auto& child = (*node)[path[i]];
        if (child.is_null()) child = nlohmann::json::object();
        if (!child.is_object()) throw ConfigError(line, "key '" + dotted + "' is not a table");
        node = &child;
      }
    }
  }
  return doc;
}

inline Document parse_toml_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open config: " + p.string());
  return parse_toml(in);
}

/// Every recognised parameter with its default.
inline nlohmann::json defaults() {
  return {
      {"config_version", kConfigVersion},
      {"seed", 0},
      {"deterministic", false},
      {"synth", {{"n", 200}, {"patch_size", 256}, {"first_index", 0}, {"densities", {20.0, 120.0}}}},
      {"tile", {{"tile_size", 256}, {"tissue_threshold", 0.10}, {"materialize", true}}},
      {"encoder", {{"kind", "vit_small"}, {"preset", "desk"}}},
      {"pretrain",
       {{"method", "dino"},
        {"epochs", 100},
        {"batch_size", 32},
        {"lr", 5e-4},
        {"min_lr", 1e-6},
        {"weight_decay", 0.04},
        {"warmup_fraction", 0.1},
        {"clip_grad", 3.0},
        {"teacher_momentum", 0.99},
        {"center_momentum", 0.9},
        {"student_temperature", 0.1},
        {"teacher_temperature", 0.04},
        {"prototypes", 1024},
        {"freeze_last_layer_epochs", 1},
        {"temperature", 0.5},
        {"projection_dim", 128},
        {"checkpoint_every", 10},
        {"max_steps", 0}}},
      {"extract", {{"stain_norm", false}, {"chunk", 16}}},
      {"mil",
       {{"epochs", 50},
        {"lr", 2e-4},
        {"weight_decay", 1e-5},
        {"projected_dim", 256},
        {"attention_dim", 128},
        {"folds", 5},
        {"fractions", nlohmann::json::array({1.0})}}},
      {"probe", {{"task", "classify"}, {"k", 20}, {"folds", 10}, {"fractions", nlohmann::json::array({1.0})}}},
      {"viz", {{"threshold", 0.5}, {"layer", -1}}},
  };
}

namespace detail {

inline bool compatible(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_array()) return v.is_array();
  return def.type() == v.type();
}

inline void merge(nlohmann::json& base, const nlohmann::json& over, const std::string& prefix, const Document* doc) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto line_of = [&] {
      if (!doc) return 0;
      for (const auto& [k, l] : doc->lines)
        if (k == key || k.rfind(key + ".", 0) == 0) return l;
      return 0;
    };
    if (!base.contains(it.key())) throw ConfigError(line_of(), "unknown key '" + key + "'");
    auto& dst = base[it.key()];
    if (dst.is_object()) {
      if (!it->is_object()) throw ConfigError(line_of(), "key '" + key + "' must be a table");
      merge(dst, *it, key, doc);
    } else {
      if (!compatible(dst, *it)) throw ConfigError(line_of(), "key '" + key + "' has the wrong type");
      dst = dst.is_number_float() ? nlohmann::json(it->get<double>()) : *it;
    }
  }
}

}  // namespace detail

/// Defaults overlaid with a parsed document; unknown keys and type mismatches
/// throw a ConfigError naming the key and its line.
inline nlohmann::json resolve(const Document& doc) {
  nlohmann::json out = defaults();
  detail::merge(out, doc.values, "", &doc);
  if (out["config_version"] != kConfigVersion)
    throw ConfigError(doc.lines.count("config_version") ? doc.lines.at("config_version") : 0,
                      "unsupported config_version '" + out["config_version"].get<std::string>() + "'");
  return out;
}

/// Sets one dotted key, with the same key and type checks as a config file.
inline void set_value(nlohmann::json& cfg, const std::string& dotted, nlohmann::json value) {
  const auto path = detail::split_key(dotted, 0);
  for (auto it = path.rbegin(); it != path.rend(); ++it) value = nlohmann::json{{*it, value}};
  detail::merge(cfg, value, "", nullptr);
}

/// Applies one "a.b=value" override (value in TOML syntax).
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(0, "override must be key=value: " + assignment);
  set_value(cfg, detail::trim(assignment.substr(0, eq)), detail::parse_value(assignment.substr(eq + 1), 0));
}

inline nlohmann::json load(const std::filesystem::path& p) { return resolve(parse_toml_file(p)); }

}  // namespace patchssl::config
