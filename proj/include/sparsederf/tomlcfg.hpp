// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal TOML subset for run configuration: [section] headers, key = value
// scalars (string, bool, integer, float) and flat arrays of scalars, with
// '#' comments. Keys are addressed as "section.key". Covers everything the
// CLI needs without pulling in a full TOML implementation.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sparsederf/common.hpp"

namespace sderf {

class TomlConfig {
 public:
  enum class Kind { String, Bool, Number, Array };

  static TomlConfig parse(const std::string& text) {
    TomlConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string s = strip_comment(line, lineno);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(err(lineno, "unterminated section header"));
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty())
          throw ConfigError(err(lineno, "empty section name"));
        continue;
      }
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(err(lineno, "expected key = value"));
      std::string key = trim(s.substr(0, eq));
      std::string val = trim(s.substr(eq + 1));
      if (key.empty()) throw ConfigError(err(lineno, "empty key"));
      if (!section.empty()) key = section + "." + key;
      cfg.put(key, val, lineno);
    }
    return cfg;
  }

  static TomlConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::string get_string(const std::string& key,
                         const std::string& fallback = "") const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->kind != Kind::String)
      throw ConfigError("config key '" + key + "' is not a string");
    return e->scalar;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->kind != Kind::Bool)
      throw ConfigError("config key '" + key + "' is not a boolean");
    return e->scalar == "true";
  }

  double get_double(const std::string& key, double fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->kind != Kind::Number)
      throw ConfigError("config key '" + key + "' is not a number");
    return to_double(e->scalar, key);
  }

  int64_t get_int(const std::string& key, int64_t fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->kind != Kind::Number)
      throw ConfigError("config key '" + key + "' is not a number");
    double d = to_double(e->scalar, key);
    int64_t i = int64_t(d);
    if (double(i) != d)
      throw ConfigError("config key '" + key + "' is not an integer");
    return i;
  }

  std::vector<int> get_int_list(const std::string& key) const {
    const Entry* e = find(key);
    std::vector<int> out;
    if (!e) return out;
    if (e->kind != Kind::Array)
      throw ConfigError("config key '" + key + "' is not an array");
    for (const std::string& item : e->items)
      out.push_back(int(to_double(item, key)));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    const Entry* e = find(key);
    std::vector<double> out;
    if (!e) return out;
    if (e->kind != Kind::Array)
      throw ConfigError("config key '" + key + "' is not an array");
    for (const std::string& item : e->items)
      out.push_back(to_double(item, key));
    return out;
  }

  // Programmatic override (CLI flags win over file contents).
  void set(const std::string& key, const std::string& raw_value) {
    put(key, trim(raw_value), 0);
  }

  // Canonical "key=value" lines, sorted by key; stable across runs.
  std::string stable_string() const {
    std::ostringstream ss;
    for (const auto& [k, e] : entries_) {
      ss << k << "=";
      if (e.kind == Kind::Array) {
        ss << "[";
        for (size_t i = 0; i < e.items.size(); ++i)
          ss << (i ? "," : "") << e.items[i];
        ss << "]";
      } else {
        ss << e.scalar;
      }
      ss << "\n";
    }
    return ss.str();
  }

  // FNV-1a over the canonical form; used to tag runs.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : stable_string()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  struct Entry {
    Kind kind = Kind::String;
    std::string scalar;              // unquoted / canonical token
    std::vector<std::string> items;  // array elements, canonical tokens
  };

  std::map<std::string, Entry> entries_;

  const Entry* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  static std::string err(int lineno, const std::string& what) {
    return "config line " + std::to_string(lineno) + ": " + what;
  }

  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  // Drop a '#' comment, respecting double-quoted strings.
  static std::string strip_comment(const std::string& line, int lineno) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (in_str && c == '\\') {
        ++i;
        continue;
      }
      if (c == '"') in_str = !in_str;
      if (c == '#' && !in_str) return line.substr(0, i);
    }
    if (in_str) throw ConfigError(err(lineno, "unterminated string"));
    return line;
  }

  static double to_double(const std::string& tok, const std::string& key) {
    char* end = nullptr;
    double d = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw ConfigError("config key '" + key + "' has malformed number '" +
                        tok + "'");
    return d;
  }

  static std::string unquote(const std::string& tok, int lineno) {
    std::string out;
    for (size_t i = 1; i + 1 < tok.size(); ++i) {
      char c = tok[i];
      if (c == '\\') {
        if (i + 2 >= tok.size() + 1)
          throw ConfigError(err(lineno, "dangling escape"));
        char n = tok[++i];
        if (n == 'n') out += '\n';
        else if (n == 't') out += '\t';
        else if (n == '"') out += '"';
        else if (n == '\\') out += '\\';
        else
          throw ConfigError(err(lineno, "unsupported escape sequence"));
      } else if (c == '"') {
        throw ConfigError(err(lineno, "stray quote inside string"));
      } else {
        out += c;
      }
    }
    return out;
  }

  static Entry classify(const std::string& val, int lineno) {
    Entry e;
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') {
      e.kind = Kind::String;
      e.scalar = unquote(val, lineno);
      return e;
    }
    if (val == "true" || val == "false") {
      e.kind = Kind::Bool;
      e.scalar = val;
      return e;
    }
    char* end = nullptr;
    std::strtod(val.c_str(), &end);
    if (end != val.c_str() && *end == '\0') {
      e.kind = Kind::Number;
      e.scalar = val;
      return e;
    }
    throw ConfigError(err(lineno, "unrecognized value '" + val + "'"));
  }

  void put(const std::string& key, const std::string& val, int lineno) {
    if (val.empty()) throw ConfigError(err(lineno, "empty value"));
    Entry e;
    if (val.front() == '[') {
      if (val.back() != ']')
        throw ConfigError(err(lineno, "unterminated array"));
      e.kind = Kind::Array;
      std::string body = val.substr(1, val.size() - 2);
      std::string item;
      bool in_str = false;
      for (char c : body) {
        if (c == '"') in_str = !in_str;
        if (c == ',' && !in_str) {
          std::string t = trim(item);
          if (!t.empty()) e.items.push_back(classify(t, lineno).scalar);
          item.clear();
        } else {
          item += c;
        }
      }
      std::string t = trim(item);
      if (!t.empty()) e.items.push_back(classify(t, lineno).scalar);
    } else {
      e = classify(val, lineno);
    }
    entries_[key] = std::move(e);
  }
};

}  // namespace sderf
