#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcnn/error.hpp"

// A TOML subset: [section] headers, key = value lines, # comments. Values
// are double-quoted strings, true/false, integers or reals. Keys are
// addressed as "section.key" (top-level keys have no prefix).
namespace pcnn {

class Config {
 public:
  enum class Type { string, boolean, integer, real };

  struct Value {
    Type type;
    std::string text;  // unquoted for strings
    std::size_t line;
  };

  static Config parse(std::istream& is, const std::string& source) {
    Config c;
    c.source_ = source;
    std::string line, section;
    std::size_t lineno = 0;
    auto bad = [&](const std::string& what) {
      fail(ErrorKind::config, source + " line " + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(is, line)) {
      ++lineno;
      line = strip_comment(line);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3) bad("malformed section header");
        section = trim(t.substr(1, t.size() - 2));
        if (!valid_key(section)) bad("invalid section name '" + section + "'");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) bad("expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string raw = trim(t.substr(eq + 1));
      if (!valid_key(key)) bad("invalid key '" + key + "'");
      if (raw.empty()) bad("missing value for '" + key + "'");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full)) bad("duplicate key '" + full + "'");
      c.values_[full] = classify(raw, lineno, bad);
    }
    return c;
  }

  static Config parse_string(const std::string& text, const std::string& source = "<config>") {
    std::istringstream is(text);
    return parse(is, source);
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::io, "cannot open config " + path.string());
    return parse(is, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Sets or replaces a value, as command-line overrides do.
  void set(const std::string& key, const std::string& raw) {
    auto bad = [&](const std::string& what) { fail(ErrorKind::config, "override " + key + ": " + what); };
    values_[key] = classify(raw, 0, bad);
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const Value* v = lookup(key);
    std::string out = fallback;
    if (v) {
      if (v->type != Type::string) type_error(key, *v, "a quoted string");
      out = v->text;
    }
    record(key, out);
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) {
    const Value* v = lookup(key);
    bool out = fallback;
    if (v) {
      if (v->type != Type::boolean) type_error(key, *v, "true or false");
      out = v->text == "true";
    }
    record(key, out);
    return out;
  }

  double get_real(const std::string& key, double fallback) {
    const Value* v = lookup(key);
    double out = fallback;
    if (v) {
      if (v->type != Type::real && v->type != Type::integer) type_error(key, *v, "a number");
      out = std::stod(v->text);
    }
    record(key, out);
    return out;
  }

  std::uint64_t get_count(const std::string& key, std::uint64_t fallback) {
    const Value* v = lookup(key);
    std::uint64_t out = fallback;
    if (v) {
      if (v->type != Type::integer) type_error(key, *v, "a non-negative integer");
      const auto* b = v->text.data();
      const auto [p, ec] = std::from_chars(b, b + v->text.size(), out);
      if (ec != std::errc{} || p != b + v->text.size()) type_error(key, *v, "a non-negative integer");
    }
    record(key, out);
    return out;
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!read_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    const auto unused = unused_keys();
    if (unused.empty()) return;
    std::string list;
    for (const auto& k : unused) list += (list.empty() ? "" : ", ") + k;
    fail(ErrorKind::config, source_ + ": unknown key(s): " + list);
  }

  /// Every value a getter returned, defaults included, nested by section.
  const nlohmann::ordered_json& resolved() const { return resolved_; }

  /// The resolved values written back in the same TOML subset.
  std::string resolved_toml() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [name, body] : resolved_.items()) {
      if (body.is_object()) continue;
      os << name << " = " << toml_value(body) << '\n';
      first = false;
    }
    for (const auto& [name, body] : resolved_.items()) {
      if (!body.is_object()) continue;
      if (!first) os << '\n';
      first = false;
      os << '[' << name << "]\n";
      for (const auto& [k, v] : body.items()) os << k << " = " << toml_value(v) << '\n';
    }
    return os.str();
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, Value> values_;
  std::set<std::string> read_;
  nlohmann::ordered_json resolved_ = nlohmann::ordered_json::object();

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char ch : k) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
    }
    return true;
  }

  template <typename Bad>
  static Value classify(const std::string& raw, std::size_t line, Bad&& bad) {
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') bad("unterminated string");
      const std::string body = raw.substr(1, raw.size() - 2);
      if (body.find('"') != std::string::npos) bad("embedded quotes are not supported");
      return {Type::string, body, line};
    }
    if (raw == "true" || raw == "false") return {Type::boolean, raw, line};
    const char* b = raw.data();
    const char* e = b + raw.size();
    long long iv = 0;
    if (auto [p, ec] = std::from_chars(b, e, iv); ec == std::errc{} && p == e) return {Type::integer, raw, line};
    double dv = 0.0;
    if (auto [p, ec] = std::from_chars(b, e, dv); ec == std::errc{} && p == e && std::isfinite(dv)) {
      return {Type::real, raw, line};
    }
    bad("cannot parse value '" + raw + "'");
    return {};
  }

  const Value* lookup(const std::string& key) {
    read_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  [[noreturn]] void type_error(const std::string& key, const Value& v, const char* expected) const {
    fail(ErrorKind::config, source_ + " line " + std::to_string(v.line) + ": '" + key + "' must be " + expected +
                                ", got '" + v.text + "'");
  }

  template <typename T>
  void record(const std::string& key, const T& value) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      resolved_[key] = value;
    } else {
      resolved_[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
  }

  static std::string toml_value(const nlohmann::ordered_json& v) {
    if (v.is_string()) return '"' + v.get<std::string>() + '"';
    if (v.is_number_float()) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, v.get<double>());
      std::string s(buf, res.ptr);
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      return s;
    }
    return v.dump();
  }
};

}  // namespace pcnn
