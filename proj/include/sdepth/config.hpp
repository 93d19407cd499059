#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace sdepth {

// Line-based "key = value" files (rig.cfg, run.cfg, --config). '#' starts a
// comment, blank lines are ignored, keys are unique. Serialization preserves
// insertion order so emitted files are byte-stable.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text) {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw FormatError("config line " + std::to_string(lineno) +
                          ": expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw FormatError("config line " + std::to_string(lineno) +
                          ": empty key");
      kv.set(key, value);
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  const std::string& get(const std::string& key) const {
    const auto* e = find(key);
    if (!e) throw FormatError("missing config key: " + key);
    return e->second;
  }

  std::string get_or(const std::string& key, const std::string& def) const {
    const auto* e = find(key);
    return e ? e->second : def;
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw FormatError("config key '" + key + "': not a number: " + s);
    }
    if (pos != s.size())
      throw FormatError("config key '" + key + "': not a number: " + s);
    return v;
  }

  int64_t get_int(const std::string& key) const {
    const std::string& s = get(key);
    size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw FormatError("config key '" + key + "': not an integer: " + s);
    }
    if (pos != s.size())
      throw FormatError("config key '" + key + "': not an integer: " + s);
    return v;
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_) {
      if (e.first == key) {
        e.second = value;
        return;
      }
    }
    entries_.emplace_back(key, value);
  }

  void set_double(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    set(key, buf);
  }

  void set_int(const std::string& key, int64_t v) {
    set(key, std::to_string(v));
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& e : entries_) {
      out += e.first;
      out += " = ";
      out += e.second;
      out += '\n';
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write config file: " + path);
    out << serialize();
  }

 private:
  static std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  const std::pair<std::string, std::string>* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return &e;
    return nullptr;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace sdepth
