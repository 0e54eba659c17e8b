#pragma once

// Flat `key = value` configuration text with `#` comments.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "pseudolabel/error.hpp"
#include "pseudolabel/kitti_io.hpp"

namespace pseudolabel {

class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text, const std::string& source = "<config>") {
    ConfigFile cfg;
    cfg.source_ = source;
    int number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++number;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::ParseError, source + ":" + std::to_string(number) + ": expected key = value");
      }
      const std::string key = trim(std::string_view(trimmed).substr(0, eq));
      if (key.empty()) throw Error(ErrorCode::ParseError, source + ":" + std::to_string(number) + ": empty key");
      cfg.values_[key] = trim(std::string_view(trimmed).substr(eq + 1));
      if (end == text.size()) break;
    }
    return cfg;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    auto is = open_input(path);
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse(text, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Each getter leaves `out` untouched when the key is absent.
  void get(const std::string& key, double& out) const {
    if (const auto* v = find(key)) {
      const auto n = parse_number(*v);
      if (!n) bad(key, "number");
      out = *n;
    }
  }
  void get(const std::string& key, int& out) const {
    double d = out;
    get(key, d);
    if (has(key)) {
      if (d != static_cast<double>(static_cast<int>(d))) bad(key, "integer");
      out = static_cast<int>(d);
    }
  }
  void get(const std::string& key, std::uint64_t& out) const {
    if (const auto* v = find(key)) {
      try {
        std::size_t used = 0;
        out = std::stoull(*v, &used);
        if (used != v->size()) bad(key, "unsigned integer");
      } catch (const std::logic_error&) {
        bad(key, "unsigned integer");
      }
    }
  }
  void get(const std::string& key, bool& out) const {
    if (const auto* v = find(key)) {
      if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") {
        out = true;
      } else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") {
        out = false;
      } else {
        bad(key, "boolean");
      }
    }
  }
  void get(const std::string& key, std::string& out) const {
    if (const auto* v = find(key)) out = *v;
  }

  // Keys that no getter asked for; typos surface here.
  std::set<std::string> unused() const {
    std::set<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!read_.count(k)) out.insert(k);
    }
    return out;
  }

  const std::string& source() const { return source_; }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

  const std::string* find(const std::string& key) const {
    read_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  [[noreturn]] void bad(const std::string& key, const char* what) const {
    throw Error(ErrorCode::ConfigInvalid, source_ + ": " + key + " must be a " + what + ", got '" +
                                              values_.at(key) + "'");
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

}  // namespace pseudolabel
