#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace scevo {

/// Flat key=value text with [section] headers. Keys are addressed as
/// "section.key". '#' and ';' start comments.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;  // 0 for programmatic overrides
  };

  static ConfigFile parse(std::istream& in, const std::string& source);
  static ConfigFile load(const std::string& path);

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void set(const std::string& key, const std::string& value);

  /// Throws Parse naming the first key (and its line) not in `known`.
  void require_known(const std::set<std::string>& known) const;

  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace scevo
