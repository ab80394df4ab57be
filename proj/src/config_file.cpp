#include "scevo/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "scevo/error.hpp"

namespace scevo {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& source) {
  ConfigFile cfg;
  cfg.source_ = source;
  std::string section;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find_first_of("#;");
    const std::string line =
        trim(comment == std::string::npos ? raw : raw.substr(0, comment));
    if (line.empty()) continue;
    std::ostringstream where;
    where << source << ":" << line_no;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        raise(ErrorCode::kParse,
              where.str() + ": malformed section header '" + line + "'");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      raise(ErrorCode::kParse,
            where.str() + ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      raise(ErrorCode::kParse, where.str() + ": empty key");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full)) {
      raise(ErrorCode::kParse,
            where.str() + ": duplicate key '" + full + "'");
    }
    cfg.entries_[full] = Entry{trim(line.substr(eq + 1)), line_no};
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open config file '" + path + "'");
  return parse(in, path);
}

void ConfigFile::set(const std::string& key, const std::string& value) {
  entries_[key] = Entry{value, 0};
}

void ConfigFile::require_known(const std::set<std::string>& known) const {
  for (const auto& [key, entry] : entries_) {
    if (!known.count(key)) fail(key, "unknown key");
  }
}

void ConfigFile::fail(const std::string& key, const std::string& why) const {
  std::ostringstream msg;
  msg << source_;
  auto it = entries_.find(key);
  if (it != entries_.end() && it->second.line > 0) {
    msg << ":" << it->second.line;
  }
  msg << ": " << why << " '" << key << "'";
  if (it != entries_.end()) msg << " (value '" << it->second.value << "')";
  raise(ErrorCode::kParse, msg.str());
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.value;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& s = it->second.value;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) fail(key, "trailing characters in number for key");
    return v;
  } catch (const std::logic_error&) {
    fail(key, "expected a number for key");
  }
}

long long ConfigFile::get_int(const std::string& key,
                              long long fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& s = it->second.value;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(key, "expected an integer for key");
  }
  return v;
}

std::uint64_t ConfigFile::get_u64(const std::string& key,
                                  std::uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& s = it->second.value;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(key, "expected an unsigned integer for key");
  }
  return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& s = it->second.value;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  fail(key, "expected a boolean for key");
}

std::vector<double> ConfigFile::get_double_list(const std::string& key) const {
  std::vector<double> out;
  auto it = entries_.find(key);
  if (it == entries_.end()) return out;
  std::stringstream ss(it->second.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) fail(key, "malformed list entry for key");
    } catch (const std::logic_error&) {
      fail(key, "malformed list entry for key");
    }
  }
  return out;
}

}  // namespace scevo
