#include "xmodal/keyvalue.hpp"

#include <charconv>
#include <sstream>

#include "xmodal/core.hpp"

namespace xmodal::kv {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + what + ")");
}

template <typename T>
std::vector<T> list(const std::string& key, const std::string& value, T (*one)(const std::string&, const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(one(key, item));
  }
  return out;
}

}  // namespace

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, value, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, value, "an integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  const long long v = to_int(key, value);
  if (v < 0) bad(key, value, "a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, value, "an unsigned integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad(key, value, "a boolean");
}

std::vector<double> to_double_list(const std::string& key, const std::string& value) {
  return list<double>(key, value, &to_double);
}
std::vector<std::size_t> to_size_list(const std::string& key, const std::string& value) {
  return list<std::size_t>(key, value, &to_size);
}
std::vector<std::uint64_t> to_u64_list(const std::string& key, const std::string& value) {
  return list<std::uint64_t>(key, value, &to_u64);
}

std::string format(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace xmodal::kv
