#pragma once

// Value parsing for the flat `namespace.key = value` configuration format.

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

namespace xmodal::kv {

double to_double(const std::string& key, const std::string& value);
long long to_int(const std::string& key, const std::string& value);
std::size_t to_size(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);
std::vector<double> to_double_list(const std::string& key, const std::string& value);
std::vector<std::size_t> to_size_list(const std::string& key, const std::string& value);
std::vector<std::uint64_t> to_u64_list(const std::string& key, const std::string& value);

/// Shortest text that reads back to the same double.
std::string format(double v);
template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) s += format(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

std::string trim(const std::string& s);

}  // namespace xmodal::kv
