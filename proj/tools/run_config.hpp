#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace zsseg::cli {

/// Flat key=value run configuration. The key set is fixed; every key has a
/// default and a one-line description, and unknown keys are rejected.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };

  RunConfig();

  static const std::vector<Key>& keys();
  static bool known(std::string_view key);

  void set(const std::string& key, const std::string& value);
  const std::string& str(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  bool empty(const std::string& key) const { return str(key).empty(); }

  /// "key = value" lines; blank lines and '#' comments are skipped.
  void merge_file(const std::string& path);
  void merge_text(std::string_view text, const std::string& origin);

  /// Every key with its effective value, in declaration order.
  nlohmann::ordered_json to_json() const;
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace zsseg::cli
