#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tfm/error.hpp"

namespace tfm::cli {

/// Bad command line or config file; the message names the offending key.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// --help was requested; `what()` holds the help text.
class HelpRequested : public Error {
 public:
  using Error::Error;
};

enum class ValueType { text, integer, real, real_list, integer_list, boolean };

struct OptionSpec {
  std::string key;   // config-file key, e.g. "train.lr"
  std::string flag;  // command-line flag, e.g. "--lr"
  std::string default_value;  // empty = unset
  ValueType type = ValueType::text;
  std::string help;
};

const std::vector<OptionSpec>& option_table();
const std::vector<std::string>& command_names();

struct RunConfig {
  std::string command;
  /// Resolved textual value of every key (empty when unset).
  std::map<std::string, std::string> values;
  /// Keys set by a flag or the config file rather than by default.
  std::set<std::string> explicit_keys;

  bool has(std::string_view key) const;
  const std::string& text(std::string_view key) const;
  long long integer(std::string_view key) const;
  double real(std::string_view key) const;
  std::vector<double> real_list(std::string_view key) const;
  std::vector<long long> integer_list(std::string_view key) const;
  bool boolean(std::string_view key) const;

  /// Flat JSON object: "command" plus every key, typed. Passing the file
  /// back through --config reproduces the same RunConfig.
  std::string to_json() const;
};

/// argv[0] is the program name. Precedence: flag > config file > default.
RunConfig parse_config(const std::vector<std::string>& argv);

}  // namespace tfm::cli
