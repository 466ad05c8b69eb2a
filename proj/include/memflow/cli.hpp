#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

namespace memflow::cli {

/// Invalid configuration; `path` names the offending field (e.g. "mask.eps").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : std::runtime_error(path.empty() ? msg : path + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct Options {
  std::string command;
  std::string config_path;  // empty: defaults only
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  double tolerance_scale = 1.0;
};

/// Runs one command. Exit status: 0 success, 1 failed check, 2 invalid input.
int run(const Options& opt, std::ostream& out, std::ostream& err);

/// FNV-1a 64-bit hash as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace memflow::cli
