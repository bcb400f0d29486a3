#pragma once

// Run configuration: every tunable as a typed `key = value` entry with the
// defaults used throughout the library.

#include "paflow/common.hpp"
#include "paflow/egnn.hpp"
#include "paflow/sampler.hpp"
#include "paflow/sizer.hpp"
#include "paflow/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace paflow {

/// Unknown key or malformed value; the CLI maps it to the usage exit code.
class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class RunConfig {
 public:
  enum class Kind { integer, real, boolean, text };

  struct Entry {
    std::string key;
    Kind kind;
    std::string value;
    std::string help;
  };

  static RunConfig defaults();

  /// Throws UsageError for unknown keys or values that do not parse.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Reads `key = value` lines; `#` starts a comment.
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin);
  /// PAFLOW_SEED, when set, replaces `seed`.
  void apply_environment();

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_seed() const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  const std::vector<Entry>& entries() const { return entries_; }
  /// Every entry as `key = value`, in declaration order.
  std::string dump() const;

  EgnnConfig egnn_config() const;
  TrainConfig train_config() const;
  SizerConfig sizer_config() const;
  SamplerConfig sampler_config() const;
  Schedules schedules() const;

 private:
  const Entry& find(const std::string& key) const;
  std::vector<Entry> entries_;
};

}  // namespace paflow
