#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hafl/data.hpp"
#include "hafl/federation.hpp"

namespace hafl {

// Raised for unknown keys, malformed values and cross-field violations. The
// offending key is available through key().
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  Scheme scheme{SchemeKind::kIFALoRA, 16};
  std::size_t n_clients = 100;
  std::size_t sample_size = 10;
  std::size_t rounds = 100;
  std::size_t r_min = 2;
  std::size_t r_max = 16;
  std::vector<std::pair<std::size_t, std::size_t>> rank_mix{{33, 2}, {33, 4}, {34, 16}};
  std::vector<std::pair<std::size_t, double>> freeze_mix{{33, 0.875}, {33, 0.75}, {34, 0.0}};
  StaleIndexRule stale_index_rule = StaleIndexRule::kRetainPrevious;

  double lora_scale = 1.0;
  double lora_alpha = 0.0;  // > 0 overrides lora_scale with alpha / global rank
  double init_std = kDefaultInitStd;
  std::uint64_t bytes_per_param = 4;
  ImportanceParams importance{0.85, 0.85, 0.001};
  TrainingConfig training;

  SyntheticSpec data;
  std::string train_file;  // optional TSV sources; synthetic data when empty
  std::string test_file;

  std::vector<std::uint64_t> seeds{0, 1, 42};
  std::vector<std::size_t> checkpoints{50, 100};
  std::string out_dir = "out";
  std::size_t threads = 1;

  // Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;

  // Federation settings for one seed, with per-scheme capability mix.
  FederationConfig federation(std::uint64_t seed) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Every key accepted by the parser, in serialization order.
std::vector<std::string> config_keys();

// Flat `key = value` lines; `#` starts a comment; blank lines ignored.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace hafl
