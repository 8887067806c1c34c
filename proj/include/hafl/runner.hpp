#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "hafl/config.hpp"
#include "hafl/federation.hpp"

namespace hafl {

// Base model, client shards and test set for one seed. Synthetic unless the
// config names TSV files, in which case the base is Gaussian(base_std).
FederatedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundReport> reports;
};

struct SchemeRuns {
  std::string label;
  std::vector<SeedRun> runs;  // in config seed order
};

SchemeRuns run_scheme(const ExperimentConfig& config);

inline constexpr const char* kCsvHeader =
    "round,seed,scheme,global_acc,global_loss,mean_client_acc,uploaded_params,uploaded_bytes";

std::string csv_rows(const SchemeRuns& runs);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
};

Stat mean_std(const std::vector<double>& values);

nlohmann::json plan_to_json(const ClientPlan& plan);
nlohmann::json round_log_entry(std::uint64_t seed, const RoundReport& report);

// Mean +- std over seeds at every checkpoint round <= T and at the final round.
nlohmann::json summary_json(const ExperimentConfig& config, const SchemeRuns& runs);

// Ranking of schemes by mean global accuracy at each checkpoint and the final
// round: `round,rank,scheme,mean_global_acc,std_global_acc`.
std::string ranking_csv(const ExperimentConfig& config, const std::vector<SchemeRuns>& all);

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// One experiment per seed. Writes <out_dir>/<scheme>.csv, <scheme>_summary.json
// and <scheme>_rounds.jsonl. Returns 0 on success; diagnostics go to `err`.
int cmd_run(const ExperimentConfig& config, std::ostream& err);

// Runs every config on identical data and seeds. Configs may differ only in
// scheme, hom_rank and stale_index_rule. Writes compare.csv, ranking.csv and
// compare_summary.json under the first config's out_dir.
int cmd_compare(const std::vector<ExperimentConfig>& configs, std::ostream& out,
                std::ostream& err);

// Throws ConfigError if two configs differ in a field other than the scheme
// selection fields.
void check_comparable(const std::vector<ExperimentConfig>& configs);

}  // namespace hafl
