#include "hafl/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hafl {

using nlohmann::json;

FederatedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  FederatedData out;
  Dataset train;
  if (config.train_file.empty()) {
    SyntheticSpec spec = config.data;
    spec.seed = seed;
    SyntheticTask task = generate_synthetic(spec);
    out.base = std::move(task.base);
    train = std::move(task.train);
    out.test = std::move(task.test);
  } else {
    const auto d = config.data.class_count;
    const auto l = config.data.feature_dim;
    out.base = gaussian_base(d, l, config.data.base_std, seed);
    train = load_tsv(config.train_file, l, d);
    out.test = load_tsv(config.test_file, l, d);
    if (out.test.empty()) throw std::runtime_error(config.test_file + ": empty test set");
  }
  out.shards = partition_iid(train, config.n_clients, seed);
  return out;
}

SchemeRuns run_scheme(const ExperimentConfig& config) {
  config.validate();
  SchemeRuns out{config.scheme.label(), {}};
  for (auto seed : config.seeds) {
    const FederatedData data = prepare_data(config, seed);
    out.runs.push_back({seed, run_experiment(config.federation(seed), data)});
  }
  return out;
}

std::string csv_rows(const SchemeRuns& runs) {
  std::string out;
  for (const auto& run : runs.runs) {
    for (const auto& r : run.reports) {
      out += std::to_string(r.round) + "," + std::to_string(run.seed) + "," + runs.label + "," +
             format_double(r.global_acc) + "," + format_double(r.global_loss) + "," +
             format_double(r.mean_client_acc) + "," + std::to_string(r.uploaded_params) + "," +
             std::to_string(r.uploaded_bytes) + "\n";
    }
  }
  return out;
}

Stat mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

json plan_to_json(const ClientPlan& plan) {
  return {{"client_id", plan.client_id},
          {"mode", std::string(to_string(plan.mode))},
          {"selected", plan.selected},
          {"frozen", plan.frozen}};
}

json round_log_entry(std::uint64_t seed, const RoundReport& report) {
  json plans = json::array();
  for (const auto& p : report.plans) plans.push_back(plan_to_json(p));
  json classes = json::array();
  for (const auto& c : report.client_acc) {
    classes.push_back({{"label", c.label}, {"clients", c.clients}, {"accuracy", c.accuracy}});
  }
  return {{"seed", seed},
          {"round", report.round},
          {"sampled", report.sampled},
          {"scores", report.broadcast_scores},
          {"plans", plans},
          {"failed", report.failed},
          {"stale_indices", report.stale_indices},
          {"no_update", report.no_update},
          {"global_acc", report.global_acc},
          {"client_acc", classes},
          {"uploaded_params", report.uploaded_params}};
}

namespace {

json stat_json(const std::vector<double>& values) {
  const Stat s = mean_std(values);
  return {{"mean", s.mean}, {"std", s.std}};
}

// Checkpoints within the run length, plus the final round, ascending.
std::vector<std::size_t> report_rounds(const ExperimentConfig& config) {
  std::vector<std::size_t> rounds;
  for (auto c : config.checkpoints)
    if (c <= config.rounds) rounds.push_back(c);
  if (config.rounds > 0) rounds.push_back(config.rounds);
  std::sort(rounds.begin(), rounds.end());
  rounds.erase(std::unique(rounds.begin(), rounds.end()), rounds.end());
  return rounds;
}

std::vector<double> at_round(const SchemeRuns& runs, std::size_t round,
                             double RoundReport::*field) {
  std::vector<double> v;
  for (const auto& run : runs.runs) v.push_back(run.reports.at(round - 1).*field);
  return v;
}

json checkpoint_json(const SchemeRuns& runs, std::size_t round) {
  json classes = json::array();
  const auto& first = runs.runs.front().reports.at(round - 1).client_acc;
  for (std::size_t k = 0; k < first.size(); ++k) {
    std::vector<double> acc;
    for (const auto& run : runs.runs) acc.push_back(run.reports.at(round - 1).client_acc.at(k).accuracy);
    classes.push_back({{"label", first[k].label}, {"clients", first[k].clients}, {"accuracy", stat_json(acc)}});
  }
  return {{"round", round},
          {"global_acc", stat_json(at_round(runs, round, &RoundReport::global_acc))},
          {"global_loss", stat_json(at_round(runs, round, &RoundReport::global_loss))},
          {"mean_client_acc", stat_json(at_round(runs, round, &RoundReport::mean_client_acc))},
          {"client_acc", classes}};
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

json summary_json(const ExperimentConfig& config, const SchemeRuns& runs) {
  json out;
  out["scheme"] = runs.label;
  out["seeds"] = config.seeds;
  out["rounds"] = config.rounds;
  json checkpoints = json::array();
  if (!runs.runs.empty()) {
    for (auto round : report_rounds(config)) checkpoints.push_back(checkpoint_json(runs, round));
  }
  out["checkpoints"] = checkpoints;

  std::vector<double> params, bytes;
  for (const auto& run : runs.runs) {
    if (run.reports.empty()) continue;
    double p = 0.0, b = 0.0;
    for (const auto& r : run.reports) {
      p += static_cast<double>(r.uploaded_params);
      b += static_cast<double>(r.uploaded_bytes);
    }
    params.push_back(p / static_cast<double>(run.reports.size()));
    bytes.push_back(b / static_cast<double>(run.reports.size()));
  }
  out["uploaded_params_per_round"] = stat_json(params);
  out["uploaded_bytes_per_round"] = stat_json(bytes);
  return out;
}

std::string ranking_csv(const ExperimentConfig& config, const std::vector<SchemeRuns>& all) {
  std::string out = "round,rank,scheme,mean_global_acc,std_global_acc\n";
  for (auto round : report_rounds(config)) {
    struct Entry {
      std::string label;
      Stat stat;
    };
    std::vector<Entry> entries;
    for (const auto& s : all) entries.push_back({s.label, mean_std(at_round(s, round, &RoundReport::global_acc))});
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.stat.mean != b.stat.mean) return a.stat.mean > b.stat.mean;
      return a.label < b.label;
    });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out += std::to_string(round) + "," + std::to_string(i + 1) + "," + entries[i].label + "," +
             format_double(entries[i].stat.mean) + "," + format_double(entries[i].stat.std) + "\n";
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << contents;
    if (!f.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

int cmd_run(const ExperimentConfig& config, std::ostream& err) {
  try {
    config.validate();
    const SchemeRuns runs = run_scheme(config);
    const std::filesystem::path dir(config.out_dir);
    ensure_dir(dir);
    write_file_atomic(dir / (runs.label + ".csv"), std::string(kCsvHeader) + "\n" + csv_rows(runs));
    write_file_atomic(dir / (runs.label + "_summary.json"), summary_json(config, runs).dump(2) + "\n");
    std::string log;
    for (const auto& run : runs.runs)
      for (const auto& r : run.reports) log += round_log_entry(run.seed, r).dump() + "\n";
    write_file_atomic(dir / (runs.label + "_rounds.jsonl"), log);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

void check_comparable(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw ConfigError("scheme", "nothing to compare");
  auto shared = [](ExperimentConfig c) {
    c.scheme = Scheme{};
    c.stale_index_rule = StaleIndexRule::kRetainPrevious;
    return serialize_config(c);
  };
  const std::string reference = shared(configs.front());
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const std::string other = shared(configs[i]);
    if (other == reference) continue;
    std::istringstream a(reference), b(other);
    std::string la, lb;
    while (std::getline(a, la) && std::getline(b, lb)) {
      if (la != lb) throw ConfigError(la.substr(0, la.find(' ')), "differs between compared configs");
    }
  }
}

int cmd_compare(const std::vector<ExperimentConfig>& configs, std::ostream& out,
                std::ostream& err) {
  try {
    check_comparable(configs);
    for (const auto& c : configs) c.validate();
    const auto& base = configs.front();

    std::vector<SchemeRuns> all;
    std::string csv = std::string(kCsvHeader) + "\n";
    json summaries = json::array();
    for (const auto& c : configs) {
      all.push_back(run_scheme(c));
      csv += csv_rows(all.back());
      summaries.push_back(summary_json(c, all.back()));
    }
    const std::string ranking = ranking_csv(base, all);
    const std::filesystem::path dir(base.out_dir);
    ensure_dir(dir);
    write_file_atomic(dir / "compare.csv", csv);
    write_file_atomic(dir / "ranking.csv", ranking);
    write_file_atomic(dir / "compare_summary.json", summaries.dump(2) + "\n");
    out << ranking;
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hafl
