#include <doctest.h>

#include <stdexcept>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "hafl/config.hpp"
#include "hafl/runner.hpp"

using namespace hafl;
namespace fs = std::filesystem;

namespace {

fs::path tmp_root() {
  const char* env = std::getenv("HAFL_TEST_TMP");
  fs::path p = env ? fs::path(env) : fs::temp_directory_path() / "hafl_tests";
  fs::create_directories(p);
  return p;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c = parse_config_text(
      "n_clients = 6\nsample_size = 3\nrounds = 2\nr_min = 1\nr_max = 4\n"
      "rank_mix = 2:1,2:2,2:4\nfreeze_mix = 2:0.75,2:0.5,2:0\nhom_rank = 4\n"
      "class_count = 5\nfeature_dim = 8\ntrue_rank = 2\nn_train = 120\nn_test = 50\n"
      "checkpoints = 1,2\nseeds = 7\n");
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("empty config gives documented defaults") {
  auto c = parse_config_text("");
  CHECK(c == ExperimentConfig{});
  CHECK(c.training.eta == 0.001);
  CHECK(c.training.lambda == 0.001);
  CHECK(c.importance.beta1 == 0.85);
  CHECK(c.importance.beta2 == 0.85);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 42});
  CHECK(c.checkpoints == std::vector<std::size_t>{50, 100});
  CHECK(c.n_clients == 100);
  CHECK(c.sample_size == 10);
  CHECK(c.lora_scale == 1.0);
}

TEST_CASE("errors name the offending key") {
  auto key_of = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  CHECK(key_of("r_max = 16\nfeature_dim = 8\n") == "r_max");
  CHECK(key_of("no_such_key = 1\n") == "no_such_key");
  CHECK(key_of("rounds = ten\n") == "rounds");
  CHECK(key_of("learning_rate = -1\n") == "learning_rate");
  CHECK(key_of("rank_mix = 33:2,33:4\n") == "rank_mix");
  CHECK(key_of("freeze_mix = 50:0.5,50:1.0\n") == "freeze_mix");
  CHECK(key_of("scheme = FedProx\n") == "scheme");
  CHECK(key_of("rounds = 3\nrounds = 4\n") == "rounds");
  CHECK(key_of("stale_index_rule = drop\n") == "stale_index_rule");
  CHECK(key_of("train_file = a.tsv\n") == "test_file");
}

TEST_CASE("comments, whitespace and HomLoRA ranks") {
  auto c = parse_config_text("# comment\n  scheme = HomLoRA   # trailing\nhom_rank = 2\n\n");
  CHECK(c.scheme == Scheme{SchemeKind::kHomLoRA, 2});
  CHECK(parse_config_text("scheme = HomLoRA-r4\n").scheme.hom_rank == 4);
  CHECK(parse_config_text("lora_alpha = 32\n").federation(0).lora_scale == 2.0);
}

TEST_CASE("serialize/parse round-trip") {
  ExperimentConfig c;
  CHECK(parse_config_text(serialize_config(c)) == c);
  c.scheme = {SchemeKind::kHomLoRA, 2};
  c.training.eta = 0.0123456789012345;
  c.freeze_mix = {{10, 0.1}, {90, 0.3333333333333333}};
  c.stale_index_rule = StaleIndexRule::kZero;
  c.seeds = {5};
  c.checkpoints = {};
  c.out_dir = "results/x";
  CHECK(parse_config_text(serialize_config(c)) == c);
}

TEST_CASE("documented keys match the parser") {
  const char* src = std::getenv("HAFL_SOURCE_DIR");
  REQUIRE(src != nullptr);
  const std::string doc = read(fs::path(src) / "docs" / "config.md");
  REQUIRE_FALSE(doc.empty());
  std::set<std::string> documented;
  std::regex row(R"(^\| `([a-z0-9_]+)` \|)");
  std::istringstream in(doc);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_search(line, m, row)) documented.insert(m[1]);
  }
  const auto keys = config_keys();
  CHECK(documented == std::set<std::string>(keys.begin(), keys.end()));
}

TEST_CASE("federation settings per scheme") {
  ExperimentConfig c;
  c.scheme = {SchemeKind::kITALoRA, 16};
  auto f = c.federation(3);
  CHECK(f.seed == 3);
  CHECK(f.capability_mix.size() == 3);
  CHECK(f.capability_mix[0].capability == ClientCapability::truncation(2));
  CHECK(f.importance.eta == c.training.eta);
  CHECK_NOTHROW(f.validate(c.data.class_count, c.data.feature_dim));
  c.scheme = {SchemeKind::kIFZLoRA, 16};
  CHECK(c.federation(0).capability_mix[2].capability == ClientCapability::freezing(0.0));
  c.scheme = {SchemeKind::kHomLoRA, 2};
  CHECK(c.federation(0).global_rank() == 2);
}

TEST_CASE("cmd_run writes CSV, summary and round log") {
  auto dir = tmp_root() / "run_basic";
  fs::remove_all(dir);
  auto cfg = tiny(dir);
  std::ostringstream err;
  REQUIRE(cmd_run(cfg, err) == 0);
  auto rows = read_csv(dir / "IFALoRA.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"round", "seed", "scheme", "global_acc", "global_loss",
                                            "mean_client_acc", "uploaded_params", "uploaded_bytes"});
  CHECK(rows[1][0] == "1");
  CHECK(rows[2][1] == "7");

  auto summary = nlohmann::json::parse(read(dir / "IFALoRA_summary.json"));
  for (const auto& cp : summary["checkpoints"]) CHECK(cp["global_acc"]["std"] == 0.0);

  std::istringstream log(read(dir / "IFALoRA_rounds.jsonl"));
  std::string line;
  std::size_t entries = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["scores"].size() == 4);
    CHECK(j["plans"].size() == 3);
    ++entries;
  }
  CHECK(entries == 2);
}

TEST_CASE("summary statistics match a recomputation from the CSV") {
  auto dir = tmp_root() / "run_summary";
  fs::remove_all(dir);
  auto cfg = tiny(dir);
  cfg.seeds = {1, 2, 3};
  cfg.rounds = 3;
  cfg.checkpoints = {2};
  std::ostringstream err;
  REQUIRE(cmd_run(cfg, err) == 0);
  auto rows = read_csv(dir / "IFALoRA.csv");
  REQUIRE(rows.size() == 1 + 9);
  auto summary = nlohmann::json::parse(read(dir / "IFALoRA_summary.json"));
  for (const auto& cp : summary["checkpoints"]) {
    const std::string round = std::to_string(cp["round"].get<std::size_t>());
    std::vector<double> acc;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i][0] == round) acc.push_back(std::stod(rows[i][3]));
    REQUIRE(acc.size() == 3);
    const double mean = (acc[0] + acc[1] + acc[2]) / 3.0;
    double var = 0.0;
    for (double a : acc) var += (a - mean) * (a - mean);
    CHECK(cp["global_acc"]["mean"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
    CHECK(cp["global_acc"]["std"].get<double>() == doctest::Approx(std::sqrt(var / 3.0)).epsilon(1e-12));
  }
  CHECK(summary["checkpoints"].size() == 2);  // round 2 and the final round 3
}

TEST_CASE("cmd_run output is byte-deterministic across thread counts") {
  auto a = tmp_root() / "det_a", b = tmp_root() / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  auto ca = tiny(a), cb = tiny(b);
  ca.rounds = cb.rounds = 4;
  cb.threads = 3;
  std::ostringstream err;
  REQUIRE(cmd_run(ca, err) == 0);
  REQUIRE(cmd_run(cb, err) == 0);
  CHECK(read(a / "IFALoRA.csv") == read(b / "IFALoRA.csv"));
  CHECK(read(a / "IFALoRA_rounds.jsonl") == read(b / "IFALoRA_rounds.jsonl"));
}

TEST_CASE("cmd_run reports I/O failures") {
  auto cfg = tiny("/proc/hafl_cannot_write_here");
  std::ostringstream err;
  CHECK(cmd_run(cfg, err) != 0);
  CHECK(err.str().find("error") != std::string::npos);
}

TEST_CASE("cmd_compare") {
  auto dir = tmp_root() / "compare";
  fs::remove_all(dir);
  auto base = tiny(dir);
  base.seeds = {1, 2};
  std::vector<ExperimentConfig> configs;
  for (auto s : {"IFALoRA", "ITALoRA", "IFZLoRA", "HomLoRA-r4", "HomLoRA-r1"}) {
    auto c = base;
    c.scheme = Scheme::parse(s, 4);
    configs.push_back(c);
  }
  std::ostringstream out, err;
  REQUIRE(cmd_compare(configs, out, err) == 0);
  auto rows = read_csv(dir / "compare.csv");
  CHECK(rows.size() == 1 + 5 * 2 * 2);
  auto ranking = read_csv(dir / "ranking.csv");
  CHECK(ranking.size() == 1 + 2 * 5);  // checkpoints {1, 2}
  CHECK(out.str() == read(dir / "ranking.csv"));

  SUBCASE("a scheme compared with itself yields identical curves") {
    auto d2 = tmp_root() / "compare_self";
    fs::remove_all(d2);
    auto c = tiny(d2);
    std::ostringstream o, e;
    REQUIRE(cmd_compare({c, c}, o, e) == 0);
    auto r = read_csv(d2 / "compare.csv");
    REQUIRE(r.size() == 1 + 2 * 2);
    CHECK(r[1] == r[3]);
    CHECK(r[2] == r[4]);
  }
  SUBCASE("mismatched shared fields are rejected") {
    auto other = configs[1];
    other.training.eta = 0.01;
    std::ostringstream o, e;
    CHECK(cmd_compare({configs[0], other}, o, e) != 0);
    CHECK(e.str().find("learning_rate") != std::string::npos);
  }
}
