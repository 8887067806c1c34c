#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hafl/data.hpp"
#include "hafl/federation.hpp"
#include "hafl/model.hpp"

using namespace hafl;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  auto dir = std::filesystem::temp_directory_path() / "hafl_test_data";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.class_count = 5;
  s.feature_dim = 6;
  s.true_rank = 2;
  s.n_train = 300;
  s.n_test = 100;
  s.seed = 4;
  return s;
}

bool sample_less(const Sample& a, const Sample& b) {
  return std::tie(a.y, a.x) < std::tie(b.y, b.x);
}

}  // namespace

TEST_CASE("generate_synthetic is a pure function of the spec") {
  auto a = generate_synthetic(small_spec());
  auto b = generate_synthetic(small_spec());
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.base.W_pre == b.base.W_pre);
  auto spec = small_spec();
  spec.seed = 5;
  CHECK_FALSE(generate_synthetic(spec).train == a.train);
  a.train.validate();
  CHECK(a.train.size() == 300);
  CHECK(a.test.size() == 100);
}

TEST_CASE("noise-free planted labels are reproduced by the oracle adapter") {
  auto spec = small_spec();
  spec.label_noise = 0.0;
  spec.residual_std = 2.0;
  auto t = generate_synthetic(spec);
  CHECK(evaluate(t.base, t.oracle, t.train).accuracy == 1.0);
  CHECK(evaluate(t.base, t.oracle, t.test).accuracy == 1.0);
  CHECK(t.oracle.rank() == 2);
}

TEST_CASE("label noise flips about the requested fraction") {
  auto spec = small_spec();
  spec.n_train = 20000;
  spec.label_noise = 0.2;
  auto t = generate_synthetic(spec);
  const double acc = evaluate(t.base, t.oracle, t.train).accuracy;
  CHECK(acc == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("synthetic spec validation") {
  auto s = small_spec();
  s.true_rank = 7;
  CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
  s = small_spec();
  s.label_noise = 0.5;
  CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
  s = small_spec();
  s.class_count = 1;
  CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
}

TEST_CASE("load_tsv") {
  SUBCASE("one row") {
    auto p = temp_file("one.tsv", "1\t0.5\t0.5\n");
    auto ds = load_tsv(p, 2, 3);
    REQUIRE(ds.size() == 1);
    CHECK(ds.samples[0].y == 1);
    CHECK(ds.samples[0].x == std::vector<double>{0.5, 0.5});
  }
  SUBCASE("empty file") {
    CHECK(load_tsv(temp_file("empty.tsv", ""), 2, 3).empty());
  }
  SUBCASE("short row names its line") {
    auto p = temp_file("short.tsv", "0\t1\t2\n1\t3\n");
    try {
      load_tsv(p, 2, 3);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(load_tsv(temp_file("label.tsv", "3\t1\t2\n"), 2, 3), ParseError);
  }
  SUBCASE("malformed feature") {
    CHECK_THROWS_AS(load_tsv(temp_file("bad.tsv", "0\t1\tabc\n"), 2, 3), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_tsv("/nonexistent/file.tsv", 2, 3), std::runtime_error);
  }
}

TEST_CASE("partition_iid") {
  auto t = generate_synthetic(small_spec());
  SUBCASE("one sample per client") {
    Dataset hundred = t.train;
    hundred.samples.resize(100);
    auto shards = partition_iid(hundred, 100, 1);
    CHECK(shards.size() == 100);
    for (const auto& s : shards) CHECK(s.size() == 1);
  }
  SUBCASE("single client gets a permutation") {
    auto shards = partition_iid(t.train, 1, 2);
    REQUIRE(shards.size() == 1);
    auto a = shards[0].samples, b = t.train.samples;
    std::sort(a.begin(), a.end(), sample_less);
    std::sort(b.begin(), b.end(), sample_less);
    CHECK(a == b);
  }
  SUBCASE("multiset union and balanced sizes") {
    for (std::size_t n : {3u, 7u, 64u, 301u}) {
      auto shards = partition_iid(t.train, n, 3);
      std::vector<Sample> all;
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& s : shards) {
        all.insert(all.end(), s.samples.begin(), s.samples.end());
        lo = std::min(lo, s.size());
        hi = std::max(hi, s.size());
      }
      CHECK(hi - lo <= 1);
      auto ref = t.train.samples;
      std::sort(all.begin(), all.end(), sample_less);
      std::sort(ref.begin(), ref.end(), sample_less);
      CHECK(all == ref);
    }
  }
  SUBCASE("deterministic per seed") {
    CHECK(partition_iid(t.train, 5, 9)[2] == partition_iid(t.train, 5, 9)[2]);
  }
  CHECK_THROWS_AS(partition_iid(t.train, 0, 1), std::invalid_argument);
}

TEST_CASE("low-rank task is learnable by a full-rank federation" * doctest::timeout(300)) {
  // Planted rank-2 residual, noise-free labels, HomLoRA at r_max with the
  // training settings of configs/acceptance.cfg (scale 32/16, 3 local epochs).
  // The frozen base caps the reachable margin, so the residual is drawn
  // larger than the default to give a crisp target.
  SyntheticSpec spec;
  spec.class_count = 20;
  spec.feature_dim = 64;
  spec.label_noise = 0.0;
  spec.residual_std = 2.0;
  spec.true_rank = 2;
  spec.n_train = 20000;
  spec.n_test = 2000;
  spec.seed = 0;
  auto task = generate_synthetic(spec);
  FederatedData data{task.base, partition_iid(task.train, 100, 0), task.test};
  FederationConfig cfg;
  cfg.scheme = {SchemeKind::kHomLoRA, 16};
  cfg.capability_mix = {{100, ClientCapability::homogeneous()}};
  cfg.rounds = 200;
  cfg.lora_scale = 2.0;
  cfg.training.local_epochs = 3;
  auto reports = run_experiment(cfg, data);
  std::size_t first = 0;
  for (const auto& r : reports) {
    if (r.global_acc > 0.95) {
      first = r.round;
      break;
    }
  }
  MESSAGE("first round above 95%: " << first << ", final " << reports.back().global_acc);
  CHECK(first > 0);
  CHECK(first <= 200);
}
