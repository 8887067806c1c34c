#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <map>

#include "hafl/federation.hpp"
#include "hafl/rng.hpp"

using namespace hafl;

namespace {

struct Fixture {
  FederatedData data;
  std::size_t d = 6, l = 10;
};

Fixture make_fixture(std::size_t n_clients, std::size_t n_train = 600, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.class_count = 6;
  spec.feature_dim = 10;
  spec.true_rank = 3;
  spec.n_train = n_train;
  spec.n_test = 200;
  spec.seed = seed;
  auto task = generate_synthetic(spec);
  return {FederatedData{task.base, partition_iid(task.train, n_clients, seed), task.test}};
}

FederationConfig freezing_config(std::size_t n, std::size_t k, std::size_t rounds) {
  FederationConfig c;
  c.n_clients = n;
  c.sample_size = k;
  c.rounds = rounds;
  c.r_min = 1;
  c.r_max = 4;
  c.scheme = {SchemeKind::kIFALoRA, 4};
  const std::size_t third = n / 3;
  c.capability_mix = {{third, ClientCapability::freezing(0.75)},
                      {third, ClientCapability::freezing(0.5)},
                      {n - 2 * third, ClientCapability::freezing(0.0)}};
  return c;
}

FederationConfig truncation_config(std::size_t n, std::size_t k, std::size_t rounds) {
  auto c = freezing_config(n, k, rounds);
  c.scheme = {SchemeKind::kITALoRA, 4};
  const std::size_t third = n / 3;
  c.capability_mix = {{third, ClientCapability::truncation(1)},
                      {third, ClientCapability::truncation(2)},
                      {n - 2 * third, ClientCapability::truncation(4)}};
  return c;
}

}  // namespace

TEST_CASE("scheme labels round-trip") {
  for (auto s : {Scheme{SchemeKind::kITALoRA, 16}, Scheme{SchemeKind::kIFALoRA, 16},
                 Scheme{SchemeKind::kIFZLoRA, 16}, Scheme{SchemeKind::kHomLoRA, 2}}) {
    CHECK(Scheme::parse(s.label(), 16) == s);
  }
  CHECK(Scheme::parse("HomLoRA", 8).hom_rank == 8);
  CHECK_THROWS_AS(Scheme::parse("FedAvg", 8), std::invalid_argument);
  CHECK_THROWS_AS(Scheme::parse("HomLoRA-rx", 8), std::invalid_argument);
}

TEST_CASE("sample_clients") {
  CHECK(sample_clients(7, 7, 3) == std::vector<ClientId>{0, 1, 2, 3, 4, 5, 6});
  CHECK(sample_clients(100, 10, 42) == sample_clients(100, 10, 42));
  auto s = sample_clients(100, 10, 5);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK_THROWS_AS(sample_clients(5, 6, 1), std::invalid_argument);
}

TEST_CASE("sampling is uniform: inclusion frequency 0.1 +- 0.01") {
  std::vector<std::size_t> hits(100, 0);
  const std::size_t draws = 10000;
  for (std::size_t t = 1; t <= draws; ++t)
    for (auto id : sample_clients(100, 10, round_sampling_seed(0, t))) ++hits[id];
  for (auto h : hits) CHECK(std::fabs(static_cast<double>(h) / draws - 0.1) <= 0.01);
}

TEST_CASE("config validation") {
  auto c = freezing_config(9, 3, 1);
  CHECK_NOTHROW(c.validate(6, 10));
  auto bad = c;
  bad.sample_size = 10;
  CHECK_THROWS_AS(bad.validate(6, 10), std::invalid_argument);
  bad = c;
  bad.capability_mix[0].count = 2;
  CHECK_THROWS_AS(bad.validate(6, 10), std::invalid_argument);
  bad = c;
  bad.r_max = 7;
  CHECK_THROWS_AS(bad.validate(6, 10), std::invalid_argument);
  bad = c;
  bad.scheme.kind = SchemeKind::kITALoRA;
  CHECK_THROWS_AS(bad.validate(6, 10), std::invalid_argument);
}

TEST_CASE("degenerate federation equals plain local training") {
  auto fx = make_fixture(1);
  for (auto cfg : {freezing_config(3, 1, 1), truncation_config(3, 1, 1)}) {
    cfg.n_clients = 1;
    cfg.capability_mix = {{1, cfg.scheme.kind == SchemeKind::kITALoRA
                                  ? ClientCapability::truncation(4)
                                  : ClientCapability::freezing(0.0)}};
    auto state = init_server(cfg, fx.d, fx.l);
    const auto initial = state.global.adapter;
    auto [next, report] = run_round(std::move(state), cfg, fx.data);
    auto expected = local_train(fx.data.base, initial, full_mask(4), fx.data.shards[0], cfg.training,
                                derive_seed(cfg.seed, {stream::kLocalTrain, 1, 0}));
    CHECK(next.global.adapter == expected);
    CHECK(next.global.round == 1);
    CHECK(report.sampled == std::vector<ClientId>{0});
  }
}

TEST_CASE("IFALoRA with no freezing collapses to norm-weighted averaging") {
  auto fx = make_fixture(6);
  auto cfg = freezing_config(6, 4, 1);
  cfg.capability_mix = {{6, ClientCapability::freezing(0.0)}};
  auto state = init_server(cfg, fx.d, fx.l);
  const GlobalLora initial = state.global;
  const ScoreList scores = state.scores;
  auto [next, report] = run_round(std::move(state), cfg, fx.data);

  Matrix b(fx.d, 4), a(4, fx.l);
  double total = 0.0;
  std::vector<std::pair<double, LoraAdapter>> locals;
  for (auto id : report.sampled) {
    auto r = run_client(id, initial, scores, cfg, fx.data, 1);
    LoraAdapter local(r.payload.B_cols, r.payload.A_rows, initial.adapter.scale());
    const double z = effective_delta(local).frobenius_norm();
    total += z;
    locals.emplace_back(z, local);
  }
  for (auto& [z, local] : locals) {
    Matrix wb = local.B(), wa = local.A();
    wb *= z / total;
    wa *= z / total;
    b += wb;
    a += wa;
  }
  CHECK(max_abs_diff(next.global.adapter.B(), b) < 1e-12);
  CHECK(max_abs_diff(next.global.adapter.A(), a) < 1e-12);
}

TEST_CASE("communication accounting") {
  auto fx = make_fixture(9);
  for (auto cfg : {freezing_config(9, 5, 3), truncation_config(9, 5, 3)}) {
    cfg.bytes_per_param = 2;
    auto result = simulate(cfg, fx.data);
    for (const auto& r : result.reports) {
      std::uint64_t expect = 0;
      for (auto id : r.sampled) {
        const auto& cap = cfg.capability_of(id);
        const std::size_t n = cap.mode == PlanMode::kTruncation ? *cap.rank : trained_count(*cap.freeze_ratio, 4);
        expect += n * (fx.d + fx.l);
      }
      CHECK(r.uploaded_params == expect);
      CHECK(r.uploaded_bytes == 2 * expect);
      std::uint64_t from_plans = 0;
      for (const auto& p : r.plans) from_plans += upload_size(p.selected.size(), fx.d, fx.l, 2);
      CHECK(r.uploaded_bytes == from_plans);
    }
  }
}

TEST_CASE("run_experiment") {
  auto fx = make_fixture(9);
  auto cfg = freezing_config(9, 3, 0);
  CHECK(run_experiment(cfg, fx.data).empty());
  cfg.rounds = 5;
  auto reports = run_experiment(cfg, fx.data);
  REQUIRE(reports.size() == 5);
  for (std::size_t i = 0; i < reports.size(); ++i) CHECK(reports[i].round == i + 1);
  CHECK(reports.front().broadcast_scores == ScoreList(4, 0.0));
}

TEST_CASE("results do not depend on the number of worker threads") {
  auto fx = make_fixture(12);
  for (auto cfg : {freezing_config(12, 6, 4), truncation_config(12, 6, 4)}) {
    cfg.threads = 1;
    auto serial = simulate(cfg, fx.data);
    cfg.threads = 4;
    auto parallel = simulate(cfg, fx.data);
    CHECK(serial.final_state.global == parallel.final_state.global);
    for (std::size_t i = 0; i < serial.reports.size(); ++i) {
      CHECK(serial.reports[i].global_acc == parallel.reports[i].global_acc);
      CHECK(serial.reports[i].global_loss == parallel.reports[i].global_loss);
      CHECK(serial.reports[i].broadcast_scores == parallel.reports[i].broadcast_scores);
    }
  }
}

TEST_CASE("freezing never perturbs indices nobody trained") {
  auto fx = make_fixture(9);
  auto cfg = freezing_config(9, 2, 1);
  // Only heavily frozen clients: each trains one of four indices.
  cfg.capability_mix = {{9, ClientCapability::freezing(0.75)}};
  auto state = init_server(cfg, fx.d, fx.l);
  for (int round = 0; round < 4; ++round) {
    const GlobalLora before = state.global;
    auto [next, report] = run_round(std::move(state), cfg, fx.data);
    REQUIRE_FALSE(report.stale_indices.empty());
    for (auto j : report.stale_indices) {
      CHECK(next.global.adapter.B().column(j) == before.adapter.B().column(j));
      CHECK(std::equal(next.global.adapter.A().row(j).begin(), next.global.adapter.A().row(j).end(),
                       before.adapter.A().row(j).begin()));
    }
    state = std::move(next);
  }
}

TEST_CASE("a round without payloads leaves the global model unchanged") {
  // 3 training samples across 9 clients: most shards are empty.
  auto fx = make_fixture(9, 3);
  auto cfg = freezing_config(9, 1, 1);
  auto state = init_server(cfg, fx.d, fx.l);
  bool saw_empty = false;
  for (int round = 0; round < 12; ++round) {
    const GlobalLora before = state.global;
    auto [next, report] = run_round(std::move(state), cfg, fx.data);
    if (report.no_update) {
      saw_empty = true;
      CHECK(next.global == before);
      CHECK(report.failed == report.sampled);
      CHECK(report.uploaded_params == 0);
    }
    state = std::move(next);
  }
  CHECK(saw_empty);
}

TEST_CASE("distributed client models") {
  auto fx = make_fixture(9);
  SUBCASE("freezing hands every class the global model") {
    auto cfg = freezing_config(9, 3, 4);
    auto result = simulate(cfg, fx.data);
    const auto& last = result.reports.back();
    REQUIRE(last.client_acc.size() == 3);
    for (const auto& c : last.client_acc) {
      CHECK(c.accuracy == last.global_acc);
      CHECK(c.loss == last.global_loss);
    }
    CHECK(last.mean_client_acc == doctest::Approx(last.global_acc).epsilon(1e-15));
  }
  SUBCASE("full-rank truncation class equals the global model") {
    auto cfg = truncation_config(9, 3, 4);
    auto result = simulate(cfg, fx.data);
    auto table = evaluate_distributed_clients(result.final_state.global, result.final_state.scores, cfg,
                                              fx.data.base, fx.data.test);
    auto full = std::find_if(table.begin(), table.end(), [](const auto& c) { return c.label == "rank=4"; });
    REQUIRE(full != table.end());
    CHECK(full->accuracy == result.reports.back().global_acc);
    CHECK(full->clients == 3);
  }
}

TEST_CASE("homogeneous and zero-padding schemes run") {
  auto fx = make_fixture(9);
  auto hom = freezing_config(9, 3, 3);
  hom.scheme = {SchemeKind::kHomLoRA, 2};
  hom.capability_mix = {{9, ClientCapability::homogeneous()}};
  auto h = simulate(hom, fx.data);
  CHECK(h.final_state.global.adapter.rank() == 2);
  CHECK(h.reports.back().uploaded_params == 3 * 2 * (fx.d + fx.l));

  auto zp = freezing_config(9, 3, 3);
  zp.scheme = {SchemeKind::kIFZLoRA, 4};
  CHECK(zp.policy().kind == AggregationKind::kZeroPadding);
  auto z = simulate(zp, fx.data);
  CHECK(z.reports.size() == 3);
}
