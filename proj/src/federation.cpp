#include "hafl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "hafl/rng.hpp"

namespace hafl {

std::string Scheme::label() const {
  switch (kind) {
    case SchemeKind::kITALoRA: return "ITALoRA";
    case SchemeKind::kIFALoRA: return "IFALoRA";
    case SchemeKind::kIFZLoRA: return "IFZLoRA";
    case SchemeKind::kHomLoRA: return "HomLoRA-r" + std::to_string(hom_rank);
  }
  return "unknown";
}

Scheme Scheme::parse(const std::string& text, std::size_t default_hom_rank) {
  if (text == "ITALoRA") return {SchemeKind::kITALoRA, default_hom_rank};
  if (text == "IFALoRA") return {SchemeKind::kIFALoRA, default_hom_rank};
  if (text == "IFZLoRA") return {SchemeKind::kIFZLoRA, default_hom_rank};
  if (text == "HomLoRA") return {SchemeKind::kHomLoRA, default_hom_rank};
  const std::string prefix = "HomLoRA-r";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size()) {
    const std::string digits = text.substr(prefix.size());
    if (std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
      return {SchemeKind::kHomLoRA, static_cast<std::size_t>(std::stoull(digits))};
    }
  }
  throw std::invalid_argument("unknown scheme '" + text + "'");
}

std::size_t FederationConfig::global_rank() const {
  return scheme.kind == SchemeKind::kHomLoRA ? scheme.hom_rank : r_max;
}

AggregationPolicy FederationConfig::policy() const {
  switch (scheme.kind) {
    case SchemeKind::kITALoRA:
    case SchemeKind::kIFALoRA: return {AggregationKind::kAdaptive, stale_index_rule};
    case SchemeKind::kIFZLoRA: return {AggregationKind::kZeroPadding, StaleIndexRule::kZero};
    case SchemeKind::kHomLoRA: return {AggregationKind::kFedAvg, stale_index_rule};
  }
  return {};
}

const ClientCapability& FederationConfig::capability_of(ClientId id) const {
  std::size_t start = 0;
  for (const auto& g : capability_mix) {
    if (id < start + g.count) return g.capability;
    start += g.count;
  }
  throw std::out_of_range("client id " + std::to_string(id) + " beyond capability mix");
}

void FederationConfig::validate(std::size_t class_count, std::size_t feature_dim) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (n_clients == 0) fail("n_clients must be >= 1");
  if (sample_size == 0 || sample_size > n_clients) fail("sample_size must lie in [1, n_clients]");
  if (r_min == 0 || r_min > r_max) fail("r_min must lie in [1, r_max]");
  if (r_max > std::min(class_count, feature_dim)) {
    fail("r_max = " + std::to_string(r_max) + " exceeds min(class_count, feature_dim) = " +
         std::to_string(std::min(class_count, feature_dim)));
  }
  if (scheme.kind == SchemeKind::kHomLoRA &&
      (scheme.hom_rank == 0 || scheme.hom_rank > std::min(class_count, feature_dim))) {
    fail("hom_rank must lie in [1, min(class_count, feature_dim)]");
  }
  if (!(lora_scale > 0.0)) fail("lora_scale must be > 0");
  if (!(init_std > 0.0)) fail("init_std must be > 0");
  if (threads == 0) fail("threads must be >= 1");
  training.validate();
  if (!(importance.beta1 > 0.0 && importance.beta1 < 1.0) ||
      !(importance.beta2 > 0.0 && importance.beta2 < 1.0)) {
    fail("importance smoothing factors must lie in (0, 1)");
  }
  std::size_t total = 0;
  for (const auto& g : capability_mix) {
    total += g.count;
    const auto& c = g.capability;
    switch (scheme.kind) {
      case SchemeKind::kITALoRA:
        if (c.mode != PlanMode::kTruncation || !c.rank) fail("ITALoRA needs rank capabilities");
        if (*c.rank < r_min || *c.rank > r_max) {
          fail("client rank " + std::to_string(*c.rank) + " outside [r_min, r_max]");
        }
        break;
      case SchemeKind::kIFALoRA:
      case SchemeKind::kIFZLoRA:
        if (c.mode != PlanMode::kFreezing || !c.freeze_ratio) {
          fail(scheme.label() + " needs freeze-ratio capabilities");
        }
        if (!(*c.freeze_ratio >= 0.0 && *c.freeze_ratio < 1.0)) fail("freeze ratio outside [0, 1)");
        break;
      case SchemeKind::kHomLoRA:
        if (c.mode != PlanMode::kHomogeneous) fail("HomLoRA needs homogeneous capabilities");
        break;
    }
  }
  if (total != n_clients) {
    fail("capability counts sum to " + std::to_string(total) + ", expected n_clients = " +
         std::to_string(n_clients));
  }
}

std::string capability_label(const ClientCapability& cap) {
  switch (cap.mode) {
    case PlanMode::kTruncation: return "rank=" + std::to_string(cap.rank.value_or(0));
    case PlanMode::kFreezing: {
      std::ostringstream os;
      os << "freeze=" << cap.freeze_ratio.value_or(0.0);
      return os.str();
    }
    case PlanMode::kHomogeneous: return "full";
  }
  return "unknown";
}

ServerState init_server(const FederationConfig& config, std::size_t class_count,
                        std::size_t feature_dim) {
  const std::size_t r_g = config.global_rank();
  LoraAdapter adapter =
      init_adapter(class_count, feature_dim, r_g, config.lora_scale,
                   derive_seed(config.seed, {stream::kAdapterInit}), config.init_std);
  ImportanceTracker tracker(adapter, config.importance);
  return {GlobalLora{std::move(adapter), 0}, std::move(tracker), ScoreList(r_g, 0.0), 0};
}

std::vector<ClientId> sample_clients(std::size_t n_clients, std::size_t sample_size,
                                     std::uint64_t round_seed) {
  if (sample_size > n_clients) {
    throw std::invalid_argument("cannot sample " + std::to_string(sample_size) + " of " +
                                std::to_string(n_clients) + " clients");
  }
  std::vector<ClientId> ids(n_clients);
  std::iota(ids.begin(), ids.end(), ClientId{0});
  Rng rng(round_seed);
  for (std::size_t i = 0; i < sample_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(sample_size);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::uint64_t round_sampling_seed(std::uint64_t seed, std::size_t round) {
  return derive_seed(seed, {stream::kSampling, round});
}

ClientResult run_client(ClientId id, const GlobalLora& global, const ScoreList& scores,
                        const FederationConfig& config, const FederatedData& data,
                        std::size_t round) {
  const auto& cap = config.capability_of(id);
  ClientPlan plan = make_plan(id, cap, scores, global.adapter.rank());
  const auto& shard = data.shards.at(id);
  const std::uint64_t seed = derive_seed(config.seed, {stream::kLocalTrain, round, id});

  LoraAdapter trained = [&] {
    switch (plan.mode) {
      case PlanMode::kTruncation: {
        LoraAdapter local = apply_truncation(global, plan);
        const auto mask = full_mask(local.rank());
        return local_train(data.base, std::move(local), mask, shard, config.training, seed);
      }
      case PlanMode::kFreezing: {
        FrozenView view = apply_freezing(global, plan);
        return local_train(data.base, std::move(view.adapter), view.trainable, shard,
                           config.training, seed);
      }
      case PlanMode::kHomogeneous:
        break;
    }
    return local_train(data.base, global.adapter, full_mask(global.adapter.rank()), shard,
                       config.training, seed);
  }();
  UploadPayload payload = extract_upload(trained, plan);
  return {std::move(plan), std::move(payload), shard.size()};
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<CapabilityAccuracy> evaluate_distributed_clients(const GlobalLora& global,
                                                             const ScoreList& scores,
                                                             const FederationConfig& config,
                                                             const FrozenBase& base,
                                                             const Dataset& test) {
  std::vector<CapabilityAccuracy> table;
  for (const auto& group : config.capability_mix) {
    const std::string label = capability_label(group.capability);
    auto existing = std::find_if(table.begin(), table.end(),
                                 [&](const CapabilityAccuracy& c) { return c.label == label; });
    if (existing != table.end()) {
      existing->clients += group.count;
      continue;
    }
    ClientPlan plan = make_plan(0, group.capability, scores, global.adapter.rank());
    EvalResult r;
    switch (plan.mode) {
      case PlanMode::kTruncation:
        r = evaluate(base, apply_truncation(global, plan), test);
        break;
      case PlanMode::kFreezing:
        r = evaluate(base, apply_freezing(global, plan).adapter, test);
        break;
      case PlanMode::kHomogeneous:
        r = evaluate(base, global.adapter, test);
        break;
    }
    table.push_back({label, group.count, r.accuracy, r.mean_loss});
  }
  return table;
}

std::pair<ServerState, RoundReport> run_round(ServerState state, const FederationConfig& config,
                                              const FederatedData& data) {
  const std::size_t round = state.rounds_run + 1;
  const std::size_t d = state.global.adapter.out_dim();
  const std::size_t l = state.global.adapter.in_dim();
  if (data.shards.size() != config.n_clients) {
    throw std::invalid_argument("expected one shard per client");
  }

  RoundReport report;
  report.round = round;
  report.sampled = sample_clients(config.n_clients, config.sample_size,
                                  round_sampling_seed(config.seed, round));
  report.broadcast_scores = state.scores;

  // Clients with no local data cannot train and drop out of the round.
  std::vector<ClientId> active;
  for (auto id : report.sampled) {
    if (data.shards[id].empty()) {
      report.failed.push_back(id);
    } else {
      active.push_back(id);
    }
  }

  std::vector<ClientResult> results(active.size());
  parallel_for(active.size(), config.threads, [&](std::size_t i) {
    results[i] = run_client(active[i], state.global, state.scores, config, data, round);
  });

  std::vector<UploadPayload> payloads;
  std::vector<double> weights;
  payloads.reserve(results.size());
  for (auto& r : results) {
    report.plans.push_back(r.plan);
    report.uploaded_params += r.payload.selected.size() * (d + l);
    report.uploaded_bytes += upload_size(r.payload.selected.size(), d, l, config.bytes_per_param);
    weights.push_back(static_cast<double>(r.samples));
    payloads.push_back(std::move(r.payload));
  }

  if (payloads.empty()) {
    report.no_update = true;
  } else {
    const std::size_t r_g = state.global.adapter.rank();
    std::vector<bool> touched(r_g, false);
    for (const auto& p : payloads)
      for (auto j : p.selected) touched[j] = true;
    for (std::size_t j = 0; j < r_g; ++j)
      if (!touched[j]) report.stale_indices.push_back(j);

    const auto policy = config.policy();
    switch (policy.kind) {
      case AggregationKind::kAdaptive:
        state.global = aggregate_adaptive(state.global, payloads, policy);
        break;
      case AggregationKind::kZeroPadding:
        state.global = aggregate_zero_padding(state.global, payloads);
        break;
      case AggregationKind::kFedAvg:
        state.global = aggregate_fedavg(state.global, payloads, weights);
        break;
    }
    state.tracker.update(state.global.adapter.B(), state.global.adapter.A());
    state.scores = rank1_scores(state.tracker);
  }
  state.rounds_run = round;

  const EvalResult global_eval = evaluate(data.base, state.global.adapter, data.test);
  report.global_acc = global_eval.accuracy;
  report.global_loss = global_eval.mean_loss;
  report.client_acc =
      evaluate_distributed_clients(state.global, state.scores, config, data.base, data.test);
  double weighted = 0.0;
  std::size_t population = 0;
  for (const auto& c : report.client_acc) {
    weighted += c.accuracy * static_cast<double>(c.clients);
    population += c.clients;
  }
  report.mean_client_acc = population > 0 ? weighted / static_cast<double>(population) : 0.0;
  return {std::move(state), std::move(report)};
}

ExperimentResult simulate(const FederationConfig& config, const FederatedData& data) {
  const std::size_t d = data.base.W_pre.rows();
  const std::size_t l = data.base.W_pre.cols();
  config.validate(d, l);
  ServerState state = init_server(config, d, l);
  std::vector<RoundReport> reports;
  reports.reserve(config.rounds);
  for (std::size_t t = 0; t < config.rounds; ++t) {
    auto [next, report] = run_round(std::move(state), config, data);
    state = std::move(next);
    reports.push_back(std::move(report));
  }
  return {std::move(reports), std::move(state)};
}

std::vector<RoundReport> run_experiment(const FederationConfig& config,
                                        const FederatedData& data) {
  return simulate(config, data).reports;
}

}  // namespace hafl
