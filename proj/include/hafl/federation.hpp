#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hafl/aggregation.hpp"
#include "hafl/data.hpp"
#include "hafl/importance.hpp"
#include "hafl/lora.hpp"
#include "hafl/model.hpp"
#include "hafl/schemes.hpp"

namespace hafl {

enum class SchemeKind { kITALoRA, kIFALoRA, kIFZLoRA, kHomLoRA };

struct Scheme {
  SchemeKind kind = SchemeKind::kIFALoRA;
  std::size_t hom_rank = 16;  // only for kHomLoRA

  // "ITALoRA", "IFALoRA", "IFZLoRA" or "HomLoRA-r<rank>".
  std::string label() const;
  // Accepts the labels above and bare "HomLoRA" (rank = default_hom_rank).
  static Scheme parse(const std::string& text, std::size_t default_hom_rank);

  friend bool operator==(const Scheme&, const Scheme&) = default;
};

struct CapabilityGroup {
  std::size_t count = 0;
  ClientCapability capability;
};

struct FederationConfig {
  std::size_t n_clients = 100;
  std::size_t sample_size = 10;
  std::size_t rounds = 100;
  Scheme scheme;
  // Client ids are assigned to groups in order: the first group gets ids
  // [0, count), the next group the following ids, and so on.
  std::vector<CapabilityGroup> capability_mix;
  std::size_t r_min = 2;
  std::size_t r_max = 16;
  std::uint64_t seed = 0;

  StaleIndexRule stale_index_rule = StaleIndexRule::kRetainPrevious;
  double lora_scale = 1.0;
  double init_std = kDefaultInitStd;
  std::uint64_t bytes_per_param = 4;
  ImportanceParams importance;
  TrainingConfig training;
  std::size_t threads = 1;

  std::size_t global_rank() const;
  AggregationPolicy policy() const;
  const ClientCapability& capability_of(ClientId id) const;
  // Throws std::invalid_argument naming the first violated constraint.
  void validate(std::size_t class_count, std::size_t feature_dim) const;
};

// Frozen base, per-client training shards and the shared held-out test set.
struct FederatedData {
  FrozenBase base;
  std::vector<Dataset> shards;  // indexed by client id
  Dataset test;
};

struct CapabilityAccuracy {
  std::string label;        // e.g. "rank=4", "freeze=0.75", "full"
  std::size_t clients = 0;  // population size of this capability class
  double accuracy = 0.0;
  double loss = 0.0;
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::vector<ClientId> sampled;
  ScoreList broadcast_scores;
  std::vector<ClientPlan> plans;
  std::vector<ClientId> failed;           // sampled but produced no payload
  std::vector<std::size_t> stale_indices; // rank-1 indices no payload touched
  bool no_update = false;                 // zero payloads, global unchanged
  double global_acc = 0.0;
  double global_loss = 0.0;
  double mean_client_acc = 0.0;           // population-weighted over classes
  std::vector<CapabilityAccuracy> client_acc;
  std::uint64_t uploaded_params = 0;
  std::uint64_t uploaded_bytes = 0;
};

struct ServerState {
  GlobalLora global;
  ImportanceTracker tracker;
  ScoreList scores;  // broadcast with the next round's parameters
  std::size_t rounds_run = 0;
};

ServerState init_server(const FederationConfig& config, std::size_t class_count,
                        std::size_t feature_dim);

// Uniform sample without replacement, returned ascending.
std::vector<ClientId> sample_clients(std::size_t n_clients, std::size_t sample_size,
                                     std::uint64_t round_seed);

std::uint64_t round_sampling_seed(std::uint64_t seed, std::size_t round);

// One client's work for a round: plan, receive, train, upload.
struct ClientResult {
  ClientPlan plan;
  UploadPayload payload;
  std::size_t samples = 0;
};

ClientResult run_client(ClientId id, const GlobalLora& global, const ScoreList& scores,
                        const FederationConfig& config, const FederatedData& data,
                        std::size_t round);

std::pair<ServerState, RoundReport> run_round(ServerState state, const FederationConfig& config,
                                              const FederatedData& data);

std::vector<RoundReport> run_experiment(const FederationConfig& config,
                                        const FederatedData& data);

struct ExperimentResult {
  std::vector<RoundReport> reports;
  ServerState final_state;
};

// run_experiment that also hands back the final server state.
ExperimentResult simulate(const FederationConfig& config, const FederatedData& data);

// Accuracy of the model each capability class would receive from `global`.
std::vector<CapabilityAccuracy> evaluate_distributed_clients(const GlobalLora& global,
                                                             const ScoreList& scores,
                                                             const FederationConfig& config,
                                                             const FrozenBase& base,
                                                             const Dataset& test);

std::string capability_label(const ClientCapability& cap);

}  // namespace hafl
