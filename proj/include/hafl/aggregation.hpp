#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "hafl/lora.hpp"
#include "hafl/schemes.hpp"

namespace hafl {

enum class AggregationKind { kAdaptive, kZeroPadding, kFedAvg };

// What happens to a rank-1 index that no payload updated this round.
enum class StaleIndexRule { kRetainPrevious, kZero };

std::string_view to_string(AggregationKind kind);
std::string_view to_string(StaleIndexRule rule);

struct AggregationPolicy {
  AggregationKind kind = AggregationKind::kAdaptive;
  StaleIndexRule stale_index_rule = StaleIndexRule::kRetainPrevious;
};

// Per-index norm totals and weighted sums of the adaptive aggregation.
struct AggregationAccumulator {
  std::vector<double> Z;             // r_g totals of contributor norms
  std::vector<std::size_t> contributors;  // payload count per index
  Matrix sum_B;                      // d x r_g
  Matrix sum_A;                      // r_g x l
};

// Z[j] = sum of norm_z over payloads whose selected set contains j.
AggregationAccumulator accumulate_norms(std::span<const UploadPayload> payloads,
                                        std::size_t r_g, std::size_t d, std::size_t l);

struct ContributionWeight {
  ClientId client_id;
  double weight;
};

// Convex weights per rank-1 index: z_k / Z[j] over the contributors of j,
// uniform when every contributor has z_k = 0. Empty for untouched indices.
std::vector<std::vector<ContributionWeight>> adaptive_weights(
    std::span<const UploadPayload> payloads, std::size_t r_g);

GlobalLora aggregate_adaptive(const GlobalLora& prev_global,
                              std::span<const UploadPayload> payloads,
                              const AggregationPolicy& policy = {});

// Scatter every payload into zero-filled full matrices and take the uniform
// mean over all payloads.
GlobalLora aggregate_zero_padding(const GlobalLora& prev_global,
                                  std::span<const UploadPayload> payloads);

// Weighted mean of full-rank payloads.
GlobalLora aggregate_fedavg(const GlobalLora& prev_global,
                            std::span<const UploadPayload> payloads,
                            std::span<const double> weights);

}  // namespace hafl
