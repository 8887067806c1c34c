#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "hafl/importance.hpp"
#include "hafl/lora.hpp"

namespace hafl {

using ClientId = std::size_t;
using IndexSet = std::vector<std::size_t>;  // ascending

enum class PlanMode { kTruncation, kFreezing, kHomogeneous };

std::string_view to_string(PlanMode mode);

// What a client can afford: a reduced rank (truncation) or a fraction of
// frozen rank-1 components (freezing). Homogeneous clients train everything.
struct ClientCapability {
  PlanMode mode = PlanMode::kHomogeneous;
  std::optional<std::size_t> rank;
  std::optional<double> freeze_ratio;

  static ClientCapability truncation(std::size_t rank);
  static ClientCapability freezing(double freeze_ratio);
  static ClientCapability homogeneous();

  friend bool operator==(const ClientCapability&, const ClientCapability&) = default;
};

struct ClientPlan {
  ClientId client_id = 0;
  IndexSet selected;  // I_k, trained and uploaded
  IndexSet frozen;    // U_k, complement of selected in [0, r_g)
  PlanMode mode = PlanMode::kHomogeneous;
};

struct UploadPayload {
  ClientId client_id = 0;
  IndexSet selected;
  Matrix B_cols;  // d x |selected|
  Matrix A_rows;  // |selected| x l
  double norm_z = 0.0;
};

// Indices of the k largest scores, ties to the lowest index, returned ascending.
IndexSet topk_indices(const ScoreList& scores, std::size_t k);

// Number of rank-1 components a client with freeze ratio alpha trains:
// round-half-up of (1 - alpha) * r_max, at least 1.
std::size_t trained_count(double alpha, std::size_t r_max);

ClientPlan make_plan(ClientId client_id, const ClientCapability& cap, const ScoreList& scores,
                     std::size_t r_g);

LoraAdapter apply_truncation(const GlobalLora& global, const ClientPlan& plan);

struct FrozenView {
  LoraAdapter adapter;
  std::vector<bool> trainable;  // per rank-1 index, true on plan.selected
};

FrozenView apply_freezing(const GlobalLora& global, const ClientPlan& plan);

// Mask with every rank-1 index trainable.
std::vector<bool> full_mask(std::size_t rank);

UploadPayload extract_upload(const LoraAdapter& adapter, const ClientPlan& plan);

}  // namespace hafl
