#include "hafl/schemes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hafl {

std::string_view to_string(PlanMode mode) {
  switch (mode) {
    case PlanMode::kTruncation: return "truncation";
    case PlanMode::kFreezing: return "freezing";
    case PlanMode::kHomogeneous: return "homogeneous";
  }
  return "unknown";
}

ClientCapability ClientCapability::truncation(std::size_t rank) {
  return {PlanMode::kTruncation, rank, std::nullopt};
}

ClientCapability ClientCapability::freezing(double freeze_ratio) {
  return {PlanMode::kFreezing, std::nullopt, freeze_ratio};
}

ClientCapability ClientCapability::homogeneous() {
  return {PlanMode::kHomogeneous, std::nullopt, std::nullopt};
}

IndexSet topk_indices(const ScoreList& scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw std::out_of_range("topk: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(scores.size()) + "]");
  }
  IndexSet order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&scores](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t trained_count(double alpha, std::size_t r_max) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("freeze ratio must lie in [0, 1)");
  }
  const double raw = (1.0 - alpha) * static_cast<double>(r_max);
  const auto n = static_cast<std::size_t>(std::floor(raw + 0.5));
  return std::max<std::size_t>(n, 1);
}

ClientPlan make_plan(ClientId client_id, const ClientCapability& cap, const ScoreList& scores,
                     std::size_t r_g) {
  if (scores.size() != r_g) {
    throw std::invalid_argument("make_plan: score list length " + std::to_string(scores.size()) +
                                " != global rank " + std::to_string(r_g));
  }
  std::size_t k = 0;
  switch (cap.mode) {
    case PlanMode::kTruncation:
      if (!cap.rank || cap.freeze_ratio) {
        throw std::invalid_argument("truncation capability needs a rank and no freeze ratio");
      }
      k = *cap.rank;
      break;
    case PlanMode::kFreezing:
      if (!cap.freeze_ratio || cap.rank) {
        throw std::invalid_argument("freezing capability needs a freeze ratio and no rank");
      }
      k = trained_count(*cap.freeze_ratio, r_g);
      break;
    case PlanMode::kHomogeneous:
      if (cap.rank || cap.freeze_ratio) {
        throw std::invalid_argument("homogeneous capability takes no rank or freeze ratio");
      }
      k = r_g;
      break;
  }
  ClientPlan plan;
  plan.client_id = client_id;
  plan.mode = cap.mode;
  plan.selected = topk_indices(scores, k);
  std::vector<bool> chosen(r_g, false);
  for (auto i : plan.selected) chosen[i] = true;
  for (std::size_t i = 0; i < r_g; ++i)
    if (!chosen[i]) plan.frozen.push_back(i);
  return plan;
}

LoraAdapter apply_truncation(const GlobalLora& global, const ClientPlan& plan) {
  if (plan.mode != PlanMode::kTruncation) {
    throw std::invalid_argument("apply_truncation: plan is not in truncation mode");
  }
  const auto& g = global.adapter;
  return LoraAdapter(g.B().select_columns(plan.selected), g.A().select_rows(plan.selected),
                     g.scale());
}

FrozenView apply_freezing(const GlobalLora& global, const ClientPlan& plan) {
  if (plan.mode != PlanMode::kFreezing) {
    throw std::invalid_argument("apply_freezing: plan is not in freezing mode");
  }
  std::vector<bool> mask(global.adapter.rank(), false);
  for (auto i : plan.selected) {
    if (i >= mask.size()) throw std::out_of_range("apply_freezing: index out of range");
    mask[i] = true;
  }
  return {global.adapter, std::move(mask)};
}

std::vector<bool> full_mask(std::size_t rank) { return std::vector<bool>(rank, true); }

UploadPayload extract_upload(const LoraAdapter& adapter, const ClientPlan& plan) {
  UploadPayload p;
  p.client_id = plan.client_id;
  p.selected = plan.selected;
  if (plan.mode == PlanMode::kTruncation) {
    if (adapter.rank() != plan.selected.size()) {
      throw std::invalid_argument("extract_upload: truncated adapter rank " +
                                  std::to_string(adapter.rank()) + " != |I_k| " +
                                  std::to_string(plan.selected.size()));
    }
    p.B_cols = adapter.B();
    p.A_rows = adapter.A();
  } else {
    const std::size_t r_g = plan.selected.size() + plan.frozen.size();
    if (adapter.rank() != r_g) {
      throw std::invalid_argument("extract_upload: adapter rank " +
                                  std::to_string(adapter.rank()) + " != plan rank " +
                                  std::to_string(r_g));
    }
    p.B_cols = adapter.B().select_columns(plan.selected);
    p.A_rows = adapter.A().select_rows(plan.selected);
  }
  Matrix product = matmul(p.B_cols, p.A_rows);
  p.norm_z = adapter.scale() * product.frobenius_norm();
  return p;
}

}  // namespace hafl
