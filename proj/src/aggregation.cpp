#include "hafl/aggregation.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hafl {

std::string_view to_string(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::kAdaptive: return "adaptive";
    case AggregationKind::kZeroPadding: return "zero_padding";
    case AggregationKind::kFedAvg: return "fedavg";
  }
  return "unknown";
}

std::string_view to_string(StaleIndexRule rule) {
  switch (rule) {
    case StaleIndexRule::kRetainPrevious: return "retain_previous";
    case StaleIndexRule::kZero: return "zero";
  }
  return "unknown";
}

namespace {

// Validates shapes, index ranges, norms and client-id uniqueness, and
// returns the payloads in ascending client_id order.
std::vector<const UploadPayload*> checked_order(std::span<const UploadPayload> payloads,
                                                std::size_t r_g, std::size_t d,
                                                std::size_t l) {
  std::vector<const UploadPayload*> order;
  order.reserve(payloads.size());
  for (const auto& p : payloads) {
    const auto n = p.selected.size();
    if (p.B_cols.rows() != d || p.B_cols.cols() != n || p.A_rows.rows() != n ||
        p.A_rows.cols() != l) {
      throw std::invalid_argument("payload from client " + std::to_string(p.client_id) +
                                  " has inconsistent shapes");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (p.selected[i] >= r_g) {
        throw std::out_of_range("payload from client " + std::to_string(p.client_id) +
                                " selects index " + std::to_string(p.selected[i]) +
                                " >= global rank " + std::to_string(r_g));
      }
      if (i > 0 && p.selected[i] <= p.selected[i - 1]) {
        throw std::invalid_argument("payload from client " + std::to_string(p.client_id) +
                                    " has unsorted or repeated indices");
      }
    }
    if (!(p.norm_z >= 0.0)) {
      throw std::invalid_argument("payload from client " + std::to_string(p.client_id) +
                                  " has negative norm");
    }
    order.push_back(&p);
  }
  std::sort(order.begin(), order.end(),
            [](const UploadPayload* a, const UploadPayload* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->client_id == order[i - 1]->client_id) {
      throw std::invalid_argument("duplicate payload for client " +
                                  std::to_string(order[i]->client_id));
    }
  }
  return order;
}

}  // namespace

AggregationAccumulator accumulate_norms(std::span<const UploadPayload> payloads,
                                        std::size_t r_g, std::size_t d, std::size_t l) {
  AggregationAccumulator acc{std::vector<double>(r_g, 0.0), std::vector<std::size_t>(r_g, 0),
                             Matrix(d, r_g), Matrix(r_g, l)};
  for (const auto* p : checked_order(payloads, r_g, d, l)) {
    for (auto j : p->selected) {
      acc.Z[j] += p->norm_z;
      ++acc.contributors[j];
    }
  }
  return acc;
}

std::vector<std::vector<ContributionWeight>> adaptive_weights(
    std::span<const UploadPayload> payloads, std::size_t r_g) {
  std::vector<std::vector<ContributionWeight>> out(r_g);
  if (payloads.empty()) return out;
  const std::size_t d = payloads.front().B_cols.rows();
  const std::size_t l = payloads.front().A_rows.cols();
  auto acc = accumulate_norms(payloads, r_g, d, l);
  for (const auto* p : checked_order(payloads, r_g, d, l)) {
    for (auto j : p->selected) {
      const double w = acc.Z[j] > 0.0 ? p->norm_z / acc.Z[j]
                                      : 1.0 / static_cast<double>(acc.contributors[j]);
      out[j].push_back({p->client_id, w});
    }
  }
  return out;
}

GlobalLora aggregate_adaptive(const GlobalLora& prev_global,
                              std::span<const UploadPayload> payloads,
                              const AggregationPolicy& policy) {
  const auto& prev = prev_global.adapter;
  const std::size_t r_g = prev.rank();
  const std::size_t d = prev.out_dim();
  const std::size_t l = prev.in_dim();

  auto acc = accumulate_norms(payloads, r_g, d, l);
  for (const auto* p : checked_order(payloads, r_g, d, l)) {
    for (std::size_t i = 0; i < p->selected.size(); ++i) {
      const auto j = p->selected[i];
      const double w = acc.Z[j] > 0.0 ? p->norm_z / acc.Z[j]
                                      : 1.0 / static_cast<double>(acc.contributors[j]);
      for (std::size_t r = 0; r < d; ++r) acc.sum_B(r, j) += w * p->B_cols(r, i);
      auto dst = acc.sum_A.row(j);
      auto src = p->A_rows.row(i);
      for (std::size_t c = 0; c < l; ++c) dst[c] += w * src[c];
    }
  }
  if (policy.stale_index_rule == StaleIndexRule::kRetainPrevious) {
    for (std::size_t j = 0; j < r_g; ++j) {
      if (acc.contributors[j] != 0) continue;
      acc.sum_B.set_column(j, prev.B().column(j));
      acc.sum_A.set_row(j, prev.A().row(j));
    }
  }
  return {LoraAdapter(std::move(acc.sum_B), std::move(acc.sum_A), prev.scale()),
          prev_global.round + 1};
}

GlobalLora aggregate_zero_padding(const GlobalLora& prev_global,
                                  std::span<const UploadPayload> payloads) {
  const auto& prev = prev_global.adapter;
  const std::size_t r_g = prev.rank();
  const std::size_t d = prev.out_dim();
  const std::size_t l = prev.in_dim();
  auto order = checked_order(payloads, r_g, d, l);
  if (order.empty()) throw std::invalid_argument("zero-padding aggregation needs payloads");

  Matrix b(d, r_g);
  Matrix a(r_g, l);
  for (const auto* p : order) {
    for (std::size_t i = 0; i < p->selected.size(); ++i) {
      const auto j = p->selected[i];
      for (std::size_t r = 0; r < d; ++r) b(r, j) += p->B_cols(r, i);
      auto dst = a.row(j);
      auto src = p->A_rows.row(i);
      for (std::size_t c = 0; c < l; ++c) dst[c] += src[c];
    }
  }
  const double k = static_cast<double>(order.size());
  for (double& v : b.data()) v /= k;
  for (double& v : a.data()) v /= k;
  return {LoraAdapter(std::move(b), std::move(a), prev.scale()), prev_global.round + 1};
}

GlobalLora aggregate_fedavg(const GlobalLora& prev_global,
                            std::span<const UploadPayload> payloads,
                            std::span<const double> weights) {
  const auto& prev = prev_global.adapter;
  const std::size_t r_g = prev.rank();
  const std::size_t d = prev.out_dim();
  const std::size_t l = prev.in_dim();
  if (payloads.empty()) throw std::invalid_argument("fedavg needs payloads");
  if (weights.size() != payloads.size()) {
    throw std::invalid_argument("fedavg: one weight per payload required");
  }
  auto order = checked_order(payloads, r_g, d, l);
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("fedavg: weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("fedavg: weights sum to zero");

  Matrix b(d, r_g);
  Matrix a(r_g, l);
  for (const auto* p : order) {
    if (p->selected.size() != r_g) {
      throw std::invalid_argument("fedavg: payload from client " + std::to_string(p->client_id) +
                                  " is not full rank");
    }
    const auto idx = static_cast<std::size_t>(p - payloads.data());
    const double w = weights[idx] / total;
    auto bd = b.data();
    auto pb = p->B_cols.data();
    for (std::size_t i = 0; i < bd.size(); ++i) bd[i] += w * pb[i];
    auto ad = a.data();
    auto pa = p->A_rows.data();
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += w * pa[i];
  }
  return {LoraAdapter(std::move(b), std::move(a), prev.scale()), prev_global.round + 1};
}

}  // namespace hafl
