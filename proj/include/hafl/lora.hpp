#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hafl/matrix.hpp"

namespace hafl {

// Trainable low-rank residual: delta W = scale * B * A, with B (d x r) and
// A (r x l). Column i of B and row i of A form the i-th rank-1 component.
class LoraAdapter {
 public:
  LoraAdapter(Matrix b, Matrix a, double scale);

  const Matrix& B() const { return b_; }
  const Matrix& A() const { return a_; }
  Matrix& B() { return b_; }
  Matrix& A() { return a_; }
  std::size_t rank() const { return b_.cols(); }
  std::size_t out_dim() const { return b_.rows(); }
  std::size_t in_dim() const { return a_.cols(); }
  double scale() const { return scale_; }

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;

 private:
  Matrix b_;
  Matrix a_;
  double scale_;
};

// Server-side adapter at the global rank plus the number of completed
// aggregations.
struct GlobalLora {
  LoraAdapter adapter;
  std::size_t round = 0;

  friend bool operator==(const GlobalLora&, const GlobalLora&) = default;
};

inline constexpr double kDefaultInitStd = 0.02;

// A ~ N(0, init_std^2), B = 0, so the initial residual is exactly zero.
LoraAdapter init_adapter(std::size_t d, std::size_t l, std::size_t rank, double scale,
                         std::uint64_t seed, double init_std = kDefaultInitStd);

struct Rank1Component {
  std::vector<double> b;  // column i of B, length d
  std::vector<double> a;  // row i of A, length l
};

Rank1Component rank1_component(const LoraAdapter& adapter, std::size_t i);

Matrix effective_delta(const LoraAdapter& adapter);

// Bytes for uploading `selected_count` rank-1 components: one B column plus
// one A row each.
std::uint64_t upload_size(std::uint64_t selected_count, std::uint64_t d, std::uint64_t l,
                          std::uint64_t bytes_per_param);

}  // namespace hafl
