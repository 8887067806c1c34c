#include "hafl/lora.hpp"

#include <stdexcept>
#include <string>

#include "hafl/rng.hpp"

namespace hafl {

LoraAdapter::LoraAdapter(Matrix b, Matrix a, double scale)
    : b_(std::move(b)), a_(std::move(a)), scale_(scale) {
  if (b_.cols() != a_.rows()) {
    throw std::invalid_argument("adapter rank mismatch: B has " + std::to_string(b_.cols()) +
                                " columns, A has " + std::to_string(a_.rows()) + " rows");
  }
  if (b_.cols() == 0) throw std::invalid_argument("adapter rank must be >= 1");
  if (!(scale_ > 0.0)) throw std::invalid_argument("adapter scale must be > 0");
}

LoraAdapter init_adapter(std::size_t d, std::size_t l, std::size_t rank, double scale,
                         std::uint64_t seed, double init_std) {
  if (d == 0 || l == 0 || rank == 0) {
    throw std::invalid_argument("init_adapter: dimensions must be >= 1");
  }
  Rng rng(seed);
  Matrix a = gaussian_matrix(rank, l, init_std, rng);
  return LoraAdapter(Matrix::zeros(d, rank), std::move(a), scale);
}

Rank1Component rank1_component(const LoraAdapter& adapter, std::size_t i) {
  if (i >= adapter.rank()) {
    throw std::out_of_range("rank-1 index " + std::to_string(i) + " >= rank " +
                            std::to_string(adapter.rank()));
  }
  auto row = adapter.A().row(i);
  return {adapter.B().column(i), std::vector<double>(row.begin(), row.end())};
}

Matrix effective_delta(const LoraAdapter& adapter) {
  Matrix delta = matmul(adapter.B(), adapter.A());
  delta *= adapter.scale();
  return delta;
}

std::uint64_t upload_size(std::uint64_t selected_count, std::uint64_t d, std::uint64_t l,
                          std::uint64_t bytes_per_param) {
  return selected_count * (d + l) * bytes_per_param;
}

}  // namespace hafl
