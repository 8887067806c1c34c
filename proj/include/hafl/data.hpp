#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "hafl/lora.hpp"
#include "hafl/matrix.hpp"

namespace hafl {

struct Sample {
  std::vector<double> x;  // length feature_dim
  std::size_t y = 0;      // class label < class_count

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t feature_dim = 0;
  std::size_t class_count = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Pre-trained weights the adapter is layered on; never modified.
struct FrozenBase {
  Matrix W_pre;  // class_count x feature_dim
};

struct SyntheticSpec {
  std::size_t class_count = 20;   // d
  std::size_t feature_dim = 64;   // l
  std::size_t true_rank = 8;
  std::size_t n_train = 20000;
  std::size_t n_test = 4000;
  double label_noise = 0.05;
  double base_std = 0.1;          // stddev of W_pre entries
  double residual_std = 0.5;      // stddev of the planted B*, A* entries
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SyntheticTask {
  FrozenBase base;
  Dataset train;
  Dataset test;
  // Planted residual W* - W_pre = B* A*, exposed as a unit-scale adapter.
  LoraAdapter oracle;
};

// Labels are argmax((W_pre + B* A*) x) for x ~ N(0, I), flipped to a
// uniformly drawn different class with probability label_noise.
SyntheticTask generate_synthetic(const SyntheticSpec& spec);

// A frozen base with Gaussian entries, for runs whose data come from files.
FrozenBase gaussian_base(std::size_t class_count, std::size_t feature_dim, double stddev,
                         std::uint64_t seed);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Rows are `label<TAB>f1<TAB>...<TAB>fl`. Blank lines are skipped.
Dataset load_tsv(const std::filesystem::path& path, std::size_t feature_dim,
                 std::size_t class_count);

// Seeded shuffle then round-robin split into n_clients shards.
std::vector<Dataset> partition_iid(const Dataset& dataset, std::size_t n_clients,
                                   std::uint64_t seed);

}  // namespace hafl
