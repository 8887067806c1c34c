#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hafl/data.hpp"
#include "hafl/lora.hpp"
#include "hafl/schemes.hpp"

namespace hafl {

struct TrainingConfig {
  double eta = 0.001;     // Adam learning rate
  double lambda = 0.001;  // L2 coefficient on trained B columns and A rows
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;

  void validate() const;

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

// Gradient blocks for the trainable rank-1 indices only.
struct MaskedGradients {
  IndexSet indices;
  Matrix B_cols;  // d x |indices|
  Matrix A_rows;  // |indices| x l
};

struct LossAndGrads {
  double loss = 0.0;
  MaskedGradients grads;
};

struct AdamState {
  IndexSet indices;
  Matrix m_B, v_B;  // d x |indices|
  Matrix m_A, v_A;  // |indices| x l
  std::size_t step = 0;

  static AdamState zeros(const LoraAdapter& adapter, const std::vector<bool>& mask);
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// logits = W_pre x + scale * B (A x)
std::vector<double> forward(const FrozenBase& base, const LoraAdapter& adapter,
                            std::span<const double> x);

IndexSet mask_indices(const std::vector<bool>& mask);

// Mean cross-entropy over the batch plus (lambda/2)(|B_I|^2 + |A_I|^2) where I
// is the set of trainable indices; gradients are analytic and restricted to I.
LossAndGrads loss_and_grads(const FrozenBase& base, const LoraAdapter& adapter,
                            const std::vector<bool>& mask, const Dataset& data,
                            std::span<const std::size_t> batch, const TrainingConfig& cfg);

// Whole-dataset batch.
LossAndGrads loss_and_grads(const FrozenBase& base, const LoraAdapter& adapter,
                            const std::vector<bool>& mask, const Dataset& batch,
                            const TrainingConfig& cfg);

// Bias-corrected Adam on the trainable slices; frozen slices are untouched.
void adam_step(LoraAdapter& adapter, const MaskedGradients& grads, AdamState& state,
               const TrainingConfig& cfg);

LoraAdapter local_train(const FrozenBase& base, LoraAdapter adapter,
                        const std::vector<bool>& mask, const Dataset& shard,
                        const TrainingConfig& cfg, std::uint64_t seed);

EvalResult evaluate(const FrozenBase& base, const LoraAdapter& adapter, const Dataset& data);

}  // namespace hafl
