#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "hafl/lora.hpp"
#include "hafl/matrix.hpp"

namespace hafl {

// Per rank-1 component importance scores broadcast with the global adapter.
using ScoreList = std::vector<double>;

struct ImportanceParams {
  double beta1 = 0.85;  // smoothing of sensitivity
  double beta2 = 0.85;  // smoothing of uncertainty
  double eta = 0.001;   // divisor turning a round delta into a gradient estimate

  friend bool operator==(const ImportanceParams&, const ImportanceParams&) = default;
};

// Server-side sensitivity state for every element of the global B and A.
//
// The gradient of an element is approximated by its change between two
// consecutive global models divided by eta. Sensitivity |w * g| is smoothed
// with an exponential moving average (beta1) and its absolute deviation from
// the smoothed value is tracked as uncertainty (beta2).
class ImportanceTracker {
 public:
  // Bootstraps from the initial global parameters with zero smoothed state.
  ImportanceTracker(const LoraAdapter& initial, ImportanceParams params);

  const Matrix& prev_B() const { return prev_b_; }
  const Matrix& prev_A() const { return prev_a_; }
  const Matrix& smoothed_B() const { return smoothed_b_; }
  const Matrix& smoothed_A() const { return smoothed_a_; }
  const Matrix& uncertainty_B() const { return uncertainty_b_; }
  const Matrix& uncertainty_A() const { return uncertainty_a_; }
  const ImportanceParams& params() const { return params_; }
  std::size_t rounds_seen() const { return rounds_seen_; }
  std::size_t rank() const { return prev_b_.cols(); }

  void update(const Matrix& new_b, const Matrix& new_a);

 private:
  ImportanceParams params_;
  Matrix prev_b_, prev_a_;
  Matrix smoothed_b_, smoothed_a_;
  Matrix uncertainty_b_, uncertainty_a_;
  std::size_t rounds_seen_ = 0;
};

double raw_sensitivity(double current, double previous, double eta);

ImportanceTracker update_tracker(ImportanceTracker tracker, const Matrix& new_b,
                                 const Matrix& new_a);

struct ElementScores {
  Matrix B;
  Matrix A;
};

// Elementwise product of smoothed sensitivity and uncertainty.
ElementScores combined_score(const ImportanceTracker& tracker);

// S_i = sum of element scores over column i of B and row i of A.
ScoreList rank1_scores(const ImportanceTracker& tracker);
ScoreList rank1_scores(const ElementScores& scores);

}  // namespace hafl
