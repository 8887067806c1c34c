#include "hafl/importance.hpp"

#include <cmath>
#include <stdexcept>

namespace hafl {

namespace {

void smooth(const Matrix& current, Matrix& prev, Matrix& smoothed, Matrix& uncertainty,
            const ImportanceParams& p) {
  auto cur = current.data();
  auto pv = prev.data();
  auto sm = smoothed.data();
  auto un = uncertainty.data();
  for (std::size_t i = 0; i < cur.size(); ++i) {
    const double sens = raw_sensitivity(cur[i], pv[i], p.eta);
    sm[i] = p.beta1 * sm[i] + (1.0 - p.beta1) * sens;
    un[i] = p.beta2 * un[i] + (1.0 - p.beta2) * std::abs(sens - sm[i]);
    pv[i] = cur[i];
  }
}

}  // namespace

ImportanceTracker::ImportanceTracker(const LoraAdapter& initial, ImportanceParams params)
    : params_(params),
      prev_b_(initial.B()),
      prev_a_(initial.A()),
      smoothed_b_(initial.B().rows(), initial.B().cols()),
      smoothed_a_(initial.A().rows(), initial.A().cols()),
      uncertainty_b_(initial.B().rows(), initial.B().cols()),
      uncertainty_a_(initial.A().rows(), initial.A().cols()) {
  if (!(params_.beta1 > 0.0 && params_.beta1 < 1.0) ||
      !(params_.beta2 > 0.0 && params_.beta2 < 1.0)) {
    throw std::invalid_argument("importance smoothing factors must lie in (0, 1)");
  }
  if (!(params_.eta > 0.0)) throw std::invalid_argument("importance eta must be > 0");
}

void ImportanceTracker::update(const Matrix& new_b, const Matrix& new_a) {
  if (!new_b.same_shape(prev_b_) || !new_a.same_shape(prev_a_)) {
    throw std::invalid_argument("update_tracker: parameter shapes do not match tracker");
  }
  smooth(new_b, prev_b_, smoothed_b_, uncertainty_b_, params_);
  smooth(new_a, prev_a_, smoothed_a_, uncertainty_a_, params_);
  ++rounds_seen_;
}

double raw_sensitivity(double current, double previous, double eta) {
  return std::abs(current * (current - previous) / eta);
}

ImportanceTracker update_tracker(ImportanceTracker tracker, const Matrix& new_b,
                                 const Matrix& new_a) {
  tracker.update(new_b, new_a);
  return tracker;
}

ElementScores combined_score(const ImportanceTracker& tracker) {
  auto product = [](const Matrix& x, const Matrix& y) {
    Matrix out = x;
    auto o = out.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= yd[i];
    return out;
  };
  return {product(tracker.smoothed_B(), tracker.uncertainty_B()),
          product(tracker.smoothed_A(), tracker.uncertainty_A())};
}

ScoreList rank1_scores(const ElementScores& s) {
  const std::size_t r = s.B.cols();
  ScoreList out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < s.B.rows(); ++j) total += s.B(j, i);
    for (double v : s.A.row(i)) total += v;
    out[i] = total;
  }
  return out;
}

ScoreList rank1_scores(const ImportanceTracker& tracker) {
  return rank1_scores(combined_score(tracker));
}

}  // namespace hafl
