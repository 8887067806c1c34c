#include "hafl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hafl/rng.hpp"

namespace hafl {

void TrainingConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam epsilon must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
}

namespace {

void check_shapes(const FrozenBase& base, const LoraAdapter& adapter, std::size_t x_len) {
  if (base.W_pre.rows() != adapter.out_dim() || base.W_pre.cols() != adapter.in_dim() ||
      x_len != adapter.in_dim()) {
    throw std::invalid_argument("forward: base " + std::to_string(base.W_pre.rows()) + "x" +
                                std::to_string(base.W_pre.cols()) + ", adapter " +
                                std::to_string(adapter.out_dim()) + "x" +
                                std::to_string(adapter.in_dim()) + ", input " +
                                std::to_string(x_len));
  }
}

// Returns log-sum-exp of the logits and overwrites them with softmax.
double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return m + std::log(sum);
}

double cross_entropy(std::vector<double> logits, std::size_t y) {
  const double y_logit = logits[y];
  const double lse = softmax_inplace(logits);
  return lse - y_logit;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<double> forward(const FrozenBase& base, const LoraAdapter& adapter,
                            std::span<const double> x) {
  check_shapes(base, adapter, x.size());
  std::vector<double> logits = matvec(base.W_pre, x);
  std::vector<double> ax = matvec(adapter.A(), x);
  const double s = adapter.scale();
  const auto& b = adapter.B();
  for (std::size_t c = 0; c < logits.size(); ++c) {
    auto row = b.row(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) acc += row[i] * ax[i];
    logits[c] += s * acc;
  }
  return logits;
}

IndexSet mask_indices(const std::vector<bool>& mask) {
  IndexSet out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

LossAndGrads loss_and_grads(const FrozenBase& base, const LoraAdapter& adapter,
                            const std::vector<bool>& mask, const Dataset& data,
                            std::span<const std::size_t> batch, const TrainingConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  if (mask.size() != adapter.rank()) {
    throw std::invalid_argument("loss_and_grads: mask length != adapter rank");
  }
  IndexSet idx = mask_indices(mask);
  if (idx.empty()) throw std::invalid_argument("loss_and_grads: no trainable index");

  const std::size_t d = adapter.out_dim();
  const std::size_t l = adapter.in_dim();
  const std::size_t m = idx.size();
  const double s = adapter.scale();
  const auto& B = adapter.B();
  const auto& A = adapter.A();

  LossAndGrads out{0.0, {idx, Matrix(d, m), Matrix(m, l)}};
  auto& gB = out.grads.B_cols;
  auto& gA = out.grads.A_rows;

  std::vector<double> g(d);
  for (std::size_t n : batch) {
    const Sample& sample = data.samples.at(n);
    check_shapes(base, adapter, sample.x.size());
    std::vector<double> ax = matvec(A, sample.x);
    std::vector<double> p = matvec(base.W_pre, sample.x);
    for (std::size_t c = 0; c < d; ++c) {
      auto row = B.row(c);
      double acc = 0.0;
      for (std::size_t i = 0; i < ax.size(); ++i) acc += row[i] * ax[i];
      p[c] += s * acc;
    }
    const double y_logit = p[sample.y];
    out.loss += softmax_inplace(p) - y_logit;
    for (std::size_t c = 0; c < d; ++c) g[c] = p[c];
    g[sample.y] -= 1.0;

    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = idx[k];
      const double coef_b = s * ax[i];
      double b_dot_g = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        gB(c, k) += coef_b * g[c];
        b_dot_g += B(c, i) * g[c];
      }
      const double coef_a = s * b_dot_g;
      auto ga_row = gA.row(k);
      for (std::size_t q = 0; q < l; ++q) ga_row[q] += coef_a * sample.x[q];
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  gB *= inv;
  gA *= inv;

  double reg = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = idx[k];
    for (std::size_t c = 0; c < d; ++c) {
      reg += B(c, i) * B(c, i);
      gB(c, k) += cfg.lambda * B(c, i);
    }
    auto a_row = A.row(i);
    auto ga_row = gA.row(k);
    for (std::size_t q = 0; q < l; ++q) {
      reg += a_row[q] * a_row[q];
      ga_row[q] += cfg.lambda * a_row[q];
    }
  }
  out.loss += 0.5 * cfg.lambda * reg;
  return out;
}

LossAndGrads loss_and_grads(const FrozenBase& base, const LoraAdapter& adapter,
                            const std::vector<bool>& mask, const Dataset& batch,
                            const TrainingConfig& cfg) {
  std::vector<std::size_t> all(batch.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_grads(base, adapter, mask, batch, all, cfg);
}

AdamState AdamState::zeros(const LoraAdapter& adapter, const std::vector<bool>& mask) {
  IndexSet idx = mask_indices(mask);
  const std::size_t m = idx.size();
  const std::size_t d = adapter.out_dim();
  const std::size_t l = adapter.in_dim();
  return {std::move(idx), Matrix(d, m), Matrix(d, m), Matrix(m, l), Matrix(m, l), 0};
}

void adam_step(LoraAdapter& adapter, const MaskedGradients& grads, AdamState& state,
               const TrainingConfig& cfg) {
  const std::size_t m = state.indices.size();
  if (grads.indices != state.indices || !grads.B_cols.same_shape(state.m_B) ||
      !grads.A_rows.same_shape(state.m_A) || grads.B_cols.rows() != adapter.out_dim() ||
      grads.A_rows.cols() != adapter.in_dim()) {
    throw std::invalid_argument("adam_step: gradient/state shape mismatch");
  }
  for (auto i : state.indices)
    if (i >= adapter.rank()) throw std::out_of_range("adam_step: index beyond adapter rank");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  auto update = [&](double& param, double grad, double& mom1, double& mom2) {
    mom1 = cfg.adam_beta1 * mom1 + (1.0 - cfg.adam_beta1) * grad;
    mom2 = cfg.adam_beta2 * mom2 + (1.0 - cfg.adam_beta2) * grad * grad;
    param -= cfg.eta * (mom1 / c1) / (std::sqrt(mom2 / c2) + cfg.adam_eps);
  };

  auto& B = adapter.B();
  auto& A = adapter.A();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = state.indices[k];
    for (std::size_t c = 0; c < B.rows(); ++c)
      update(B(c, i), grads.B_cols(c, k), state.m_B(c, k), state.v_B(c, k));
    for (std::size_t q = 0; q < A.cols(); ++q)
      update(A(i, q), grads.A_rows(k, q), state.m_A(k, q), state.v_A(k, q));
  }
}

LoraAdapter local_train(const FrozenBase& base, LoraAdapter adapter,
                        const std::vector<bool>& mask, const Dataset& shard,
                        const TrainingConfig& cfg, std::uint64_t seed) {
  if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
  cfg.validate();
  AdamState state = AdamState::zeros(adapter, mask);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::span<const std::size_t> batch(order.data() + start, len);
      auto lg = loss_and_grads(base, adapter, mask, shard, batch, cfg);
      adam_step(adapter, lg.grads, state, cfg);
    }
  }
  return adapter;
}

EvalResult evaluate(const FrozenBase& base, const LoraAdapter& adapter, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& s : data.samples) {
    auto logits = forward(base, adapter, s.x);
    if (argmax(logits) == s.y) ++correct;
    loss += cross_entropy(std::move(logits), s.y);
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace hafl
