#include "hafl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>

#include "hafl/rng.hpp"

namespace hafl {

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.x.size() != feature_dim) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has " +
                                  std::to_string(s.x.size()) + " features, expected " +
                                  std::to_string(feature_dim));
    }
    if (s.y >= class_count) {
      throw std::invalid_argument("sample " + std::to_string(i) + " label " +
                                  std::to_string(s.y) + " >= class count");
    }
    for (double v : s.x)
      if (!std::isfinite(v)) throw std::invalid_argument("sample " + std::to_string(i) + " has non-finite feature");
  }
}

void SyntheticSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");
  if (feature_dim == 0) throw std::invalid_argument("feature_dim must be >= 1");
  if (true_rank == 0 || true_rank > std::min(class_count, feature_dim)) {
    throw std::invalid_argument("true_rank must lie in [1, min(class_count, feature_dim)]");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) {
    throw std::invalid_argument("label_noise must lie in [0, 0.5)");
  }
  if (!(base_std >= 0.0) || !(residual_std > 0.0)) {
    throw std::invalid_argument("base_std must be >= 0 and residual_std > 0");
  }
}

FrozenBase gaussian_base(std::size_t class_count, std::size_t feature_dim, double stddev,
                         std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kBase}));
  if (stddev == 0.0) return {Matrix(class_count, feature_dim)};
  return {gaussian_matrix(class_count, feature_dim, stddev, rng)};
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Dataset draw_split(const Matrix& w_star, std::size_t n, double label_noise, Rng& rng) {
  const std::size_t d = w_star.rows();
  const std::size_t l = w_star.cols();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(0, d - 2);
  Dataset out{{}, l, d};
  out.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.x.resize(l);
    for (double& v : s.x) v = gauss(rng);
    s.y = argmax(matvec(w_star, s.x));
    if (unit(rng) < label_noise) {
      const std::size_t k = other(rng);
      s.y = k >= s.y ? k + 1 : k;
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace

SyntheticTask generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.class_count;
  const std::size_t l = spec.feature_dim;
  FrozenBase base = gaussian_base(d, l, spec.base_std, spec.seed);

  Rng res_rng(derive_seed(spec.seed, {stream::kResidual}));
  Matrix b_star = gaussian_matrix(d, spec.true_rank, spec.residual_std, res_rng);
  Matrix a_star = gaussian_matrix(spec.true_rank, l, spec.residual_std, res_rng);
  LoraAdapter oracle(b_star, a_star, 1.0);

  Matrix w_star = base.W_pre;
  w_star += effective_delta(oracle);

  Rng feat_rng(derive_seed(spec.seed, {stream::kFeatures}));
  Dataset train = draw_split(w_star, spec.n_train, spec.label_noise, feat_rng);
  Dataset test = draw_split(w_star, spec.n_test, spec.label_noise, feat_rng);
  return {std::move(base), std::move(train), std::move(test), std::move(oracle)};
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

Dataset load_tsv(const std::filesystem::path& path, std::size_t feature_dim,
                 std::size_t class_count) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Dataset out{{}, feature_dim, class_count};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != feature_dim + 1) {
      throw ParseError(lineno, "expected " + std::to_string(feature_dim) + " features, found " +
                                   std::to_string(fields.size() - 1));
    }
    Sample s;
    const auto& lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), s.y);
    if (lec != std::errc() || lp != lf.data() + lf.size()) {
      throw ParseError(lineno, "invalid label '" + std::string(lf) + "'");
    }
    if (s.y >= class_count) {
      throw ParseError(lineno, "label " + std::to_string(s.y) + " >= class count " +
                                   std::to_string(class_count));
    }
    s.x.resize(feature_dim);
    for (std::size_t k = 0; k < feature_dim; ++k) {
      const auto& f = fields[k + 1];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), s.x[k]);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(s.x[k])) {
        throw ParseError(lineno, "invalid feature " + std::to_string(k + 1) + " '" +
                                     std::string(f) + "'");
      }
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<Dataset> partition_iid(const Dataset& dataset, std::size_t n_clients,
                                   std::uint64_t seed) {
  if (n_clients == 0) throw std::invalid_argument("partition_iid: n_clients must be >= 1");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {stream::kPartition}));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Dataset> shards(n_clients, Dataset{{}, dataset.feature_dim, dataset.class_count});
  for (std::size_t i = 0; i < order.size(); ++i) {
    shards[i % n_clients].samples.push_back(dataset.samples[order[i]]);
  }
  return shards;
}

}  // namespace hafl
