#include "hafl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace hafl {

ConfigError::ConfigError(std::string key, const std::string& what)
    : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) {
    throw ConfigError(key, "cannot parse '" + text + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ConfigError(key, "value must be finite");
  }
  return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  return parse_number<std::size_t>(key, text);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

template <typename V>
std::string join_mix(const std::vector<std::pair<std::size_t, V>>& mix) {
  std::string out;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(mix[i].first) + ":";
    if constexpr (std::is_floating_point_v<V>) {
      out += format_double(mix[i].second);
    } else {
      out += std::to_string(mix[i].second);
    }
  }
  return out;
}

template <typename V>
std::vector<std::pair<std::size_t, V>> parse_mix(const std::string& key, const std::string& text) {
  std::vector<std::pair<std::size_t, V>> out;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError(key, "expected count:value entries, got '" + item + "'");
    }
    out.emplace_back(parse_count(key, item.substr(0, colon)),
                     parse_number<V>(key, item.substr(colon + 1)));
  }
  if (out.empty()) throw ConfigError(key, "mix must have at least one entry");
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define HAFL_COUNT_FIELD(name, member)                                                      \
  Field {                                                                                   \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_count(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                  \
  }
#define HAFL_REAL_FIELD(name, member)                                                           \
  Field {                                                                                       \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }, \
        [](const ExperimentConfig& c) { return format_double(c.member); }                       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"scheme",
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.scheme = Scheme::parse(trim(v), c.scheme.hom_rank);
         } catch (const std::invalid_argument& e) {
           throw ConfigError("scheme", e.what());
         }
       },
       [](const ExperimentConfig& c) {
         return c.scheme.kind == SchemeKind::kHomLoRA ? std::string("HomLoRA") : c.scheme.label();
       }},
      {"hom_rank",
       [](ExperimentConfig& c, const std::string& v) { c.scheme.hom_rank = parse_count("hom_rank", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.scheme.hom_rank); }},
      HAFL_COUNT_FIELD("n_clients", n_clients),
      HAFL_COUNT_FIELD("sample_size", sample_size),
      HAFL_COUNT_FIELD("rounds", rounds),
      HAFL_COUNT_FIELD("r_min", r_min),
      HAFL_COUNT_FIELD("r_max", r_max),
      {"rank_mix",
       [](ExperimentConfig& c, const std::string& v) { c.rank_mix = parse_mix<std::size_t>("rank_mix", v); },
       [](const ExperimentConfig& c) { return join_mix(c.rank_mix); }},
      {"freeze_mix",
       [](ExperimentConfig& c, const std::string& v) { c.freeze_mix = parse_mix<double>("freeze_mix", v); },
       [](const ExperimentConfig& c) { return join_mix(c.freeze_mix); }},
      {"stale_index_rule",
       [](ExperimentConfig& c, const std::string& v) {
         const auto t = trim(v);
         if (t == "retain_previous") {
           c.stale_index_rule = StaleIndexRule::kRetainPrevious;
         } else if (t == "zero") {
           c.stale_index_rule = StaleIndexRule::kZero;
         } else {
           throw ConfigError("stale_index_rule", "expected retain_previous or zero, got '" + t + "'");
         }
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.stale_index_rule)); }},
      HAFL_REAL_FIELD("lora_scale", lora_scale),
      HAFL_REAL_FIELD("lora_alpha", lora_alpha),
      HAFL_REAL_FIELD("init_std", init_std),
      {"bytes_per_param",
       [](ExperimentConfig& c, const std::string& v) {
         c.bytes_per_param = parse_number<std::uint64_t>("bytes_per_param", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.bytes_per_param); }},
      HAFL_REAL_FIELD("importance_beta1", importance.beta1),
      HAFL_REAL_FIELD("importance_beta2", importance.beta2),
      HAFL_REAL_FIELD("learning_rate", training.eta),
      HAFL_REAL_FIELD("weight_decay", training.lambda),
      HAFL_REAL_FIELD("adam_beta1", training.adam_beta1),
      HAFL_REAL_FIELD("adam_beta2", training.adam_beta2),
      HAFL_REAL_FIELD("adam_eps", training.adam_eps),
      HAFL_COUNT_FIELD("local_epochs", training.local_epochs),
      HAFL_COUNT_FIELD("batch_size", training.batch_size),
      HAFL_COUNT_FIELD("class_count", data.class_count),
      HAFL_COUNT_FIELD("feature_dim", data.feature_dim),
      HAFL_COUNT_FIELD("true_rank", data.true_rank),
      HAFL_COUNT_FIELD("n_train", data.n_train),
      HAFL_COUNT_FIELD("n_test", data.n_test),
      HAFL_REAL_FIELD("label_noise", data.label_noise),
      HAFL_REAL_FIELD("base_std", data.base_std),
      HAFL_REAL_FIELD("residual_std", data.residual_std),
      {"train_file", [](ExperimentConfig& c, const std::string& v) { c.train_file = trim(v); },
       [](const ExperimentConfig& c) { return c.train_file; }},
      {"test_file", [](ExperimentConfig& c, const std::string& v) { c.test_file = trim(v); },
       [](const ExperimentConfig& c) { return c.test_file; }},
      {"seeds",
       [](ExperimentConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split(v, ',')) c.seeds.push_back(parse_number<std::uint64_t>("seeds", s));
       },
       [](const ExperimentConfig& c) { return join(c.seeds); }},
      {"checkpoints",
       [](ExperimentConfig& c, const std::string& v) {
         c.checkpoints.clear();
         for (const auto& s : split(v, ',')) c.checkpoints.push_back(parse_count("checkpoints", s));
       },
       [](const ExperimentConfig& c) { return join(c.checkpoints); }},
      {"out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = trim(v); },
       [](const ExperimentConfig& c) { return c.out_dir; }},
      HAFL_COUNT_FIELD("threads", threads),
  };
  return table;
}

#undef HAFL_COUNT_FIELD
#undef HAFL_REAL_FIELD

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void ExperimentConfig::validate() const {
  const std::size_t d = data.class_count;
  const std::size_t l = data.feature_dim;
  if (d < 2) throw ConfigError("class_count", "must be >= 2");
  if (l == 0) throw ConfigError("feature_dim", "must be >= 1");
  if (n_clients == 0) throw ConfigError("n_clients", "must be >= 1");
  if (sample_size == 0 || sample_size > n_clients) {
    throw ConfigError("sample_size", "must lie in [1, n_clients]");
  }
  if (r_min == 0 || r_min > r_max) throw ConfigError("r_min", "must lie in [1, r_max]");
  if (r_max > std::min(d, l)) {
    throw ConfigError("r_max", "r_max = " + std::to_string(r_max) +
                                   " exceeds min(class_count, feature_dim) = " +
                                   std::to_string(std::min(d, l)));
  }
  if (scheme.hom_rank == 0 || scheme.hom_rank > std::min(d, l)) {
    throw ConfigError("hom_rank", "must lie in [1, min(class_count, feature_dim)]");
  }
  std::size_t total = 0;
  for (const auto& [count, rank] : rank_mix) {
    total += count;
    if (rank < r_min || rank > r_max) {
      throw ConfigError("rank_mix", "rank " + std::to_string(rank) + " outside [r_min, r_max]");
    }
  }
  if (total != n_clients) {
    throw ConfigError("rank_mix", "counts sum to " + std::to_string(total) +
                                      ", expected n_clients = " + std::to_string(n_clients));
  }
  total = 0;
  for (const auto& [count, ratio] : freeze_mix) {
    total += count;
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("freeze_mix", "ratio outside [0, 1)");
  }
  if (total != n_clients) {
    throw ConfigError("freeze_mix", "counts sum to " + std::to_string(total) +
                                        ", expected n_clients = " + std::to_string(n_clients));
  }
  if (!(lora_scale > 0.0)) throw ConfigError("lora_scale", "must be > 0");
  if (!(lora_alpha >= 0.0)) throw ConfigError("lora_alpha", "must be >= 0");
  if (!(init_std > 0.0)) throw ConfigError("init_std", "must be > 0");
  if (!(importance.beta1 > 0.0 && importance.beta1 < 1.0)) {
    throw ConfigError("importance_beta1", "must lie in (0, 1)");
  }
  if (!(importance.beta2 > 0.0 && importance.beta2 < 1.0)) {
    throw ConfigError("importance_beta2", "must lie in (0, 1)");
  }
  if (!(training.eta > 0.0)) throw ConfigError("learning_rate", "must be > 0");
  if (!(training.lambda >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(training.adam_beta1 > 0.0 && training.adam_beta1 < 1.0)) {
    throw ConfigError("adam_beta1", "must lie in (0, 1)");
  }
  if (!(training.adam_beta2 > 0.0 && training.adam_beta2 < 1.0)) {
    throw ConfigError("adam_beta2", "must lie in (0, 1)");
  }
  if (!(training.adam_eps > 0.0)) throw ConfigError("adam_eps", "must be > 0");
  if (training.batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
  if (data.true_rank == 0 || data.true_rank > std::min(d, l)) {
    throw ConfigError("true_rank", "must lie in [1, min(class_count, feature_dim)]");
  }
  if (!(data.label_noise >= 0.0 && data.label_noise < 0.5)) {
    throw ConfigError("label_noise", "must lie in [0, 0.5)");
  }
  if (!(data.base_std >= 0.0)) throw ConfigError("base_std", "must be >= 0");
  if (!(data.residual_std > 0.0)) throw ConfigError("residual_std", "must be > 0");
  if (train_file.empty() != test_file.empty()) {
    throw ConfigError(train_file.empty() ? "train_file" : "test_file",
                      "train_file and test_file must be given together");
  }
  if (train_file.empty() && data.n_test == 0) throw ConfigError("n_test", "must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (std::size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j]) throw ConfigError("seeds", "duplicate seed " + std::to_string(seeds[i]));
  for (auto c : checkpoints)
    if (c == 0) throw ConfigError("checkpoints", "rounds are 1-based");
  if (threads == 0) throw ConfigError("threads", "must be >= 1");
}

FederationConfig ExperimentConfig::federation(std::uint64_t seed) const {
  FederationConfig f;
  f.n_clients = n_clients;
  f.sample_size = sample_size;
  f.rounds = rounds;
  f.scheme = scheme;
  f.r_min = r_min;
  f.r_max = r_max;
  f.seed = seed;
  f.stale_index_rule = stale_index_rule;
  f.lora_scale = lora_alpha > 0.0 ? lora_alpha / static_cast<double>(f.global_rank()) : lora_scale;
  f.init_std = init_std;
  f.bytes_per_param = bytes_per_param;
  f.importance = importance;
  f.importance.eta = training.eta;
  f.training = training;
  f.threads = threads;
  switch (scheme.kind) {
    case SchemeKind::kITALoRA:
      for (const auto& [count, rank] : rank_mix)
        f.capability_mix.push_back({count, ClientCapability::truncation(rank)});
      break;
    case SchemeKind::kIFALoRA:
    case SchemeKind::kIFZLoRA:
      for (const auto& [count, ratio] : freeze_mix)
        f.capability_mix.push_back({count, ClientCapability::freezing(ratio)});
      break;
    case SchemeKind::kHomLoRA:
      f.capability_mix.push_back({n_clients, ClientCapability::homogeneous()});
      break;
  }
  return f;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  // hom_rank is applied before scheme so `scheme = HomLoRA` picks it up
  // regardless of line order.
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto& table = fields();
    if (std::none_of(table.begin(), table.end(), [&](const Field& f) { return f.key == key; })) {
      throw ConfigError(key, "unknown key (line " + std::to_string(lineno) + ")");
    }
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError(key, "duplicate key (line " + std::to_string(lineno) + ")");
    }
    seen.push_back(key);
    entries.emplace_back(key, value);
  }
  std::stable_partition(entries.begin(), entries.end(),
                        [](const auto& e) { return e.first == "hom_rank"; });
  for (const auto& [key, value] : entries) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace hafl
