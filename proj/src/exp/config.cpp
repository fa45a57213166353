// SPDX-License-Identifier: Apache-2.0
#include "learn/exp/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace learn::exp {
namespace {

using nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& text) {
  T value{};
  const std::string t = trim(text);
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(t.data(), end, value);
  if (ec != std::errc() || ptr != end || t.empty()) throw ConfigError("not a valid number: '" + text + "'");
  return value;
}

template <class T>
void parse_into(T& out, const std::string& text) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = trim(text);
  } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
    out = trim(text);
  } else if constexpr (std::is_same_v<T, std::vector<model::Variant>>) {
    out.clear();
    for (const auto& item : split_list(text)) {
      try {
        out.push_back(model::parse_variant(item));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
  } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
    out.clear();
    for (const auto& item : split_list(text)) out.push_back(parse_number<std::uint64_t>(item));
  } else {
    out = parse_number<T>(text);
  }
}

template <class T>
ordered_json as_json(const T& v) {
  if constexpr (std::is_same_v<T, std::filesystem::path>) {
    return v.generic_string();
  } else if constexpr (std::is_same_v<T, std::vector<model::Variant>>) {
    ordered_json a = ordered_json::array();
    for (auto x : v) a.push_back(model::variant_name(x));
    return a;
  } else {
    return v;
  }
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<ordered_json(const ExperimentConfig&)> get;
};

template <class Access>
Field field(const char* section, const char* key, Access access) {
  return Field{section, key,
               [access](ExperimentConfig& c, const std::string& text) { parse_into(access(c), text); },
               [access](const ExperimentConfig& c) { return as_json(access(c)); }};
}

#define LEARN_FIELD(section, key, member) field(section, key, [](auto& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all{
      LEARN_FIELD("data", "kind", dataset),
      LEARN_FIELD("data", "covariates", covariates),
      LEARN_FIELD("data", "n_observational", synthetic.n_observational),
      LEARN_FIELD("data", "n_experimental", synthetic.n_experimental),
      LEARN_FIELD("data", "covariate_dim", synthetic.covariate_dim),
      LEARN_FIELD("data", "unobserved_dim", synthetic.unobserved_dim),
      LEARN_FIELD("data", "confounding", synthetic.confounding),
      LEARN_FIELD("data", "horizon", synthetic.horizon),
      LEARN_FIELD("data", "long_term_step", synthetic.long_term_step),
      LEARN_FIELD("data", "noise_std", synthetic.noise_std),
      LEARN_FIELD("data", "grid_points", synthetic.grid_points),
      LEARN_FIELD("data", "reference_treatment", synthetic.reference_treatment),
      LEARN_FIELD("model", "representation_dim", model.representation_dim),
      LEARN_FIELD("model", "hidden", model.hidden),
      LEARN_FIELD("model", "recurrent_hidden", model.recurrent_hidden),
      LEARN_FIELD("model", "basis_size", model.basis_size),
      LEARN_FIELD("train", "short_term_share", train.loss.short_term_share),
      LEARN_FIELD("train", "balance_strength", train.loss.balance_strength),
      LEARN_FIELD("train", "ipm_epsilon", train.loss.ipm.epsilon),
      LEARN_FIELD("train", "ipm_iterations", train.loss.ipm.iterations),
      LEARN_FIELD("train", "entropy_strength", train.transport.entropy_strength),
      LEARN_FIELD("train", "transport_step", train.transport.step_size),
      LEARN_FIELD("train", "transport_iterations", train.transport.iterations),
      LEARN_FIELD("train", "cost_embedding", train.cost.embedding),
      LEARN_FIELD("train", "cost_covariates", train.cost.covariates),
      LEARN_FIELD("train", "cost_treatment", train.cost.treatment),
      LEARN_FIELD("train", "learning_rate", train.optimizer.learning_rate),
      LEARN_FIELD("train", "weight_decay", train.optimizer.weight_decay),
      LEARN_FIELD("train", "batch_size", train.batch_size),
      LEARN_FIELD("train", "experimental_batch_size", train.experimental_batch_size),
      LEARN_FIELD("train", "pretrain_epochs", train.pretrain_epochs),
      LEARN_FIELD("train", "epochs", train.epochs),
      LEARN_FIELD("train", "patience", train.patience),
      LEARN_FIELD("train", "validation_grid_stride", train.validation_grid_stride),
      LEARN_FIELD("train", "divergence_threshold", train.divergence_threshold),
      LEARN_FIELD("experiment", "variants", variants),
      LEARN_FIELD("experiment", "seeds", seeds),
      LEARN_FIELD("experiment", "master_seed", master_seed),
      LEARN_FIELD("experiment", "replications", replications),
      LEARN_FIELD("experiment", "kernel_metric_units", kernel_metric_units),
      LEARN_FIELD("experiment", "output", output_dir),
  };
  return all;
}

#undef LEARN_FIELD

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

Budget parse_budget(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "full") return Budget::Full;
  if (t == "desk") return Budget::Desk;
  throw ConfigError("unknown budget '" + text + "' (expected full or desk)");
}

std::string budget_name(Budget b) { return b == Budget::Full ? "full" : "desk"; }

std::vector<std::uint64_t> ExperimentConfig::run_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (int r = 0; r < replications; ++r) out.push_back(master_seed + static_cast<std::uint64_t>(r));
  return out;
}

data::SemiSyntheticConfig ExperimentConfig::semisynthetic(std::uint64_t seed) const {
  data::SemiSyntheticConfig s;
  s.horizon = synthetic.horizon;
  s.long_term_step = synthetic.long_term_step;
  s.noise_std = synthetic.noise_std;
  s.grid_points = synthetic.grid_points;
  s.reference_treatment = synthetic.reference_treatment;
  s.seed = seed;
  return s;
}

void apply_budget(ExperimentConfig& c, Budget budget) {
  if (budget == Budget::Full) return;
  c.synthetic.n_observational = 2000;
  c.synthetic.n_experimental = 200;
  c.model.representation_dim = 16;
  c.model.hidden = 16;
  c.model.recurrent_hidden = 8;
  c.train.pretrain_epochs = 100;
  c.train.epochs = 100;
  c.train.experimental_batch_size = 64;
  c.replications = 5;
}

void apply_config_text(ExperimentConfig& config, const std::string& ini, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: line {}: {}", source, e.line(), e.message()));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(source + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const auto& all = fields();
      const auto it = std::find_if(all.begin(), all.end(), [&](const Field& f) { return section == f.section && key == f.key; });
      if (it == all.end()) throw ConfigError(source + ": unknown key [" + section + "] " + key);
      try {
        it->set(config, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError(source + ": [" + section + "] " + key + ": " + e.what());
      }
    }
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(config, text.str(), path.string());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  apply_config_text(config, "[" + section + "]\n" + key + " = " + assignment.substr(eq + 1) + "\n", "override");
}

void validate(const ExperimentConfig& c) {
  const auto& s = c.synthetic;
  require(c.dataset == "synthetic" || c.dataset == "semisynthetic", "data.kind must be synthetic or semisynthetic");
  require(c.dataset != "semisynthetic" || !c.covariates.empty(), "semi-synthetic data needs data.covariates");
  if (c.dataset == "synthetic") {
    require(s.n_observational >= 10, "data.n_observational must be at least 10");
    require(s.covariate_dim >= 3 && s.covariate_dim % 3 == 0, "data.covariate_dim must be a positive multiple of 3");
    require(s.unobserved_dim >= 1, "data.unobserved_dim must be positive");
    require(s.confounding >= 0, "data.confounding must be nonnegative");
  }
  require(s.n_experimental >= 2, "data.n_experimental must be at least 2");
  require(s.horizon >= 1 && s.long_term_step > s.horizon, "need 1 <= data.horizon < data.long_term_step");
  require(s.noise_std >= 0, "data.noise_std must be nonnegative");
  require(s.grid_points >= 2, "data.grid_points must be at least 2");
  require(s.reference_treatment >= 0 && s.reference_treatment <= 1, "data.reference_treatment must lie in [0, 1]");
  require(c.model.representation_dim >= 1 && c.model.hidden >= 1 && c.model.recurrent_hidden >= 1,
          "model widths must be positive");
  require(c.model.basis_size == 1 || c.model.basis_size == 5, "model.basis_size must be 1 or 5");
  const auto& t = c.train;
  require(t.loss.short_term_share >= 0 && t.loss.short_term_share <= 1, "train.short_term_share must lie in [0, 1]");
  require(t.loss.balance_strength >= 0, "train.balance_strength must be nonnegative");
  require(t.loss.ipm.epsilon > 0 && t.loss.ipm.iterations >= 1, "train.ipm_epsilon and train.ipm_iterations must be positive");
  require(t.transport.entropy_strength >= 0, "train.entropy_strength must be nonnegative");
  require(t.transport.step_size > 0 && t.transport.iterations >= 1, "train.transport_step and train.transport_iterations must be positive");
  require(t.optimizer.learning_rate > 0 && t.optimizer.weight_decay >= 0, "invalid optimizer settings");
  require(t.batch_size >= 2, "train.batch_size must be at least 2");
  require(t.pretrain_epochs >= 0 && t.epochs >= 0 && t.patience >= 0, "epoch counts must be nonnegative");
  require(t.validation_grid_stride >= 1, "train.validation_grid_stride must be positive");
  require(t.divergence_threshold > 0, "train.divergence_threshold must be positive");
  require(!c.variants.empty(), "experiment.variants is empty");
  require(c.replications >= 1, "experiment.replications must be positive");
  require(c.kernel_metric_units >= 4, "experiment.kernel_metric_units must be at least 4");
  const auto seeds = c.run_seeds();
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "experiment seeds must be distinct");
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j = ordered_json::object();
  for (const auto& f : fields()) j[f.section][f.key] = f.get(c);
  return j;
}

std::string sha1_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string config_hash(const ExperimentConfig& c) { return sha1_hex(to_json(c).dump()); }

}  // namespace learn::exp
