// SPDX-License-Identifier: Apache-2.0
#include "fod/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fod/errors.hpp"

namespace fod {

std::string_view on_off(bool b) { return b ? "on" : "off"; }

bool parse_on_off(std::string_view s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw ConfigError("expected on|off, got '" + std::string(s) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T, class Parse>
std::vector<T> parse_list(std::string_view v, Parse parse) {
  std::vector<T> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(parse(trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v = v.substr(comma + 1);
  }
  return out;
}

template <class T, class Show>
std::string join(const std::vector<T>& xs, Show show) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += show(xs[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FOD_SIZE_KEY(NAME, FIELD)                                                                      \
  Key {                                                                                                \
    NAME, [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<std::size_t>(NAME, v); },      \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                     \
  }
#define FOD_REAL_KEY(NAME, FIELD)                                                                      \
  Key {                                                                                                \
    NAME, [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<double>(NAME, v); },           \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                                \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      {"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      FOD_SIZE_KEY("height", data.height),
      FOD_SIZE_KEY("width", data.width),
      FOD_SIZE_KEY("channels", data.channels),
      {"texture", [](RunConfig& c, std::string_view v) { c.data.texture = parse_texture(v); },
       [](const RunConfig& c) { return std::string(to_string(c.data.texture)); }},
      {"anomaly_mix", [](RunConfig& c, std::string_view v) { c.data.mix = AnomalyMix::parse(v); },
       [](const RunConfig& c) { return c.data.mix.to_string(); }},
      FOD_SIZE_KEY("n_train", data.n_train),
      FOD_SIZE_KEY("n_test_normal", data.n_test_normal),
      FOD_SIZE_KEY("n_test_anomalous", data.n_test_anomalous),
      FOD_SIZE_KEY("anomaly_size", data.anomaly_size),
      FOD_REAL_KEY("anomaly_strength", data.anomaly_strength),
      FOD_REAL_KEY("global_shift", data.global_shift),
      FOD_REAL_KEY("noise", data.noise),
      FOD_SIZE_KEY("proj_dim", proj_dim),
      {"patch_context", [](RunConfig& c, std::string_view v) { c.patch_context = parse_on_off(v); },
       [](const RunConfig& c) { return std::string(on_off(c.patch_context)); }},
      {"standardize", [](RunConfig& c, std::string_view v) { c.standardize = parse_on_off(v); },
       [](const RunConfig& c) { return std::string(on_off(c.standardize)); }},
      FOD_SIZE_KEY("d_model", train.model.d_model),
      FOD_SIZE_KEY("heads", train.model.heads),
      FOD_SIZE_KEY("layers", train.model.layers),
      FOD_SIZE_KEY("ffn_mult", train.model.ffn_mult),
      {"views", [](RunConfig& c, std::string_view v) { c.train.model.views = parse_views(v); },
       [](const RunConfig& c) { return std::string(to_string(c.train.model.views)); }},
      FOD_SIZE_KEY("epochs", train.epochs),
      FOD_REAL_KEY("lr", train.lr),
      FOD_REAL_KEY("lambda1", train.weights.lambda1),
      FOD_REAL_KEY("lambda2", train.weights.lambda2),
      {"entropy", [](RunConfig& c, std::string_view v) { c.train.entropy = parse_on_off(v); },
       [](const RunConfig& c) { return std::string(on_off(c.train.entropy)); }},
      {"entropy_reduction",
       [](RunConfig& c, std::string_view v) { c.train.weights.entropy_reduction = parse_entropy_reduction(v); },
       [](const RunConfig& c) { return std::string(to_string(c.train.weights.entropy_reduction)); }},
      {"opt", [](RunConfig& c, std::string_view v) { c.train.opt = parse_opt_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.train.opt)); }},
      FOD_REAL_KEY("adam_eps", train.adam_eps),
      {"bank", [](RunConfig& c, std::string_view v) { c.train.bank.kind = parse_bank_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.train.bank.kind)); }},
      FOD_SIZE_KEY("nearest_window", train.bank.nearest_window),
      FOD_SIZE_KEY("coreset_budget", train.bank.coreset_budget),
      FOD_SIZE_KEY("prototypes", train.bank.prototypes),
      FOD_SIZE_KEY("prototype_iters", train.bank.prototype_iters),
      FOD_SIZE_KEY("codebook_size", train.bank.codebook_size),
      FOD_SIZE_KEY("codebook_epochs", train.bank.codebook_epochs),
      {"criterion", [](RunConfig& c, std::string_view v) { c.criterion = parse_criterion(v); },
       [](const RunConfig& c) { return std::string(to_string(c.criterion)); }},
      FOD_REAL_KEY("smooth_sigma", smooth_sigma),
      {"ablate_views",
       [](RunConfig& c, std::string_view v) { c.ablate_views = parse_list<Views>(v, parse_views); },
       [](const RunConfig& c) { return join(c.ablate_views, [](Views x) { return std::string(to_string(x)); }); }},
      {"ablate_entropy",
       [](RunConfig& c, std::string_view v) { c.ablate_entropy = parse_list<bool>(v, parse_on_off); },
       [](const RunConfig& c) { return join(c.ablate_entropy, [](bool x) { return std::string(on_off(x)); }); }},
      {"ablate_banks",
       [](RunConfig& c, std::string_view v) { c.ablate_banks = parse_list<BankKind>(v, parse_bank_kind); },
       [](const RunConfig& c) {
         return join(c.ablate_banks, [](BankKind x) { return std::string(to_string(x)); });
       }},
      {"ablate_criteria",
       [](RunConfig& c, std::string_view v) { c.ablate_criteria = parse_list<Criterion>(v, parse_criterion); },
       [](const RunConfig& c) {
         return join(c.ablate_criteria, [](Criterion x) { return std::string(to_string(x)); });
       }},
  };
  return table;
}

#undef FOD_SIZE_KEY
#undef FOD_REAL_KEY

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& k : key_table())
    if (k.name == key) return k.set(*this, value);
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

SyntheticSpec RunConfig::data_spec() const {
  SyntheticSpec s = data;
  s.seed = derive_seed(seed, 1);
  return s;
}

std::uint64_t RunConfig::extractor_seed() const { return derive_seed(seed, 2); }

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, 3);
  t.model.input_dim = proj_dim + 2;
  return t;
}

std::uint64_t RunConfig::bank_seed(int level) const {
  return derive_seed(derive_seed(seed, 4), static_cast<std::uint64_t>(level));
}

void RunConfig::validate() const {
  data_spec().validate();
  if (proj_dim == 0) throw ConfigError("proj_dim must be >= 1");
  train_config().validate();
  if (train.bank.nearest_window % 2 == 0) throw ConfigError("nearest_window must be odd");
  if (train.bank.coreset_budget == 0 || train.bank.prototypes == 0 || train.bank.codebook_size == 0)
    throw ConfigError("bank sizes must be >= 1");
  if (!(smooth_sigma >= 0.0)) throw ConfigError("smooth_sigma must be >= 0");
  if (ablate_views.empty() || ablate_entropy.empty() || ablate_banks.empty() || ablate_criteria.empty())
    throw ConfigError("ablation lists must be non-empty");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace fod
