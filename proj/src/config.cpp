// SPDX-License-Identifier: Apache-2.0

#include "tbigan/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "tbigan/error.hpp"

namespace tbigan {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const std::vector<std::string> kKeys = {
    "dataset",
    "data_root",
    "model",
    "out",
    "arch.m",
    "arch.width",
    "arch.leaky_slope",
    "arch.encoder_channels",
    "arch.generator_channels",
    "arch.dx_channels",
    "arch.dz_channels",
    "arch.dxz_channels",
    "train.lambda",
    "train.warmup_epochs",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.n_per_class",
    "train.seed",
    "train.hard_negatives",
    "train.checkpoint_every",
    "train.deterministic",
    "train.eval_triplets",
    "eval.k",
    "eval.weighting",
    "eval.queries",
    "eval.batch_size",
    "synthetic.class_count",
    "synthetic.per_class",
    "synthetic.image_size",
    "synthetic.test_per_class",
    "synthetic.seed",
};

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {
    for (const auto& [key, value] : kv) {
      if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string str(const std::string& key, std::string fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  template <typename T>
  T number(const std::string& key, T fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse<T>(key, it->second);
  }

  bool flag(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("invalid " + key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<int64_t> list(const std::string& key, std::vector<int64_t> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int64_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse<int64_t>(key, trim(item)));
    return out;
  }

  template <typename T>
  static T parse(const std::string& key, const std::string& text) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
      throw UsageError("invalid " + key + ": cannot parse '" + text + "'");
    }
    return value;
  }

 private:
  const KeyValues& kv_;
};

std::string join(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string number_text(double v) {
  // Shortest representation that round-trips.
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

const std::vector<std::string>& known_config_keys() { return kKeys; }

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) +
                       ": expected 'key = value'");
    }
    auto key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

ExperimentConfig resolve_config(const KeyValues& values) {
  const Reader r(values);
  ExperimentConfig c;
  c.dataset = parse_dataset_id(r.str("dataset", "synthetic"));
  c.data_root = resolve_data_root(
      r.has("data_root") ? std::optional<std::filesystem::path>(r.str("data_root", ""))
                         : std::nullopt);
  c.output_dir = r.str("out", "runs/default");

  auto& s = c.synthetic;
  s.class_count = r.number<int64_t>("synthetic.class_count", s.class_count);
  s.per_class = r.number<int64_t>("synthetic.per_class", s.per_class);
  s.image_size = r.number<int64_t>("synthetic.image_size", s.image_size);
  s.test_per_class = r.number<int64_t>("synthetic.test_per_class", s.test_per_class);
  s.seed = r.number<uint64_t>("synthetic.seed", s.seed);

  auto& t = c.train;
  t.model = parse_model_tag(r.str("model", "triplet-bigan"));
  // Model-dependent defaults; explicit conflicting values fail validation.
  t.lambda = r.number<double>("train.lambda", t.model == ModelTag::bigan ? 0.0 : 1.0);
  t.warmup_epochs = r.number<int64_t>("train.warmup_epochs",
                                      t.model == ModelTag::triplet ? 0 : 10);
  t.total_epochs = r.number<int64_t>("train.epochs", 50);
  t.batch_size = r.number<int64_t>("train.batch_size", t.batch_size);
  t.learning_rate = r.number<double>("train.lr", t.learning_rate);
  t.adam_beta1 = r.number<double>("train.adam_beta1", t.adam_beta1);
  t.adam_beta2 = r.number<double>("train.adam_beta2", t.adam_beta2);
  t.adam_eps = r.number<double>("train.adam_eps", t.adam_eps);
  t.n_per_class = r.number<int64_t>("train.n_per_class", t.n_per_class);
  t.seed = r.number<uint64_t>("train.seed", t.seed);
  t.hard_negatives = r.flag("train.hard_negatives", t.hard_negatives);
  t.checkpoint_every = r.number<int64_t>("train.checkpoint_every", t.checkpoint_every);
  t.deterministic = r.flag("train.deterministic", t.deterministic);
  t.eval_triplets = r.number<int64_t>("train.eval_triplets", t.eval_triplets);
  t.validate();

  const int64_t image_size = c.dataset == DatasetId::synthetic ? s.image_size : 32;
  const ImageShape shape{3, image_size, image_size};
  const int64_t m = r.number<int64_t>("arch.m", 64);
  if (m < 1) throw UsageError("invalid arch.m: must be >= 1");
  const int64_t width = r.number<int64_t>("arch.width", image_size == 16 ? 8 : 32);
  if (width < 1) throw UsageError("invalid arch.width: must be >= 1");
  c.arch = ArchitectureConfig::preset(m, shape, width);
  c.arch.leaky_slope = r.number<double>("arch.leaky_slope", 0.02);
  c.arch.encoder_channels = r.list("arch.encoder_channels", c.arch.encoder_channels);
  c.arch.generator_channels = r.list("arch.generator_channels", c.arch.generator_channels);
  c.arch.dx_channels = r.list("arch.dx_channels", c.arch.dx_channels);
  c.arch.dz_channels = r.list("arch.dz_channels", c.arch.dz_channels);
  c.arch.dxz_channels = r.list("arch.dxz_channels", c.arch.dxz_channels);
  c.arch.validate();

  c.eval.k = r.number<int64_t>("eval.k", c.eval.k);
  if (c.eval.k < 1) throw UsageError("invalid eval.k: must be >= 1");
  c.eval.weighting = parse_knn_weighting(r.str("eval.weighting", "inverse-distance"));
  c.eval.queries = parse_embedding_source(r.str("eval.queries", "test"));
  c.eval.batch_size = r.number<int64_t>("eval.batch_size", c.eval.batch_size);
  if (c.eval.batch_size < 1) throw UsageError("invalid eval.batch_size: must be >= 1");
  return c;
}

KeyValues to_key_values(const ExperimentConfig& c) {
  KeyValues kv;
  kv["dataset"] = std::string(to_string(c.dataset));
  kv["data_root"] = c.data_root.string();
  kv["model"] = std::string(to_string(c.train.model));
  kv["out"] = c.output_dir.string();
  kv["arch.m"] = std::to_string(c.arch.latent_dim);
  kv["arch.width"] = std::to_string(c.arch.width);
  kv["arch.leaky_slope"] = number_text(c.arch.leaky_slope);
  kv["arch.encoder_channels"] = join(c.arch.encoder_channels);
  kv["arch.generator_channels"] = join(c.arch.generator_channels);
  kv["arch.dx_channels"] = join(c.arch.dx_channels);
  kv["arch.dz_channels"] = join(c.arch.dz_channels);
  kv["arch.dxz_channels"] = join(c.arch.dxz_channels);
  const auto& t = c.train;
  kv["train.lambda"] = number_text(t.lambda);
  kv["train.warmup_epochs"] = std::to_string(t.warmup_epochs);
  kv["train.epochs"] = std::to_string(t.total_epochs);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.lr"] = number_text(t.learning_rate);
  kv["train.adam_beta1"] = number_text(t.adam_beta1);
  kv["train.adam_beta2"] = number_text(t.adam_beta2);
  kv["train.adam_eps"] = number_text(t.adam_eps);
  kv["train.n_per_class"] = std::to_string(t.n_per_class);
  kv["train.seed"] = std::to_string(t.seed);
  kv["train.hard_negatives"] = t.hard_negatives ? "true" : "false";
  kv["train.checkpoint_every"] = std::to_string(t.checkpoint_every);
  kv["train.deterministic"] = t.deterministic ? "true" : "false";
  kv["train.eval_triplets"] = std::to_string(t.eval_triplets);
  kv["eval.k"] = std::to_string(c.eval.k);
  kv["eval.weighting"] = std::string(to_string(c.eval.weighting));
  kv["eval.queries"] = std::string(to_string(c.eval.queries));
  kv["eval.batch_size"] = std::to_string(c.eval.batch_size);
  kv["synthetic.class_count"] = std::to_string(c.synthetic.class_count);
  kv["synthetic.per_class"] = std::to_string(c.synthetic.per_class);
  kv["synthetic.image_size"] = std::to_string(c.synthetic.image_size);
  kv["synthetic.test_per_class"] = std::to_string(c.synthetic.test_per_class);
  kv["synthetic.seed"] = std::to_string(c.synthetic.seed);
  return kv;
}

std::string render_config(const ExperimentConfig& config) {
  const auto kv = to_key_values(config);
  std::string out = "# resolved tbigan experiment config\n";
  for (const auto& key : kKeys) out += key + " = " + kv.at(key) + "\n";
  return out;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json(to_key_values(c));
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = resolve_config(j.get<KeyValues>());
}

}  // namespace tbigan
