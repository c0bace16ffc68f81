#include "seqmem/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace seqmem {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "cannot parse '" + value + "' as a number");
  return out;
}

Index parse_count(const std::string& key, const std::string& value, Index min) {
  const auto v = parse_number<long long>(key, value);
  if (v < min) throw ConfigError(key, "must be >= " + std::to_string(min));
  return static_cast<Index>(v);
}

double parse_real(const std::string& key, const std::string& value, double min) {
  const auto v = parse_number<double>(key, value);
  if (!(v >= min)) throw ConfigError(key, "must be >= " + std::to_string(min));
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + value + "'");
}

std::string one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (value == a) return value;
    list += list.empty() ? a : std::string("|") + a;
  }
  throw ConfigError(key, "expected one of " + list + ", got '" + value + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Key {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define COUNT_KEY(NAME, FIELD, MIN)                                                                   \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_count(k, v, MIN); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define REAL_KEY(NAME, FIELD, MIN)                                                                    \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_real(k, v, MIN); }, \
      [](const ExperimentConfig& c) { return fmt(c.FIELD); }}
#define SEED_KEY(NAME, FIELD)                                                                         \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<std::uint64_t>(k, v); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define PATH_KEY(NAME, FIELD)                                                                         \
  Key{NAME, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.FIELD = v; },      \
      [](const ExperimentConfig& c) { return c.FIELD.string(); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"task", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.task = one_of(k, v, {"seq_mnist", "perm_mnist", "synthetic"}); },
          [](const ExperimentConfig& c) { return c.task; }},
      PATH_KEY("data_dir", data_dir),
      PATH_KEY("train_images", train_images),
      PATH_KEY("train_labels", train_labels),
      PATH_KEY("test_images", test_images),
      PATH_KEY("test_labels", test_labels),
      COUNT_KEY("downsample", downsample, 1),
      Key{"scale", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.scale = one_of(k, v, {"unit", "centered"}) == "unit" ? ScaleMode::Unit : ScaleMode::Centered; },
          [](const ExperimentConfig& c) { return std::string(c.scale == ScaleMode::Unit ? "unit" : "centered"); }},
      COUNT_KEY("train_count", train_count, 0),
      COUNT_KEY("val_count", val_count, -1),
      COUNT_KEY("test_count", test_count, 0),
      SEED_KEY("perm_seed", perm_seed),
      SEED_KEY("split_seed", split_seed),
      COUNT_KEY("synthetic_n", synthetic_n, 1),
      COUNT_KEY("synthetic_t", synthetic_t, 1),
      COUNT_KEY("synthetic_d", synthetic_d, 1),
      Key{"model", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.model = one_of(k, v, {"laes_linear", "laes_svm", "laes_ff", "rnn", "lmn", "lstm", "linear_rnn"}); },
          [](const ExperimentConfig& c) { return c.model; }},
      Key{"init", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.init = one_of(k, v, {"ortho", "laes"}); },
          [](const ExperimentConfig& c) { return c.init; }},
      Key{"objective", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.objective = one_of(k, v, {"classify", "reconstruct"}); },
          [](const ExperimentConfig& c) { return c.objective; }},
      COUNT_KEY("hidden", hidden, 1),
      REAL_KEY("lr", train.lr, 0.0),
      COUNT_KEY("epochs", train.epochs, 0),
      COUNT_KEY("batch_size", train.batch_size, 1),
      REAL_KEY("lambda_ortho", train.lambda_ortho, 0.0),
      REAL_KEY("alpha_act", train.alpha_act, 0.0),
      Key{"trunc_p", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.train.trunc_p = parse_real(k, v, 0.0);
            if (c.train.trunc_p > 1.0) throw ConfigError(k, "must be a probability"); },
          [](const ExperimentConfig& c) { return fmt(c.train.trunc_p); }},
      SEED_KEY("seed", train.seed),
      REAL_KEY("ridge", train.ridge, 0.0),
      REAL_KEY("adam_beta1", train.adam_beta1, 0.0),
      REAL_KEY("adam_beta2", train.adam_beta2, 0.0),
      REAL_KEY("adam_eps", train.adam_eps, 0.0),
      REAL_KEY("clip_norm", train.clip_norm, 0.0),
      COUNT_KEY("shard_size", train.shard_size, 1),
      Key{"verbose", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.verbose = parse_bool(k, v); },
          [](const ExperimentConfig& c) { return std::string(c.train.verbose ? "true" : "false"); }},
      COUNT_KEY("laes_stride", laes_stride, 1),
      COUNT_KEY("laes_max_prefixes", laes_max_prefixes, 0),
      COUNT_KEY("laes_max_sequences", laes_max_sequences, 0),
      Key{"laes_center", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.laes_center = parse_bool(k, v); },
          [](const ExperimentConfig& c) { return std::string(c.laes_center ? (*c.laes_center ? "true" : "false") : "auto"); }},
      COUNT_KEY("ff_hidden", ff_hidden, 0),
      COUNT_KEY("ff_epochs", ff_epochs, 0),
      REAL_KEY("ff_lr", ff_lr, 0.0),
      REAL_KEY("svm_c", svm_c, 1e-300),
      COUNT_KEY("svm_epochs", svm_epochs, 1),
      Key{"probe_lags", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.probe_lags.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) c.probe_lags.push_back(parse_count(k, trim(item), 1));
            if (c.probe_lags.empty()) throw ConfigError(k, "needs at least one lag"); },
          [](const ExperimentConfig& c) {
            std::string s;
            for (Index l : c.probe_lags) s += (s.empty() ? "" : ",") + std::to_string(l);
            return s; }},
      REAL_KEY("probe_ridge", probe_ridge, 0.0),
      COUNT_KEY("probe_sequences", probe_sequences, 2),
      COUNT_KEY("grad_batch", grad_batch, 1),
      COUNT_KEY("grad_stride", grad_stride, 1),
      COUNT_KEY("sample", sample, 0),
      PATH_KEY("output_dir", output_dir),
      Key{"history_timing", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.history_timing = parse_bool(k, v); },
          [](const ExperimentConfig& c) { return std::string(c.history_timing ? "true" : "false"); }},
  };
  return table;
}

}  // namespace

Index ExperimentConfig::resolved_val_count() const {
  if (val_count >= 0) return val_count;
  return is_mnist() ? 5000 : std::max<Index>(1, synthetic_n / 4);
}

bool ExperimentConfig::resolved_laes_center() const { return laes_center.value_or(is_laes_classifier()); }

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : keys())
    if (key == k.name) {
      if (key == "laes_center" && value == "auto") {
        config.laes_center.reset();
        return;
      }
      k.set(config, key, value);
      return;
    }
  throw ConfigError(key, "unknown key");
}

void apply_assignment(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("", "expected key=value, got '" + assignment + "'");
  apply_setting(config, trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(config, line);
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

void finalize_config(ExperimentConfig& config) {
  if (config.objective == "reconstruct" && config.model != "rnn" && config.model != "lstm" && config.model != "lmn")
    throw ConfigError("objective", "reconstruction needs model rnn, lstm or lmn");
  if (config.init == "laes" && config.model != "rnn" && config.model != "lmn" && config.model != "linear_rnn")
    throw ConfigError("init", "laes initialization applies to rnn, lmn and linear_rnn");
  if (!config.is_mnist()) return;

  if (config.data_dir.empty()) {
    if (const char* env = std::getenv("SEQMEM_DATA_DIR")) config.data_dir = env;
  }
  struct {
    const char* key;
    std::filesystem::path* path;
    const char* file;
  } files[] = {{"train_images", &config.train_images, "train-images-idx3-ubyte"},
               {"train_labels", &config.train_labels, "train-labels-idx1-ubyte"},
               {"test_images", &config.test_images, "t10k-images-idx3-ubyte"},
               {"test_labels", &config.test_labels, "t10k-labels-idx1-ubyte"}};
  for (auto& f : files) {
    if (f.path->empty()) {
      if (config.data_dir.empty())
        throw ConfigError(f.key, "not set and neither data_dir nor SEQMEM_DATA_DIR is given");
      *f.path = config.data_dir / f.file;
      if (!std::filesystem::exists(*f.path) && std::filesystem::exists(f.path->string() + ".gz"))
        *f.path = f.path->string() + ".gz";
    }
    if (!std::filesystem::exists(*f.path)) throw ConfigError(f.key, "file not found: " + f.path->string());
  }
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + "=" + k.get(config) + "\n";
  return out;
}

}  // namespace seqmem
