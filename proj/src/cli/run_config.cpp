#include "karma/cli/run_config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "karma/error.hpp"

namespace karma::cli {

namespace {

using model::format_double;
using model::parse_bool;
using model::parse_double;
using model::parse_unsigned;

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> parse_reals(const std::string& text, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_double(item, key));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::size_t parse_size(const std::string& text, const std::string& key) {
  return static_cast<std::size_t>(parse_unsigned(text, key));
}

struct RunKey {
  std::string name;
  std::string description;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
RunKey size_key(std::string name, std::string description, T RunConfig::*member) {
  return {name, std::move(description),
          [member, name](RunConfig& c, const std::string& v) { c.*member = parse_size(v, name); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

RunKey real_key(std::string name, std::string description, double RunConfig::*member) {
  return {name, std::move(description),
          [member, name](RunConfig& c, const std::string& v) { c.*member = parse_double(v, name); },
          [member](const RunConfig& c) { return format_double(c.*member); }};
}

RunKey bool_key(std::string name, std::string description, bool RunConfig::*member) {
  return {name, std::move(description),
          [member, name](RunConfig& c, const std::string& v) { c.*member = parse_bool(v, name); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

RunKey path_key(std::string name, std::string description, std::filesystem::path RunConfig::*member) {
  return {name, std::move(description), [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

// synth_periods and synth_amplitudes are paired up after every key is read.
const std::vector<RunKey>& run_keys() {
  static const std::vector<RunKey> keys = {
      {"alpha", "weight of the time-domain MSE in the hybrid loss, in [0, 1]",
       [](RunConfig& c, const std::string& v) { c.loss.alpha = parse_double(v, "alpha"); },
       [](const RunConfig& c) { return format_double(c.loss.alpha); }},
      real_key("lr", "Adam learning rate, halved every epoch", &RunConfig::lr),
      size_key("batch_size", "mini-batch size", &RunConfig::batch_size),
      size_key("epochs", "maximum number of epochs", &RunConfig::epochs),
      size_key("patience", "epochs without validation improvement before stopping", &RunConfig::patience),
      real_key("min_delta", "smallest validation improvement that counts", &RunConfig::min_delta),
      size_key("stride", "step between training windows", &RunConfig::stride),
      size_key("threads", "worker threads for evaluation passes", &RunConfig::threads),
      path_key("data", "CSV file (date column first); empty uses the synthetic series", &RunConfig::data),
      {"split", "train,val,test fractions; empty picks 0.6,0.2,0.2 for D=7 and 0.7,0.1,0.2 otherwise",
       [](RunConfig& c, const std::string& v) {
         if (trim(v).empty()) {
           c.split.reset();
           return;
         }
         const auto r = parse_reals(v, "split");
         if (r.size() != 3) throw ConfigError("'split' expects three fractions, got '" + v + "'", "split");
         c.split = data::SplitRatios{r[0], r[1], r[2]};
       },
       [](const RunConfig& c) {
         if (!c.split) return std::string();
         return join({format_double(c.split->train), format_double(c.split->val), format_double(c.split->test)});
       }},
      path_key("out", "output directory", &RunConfig::out),
      path_key("checkpoint", "checkpoint file; empty means <out>/model.ckpt", &RunConfig::checkpoint),
      {"origin", "first forecast row for predict/decompose; empty picks the first test row",
       [](RunConfig& c, const std::string& v) {
         if (trim(v).empty()) {
           c.origin.reset();
         } else {
           c.origin = parse_size(v, "origin");
         }
       },
       [](const RunConfig& c) { return c.origin ? std::to_string(*c.origin) : std::string(); }},
      bool_key("trained", "decompose with the checkpoint instead of fresh parameters", &RunConfig::trained),
      bool_key("svg", "predict also writes forecast.svg", &RunConfig::svg),
      {"synth_length", "rows of the synthetic series",
       [](RunConfig& c, const std::string& v) { c.synth.length = parse_size(v, "synth_length"); },
       [](const RunConfig& c) { return std::to_string(c.synth.length); }},
      {"synth_periods", "sinusoid periods of the synthetic series", nullptr,
       [](const RunConfig& c) {
         std::vector<std::string> p;
         for (const auto& s : c.synth.components) p.push_back(format_double(s.period));
         return join(p);
       }},
      {"synth_amplitudes", "sinusoid amplitudes, one per period", nullptr,
       [](const RunConfig& c) {
         std::vector<std::string> p;
         for (const auto& s : c.synth.components) p.push_back(format_double(s.amplitude));
         return join(p);
       }},
      {"synth_phase_step", "phase offset added per channel",
       [](RunConfig& c, const std::string& v) { c.synth.phase_step = parse_double(v, "synth_phase_step"); },
       [](const RunConfig& c) { return format_double(c.synth.phase_step); }},
      {"synth_amplitude_step", "relative amplitude growth per channel",
       [](RunConfig& c, const std::string& v) { c.synth.amplitude_step = parse_double(v, "synth_amplitude_step"); },
       [](const RunConfig& c) { return format_double(c.synth.amplitude_step); }},
      {"synth_slope", "linear trend per row",
       [](RunConfig& c, const std::string& v) { c.synth.slope = parse_double(v, "synth_slope"); },
       [](const RunConfig& c) { return format_double(c.synth.slope); }},
      {"synth_intercept", "value of the trend at row 0",
       [](RunConfig& c, const std::string& v) { c.synth.intercept = parse_double(v, "synth_intercept"); },
       [](const RunConfig& c) { return format_double(c.synth.intercept); }},
      {"synth_noise", "standard deviation of the Gaussian noise",
       [](RunConfig& c, const std::string& v) { c.synth.noise_std = parse_double(v, "synth_noise"); },
       [](const RunConfig& c) { return format_double(c.synth.noise_std); }},
      {"synth_seed", "noise seed",
       [](RunConfig& c, const std::string& v) { c.synth.seed = parse_unsigned(v, "synth_seed"); },
       [](const RunConfig& c) { return std::to_string(c.synth.seed); }},
      {"bench_lengths", "ascending L=T values timed by bench",
       [](RunConfig& c, const std::string& v) {
         c.bench_lengths.clear();
         for (const auto& item : split_list(v)) c.bench_lengths.push_back(parse_size(item, "bench_lengths"));
       },
       [](const RunConfig& c) {
         std::vector<std::string> p;
         for (auto l : c.bench_lengths) p.push_back(std::to_string(l));
         return join(p);
       }},
      size_key("bench_channels", "channel count D used by bench", &RunConfig::bench_channels),
      size_key("bench_reps", "timed repetitions per length; the minimum is reported", &RunConfig::bench_reps),
      size_key("bench_batch", "windows per timed forward pass", &RunConfig::bench_batch),
      bool_key("bench_backward", "also time a backward pass", &RunConfig::bench_backward),
      bool_key("quiet", "suppress progress output", &RunConfig::quiet),
  };
  return keys;
}

const RunKey* find_run_key(const std::string& key) {
  for (const auto& k : run_keys())
    if (k.name == key) return &k;
  return nullptr;
}

const std::map<std::string, std::string>& model_descriptions() {
  static const std::map<std::string, std::string> d = {
      {"L", "lookback length"},
      {"T", "forecast horizon"},
      {"D", "channel count; taken from the data when a CSV is given"},
      {"E_s", "seasonal embedding width (even)"},
      {"E_t", "trend embedding width"},
      {"N_blocks", "number of KarmaBlocks"},
      {"atcd_inner", "inner width of the decomposition attention"},
      {"atcd_heads", "attention heads (must divide atcd_inner)"},
      {"atcd_dropout", "dropout after the decomposition input projection"},
      {"d_state", "SSM state size"},
      {"d_conv", "causal convolution width in Mamba"},
      {"expand", "Mamba inner expansion factor"},
      {"wavelet", "haar or db4"},
      {"use_atcd", "adaptive trend/seasonal decomposition on or off"},
      {"use_hftd", "wavelet frequency split on or off"},
      {"share_temporal_mamba", "one Mamba for both temporal passes in a block"},
      {"affine_norm", "learned affine after instance normalization"},
      {"scan_chunk", "0 runs the sequential scan, otherwise chunk length"},
      {"norm_eps", "floor for the instance-normalization std"},
      {"seed", "seed for parameters, shuffling and dropout (KARMA_SEED when unset)"},
  };
  return d;
}

}  // namespace

std::optional<Command> parse_command(std::string_view name) {
  if (name == "train") return Command::train;
  if (name == "eval") return Command::eval;
  if (name == "predict") return Command::predict;
  if (name == "decompose") return Command::decompose;
  if (name == "bench") return Command::bench;
  if (name == "synth") return Command::synth;
  return std::nullopt;
}

std::string command_name(Command command) {
  switch (command) {
    case Command::train: return "train";
    case Command::eval: return "eval";
    case Command::predict: return "predict";
    case Command::decompose: return "decompose";
    case Command::bench: return "bench";
    case Command::synth: return "synth";
  }
  return "?";
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out / "model.ckpt" : checkpoint;
}

training::TrainConfig RunConfig::train_config() const {
  training::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.loss = loss;
  t.patience = patience;
  t.min_delta = min_delta;
  t.stride = stride;
  t.seed = model.seed;
  t.threads = threads;
  return t;
}

data::SplitRatios RunConfig::split_for(std::size_t channels) const {
  return split ? *split : data::SplitRatios::defaults_for(channels);
}

std::map<std::string, std::string> RunConfig::entries() const {
  auto out_entries = model.to_entries();
  for (const auto& k : run_keys()) out_entries[k.name] = k.get(*this);
  return out_entries;
}

void RunConfig::validate() const {
  model.validate();
  train_config().validate();
  if (split) split->validate();
  if (synth.length == 0) throw ConfigError("synth_length must be positive", "synth_length");
  if (!(synth.noise_std >= 0.0)) throw ConfigError("synth_noise must be nonnegative", "synth_noise");
  for (const auto& c : synth.components) {
    if (!(c.period >= 2.0)) throw ConfigError("synth_periods must be at least 2", "synth_periods");
    if (!std::isfinite(c.amplitude)) throw ConfigError("synth_amplitudes must be finite", "synth_amplitudes");
  }
  if (bench_lengths.empty()) throw ConfigError("bench_lengths is empty", "bench_lengths");
  for (std::size_t i = 0; i < bench_lengths.size(); ++i) {
    if (bench_lengths[i] < 2) throw ConfigError("bench_lengths must be at least 2", "bench_lengths");
    if (i > 0 && bench_lengths[i] <= bench_lengths[i - 1]) {
      throw ConfigError("bench_lengths must be strictly ascending", "bench_lengths");
    }
  }
  if (bench_channels == 0) throw ConfigError("bench_channels must be positive", "bench_channels");
  if (bench_reps == 0) throw ConfigError("bench_reps must be positive", "bench_reps");
  if (bench_batch == 0) throw ConfigError("bench_batch must be positive", "bench_batch");
}

std::map<std::string, std::string> parse_entries(std::string_view text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (!out.emplace(key, value).second) throw ConfigError(where + ": '" + key + "' set twice", key);
  }
  return out;
}

RunConfig resolve_config(Command command, const std::map<std::string, std::string>& file,
                         const std::map<std::string, std::string>& flags, const char* env_seed) {
  std::map<std::string, std::string> merged = file;
  for (const auto& [k, v] : flags) merged[k] = v;

  RunConfig cfg;
  cfg.command = command;
  std::map<std::string, std::string> model_entries;
  std::optional<std::string> periods, amplitudes;
  for (const auto& [key, value] : merged) {
    if (model::KarmaConfig::is_key(key)) {
      model_entries[key] = value;
    } else if (key == "synth_periods") {
      periods = value;
    } else if (key == "synth_amplitudes") {
      amplitudes = value;
    } else if (const RunKey* k = find_run_key(key)) {
      k->set(cfg, value);
    } else {
      throw ConfigError("unknown key '" + key + "'", key);
    }
  }
  if (!merged.count("seed") && env_seed != nullptr && *env_seed != '\0') {
    model_entries["seed"] = std::to_string(parse_unsigned(env_seed, "KARMA_SEED"));
  }
  cfg.model = model::KarmaConfig::from_entries(model_entries);
  cfg.channels_given = model_entries.count("D") > 0;

  if (periods || amplitudes) {
    std::vector<double> p, a;
    for (const auto& c : cfg.synth.components) {
      p.push_back(c.period);
      a.push_back(c.amplitude);
    }
    if (periods) p = trim(*periods).empty() ? std::vector<double>{} : parse_reals(*periods, "synth_periods");
    if (amplitudes) {
      a = trim(*amplitudes).empty() ? std::vector<double>{} : parse_reals(*amplitudes, "synth_amplitudes");
    }
    if (p.size() != a.size()) {
      throw ConfigError("synth_periods and synth_amplitudes need the same number of entries", "synth_amplitudes");
    }
    cfg.synth.components.clear();
    for (std::size_t i = 0; i < p.size(); ++i) cfg.synth.components.push_back({a[i], p[i], 0.0});
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(Command command, const std::optional<std::filesystem::path>& file,
                       const std::map<std::string, std::string>& flags, const char* env_seed) {
  std::map<std::string, std::string> entries;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + file->string() + "'", "config");
    std::stringstream ss;
    ss << in.rdbuf();
    entries = parse_entries(ss.str(), file->string());
  }
  return resolve_config(command, entries, flags, env_seed);
}

std::vector<KeyHelp> key_help() {
  std::vector<KeyHelp> out;
  for (const auto& [key, value] : model::KarmaConfig{}.to_entries()) {
    const auto& d = model_descriptions();
    const auto it = d.find(key);
    out.push_back({key, value, it == d.end() ? std::string() : it->second});
  }
  const RunConfig defaults;
  for (const auto& k : run_keys()) out.push_back({k.name, k.get(defaults), k.description});
  return out;
}

}  // namespace karma::cli
