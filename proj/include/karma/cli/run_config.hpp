#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "karma/data/series.hpp"
#include "karma/model/config.hpp"
#include "karma/training/trainer.hpp"

namespace karma::cli {

enum class Command { train, eval, predict, decompose, bench, synth };

std::optional<Command> parse_command(std::string_view name);
std::string command_name(Command command);

/// Everything a command needs, fully validated.
struct RunConfig {
  Command command = Command::train;
  model::KarmaConfig model;
  training::LossConfig loss;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  double min_delta = 0.0;
  std::size_t stride = 1;
  std::size_t threads = 1;

  std::filesystem::path data;  // empty: synthetic series
  data::SyntheticSpec synth;
  std::optional<data::SplitRatios> split;  // empty: defaults for the channel count
  std::filesystem::path out = "karma_out";
  std::filesystem::path checkpoint;        // empty: <out>/model.ckpt
  std::optional<std::size_t> origin;       // first forecast row
  bool trained = false;                    // decompose from the checkpoint
  bool svg = false;
  std::vector<std::size_t> bench_lengths{96, 192, 336, 720, 1024, 1440, 2048};
  std::size_t bench_channels = 321;
  std::size_t bench_reps = 3;
  std::size_t bench_batch = 1;
  bool bench_backward = false;
  bool quiet = false;

  /// True when D came from the file or a flag rather than the default.
  bool channels_given = false;

  std::filesystem::path checkpoint_path() const;
  training::TrainConfig train_config() const;
  data::SplitRatios split_for(std::size_t channels) const;
  /// Every setting as text, keyed like the config file.
  std::map<std::string, std::string> entries() const;

  /// Throws ConfigError naming the first bad key.
  void validate() const;
};

/// Flat `key = value` lines, '#' starts a comment. Malformed lines and repeated keys are
/// ConfigErrors that name the line.
std::map<std::string, std::string> parse_entries(std::string_view text, const std::string& source = "config");

/// Defaults, then `file`, then `flags`; KARMA_SEED (`env_seed`) fills in the seed only when
/// neither sets it. Unknown keys, malformed values and broken invariants are ConfigErrors.
RunConfig resolve_config(Command command, const std::map<std::string, std::string>& file,
                         const std::map<std::string, std::string>& flags, const char* env_seed = nullptr);

/// resolve_config over the entries of an optional config file.
RunConfig parse_config(Command command, const std::optional<std::filesystem::path>& file,
                       const std::map<std::string, std::string>& flags, const char* env_seed = nullptr);

struct KeyHelp {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every accepted key with its default, model keys included.
std::vector<KeyHelp> key_help();

}  // namespace karma::cli
