#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace karma::model {

/// Architecture hyperparameters. Keys in `to_entries` / `from_entries` are the names
/// accepted by the config file and the command line.
struct KarmaConfig {
  std::size_t lookback = 96;   // L
  std::size_t horizon = 96;    // T
  std::size_t channels = 7;    // D
  std::size_t e_s = 64;        // E_s
  std::size_t e_t = 64;        // E_t
  std::size_t n_blocks = 2;    // N_blocks
  std::size_t atcd_inner = 64;  // I
  std::size_t atcd_heads = 4;   // H
  double atcd_dropout = 0.1;    // p
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::string wavelet = "haar";
  bool use_atcd = true;
  bool use_hftd = true;
  bool share_temporal_mamba = true;
  bool affine_norm = false;
  std::size_t scan_chunk = 0;  // 0: sequential scan
  double norm_eps = 1e-5;
  std::uint64_t seed = 2024;

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  std::map<std::string, std::string> to_entries() const;
  /// Starts from defaults and applies `entries`; unknown keys and malformed values are
  /// ConfigErrors naming the key. Does not validate.
  static KarmaConfig from_entries(const std::map<std::string, std::string>& entries);
  static bool is_key(const std::string& key);
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

double parse_double(const std::string& text, const std::string& key);
std::uint64_t parse_unsigned(const std::string& text, const std::string& key);
bool parse_bool(const std::string& text, const std::string& key);

}  // namespace karma::model
