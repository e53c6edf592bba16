#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "karma/error.hpp"
#include "karma/tensor.hpp"

namespace karma::data {

/// Rectangular multichannel series; values are row-major [rows x channels].
struct SeriesTable {
  std::vector<std::string> timestamps;
  std::vector<std::string> channel_names;
  std::vector<double> values;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t channels() const { return channel_names.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * channels() + col]; }

  /// Rows [begin, end) as a new table.
  SeriesTable slice(std::size_t begin, std::size_t end) const;
};

/// CSV problem at a 1-based (line, column); the header is line 1 and the date column is
/// column 1. Line and column are 0 when the problem is not tied to a cell.
class CsvError : public DataError {
 public:
  CsvError(const std::string& msg, std::size_t line, std::size_t column);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Parses "date,<channel>..." text. `source` is used in messages.
SeriesTable parse_csv(std::string_view text, const std::string& source = "<memory>");
SeriesTable load_csv(const std::filesystem::path& path);

/// Header plus one row per timestamp; values use the shortest decimal form that reads back
/// to the same double, so write -> load is bit exact.
std::string format_csv(const SeriesTable& table);
void write_csv(const std::filesystem::path& path, const SeriesTable& table);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  /// 0.6/0.2/0.2 for 7-channel tables, 0.7/0.1/0.2 otherwise.
  static SplitRatios defaults_for(std::size_t channels);
  /// Positive and summing to 1 (within 1e-9); ConfigError with key "split" otherwise.
  void validate() const;
};

/// Chronological segments. val and test start `lookback` rows before their border; the
/// first label of their first window is the first row past the border.
struct Splits {
  SeriesTable train;
  SeriesTable val;
  SeriesTable test;
  std::size_t train_end = 0;  // first row after train
  std::size_t val_end = 0;    // first row after val
};

/// DataError when any segment (with overlap) is shorter than lookback + horizon.
Splits chrono_split(const SeriesTable& table, const SplitRatios& ratios, std::size_t lookback,
                    std::size_t horizon);

struct ScalerStats {
  std::vector<double> mean;
  std::vector<double> std;
  double eps = 1e-5;
  std::vector<std::string> warnings;  // one per channel whose std was clamped
};

/// Per-channel mean and population std of `train`, std clamped below at eps.
ScalerStats fit_scaler(const SeriesTable& train, double eps = 1e-5);
SeriesTable apply_scaler(const SeriesTable& table, const ScalerStats& stats);
SeriesTable invert_scaler(const SeriesTable& table, const ScalerStats& stats);

/// x = rows [origin, origin + L), y = rows [origin + L, origin + L + T).
struct WindowSample {
  std::size_t origin = 0;
};

/// Origins 0, stride, 2 stride, ... while a full window fits. DataError if none fits.
std::vector<WindowSample> make_windows(const SeriesTable& table, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride = 1);

/// Stacks windows into x [B x L x D] and y [B x T x D].
std::pair<Tensor, Tensor> gather_batch(const SeriesTable& table, std::span<const WindowSample> windows,
                                       std::size_t lookback, std::size_t horizon);

struct Sinusoid {
  double amplitude = 1.0;
  double period = 24.0;
  double phase = 0.0;
};

/// channel d: sum_k amplitude_k (1 + amplitude_step d) sin(2 pi t / period_k + phase_k +
/// phase_step d) + slope t + intercept + noise, t = 0..length-1. Hourly timestamps.
struct SyntheticSpec {
  std::size_t length = 4000;
  std::size_t channels = 3;
  std::vector<Sinusoid> components = {{1.0, 24.0, 0.0}, {0.5, 96.0, 0.0}};
  double phase_step = 0.7;
  double amplitude_step = 0.25;
  double slope = 0.001;
  double intercept = 0.0;
  double noise_std = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

SeriesTable generate_synthetic(const SyntheticSpec& spec);

/// "YYYY-MM-DD HH:00:00", counting hours from 2016-07-01 00:00:00.
std::string hourly_timestamp(std::size_t hour);

}  // namespace karma::data
