#include "karma/data/series.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "karma/rng.hpp"

namespace karma::data {

namespace {

std::string position(const std::string& source, std::size_t line, std::size_t col) {
  return source + ": (" + std::to_string(line) + "," + std::to_string(col) + ")";
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string format_value(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

CsvError::CsvError(const std::string& msg, std::size_t line, std::size_t column)
    : DataError(msg), line_(line), column_(column) {}

SeriesTable SeriesTable::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) {
    throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") out of range for " + std::to_string(rows()) + " rows");
  }
  SeriesTable t;
  t.channel_names = channel_names;
  t.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  t.values.assign(values.begin() + begin * channels(), values.begin() + end * channels());
  return t;
}

SeriesTable parse_csv(std::string_view text, const std::string& source) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  SeriesTable table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (!header_seen) throw CsvError(source + ": empty header line", line_no, 0);
      continue;
    }
    auto fields = split_fields(line);
    if (!header_seen) {
      if (fields.size() < 2) {
        throw CsvError(source + ": header needs a date column and at least one value column",
                       line_no, 0);
      }
      for (std::size_t c = 1; c < fields.size(); ++c) {
        table.channel_names.emplace_back(trim(fields[c]));
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != table.channels() + 1) {
      throw CsvError(source + ": ragged row at line " + std::to_string(line_no) + ": expected " +
                         std::to_string(table.channels() + 1) + " fields, got " +
                         std::to_string(fields.size()),
                     line_no, 0);
    }
    table.timestamps.emplace_back(trim(fields[0]));
    for (std::size_t c = 1; c < fields.size(); ++c) {
      std::string_view cell = trim(fields[c]);
      if (cell.empty()) {
        throw CsvError("missing value at " + position(source, line_no, c + 1), line_no, c + 1);
      }
      if (cell.front() == '+') cell.remove_prefix(1);
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw CsvError("non-numeric cell '" + std::string(trim(fields[c])) + "' at " +
                           position(source, line_no, c + 1),
                       line_no, c + 1);
      }
      table.values.push_back(v);
    }
  }
  if (!header_seen) throw CsvError(source + ": empty file", 0, 0);
  if (table.rows() == 0) throw CsvError(source + ": no data rows after the header", 0, 0);
  return table;
}

SeriesTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

std::string format_csv(const SeriesTable& table) {
  std::string out = "date";
  for (const auto& name : table.channel_names) out += "," + name;
  out += "\n";
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out += table.timestamps[r];
    for (std::size_t c = 0; c < table.channels(); ++c) out += "," + format_value(table.at(r, c));
    out += "\n";
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const SeriesTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << format_csv(table);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

SplitRatios SplitRatios::defaults_for(std::size_t channels) {
  if (channels == 7) return {0.6, 0.2, 0.2};
  return {0.7, 0.1, 0.2};
}

void SplitRatios::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) {
    throw ConfigError("split ratios must be positive", "split");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1, got " + std::to_string(train + val + test), "split");
  }
}

Splits chrono_split(const SeriesTable& table, const SplitRatios& ratios, std::size_t lookback,
                    std::size_t horizon) {
  ratios.validate();
  const std::size_t n = table.rows();
  const double rows = static_cast<double>(n);
  Splits s;
  s.train_end = static_cast<std::size_t>(std::floor(rows * ratios.train + 1e-9));
  s.val_end = static_cast<std::size_t>(std::floor(rows * (ratios.train + ratios.val) + 1e-9));
  const std::size_t need = lookback + horizon;
  auto check = [&](const char* name, std::size_t begin, std::size_t end) {
    if (end < begin + need) {
      throw DataError(std::string(name) + " split has " + std::to_string(end - begin) +
                      " rows including lookback overlap; need at least L+T = " + std::to_string(need) +
                      " (table has " + std::to_string(n) + " rows)");
    }
  };
  if (s.train_end < lookback || s.val_end < lookback) {
    throw DataError("table of " + std::to_string(n) + " rows is too short for lookback " +
                    std::to_string(lookback));
  }
  check("train", 0, s.train_end);
  check("val", s.train_end - lookback, s.val_end);
  check("test", s.val_end - lookback, n);
  s.train = table.slice(0, s.train_end);
  s.val = table.slice(s.train_end - lookback, s.val_end);
  s.test = table.slice(s.val_end - lookback, n);
  return s;
}

ScalerStats fit_scaler(const SeriesTable& train, double eps) {
  if (train.rows() == 0) throw DataError("cannot fit a scaler on an empty table");
  const std::size_t d = train.channels();
  ScalerStats s;
  s.eps = eps;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  const double n = static_cast<double>(train.rows());
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) m += train.at(r, c);
    m /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) var += (train.at(r, c) - m) * (train.at(r, c) - m);
    double sd = std::sqrt(var / n);
    if (sd < eps) {
      s.warnings.push_back("channel '" + train.channel_names[c] + "' is constant on the training split; std clamped to " +
                           format_value(eps));
      sd = eps;
    }
    s.mean[c] = m;
    s.std[c] = sd;
  }
  return s;
}

SeriesTable apply_scaler(const SeriesTable& table, const ScalerStats& stats) {
  if (stats.mean.size() != table.channels()) throw DataError("scaler channel count mismatch");
  SeriesTable out = table;
  const std::size_t d = table.channels();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (out.values[i] - stats.mean[i % d]) / stats.std[i % d];
  }
  return out;
}

SeriesTable invert_scaler(const SeriesTable& table, const ScalerStats& stats) {
  if (stats.mean.size() != table.channels()) throw DataError("scaler channel count mismatch");
  SeriesTable out = table;
  const std::size_t d = table.channels();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = out.values[i] * stats.std[i % d] + stats.mean[i % d];
  }
  return out;
}

std::vector<WindowSample> make_windows(const SeriesTable& table, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride) {
  if (stride == 0) throw ConfigError("window stride must be positive", "stride");
  const std::size_t need = lookback + horizon;
  if (table.rows() < need) {
    throw DataError("table has " + std::to_string(table.rows()) + " rows; a window needs L+T = " +
                    std::to_string(need));
  }
  std::vector<WindowSample> out;
  for (std::size_t o = 0; o + need <= table.rows(); o += stride) out.push_back({o});
  return out;
}

std::pair<Tensor, Tensor> gather_batch(const SeriesTable& table, std::span<const WindowSample> windows,
                                       std::size_t lookback, std::size_t horizon) {
  const std::size_t d = table.channels();
  const std::size_t b = windows.size();
  std::vector<double> x(b * lookback * d), y(b * horizon * d);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t o = windows[i].origin;
    if (o + lookback + horizon > table.rows()) throw DataError("window origin " + std::to_string(o) + " out of range");
    std::copy_n(table.values.begin() + o * d, lookback * d, x.begin() + i * lookback * d);
    std::copy_n(table.values.begin() + (o + lookback) * d, horizon * d, y.begin() + i * horizon * d);
  }
  return {Tensor::from_data({b, lookback, d}, std::move(x)), Tensor::from_data({b, horizon, d}, std::move(y))};
}

void SyntheticSpec::validate() const {
  if (length == 0 || channels == 0) throw ConfigError("synthetic length and channels must be positive", "synth_length");
  for (const auto& c : components) {
    if (!(c.period >= 2.0)) throw ConfigError("synthetic periods must be at least 2", "synth_periods");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic noise std must be nonnegative", "synth_noise");
}

SeriesTable generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SeriesTable t;
  for (std::size_t c = 0; c < spec.channels; ++c) t.channel_names.push_back("ch" + std::to_string(c));
  t.timestamps.reserve(spec.length);
  t.values.resize(spec.length * spec.channels);
  Rng noise(spec.seed);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t r = 0; r < spec.length; ++r) {
    t.timestamps.push_back(hourly_timestamp(r));
    const double tt = static_cast<double>(r);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const double dc = static_cast<double>(c);
      double v = spec.slope * tt + spec.intercept;
      for (const auto& s : spec.components) {
        v += s.amplitude * (1.0 + spec.amplitude_step * dc) *
             std::sin(two_pi * tt / s.period + s.phase + spec.phase_step * dc);
      }
      if (spec.noise_std > 0.0) v += spec.noise_std * noise.normal();
      t.values[r * spec.channels + c] = v;
    }
  }
  return t;
}

std::string hourly_timestamp(std::size_t hour) {
  // Days since 1970-01-01 to civil date (proleptic Gregorian).
  const long long start_days = 16983;  // 2016-07-01
  long long z = start_days + static_cast<long long>(hour / 24) + 719468;
  const long long era = z / 146097;
  const long long doe = z - era * 146097;
  const long long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  long long y = yoe + era * 400;
  const long long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const long long mp = (5 * doy + 2) / 153;
  const long long d = doy - (153 * mp + 2) / 5 + 1;
  const long long m = mp < 10 ? mp + 3 : mp - 9;
  if (m <= 2) ++y;
  auto pad = [](long long v, std::size_t width) {
    std::string t = std::to_string(v);
    return std::string(t.size() < width ? width - t.size() : 0, '0') + t;
  };
  return pad(y, 4) + "-" + pad(m, 2) + "-" + pad(d, 2) + " " + pad(static_cast<long long>(hour % 24), 2) + ":00:00";
}

}  // namespace karma::data
