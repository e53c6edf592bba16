#include "karma/model/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <vector>

#include "karma/decomposition/wavelet.hpp"
#include "karma/error.hpp"

namespace karma::model {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw ConfigError("'" + key + "' expects a real number, got '" + text + "'", key);
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("'" + key + "' expects a nonnegative integer, got '" + text + "'", key);
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'", key);
}

namespace {

struct Field {
  const char* key;
  std::function<std::string(const KarmaConfig&)> get;
  std::function<void(KarmaConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(const char* key, T KarmaConfig::*member) {
  return {key, [member](const KarmaConfig& c) { return std::to_string(c.*member); },
          [member, key](KarmaConfig& c, const std::string& v) {
            c.*member = static_cast<T>(parse_unsigned(v, key));
          }};
}

Field real_field(const char* key, double KarmaConfig::*member) {
  return {key, [member](const KarmaConfig& c) { return format_double(c.*member); },
          [member, key](KarmaConfig& c, const std::string& v) { c.*member = parse_double(v, key); }};
}

Field bool_field(const char* key, bool KarmaConfig::*member) {
  return {key, [member](const KarmaConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](KarmaConfig& c, const std::string& v) { c.*member = parse_bool(v, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      size_field("L", &KarmaConfig::lookback),
      size_field("T", &KarmaConfig::horizon),
      size_field("D", &KarmaConfig::channels),
      size_field("E_s", &KarmaConfig::e_s),
      size_field("E_t", &KarmaConfig::e_t),
      size_field("N_blocks", &KarmaConfig::n_blocks),
      size_field("atcd_inner", &KarmaConfig::atcd_inner),
      size_field("atcd_heads", &KarmaConfig::atcd_heads),
      real_field("atcd_dropout", &KarmaConfig::atcd_dropout),
      size_field("d_state", &KarmaConfig::d_state),
      size_field("d_conv", &KarmaConfig::d_conv),
      size_field("expand", &KarmaConfig::expand),
      {"wavelet", [](const KarmaConfig& c) { return c.wavelet; },
       [](KarmaConfig& c, const std::string& v) { c.wavelet = v; }},
      bool_field("use_atcd", &KarmaConfig::use_atcd),
      bool_field("use_hftd", &KarmaConfig::use_hftd),
      bool_field("share_temporal_mamba", &KarmaConfig::share_temporal_mamba),
      bool_field("affine_norm", &KarmaConfig::affine_norm),
      size_field("scan_chunk", &KarmaConfig::scan_chunk),
      real_field("norm_eps", &KarmaConfig::norm_eps),
      size_field("seed", &KarmaConfig::seed),
  };
  return all;
}

}  // namespace

void KarmaConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string(key) + " must be positive", key);
  };
  positive(lookback, "L");
  positive(horizon, "T");
  positive(channels, "D");
  positive(e_s, "E_s");
  positive(e_t, "E_t");
  positive(atcd_inner, "atcd_inner");
  positive(atcd_heads, "atcd_heads");
  positive(d_state, "d_state");
  positive(d_conv, "d_conv");
  positive(expand, "expand");
  if (lookback < 2) throw ConfigError("L must be at least 2 for instance normalization", "L");
  if (e_s % 2 != 0) {
    throw ConfigError("E_s must be even for the wavelet split, got " + std::to_string(e_s), "E_s");
  }
  if (atcd_inner % atcd_heads != 0) {
    throw ConfigError("atcd_inner (" + std::to_string(atcd_inner) +
                          ") must be divisible by atcd_heads (" + std::to_string(atcd_heads) + ")",
                      "atcd_heads");
  }
  if (!(atcd_dropout >= 0.0 && atcd_dropout < 1.0)) {
    throw ConfigError("atcd_dropout must lie in [0, 1)", "atcd_dropout");
  }
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive", "norm_eps");
  decomp::WaveletFilter::by_name(wavelet);
}

std::map<std::string, std::string> KarmaConfig::to_entries() const {
  std::map<std::string, std::string> out;
  for (const Field& f : fields()) out[f.key] = f.get(*this);
  return out;
}

KarmaConfig KarmaConfig::from_entries(const std::map<std::string, std::string>& entries) {
  KarmaConfig c;
  for (const auto& [key, value] : entries) {
    bool found = false;
    for (const Field& f : fields()) {
      if (key == f.key) {
        f.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown model key '" + key + "'", key);
  }
  return c;
}

bool KarmaConfig::is_key(const std::string& key) {
  for (const Field& f : fields())
    if (key == f.key) return true;
  return false;
}

}  // namespace karma::model
