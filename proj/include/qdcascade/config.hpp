#pragma once

// Model configuration files: flat `key = value` lines, `#` starts a comment.
// Keys not given keep the defaults of CascadeParams / FrameOffsets.

#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <string>

#include "qdcascade/cascade.hpp"
#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"

namespace qdcascade {

struct ModelConfig {
  CascadeParams params;
  FrameOffsets offsets;
  double irf_fwhm_ps = 42.0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& v, const std::string& key, std::size_t line) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError("line " + std::to_string(line) + ": " + key + " expects a number, got '" + v + "'");
  }
  return x;
}

}  // namespace detail

inline ModelConfig parse_config(std::istream& is) {
  ModelConfig c;
  std::set<std::string> seen;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    auto real = [&] { return detail::parse_real(value, key, lineno); };
    if (key == "delta_uev") {
      c.params.delta_uev = real();
    } else if (key == "tau_h_ps") {
      c.params.tau_h_ps = real();
    } else if (key == "tau_v_ps") {
      c.params.tau_v_ps = real();
    } else if (key == "g_rate_per_ps") {
      c.params.g_rate = real();
    } else if (key == "n_max") {
      int n = 0;
      const auto r = std::from_chars(value.data(), value.data() + value.size(), n);
      if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
        throw ConfigError("line " + std::to_string(lineno) + ": n_max expects an integer");
      }
      c.params.n_max = n;
    } else if (key == "dtheta_pi") {
      c.offsets.dtheta = real() * constants::kPi;
    } else if (key == "dphi_pi") {
      c.offsets.dphi = real() * constants::kPi;
    } else if (key == "irf_fwhm_ps") {
      c.irf_fwhm_ps = real();
    } else if (key == "herald_conjugate") {
      if (value == "true") {
        c.offsets.herald_conjugate = true;
      } else if (value == "false") {
        c.offsets.herald_conjugate = false;
      } else {
        throw ConfigError("line " + std::to_string(lineno) + ": herald_conjugate expects true or false");
      }
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  try {
    c.params.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  if (!(c.irf_fwhm_ps >= 0.0)) throw ConfigError("irf_fwhm_ps must be >= 0");
  return c;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return parse_config(is);
}

inline void write_config(std::ostream& os, const ModelConfig& c) {
  os << "delta_uev = " << format_double(c.params.delta_uev) << '\n'
     << "tau_h_ps = " << format_double(c.params.tau_h_ps) << '\n'
     << "tau_v_ps = " << format_double(c.params.tau_v_ps) << '\n'
     << "g_rate_per_ps = " << format_double(c.params.g_rate) << '\n'
     << "n_max = " << c.params.n_max << '\n'
     << "dtheta_pi = " << format_double(c.offsets.dtheta / constants::kPi) << '\n'
     << "dphi_pi = " << format_double(c.offsets.dphi / constants::kPi) << '\n'
     << "irf_fwhm_ps = " << format_double(c.irf_fwhm_ps) << '\n'
     << "herald_conjugate = " << (c.offsets.herald_conjugate ? "true" : "false") << '\n';
}

}  // namespace qdcascade
