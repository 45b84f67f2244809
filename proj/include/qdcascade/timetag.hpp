#pragma once

// Time-tag streams, their file formats, and start-stop cross-correlation.
//
// Binary format (.qdtt): 8-byte magic "QDTT0001", u64 little-endian record
// count, then per record one u8 channel and one u64 little-endian timestamp
// in ps. CSV format: header "channel,t_ps", one record per line.
//
// Histogram bins are closed toward tau = 0: (k b, (k+1) b] for tau > 0 and
// [-(k+1) b, -k b) for tau < 0. Each bin then holds exactly b integer lags and
// swapping start and stop mirrors the histogram bin for bin. Lags of exactly 0
// are counted separately.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"

namespace qdcascade {

struct TimeTag {
  std::uint8_t channel;
  std::uint64_t t_ps;
  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

struct TimeTagStream {
  std::vector<TimeTag> events;
  std::uint64_t duration_ps = 0;

  std::size_t count(std::uint8_t channel) const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(),
                                                  [channel](const TimeTag& e) { return e.channel == channel; }));
  }

  std::vector<std::uint64_t> times(std::uint8_t channel) const {
    std::vector<std::uint64_t> out;
    for (const auto& e : events)
      if (e.channel == channel) out.push_back(e.t_ps);
    return out;
  }

  /// Throws DataError unless timestamps are nondecreasing and channels are 1 or 2.
  void validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].channel != 1 && events[i].channel != 2) {
        throw DataError("record " + std::to_string(i) + ": channel must be 1 or 2");
      }
      if (i > 0 && events[i].t_ps < events[i - 1].t_ps) {
        throw DataError("record " + std::to_string(i) + ": timestamp decreases");
      }
    }
  }
};

enum class TimeTagFormat { binary, csv };

inline constexpr char kTimeTagMagic[8] = {'Q', 'D', 'T', 'T', '0', '0', '0', '1'};

/// CSV for paths ending in ".csv", binary otherwise.
inline TimeTagFormat format_for_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == "csv") return TimeTagFormat::csv;
  }
  return TimeTagFormat::binary;
}

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t get_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

// Empty input yields an empty stream; otherwise the span of the timestamps.
inline void finish_parsed(TimeTagStream& s) {
  s.validate();
  s.duration_ps = s.events.empty() ? 0 : s.events.back().t_ps - s.events.front().t_ps + 1;
}

}  // namespace detail

inline void write_timetags_binary(std::ostream& os, const TimeTagStream& s) {
  os.write(kTimeTagMagic, 8);
  detail::put_u64_le(os, s.events.size());
  std::vector<char> buf;
  buf.reserve(9 * 4096);
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    buf.push_back(static_cast<char>(s.events[i].channel));
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<char>((s.events[i].t_ps >> (8 * k)) & 0xff));
    if (buf.size() >= 9 * 4096) {
      os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_timetags_csv(std::ostream& os, const TimeTagStream& s) {
  os << "channel,t_ps\n";
  for (const auto& e : s.events) os << static_cast<unsigned>(e.channel) << ',' << e.t_ps << '\n';
}

inline void write_timetags(const std::string& path, const TimeTagStream& s, TimeTagFormat f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  if (f == TimeTagFormat::binary) {
    write_timetags_binary(os, s);
  } else {
    write_timetags_csv(os, s);
  }
  if (!os) throw DataError("write failed: " + path);
}

inline TimeTagStream parse_timetags_binary(std::istream& is) {
  TimeTagStream s;
  std::vector<char> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (data.empty()) return s;
  if (data.size() < 16) throw ParseError("truncated header", data.size());
  if (std::memcmp(data.data(), kTimeTagMagic, 8) != 0) throw ParseError("bad magic", 0);
  const auto* u = reinterpret_cast<const unsigned char*>(data.data());
  const std::uint64_t n = detail::get_u64_le(u + 8);
  const std::size_t body = data.size() - 16;
  if (body % 9 != 0) {
    throw ParseError("truncated record", 16 + body / 9 * 9);
  }
  if (body / 9 != n) {
    throw ParseError("header declares " + std::to_string(n) + " records, file holds " +
                         std::to_string(body / 9),
                     8);
  }
  s.events.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = u + 16 + 9 * i;
    if (r[0] != 1 && r[0] != 2) throw ParseError("invalid channel " + std::to_string(r[0]), 16 + 9 * i);
    s.events[i] = {r[0], detail::get_u64_le(r + 1)};
  }
  detail::finish_parsed(s);
  return s;
}

/// Offsets reported for CSV errors are line numbers (1-based).
inline TimeTagStream parse_timetags_csv(std::istream& is) {
  TimeTagStream s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "channel,t_ps") throw ParseError("expected header channel,t_ps", lineno);
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected two fields", lineno);
    const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
    unsigned long ch = 0;
    std::uint64_t t = 0;
    auto ra = std::from_chars(a.data(), a.data() + a.size(), ch);
    auto rb = std::from_chars(b.data(), b.data() + b.size(), t);
    if (ra.ec != std::errc() || ra.ptr != a.data() + a.size() || rb.ec != std::errc() ||
        rb.ptr != b.data() + b.size()) {
      throw ParseError("malformed record", lineno);
    }
    if (ch != 1 && ch != 2) throw ParseError("invalid channel " + a, lineno);
    if (!s.events.empty() && t < s.events.back().t_ps) {
      throw DataError("line " + std::to_string(lineno) + ": timestamp decreases");
    }
    s.events.push_back({static_cast<std::uint8_t>(ch), t});
  }
  detail::finish_parsed(s);
  return s;
}

inline TimeTagStream parse_timetags(const std::string& path, TimeTagFormat f) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return f == TimeTagFormat::binary ? parse_timetags_binary(is) : parse_timetags_csv(is);
}

inline TimeTagStream parse_timetags(const std::string& path) { return parse_timetags(path, format_for_path(path)); }

struct Histogram {
  DelayGrid grid;
  std::vector<std::uint64_t> counts;
  std::vector<double> g2;
  std::vector<double> sigma;
  std::uint64_t acquisition_ps = 0;
  std::uint64_t n_start = 0;
  std::uint64_t n_stop = 0;
  std::uint64_t zero_delay = 0;  ///< pairs with t_stop == t_start, not binned
};

/// Fills g2 and sigma from counts: g2 = counts / (N1 N2 b / T); a zero-count
/// bin takes sigma from one count.
inline void normalize_histogram(Histogram& h) {
  const double expected = static_cast<double>(h.n_start) * static_cast<double>(h.n_stop) * h.grid.bin() /
                          static_cast<double>(h.acquisition_ps);
  if (!(expected > 0.0)) throw DataError("histogram normalization is zero");
  h.g2.resize(h.counts.size());
  h.sigma.resize(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const auto c = static_cast<double>(h.counts[k]);
    h.g2[k] = c / expected;
    h.sigma[k] = std::sqrt(std::max(c, 1.0)) / expected;
  }
}

/// Start-stop histogram of t_stop - t_start within +-window.
inline Histogram correlate(const TimeTagStream& s, std::uint8_t ch_start, std::uint8_t ch_stop,
                           std::uint64_t bin_ps, std::uint64_t window_ps) {
  if (bin_ps == 0) throw InvalidParameter("bin must be > 0");
  if (window_ps == 0 || window_ps % bin_ps != 0) {
    throw InvalidParameter("window must be a positive multiple of the bin width");
  }
  if (s.duration_ps == 0) throw DataError("stream has zero duration");
  const auto a = s.times(ch_start);
  const auto b = s.times(ch_stop);
  if (a.empty()) throw DataError("channel " + std::to_string(ch_start) + " has no events");
  if (b.empty()) throw DataError("channel " + std::to_string(ch_stop) + " has no events");

  const double w = static_cast<double>(window_ps), bw = static_cast<double>(bin_ps);
  Histogram h{DelayGrid(-w, w, bw), {}, {}, {}, s.duration_ps, a.size(), b.size(), 0};
  const std::uint64_t half = window_ps / bin_ps;
  h.counts.assign(2 * half, 0);

  std::size_t lo = 0;
  for (const std::uint64_t t : a) {
    const std::uint64_t from = t >= window_ps ? t - window_ps : 0;
    while (lo < b.size() && b[lo] < from) ++lo;
    for (std::size_t j = lo; j < b.size() && b[j] <= t + window_ps; ++j) {
      if (b[j] > t) {
        h.counts[half + (b[j] - t - 1) / bin_ps] += 1;
      } else if (b[j] < t) {
        h.counts[half - 1 - (t - b[j] - 1) / bin_ps] += 1;
      } else {
        ++h.zero_delay;
      }
    }
  }
  normalize_histogram(h);
  return h;
}

/// Rescales g2 and sigma so the mean g2 over |tau| in [lo, hi] is 1.
inline void renormalize_plateau(Histogram& h, double lo_ps = 40000.0, double hi_ps = 50000.0) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < h.g2.size(); ++k) {
    const double a = std::abs(h.grid.center(k));
    if (a >= lo_ps && a <= hi_ps) {
      sum += h.g2[k];
      ++n;
    }
  }
  if (n == 0) throw InvalidParameter("histogram window does not reach the plateau region");
  const double mean = sum / static_cast<double>(n);
  if (!(mean > 0.0)) throw DataError("plateau region holds no coincidences");
  for (std::size_t k = 0; k < h.g2.size(); ++k) {
    h.g2[k] /= mean;
    h.sigma[k] /= mean;
  }
}

inline void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "tau_ps,counts,g2,sigma\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    os << format_double(h.grid.center(k)) << ',' << h.counts[k] << ',' << format_double(h.g2[k]) << ','
       << format_double(h.sigma[k]) << '\n';
  }
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_histogram_csv(os, h);
}

/// Reads `tau_ps,counts,g2,sigma`. Acquisition totals are not stored in the
/// file and come back as zero.
inline Histogram read_histogram_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> tau, g2, sigma;
  std::vector<std::uint64_t> counts;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "tau_ps,counts,g2,sigma") throw ParseError("expected header tau_ps,counts,g2,sigma", 1);
      continue;
    }
    std::array<std::string, 4> f;
    std::stringstream ss(line);
    for (auto& x : f) {
      if (!std::getline(ss, x, ',')) throw ParseError("expected four fields", lineno);
    }
    std::string extra;
    if (std::getline(ss, extra, ',')) throw ParseError("expected four fields", lineno);
    try {
      std::size_t pos = 0;
      tau.push_back(std::stod(f[0], &pos));
      if (pos != f[0].size()) throw std::invalid_argument("tau");
      counts.push_back(std::stoull(f[1], &pos));
      if (pos != f[1].size()) throw std::invalid_argument("counts");
      g2.push_back(std::stod(f[2], &pos));
      if (pos != f[2].size()) throw std::invalid_argument("g2");
      sigma.push_back(std::stod(f[3], &pos));
      if (pos != f[3].size()) throw std::invalid_argument("sigma");
    } catch (const std::logic_error&) {
      throw ParseError("malformed number", lineno);
    }
    if (!(sigma.back() > 0.0)) throw DataError("line " + std::to_string(lineno) + ": sigma must be > 0");
  }
  if (tau.size() < 2) throw DataError("histogram needs at least two bins");
  const double b = tau[1] - tau[0];
  for (std::size_t k = 1; k < tau.size(); ++k) {
    if (std::abs(tau[k] - tau[k - 1] - b) > 1e-6 * b) throw DataError("histogram bins are not uniform");
  }
  const double lo = tau.front() - 0.5 * b;
  const double hi = tau.back() + 0.5 * b;
  Histogram h{DelayGrid(lo, hi, b), std::move(counts), std::move(g2), std::move(sigma), 0, 0, 0, 0};
  return h;
}

inline Histogram read_histogram_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_histogram_csv(is);
}

}  // namespace qdcascade
