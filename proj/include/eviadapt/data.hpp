#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eviadapt/errors.hpp"
#include "eviadapt/log.hpp"
#include "eviadapt/matrix.hpp"
#include "eviadapt/window.hpp"

namespace eviadapt {

/// Raw per-cycle history of one unit.
struct UnitSeries {
  int unit = 0;
  std::vector<int> cycles;
  Matrix sensors;                 // T x M, raw (un-normalized) readings
  std::vector<double> rul;        // per cycle; empty when unlabeled
  std::optional<int> total_life;  // cycle at which the unit fails, when known

  std::size_t length() const { return cycles.size(); }
  bool labeled() const { return !rul.empty(); }
};

struct ChannelRange {
  double min = 0.0;
  double max = 1.0;
};

/// Per-channel min-max scaling. Constant channels map to 0.
struct Normalization {
  std::vector<ChannelRange> channels;

  double apply(std::size_t channel, double v) const {
    const auto& r = channels[channel];
    const double span = r.max - r.min;
    return span > 0.0 ? (v - r.min) / span : 0.0;
  }

  static Normalization fit(std::span<const UnitSeries> units) {
    Normalization n;
    if (units.empty()) return n;
    const std::size_t m = units.front().sensors.cols();
    n.channels.assign(m, {std::numeric_limits<double>::infinity(),
                          -std::numeric_limits<double>::infinity()});
    for (const auto& u : units)
      for (std::size_t r = 0; r < u.sensors.rows(); ++r)
        for (std::size_t c = 0; c < m; ++c) {
          n.channels[c].min = std::min(n.channels[c].min, u.sensors(r, c));
          n.channels[c].max = std::max(n.channels[c].max, u.sensors(r, c));
        }
    return n;
  }

  friend bool operator==(const Normalization& a, const Normalization& b) {
    if (a.channels.size() != b.channels.size()) return false;
    for (std::size_t i = 0; i < a.channels.size(); ++i)
      if (a.channels[i].min != b.channels[i].min || a.channels[i].max != b.channels[i].max)
        return false;
    return true;
  }
};

struct Completeness {
  bool truncated = false;
  double kept_fraction = 1.0;
};

/// C-MAPSS test splits are scored on each unit's last window, everything else on all windows.
enum class EvalProtocol { AllWindows, LastWindow };

/// A window is addressed by its unit and the row its last time step sits on.
struct WindowRef {
  std::size_t unit_index = 0;
  std::size_t end_row = 0;
};

/// Named collection of units with their window index and normalization.
/// Units hold raw readings; windows are normalized on extraction.
struct DomainDataset {
  std::string name;
  std::vector<UnitSeries> units;
  Normalization normalization;
  Completeness completeness;
  std::size_t window_length = 30;
  std::size_t stride = 1;
  EvalProtocol protocol = EvalProtocol::AllWindows;
  std::vector<WindowRef> index;

  std::size_t size() const { return index.size(); }
  std::size_t channels() const { return units.empty() ? 0 : units.front().sensors.cols(); }
  bool labeled() const {
    return !units.empty() &&
           std::all_of(units.begin(), units.end(), [](const UnitSeries& u) { return u.labeled(); });
  }

  /// Rebuilds the window index; units shorter than the window are skipped with a warning.
  void reindex() {
    index.clear();
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::size_t t = units[u].length();
      if (t < window_length) {
        warn("unit " + std::to_string(units[u].unit) + " has " + std::to_string(t) +
             " cycles, shorter than window length " + std::to_string(window_length) + "; skipped");
        continue;
      }
      for (std::size_t end = window_length - 1; end < t; end += stride) index.push_back({u, end});
    }
  }

  TimeWindow window(std::size_t i) const {
    const WindowRef& ref = index.at(i);
    const UnitSeries& u = units[ref.unit_index];
    const std::size_t m = channels();
    TimeWindow w{Matrix(m, window_length), std::nullopt, u.unit, u.cycles[ref.end_row]};
    const std::size_t first = ref.end_row + 1 - window_length;
    for (std::size_t t = 0; t < window_length; ++t)
      for (std::size_t c = 0; c < m; ++c)
        w.sensors(c, t) = normalization.apply(c, u.sensors(first + t, c));
    if (u.labeled()) w.rul = u.rul[ref.end_row];
    return w;
  }

  std::vector<TimeWindow> windows(std::span<const std::size_t> ids) const {
    std::vector<TimeWindow> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) out.push_back(window(i));
    return out;
  }

  std::vector<TimeWindow> all_windows() const {
    std::vector<TimeWindow> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(window(i));
    return out;
  }

  /// Encoder layout for the selected windows: L matrices of batch x M.
  std::vector<Matrix> time_major(std::span<const std::size_t> ids) const {
    const std::size_t m = channels();
    std::vector<Matrix> steps(window_length, Matrix(ids.size(), m));
    for (std::size_t b = 0; b < ids.size(); ++b) {
      const WindowRef& ref = index.at(ids[b]);
      const UnitSeries& u = units[ref.unit_index];
      const std::size_t first = ref.end_row + 1 - window_length;
      for (std::size_t t = 0; t < window_length; ++t)
        for (std::size_t c = 0; c < m; ++c) {
          const double v = normalization.apply(c, u.sensors(first + t, c));
          if (!std::isfinite(v)) {
            throw DataError("non-finite sensor value in window of unit " + std::to_string(u.unit) +
                            " ending at cycle " + std::to_string(u.cycles[ref.end_row]));
          }
          steps[t](b, c) = v;
        }
    }
    return steps;
  }

  double label(std::size_t i) const {
    const WindowRef& ref = index.at(i);
    const UnitSeries& u = units[ref.unit_index];
    if (!u.labeled()) throw DataError("dataset '" + name + "' is unlabeled");
    return u.rul[ref.end_row];
  }

  SampleId sample_id(std::size_t i) const {
    const WindowRef& ref = index.at(i);
    return {units[ref.unit_index].unit, units[ref.unit_index].cycles[ref.end_row]};
  }

  /// Window ids whose evaluation the protocol asks for.
  std::vector<std::size_t> evaluation_ids() const {
    std::vector<std::size_t> ids;
    if (protocol == EvalProtocol::AllWindows) {
      ids.resize(size());
      for (std::size_t i = 0; i < size(); ++i) ids[i] = i;
      return ids;
    }
    for (std::size_t i = 0; i < size(); ++i) {
      const bool last_of_unit =
          i + 1 == size() || index[i + 1].unit_index != index[i].unit_index;
      if (last_of_unit) ids.push_back(i);
    }
    return ids;
  }
};

/// Windows of one unit's normalized series, T x M in row order.
/// Count = floor((T - L) / stride) + 1; label = RUL at the window's end cycle.
inline std::vector<TimeWindow> make_windows(const UnitSeries& unit, std::size_t length,
                                            std::size_t stride) {
  if (length < 1 || stride < 1) throw UsageError("window length and stride must be >= 1");
  std::vector<TimeWindow> out;
  const std::size_t t = unit.length();
  if (t < length) {
    warn("unit " + std::to_string(unit.unit) + " has " + std::to_string(t) +
         " cycles, shorter than window length " + std::to_string(length) + "; skipped");
    return out;
  }
  const std::size_t m = unit.sensors.cols();
  for (std::size_t end = length - 1; end < t; end += stride) {
    TimeWindow w{Matrix(m, length), std::nullopt, unit.unit, unit.cycles[end]};
    for (std::size_t k = 0; k < length; ++k)
      for (std::size_t c = 0; c < m; ++c) w.sensors(c, k) = unit.sensors(end + 1 - length + k, c);
    if (unit.labeled()) w.rul = unit.rul[end];
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// C-MAPSS ingestion

struct CmapssOptions {
  double rul_cap = 130.0;
  std::size_t window_length = 30;
  std::size_t stride = 1;
  /// 1-indexed among the 21 sensors.
  std::vector<int> sensors = {2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21};
};

namespace detail {

struct CmapssRow {
  int unit;
  int cycle;
  std::vector<double> values;  // all 24 numeric columns after unit, cycle
};

inline std::vector<CmapssRow> read_cmapss_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<CmapssRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<double> cols;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + tok +
                        "'");
      }
      cols.push_back(v);
    }
    if (cols.empty()) continue;
    if (cols.size() != 26) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 26 columns, got " +
                      std::to_string(cols.size()));
    }
    rows.push_back({static_cast<int>(cols[0]), static_cast<int>(cols[1]),
                    std::vector<double>(cols.begin() + 2, cols.end())});
  }
  return rows;
}

inline std::vector<UnitSeries> group_units(const std::vector<CmapssRow>& rows,
                                           const std::vector<int>& sensors,
                                           const std::string& source) {
  std::map<int, std::vector<const CmapssRow*>> by_unit;
  for (const auto& r : rows) by_unit[r.unit].push_back(&r);
  std::vector<UnitSeries> units;
  for (auto& [id, list] : by_unit) {
    std::stable_sort(list.begin(), list.end(),
                     [](const CmapssRow* a, const CmapssRow* b) { return a->cycle < b->cycle; });
    UnitSeries u;
    u.unit = id;
    u.sensors = Matrix(list.size(), sensors.size());
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (r > 0 && list[r]->cycle == list[r - 1]->cycle) {
        throw DataError(source + ": unit " + std::to_string(id) + " repeats cycle " +
                        std::to_string(list[r]->cycle));
      }
      u.cycles.push_back(list[r]->cycle);
      for (std::size_t c = 0; c < sensors.size(); ++c) {
        // values: 3 operating settings, then sensors 1..21
        u.sensors(r, c) = list[r]->values[2 + static_cast<std::size_t>(sensors[c])];
      }
    }
    units.push_back(std::move(u));
  }
  return units;
}

}  // namespace detail

/// Reads a C-MAPSS train/test/RUL triple. Labels are min(remaining cycles, cap);
/// both splits are normalized with the training split's per-channel range.
inline std::pair<DomainDataset, DomainDataset> load_cmapss(const std::filesystem::path& train_file,
                                                           const std::filesystem::path& test_file,
                                                           const std::filesystem::path& rul_file,
                                                           const CmapssOptions& opt = {},
                                                           std::string name = "cmapss") {
  for (int s : opt.sensors)
    if (s < 1 || s > 21) throw UsageError("C-MAPSS sensor index " + std::to_string(s) + " not in 1..21");
  if (!test_file.empty() && (rul_file.empty() || !std::filesystem::exists(rul_file))) {
    throw DataError("RUL file for test set " + test_file.string() + " is missing");
  }

  DomainDataset train;
  train.name = name + "-train";
  train.units = detail::group_units(detail::read_cmapss_rows(train_file), opt.sensors,
                                    train_file.string());
  for (auto& u : train.units) {
    const int total = u.cycles.back();
    u.total_life = total;
    for (int c : u.cycles) u.rul.push_back(std::min(static_cast<double>(total - c), opt.rul_cap));
  }
  train.normalization = Normalization::fit(train.units);
  train.window_length = opt.window_length;
  train.stride = opt.stride;
  train.reindex();

  DomainDataset test;
  test.name = name + "-test";
  test.window_length = opt.window_length;
  test.stride = opt.stride;
  test.protocol = EvalProtocol::LastWindow;
  test.normalization = train.normalization;
  if (!test_file.empty()) {
    test.units =
        detail::group_units(detail::read_cmapss_rows(test_file), opt.sensors, test_file.string());
    std::ifstream rin(rul_file);
    std::vector<double> final_rul;
    double v = 0.0;
    while (rin >> v) final_rul.push_back(v);
    if (final_rul.size() != test.units.size()) {
      throw DataError(rul_file.string() + ": " + std::to_string(final_rul.size()) +
                      " RUL values for " + std::to_string(test.units.size()) + " test units");
    }
    for (std::size_t k = 0; k < test.units.size(); ++k) {
      auto& u = test.units[k];
      const int last = u.cycles.back();
      u.total_life = last + static_cast<int>(final_rul[k]);
      for (int c : u.cycles)
        u.rul.push_back(std::min(final_rul[k] + static_cast<double>(last - c), opt.rul_cap));
    }
    test.reindex();
  }
  return {std::move(train), std::move(test)};
}

/// Keeps the first floor(keep_fraction * T) cycles of every unit and strips labels.
/// The normalization is refit on the retained cycles unless `refit_normalization` is false.
inline DomainDataset truncate_target(const DomainDataset& ds, double keep_fraction,
                                     bool refit_normalization = true) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw UsageError("keep-fraction " + std::to_string(keep_fraction) + " outside (0, 1]");
  }
  if (ds.completeness.truncated) throw UsageError("dataset '" + ds.name + "' is already truncated");
  DomainDataset out;
  out.name = ds.name;
  out.window_length = ds.window_length;
  out.stride = ds.stride;
  out.protocol = ds.protocol;
  out.completeness = {true, keep_fraction};
  for (const auto& u : ds.units) {
    const auto keep = static_cast<std::size_t>(
        std::floor(keep_fraction * static_cast<double>(u.length()) + 1e-9));
    UnitSeries t;
    t.unit = u.unit;
    t.total_life = std::nullopt;
    t.cycles.assign(u.cycles.begin(), u.cycles.begin() + static_cast<std::ptrdiff_t>(keep));
    t.sensors = Matrix(keep, u.sensors.cols());
    std::copy_n(u.sensors.data().begin(), keep * u.sensors.cols(), t.sensors.data().begin());
    out.units.push_back(std::move(t));
  }
  out.normalization = refit_normalization ? Normalization::fit(out.units) : ds.normalization;
  out.reindex();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic two-domain generator

/// Each sensor follows s_m(t) = b_m + offset + c_m (t/T)^exponent + noise.
/// Baselines b_m and gains c_m come from `plant_seed` so that domains built on the
/// same plant share them; unit lives and noise come from the per-call seed.
struct SyntheticConfig {
  std::string name = "synthetic";
  int units = 20;
  int sensors = 6;
  int life_min = 80;
  int life_max = 140;
  double exponent = 1.0;
  double offset = 0.0;
  double noise = 0.02;
  std::uint64_t plant_seed = 0;
  double rul_cap = 130.0;
  std::size_t window_length = 30;
  std::size_t stride = 1;
};

inline DomainDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.life_min <= 0 || cfg.life_max <= 0) throw UsageError("life length must be positive");
  if (cfg.life_max < cfg.life_min) throw UsageError("life_max < life_min");
  if (cfg.units < 1 || cfg.sensors < 1) throw UsageError("units and sensors must be >= 1");
  if (!(cfg.noise >= 0.0)) throw UsageError("noise must be >= 0");

  std::mt19937_64 plant(cfg.plant_seed);
  std::uniform_real_distribution<double> base_dist(-1.0, 1.0);
  std::uniform_real_distribution<double> gain_dist(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> base(static_cast<std::size_t>(cfg.sensors));
  std::vector<double> gain(static_cast<std::size_t>(cfg.sensors));
  for (int m = 0; m < cfg.sensors; ++m) {
    base[m] = base_dist(plant);
    gain[m] = (sign(plant) ? 1.0 : -1.0) * gain_dist(plant);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> life_dist(cfg.life_min, cfg.life_max);
  std::normal_distribution<double> noise(0.0, 1.0);

  DomainDataset ds;
  ds.name = cfg.name;
  ds.window_length = cfg.window_length;
  ds.stride = cfg.stride;
  for (int k = 0; k < cfg.units; ++k) {
    const int life = life_dist(rng);
    UnitSeries u;
    u.unit = k + 1;
    u.total_life = life;
    u.sensors = Matrix(static_cast<std::size_t>(life), static_cast<std::size_t>(cfg.sensors));
    for (int t = 1; t <= life; ++t) {
      u.cycles.push_back(t);
      u.rul.push_back(std::min(static_cast<double>(life - t), cfg.rul_cap));
      const double frac = static_cast<double>(t) / static_cast<double>(life);
      const double shape = std::pow(frac, cfg.exponent);
      for (int m = 0; m < cfg.sensors; ++m) {
        const double e = cfg.noise > 0.0 ? cfg.noise * noise(rng) : 0.0;
        u.sensors(static_cast<std::size_t>(t - 1), static_cast<std::size_t>(m)) =
            base[m] + cfg.offset + gain[m] * shape + e;
      }
    }
    ds.units.push_back(std::move(u));
  }
  ds.normalization = Normalization::fit(ds.units);
  ds.reindex();
  return ds;
}

// ---------------------------------------------------------------------------
// Delimited export / import
//
// Leading "#key=value" lines carry dataset metadata, followed by one header
// line and one comma-separated row per (unit, cycle) with raw readings.

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(where + ": bad number '" + s + "'");
  }
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace detail

inline void export_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "#name=" << ds.name << '\n';
  out << "#window_length=" << ds.window_length << '\n';
  out << "#stride=" << ds.stride << '\n';
  out << "#protocol=" << (ds.protocol == EvalProtocol::LastWindow ? "last-window" : "all-windows")
      << '\n';
  out << "#completeness="
      << (ds.completeness.truncated ? "truncated:" + detail::fmt_double(ds.completeness.kept_fraction)
                                    : std::string("complete"))
      << '\n';
  out << "#normalization=";
  for (std::size_t c = 0; c < ds.normalization.channels.size(); ++c) {
    if (c) out << ';';
    out << detail::fmt_double(ds.normalization.channels[c].min) << ':'
        << detail::fmt_double(ds.normalization.channels[c].max);
  }
  out << '\n';
  out << "unit,cycle,rul,total_life";
  for (std::size_t c = 0; c < ds.channels(); ++c) out << ",s" << (c + 1);
  out << '\n';
  for (const auto& u : ds.units) {
    for (std::size_t r = 0; r < u.length(); ++r) {
      out << u.unit << ',' << u.cycles[r] << ',';
      if (u.labeled()) out << detail::fmt_double(u.rul[r]);
      out << ',';
      if (u.total_life) out << *u.total_life;
      for (std::size_t c = 0; c < u.sensors.cols(); ++c)
        out << ',' << detail::fmt_double(u.sensors(r, c));
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

inline DomainDataset import_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  DomainDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  std::vector<std::vector<double>> rows_for_unit;
  std::map<int, std::size_t> unit_pos;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(where + ": malformed metadata line");
      const std::string key = line.substr(1, eq - 1), val = line.substr(eq + 1);
      if (key == "name") ds.name = val;
      else if (key == "window_length") ds.window_length = std::stoul(val);
      else if (key == "stride") ds.stride = std::stoul(val);
      else if (key == "protocol") ds.protocol = val == "last-window" ? EvalProtocol::LastWindow : EvalProtocol::AllWindows;
      else if (key == "completeness") {
        if (val.rfind("truncated:", 0) == 0) {
          ds.completeness = {true, detail::parse_double(val.substr(10), where)};
        }
      } else if (key == "normalization") {
        if (!val.empty()) {
          for (const auto& part : detail::split(val, ';')) {
            const auto colon = part.find(':');
            if (colon == std::string::npos) throw DataError(where + ": malformed normalization");
            ds.normalization.channels.push_back(
                {detail::parse_double(part.substr(0, colon), where),
                 detail::parse_double(part.substr(colon + 1), where)});
          }
        }
      }
      continue;
    }
    if (columns == 0) {
      const auto header = detail::split(line, ',');
      if (header.size() < 5 || header[0] != "unit" || header[1] != "cycle" || header[2] != "rul" ||
          header[3] != "total_life") {
        throw DataError(where + ": unexpected header '" + line + "'");
      }
      columns = header.size();
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != columns) {
      throw DataError(where + ": expected " + std::to_string(columns) + " fields, got " +
                      std::to_string(f.size()));
    }
    const int unit = std::stoi(f[0]);
    auto [it, inserted] = unit_pos.try_emplace(unit, ds.units.size());
    if (inserted) {
      UnitSeries u;
      u.unit = unit;
      if (!f[3].empty()) u.total_life = std::stoi(f[3]);
      ds.units.push_back(std::move(u));
      rows_for_unit.emplace_back();
    }
    UnitSeries& u = ds.units[it->second];
    u.cycles.push_back(std::stoi(f[1]));
    if (!f[2].empty()) u.rul.push_back(detail::parse_double(f[2], where));
    auto& raw = rows_for_unit[it->second];
    for (std::size_t c = 4; c < columns; ++c) raw.push_back(detail::parse_double(f[c], where));
  }
  if (columns == 0) throw DataError(path.string() + ": no header line");
  const std::size_t m = columns - 4;
  for (std::size_t k = 0; k < ds.units.size(); ++k) {
    auto& u = ds.units[k];
    if (!u.rul.empty() && u.rul.size() != u.cycles.size()) {
      throw DataError(path.string() + ": unit " + std::to_string(u.unit) + " is partially labeled");
    }
    u.sensors = Matrix(u.cycles.size(), m, std::move(rows_for_unit[k]));
  }
  if (ds.normalization.channels.empty()) ds.normalization = Normalization::fit(ds.units);
  ds.reindex();
  return ds;
}

}  // namespace eviadapt
