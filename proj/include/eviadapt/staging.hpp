#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eviadapt/data.hpp"
#include "eviadapt/errors.hpp"
#include "eviadapt/log.hpp"

namespace eviadapt {

enum class StageScheme { Source3, Target2 };

inline const char* scheme_name(StageScheme s) {
  return s == StageScheme::Source3 ? "source-3" : "target-2";
}

struct StageAssignment {
  std::size_t window = 0;  // index into the dataset's window list
  SampleId id;
  int stage = 1;           // 1-based
  double fraction = 0.0;   // lifecycle fraction in [0, 1]
};

/// Stage of every window of one domain, in dataset window order.
struct StagePartition {
  StageScheme scheme = StageScheme::Source3;
  std::vector<StageAssignment> assignments;

  int stage_count() const { return scheme == StageScheme::Source3 ? 3 : 2; }

  std::vector<std::size_t> pool(int stage) const {
    std::vector<std::size_t> ids;
    for (const auto& a : assignments)
      if (a.stage == stage) ids.push_back(a.window);
    return ids;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> n(static_cast<std::size_t>(stage_count()), 0);
    for (const auto& a : assignments) ++n[static_cast<std::size_t>(a.stage - 1)];
    return n;
  }

  std::string summary() const {
    std::string s = std::string(scheme_name(scheme)) + " stage sizes:";
    const auto n = sizes();
    for (std::size_t k = 0; k < n.size(); ++k) s += " " + std::to_string(k + 1) + "=" + std::to_string(n[k]);
    return s;
  }

  friend bool operator==(const StagePartition& a, const StagePartition& b) {
    if (a.scheme != b.scheme || a.assignments.size() != b.assignments.size()) return false;
    for (std::size_t i = 0; i < a.assignments.size(); ++i) {
      const auto &x = a.assignments[i], &y = b.assignments[i];
      if (x.window != y.window || !(x.id == y.id) || x.stage != y.stage || x.fraction != y.fraction)
        return false;
    }
    return true;
  }
};

struct StageThresholds {
  std::vector<double> source = {0.33, 0.85};
  std::vector<double> target = {0.70};
};

namespace detail {

// Intervals are [b_{k-1}, b_k); the last one also takes fraction 1.0.
// The tolerance keeps e.g. 33/100 on the stage-2 side of 0.33.
inline int stage_of(double fraction, const std::vector<double>& bounds) {
  int stage = 1;
  for (double b : bounds)
    if (fraction >= b - 1e-12) ++stage;
  return stage;
}

}  // namespace detail

/// Source split from the known life of each unit: fraction = cycle / total life.
inline StagePartition segment_source(const DomainDataset& ds,
                                     const std::vector<double>& bounds = StageThresholds{}.source) {
  StagePartition p;
  p.scheme = StageScheme::Source3;
  p.assignments.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& u = ds.units[ds.index[i].unit_index];
    if (!u.total_life || *u.total_life <= 0) {
      throw DataError("source unit " + std::to_string(u.unit) + " has unknown total life");
    }
    const SampleId id = ds.sample_id(i);
    const double f = std::clamp(static_cast<double>(id.cycle) / *u.total_life, 0.0, 1.0);
    p.assignments.push_back({i, id, detail::stage_of(f, bounds), f});
  }
  return p;
}

/// Target split from per-window pseudo-RUL: fraction = 1 - y_hat / max over the unit of y_hat.
inline StagePartition segment_target(const DomainDataset& ds, std::span<const double> pseudo_rul,
                                     const std::vector<double>& bounds = StageThresholds{}.target) {
  if (pseudo_rul.size() != ds.size()) {
    throw ShapeError("pseudo-label count " + std::to_string(pseudo_rul.size()) +
                     " does not match window count " + std::to_string(ds.size()));
  }
  std::map<std::size_t, double> unit_max;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t u = ds.index[i].unit_index;
    auto [it, fresh] = unit_max.try_emplace(u, pseudo_rul[i]);
    if (!fresh) it->second = std::max(it->second, pseudo_rul[i]);
  }
  for (const auto& [u, m] : unit_max) {
    if (!(m > 0.0)) {
      throw DataError("target unit " + std::to_string(ds.units[u].unit) +
                      " has non-positive maximum pseudo-RUL " + std::to_string(m));
    }
  }
  StagePartition p;
  p.scheme = StageScheme::Target2;
  p.assignments.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double m = unit_max[ds.index[i].unit_index];
    const double f = std::clamp(1.0 - pseudo_rul[i] / m, 0.0, 1.0);
    p.assignments.push_back({i, ds.sample_id(i), detail::stage_of(f, bounds), f});
  }
  return p;
}

/// One row per window: sample-id, unit, cycle, fraction, stage.
inline void export_partition(const StagePartition& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sample_id,unit,cycle,fraction,stage\n";
  out.precision(17);
  for (const auto& a : p.assignments)
    out << a.window << ',' << a.id.unit << ',' << a.id.cycle << ',' << a.fraction << ',' << a.stage
        << '\n';
}

// ---------------------------------------------------------------------------
// Health index

struct HealthIndexCurve {
  int unit = 0;
  std::vector<int> cycles;
  std::vector<double> values;
};

/// Linear sensor combination with intercept: HI = w0 + sum_m w_m s_m, clipped to [0, 1].
struct HealthIndexModel {
  std::vector<double> weights;  // intercept first

  HealthIndexCurve evaluate(const UnitSeries& u) const {
    if (weights.size() != u.sensors.cols() + 1) {
      throw ShapeError("health-index model has " + std::to_string(weights.size() - 1) +
                       " sensor weights, unit has " + std::to_string(u.sensors.cols()) + " sensors");
    }
    HealthIndexCurve c{u.unit, u.cycles, std::vector<double>(u.length())};
    for (std::size_t r = 0; r < u.length(); ++r) {
      double v = weights[0];
      for (std::size_t m = 0; m < u.sensors.cols(); ++m) v += weights[m + 1] * u.sensors(r, m);
      c.values[r] = std::clamp(v, 0.0, 1.0);
    }
    return c;
  }
};

/// HI target of a labeled unit: 1 - cycle / total life.
inline std::vector<double> health_target(const UnitSeries& u) {
  if (!u.total_life || *u.total_life <= 0) {
    throw DataError("unit " + std::to_string(u.unit) + " has unknown total life");
  }
  std::vector<double> t(u.length());
  for (std::size_t r = 0; r < u.length(); ++r)
    t[r] = 1.0 - static_cast<double>(u.cycles[r]) / *u.total_life;
  return t;
}

/// Least-squares fit over the given units. A rank-deficient design falls back
/// to the minimum-norm solution and emits a warning.
inline HealthIndexModel fit_health_index(std::span<const UnitSeries> units) {
  if (units.empty()) throw UsageError("health index needs at least one unit");
  const std::size_t m = units.front().sensors.cols();
  std::size_t n = 0;
  for (const auto& u : units) n += u.length();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m + 1));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (const auto& u : units) {
    if (u.sensors.cols() != m) throw ShapeError("units disagree on sensor count");
    const auto target = health_target(u);
    for (std::size_t r = 0; r < u.length(); ++r, ++row) {
      a(row, 0) = 1.0;
      for (std::size_t k = 0; k < m; ++k) a(row, static_cast<Eigen::Index>(k + 1)) = u.sensors(r, k);
      y(row) = target[r];
    }
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  if (cod.rank() < a.cols()) {
    warn("health-index design is rank deficient (rank " + std::to_string(cod.rank()) + " of " +
         std::to_string(a.cols()) + "); using minimum-norm fit");
  }
  const Eigen::VectorXd w = cod.solve(y);
  return {std::vector<double>(w.data(), w.data() + w.size())};
}

/// Fits and evaluates the health index on a single labeled unit.
inline HealthIndexCurve health_index(const UnitSeries& unit) {
  return fit_health_index(std::span<const UnitSeries>(&unit, 1)).evaluate(unit);
}

}  // namespace eviadapt
