#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eviadapt/errors.hpp"
#include "eviadapt/matrix.hpp"

namespace eviadapt {

/// Identifies one window: which unit it came from and the cycle it ends at.
struct SampleId {
  int unit = 0;
  int cycle = 0;

  friend bool operator==(const SampleId&, const SampleId&) = default;
};

/// One sliding-window sample: M sensors x L time steps.
struct TimeWindow {
  Matrix sensors;             // M x L, column t is time step t
  std::optional<double> rul;  // cycles, absent for unlabeled data
  int unit = 0;
  int end_cycle = 0;

  SampleId id() const { return {unit, end_cycle}; }
};

/// Time-major batch layout consumed by the encoder: L matrices of shape B x M.
inline std::vector<Matrix> to_time_major(std::span<const TimeWindow> windows) {
  if (windows.empty()) throw UsageError("empty window batch");
  const std::size_t m = windows.front().sensors.rows();
  const std::size_t l = windows.front().sensors.cols();
  std::vector<Matrix> steps(l, Matrix(windows.size(), m));
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const Matrix& w = windows[b].sensors;
    if (w.rows() != m || w.cols() != l) {
      throw ShapeError("window " + std::to_string(b) + " has shape " + w.shape_string() +
                       ", expected (" + std::to_string(m) + "x" + std::to_string(l) + ")");
    }
    if (!w.all_finite()) {
      throw DataError("non-finite sensor value in window of unit " +
                      std::to_string(windows[b].unit) + " ending at cycle " +
                      std::to_string(windows[b].end_cycle));
    }
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t s = 0; s < m; ++s) steps[t](b, s) = w(s, t);
  }
  return steps;
}

}  // namespace eviadapt
