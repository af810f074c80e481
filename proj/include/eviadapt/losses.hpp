#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "eviadapt/autodiff.hpp"
#include "eviadapt/evidential_head.hpp"

namespace eviadapt {

enum class KernelKind { GaussianRbf, Linear };

/// Gaussian kernel k(x, y) = exp(-|x - y|^2 / h). A non-positive bandwidth
/// selects the median heuristic: h = median pairwise squared distance over the
/// union of both batches, floored at 1e-8, recomputed per call and held constant.
struct KernelSpec {
  KernelKind kind = KernelKind::GaussianRbf;
  double bandwidth = 0.0;

  bool median_heuristic() const { return bandwidth <= 0.0; }

  static KernelSpec rbf_median() { return {}; }
  static KernelSpec rbf(double h) {
    if (!(h > 0)) throw UsageError("gaussian-rbf bandwidth must be positive");
    return {KernelKind::GaussianRbf, h};
  }
  static KernelSpec linear() { return {KernelKind::Linear, 0.0}; }
};

/// How the confidence factor of the tilted loss is read:
/// literal = 2 nu + alpha + 1/beta, grouped = (2 nu + alpha + 1) / beta.
enum class PhiParse { Literal, Grouped };

namespace detail {

inline ad::Var labels_column(ad::Tape& tape, const std::vector<double>& labels, std::size_t batch) {
  if (labels.size() != batch) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(batch));
  }
  for (double y : labels)
    if (!std::isfinite(y)) throw DataError("non-finite label");
  return tape.constant(Matrix::column(labels));
}

inline void check_quantiles(const EvidentialVars& out, const QuantileSet& q) {
  if (out.gamma.cols() != q.size()) {
    throw ShapeError("evidential output has " + std::to_string(out.gamma.cols()) +
                     " quantile columns, quantile set has " + std::to_string(q.size()));
  }
}

inline void report_non_finite(const Matrix& per_element, const EvidentialVars& out,
                              const std::vector<double>& labels, const char* what) {
  for (std::size_t r = 0; r < per_element.rows(); ++r)
    for (std::size_t c = 0; c < per_element.cols(); ++c) {
      if (std::isfinite(per_element(r, c))) continue;
      std::ostringstream msg;
      msg.precision(17);
      msg << what << " is non-finite at row " << r << ", quantile " << c
          << ": gamma=" << out.gamma.value()(r, c) << " nu=" << out.nu.value()(r, c)
          << " alpha=" << out.alpha.value()(r, c) << " beta=" << out.beta.value()(r, c)
          << " y=" << labels[r];
      throw NumericalError(msg.str());
    }
}

inline double median_bandwidth(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows() + b.rows();
  auto row = [&](std::size_t i) { return i < a.rows() ? a.row_span(i) : b.row_span(i - a.rows()); };
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto y = row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      d.push_back(s);
    }
  }
  if (d.empty()) return 1e-8;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return std::max(med, 1e-8);
}

// Full kernel matrix between rows of a and b with a fixed bandwidth.
inline ad::Var kernel_matrix(const ad::Var& a, const ad::Var& b, KernelKind kind, double h) {
  if (kind == KernelKind::Linear) return ad::matmul(a, ad::transpose(b));
  return ad::exp(ad::scale(ad::pairwise_sqdist(a, b), -1.0 / h));
}

inline void check_batches(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw DataError(std::string(what) + ": empty batch (empty stage?)");
  }
  if (a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": width mismatch " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

}  // namespace detail

/// Bandwidth the spec resolves to for this pair of batches.
inline double resolve_bandwidth(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  return spec.median_heuristic() ? detail::median_bandwidth(a, b) : spec.bandwidth;
}

/// Evidential quantile NLL, summed over quantiles and averaged over the batch:
///   1/2 log(pi/nu) - alpha log(Omega) + (alpha + 1/2) log((y - gamma - tau z)^2 nu + Omega)
///   + log Gamma(alpha) - log Gamma(alpha + 1/2),
/// with Omega = 4 beta (1 + omega z nu) and z = beta / (alpha - 1).
inline ad::Var nll_loss(const EvidentialVars& out, const std::vector<double>& labels,
                        const QuantileSet& quantiles) {
  detail::check_quantiles(out, quantiles);
  ad::Tape& tape = *out.gamma.tape();
  const std::size_t batch = out.gamma.rows();
  ad::Var y = detail::labels_column(tape, labels, batch);
  ad::Var tau = tape.constant(quantiles.tau_row());
  ad::Var omega = tape.constant(quantiles.omega_row());
  ad::Var z = out.beta / (out.alpha - 1.0);
  ad::Var big_omega = ad::scale(out.beta * (1.0 + omega * z * out.nu), 4.0);
  ad::Var resid = y - out.gamma - tau * z;
  ad::Var per = ad::scale(ad::log(ad::reciprocal(out.nu, std::numbers::pi)), 0.5) -
                out.alpha * ad::log(big_omega) +
                (out.alpha + 0.5) * ad::log(ad::square(resid) * out.nu + big_omega) +
                ad::lgamma(out.alpha) - ad::lgamma(out.alpha + 0.5);
  detail::report_non_finite(per.value(), out, labels, "NLL");
  return ad::scale(ad::sum(per), 1.0 / static_cast<double>(batch));
}

/// Pinball loss weighted by the confidence factor Phi, summed over quantiles
/// and averaged over the batch.
inline ad::Var tilted_loss(const EvidentialVars& out, const std::vector<double>& labels,
                           const QuantileSet& quantiles, PhiParse phi = PhiParse::Literal) {
  detail::check_quantiles(out, quantiles);
  ad::Tape& tape = *out.gamma.tape();
  const std::size_t batch = out.gamma.rows();
  ad::Var y = detail::labels_column(tape, labels, batch);
  ad::Var q = tape.constant(quantiles.q_row());
  ad::Var err = y - out.gamma;
  ad::Var pinball = ad::maximum(q * err, (q - 1.0) * err);
  ad::Var confidence = phi == PhiParse::Literal
                           ? ad::scale(out.nu, 2.0) + out.alpha + ad::reciprocal(out.beta)
                           : (ad::scale(out.nu, 2.0) + out.alpha + 1.0) / out.beta;
  ad::Var per = pinball * confidence;
  detail::report_non_finite(per.value(), out, labels, "tilted loss");
  return ad::scale(ad::sum(per), 1.0 / static_cast<double>(batch));
}

/// nll_loss + lambda * tilted_loss.
inline ad::Var pretrain_loss(const EvidentialVars& out, const std::vector<double>& labels,
                             const QuantileSet& quantiles, double lambda,
                             PhiParse phi = PhiParse::Literal) {
  if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
  ad::Var nll = nll_loss(out, labels, quantiles);
  if (lambda == 0.0) return nll;
  return nll + ad::scale(tilted_loss(out, labels, quantiles, phi), lambda);
}

/// Mean of k(a_i, b_j) over all cross pairs.
inline ad::Var kernel_mean(const ad::Var& a, const ad::Var& b, const KernelSpec& spec) {
  detail::check_batches(a, b, "kernel_mean");
  const double h = spec.kind == KernelKind::GaussianRbf ? resolve_bandwidth(spec, a.value(), b.value())
                                                        : 1.0;
  return ad::mean(detail::kernel_matrix(a, b, spec.kind, h));
}

/// Stage-wise evidential alignment: -sum_n mean k(source_n, target_n) over
/// (nu, alpha, beta) triples of matched stages. Source triples are expected as
/// tape constants.
inline ad::Var sea_loss(const std::vector<ad::Var>& source_stages,
                        const std::vector<ad::Var>& target_stages, const KernelSpec& spec) {
  if (source_stages.empty() || source_stages.size() != target_stages.size()) {
    throw UsageError("sea_loss needs the same non-zero number of source and target stages");
  }
  ad::Var total;
  for (std::size_t n = 0; n < source_stages.size(); ++n) {
    if (source_stages[n].rows() == 0 || target_stages[n].rows() == 0) {
      throw DataError("sea_loss: stage " + std::to_string(n + 1) + " missing in " +
                      (source_stages[n].rows() == 0 ? "source" : "target"));
    }
    ad::Var k = kernel_mean(source_stages[n], target_stages[n], spec);
    total = n == 0 ? k : total + k;
  }
  return ad::neg(total);
}

/// Biased squared MMD: E k(s, s') + E k(t, t') - 2 E k(s, t), one bandwidth for all terms.
inline ad::Var feature_mmd_loss(const ad::Var& source, const ad::Var& target,
                                const KernelSpec& spec) {
  detail::check_batches(source, target, "feature_mmd_loss");
  const double h = spec.kind == KernelKind::GaussianRbf
                       ? resolve_bandwidth(spec, source.value(), target.value())
                       : 1.0;
  ad::Var ss = ad::mean(detail::kernel_matrix(source, source, spec.kind, h));
  ad::Var tt = ad::mean(detail::kernel_matrix(target, target, spec.kind, h));
  ad::Var st = ad::mean(detail::kernel_matrix(source, target, spec.kind, h));
  return ss + tt - ad::scale(st, 2.0);
}

}  // namespace eviadapt
