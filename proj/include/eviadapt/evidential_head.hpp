#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "eviadapt/autodiff.hpp"
#include "eviadapt/encoder.hpp"

namespace eviadapt {

struct QuantileConstants {
  double tau;
  double omega;
};

/// tau = (1 - 2q) / (q (1 - q)),  omega = 2 / (q (1 - q)).
inline QuantileConstants quantile_constants(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw UsageError("quantile " + std::to_string(q) + " outside (0, 1)");
  }
  const double d = q * (1.0 - q);
  return {(1.0 - 2.0 * q) / d, 2.0 / d};
}

/// Strictly increasing quantile levels in (0, 1).
class QuantileSet {
 public:
  QuantileSet() : QuantileSet(std::vector<double>{0.25, 0.75}) {}
  explicit QuantileSet(std::vector<double> q) : q_(std::move(q)) {
    if (q_.empty()) throw UsageError("quantile set is empty");
    for (std::size_t i = 0; i < q_.size(); ++i) {
      quantile_constants(q_[i]);
      if (i > 0 && !(q_[i] > q_[i - 1])) throw UsageError("quantile set must be strictly increasing");
    }
  }

  std::size_t size() const { return q_.size(); }
  double operator[](std::size_t i) const { return q_[i]; }
  const std::vector<double>& values() const { return q_; }

  Matrix q_row() const { return Matrix(1, q_.size(), q_); }
  Matrix tau_row() const {
    Matrix m(1, q_.size());
    for (std::size_t i = 0; i < q_.size(); ++i) m[i] = quantile_constants(q_[i]).tau;
    return m;
  }
  Matrix omega_row() const {
    Matrix m(1, q_.size());
    for (std::size_t i = 0; i < q_.size(); ++i) m[i] = quantile_constants(q_[i]).omega;
    return m;
  }

  friend bool operator==(const QuantileSet&, const QuantileSet&) = default;

 private:
  std::vector<double> q_;
};

/// Per-quantile Normal-Inverse-Gamma parameters, each batch x |quantiles|.
struct EvidentialOutput {
  Matrix gamma, nu, alpha, beta;

  std::size_t batch() const { return gamma.rows(); }

  /// Mean of the exponential mixing variable, beta / (alpha - 1).
  Matrix z_mean() const {
    Matrix z(beta.rows(), beta.cols());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = beta[i] / (alpha[i] - 1.0);
    return z;
  }

  /// (nu, alpha, beta) concatenated per row: batch x 3|quantiles|.
  Matrix triples() const {
    const std::size_t k = nu.cols();
    Matrix t(nu.rows(), 3 * k);
    for (std::size_t r = 0; r < nu.rows(); ++r)
      for (std::size_t c = 0; c < k; ++c) {
        t(r, c) = nu(r, c);
        t(r, k + c) = alpha(r, c);
        t(r, 2 * k + c) = beta(r, c);
      }
    return t;
  }
};

/// Same four groups as tape values.
struct EvidentialVars {
  ad::Var gamma, nu, alpha, beta;

  ad::Var triples() const { return ad::concat_cols({nu, alpha, beta}); }
  EvidentialOutput values() const { return {gamma.value(), nu.value(), alpha.value(), beta.value()}; }
};

/// Added to every softplus output. Without it, 1 + softplus(x) rounds to exactly 1
/// for x below about -37 and softplus itself underflows to 0 below about -745.
inline constexpr double kEvidenceFloor = 1e-10;

/// Shared predictor: one linear map to 4|quantiles| outputs split as
/// (gamma | nu | alpha | beta); gamma linear, nu and beta softplus, alpha softplus + 1.
class EvidentialHead {
 public:
  EvidentialHead() = default;

  EvidentialHead(std::size_t feature_width, const QuantileSet& quantiles, std::uint64_t seed)
      : width_(feature_width), k_(quantiles.size()) {
    allocate();
    std::mt19937_64 rng(seed);
    const double b = 1.0 / std::sqrt(static_cast<double>(width_));
    std::uniform_real_distribution<double> dist(-b, b);
    for (auto& v : params_[0].value.data()) v = dist(rng);
  }

  static EvidentialHead zeros(std::size_t feature_width, const QuantileSet& quantiles) {
    EvidentialHead h;
    h.width_ = feature_width;
    h.k_ = quantiles.size();
    h.allocate();
    return h;
  }

  std::size_t feature_width() const { return width_; }
  std::size_t quantile_count() const { return k_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<ad::Parameter*> parameter_ptrs() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  EvidentialVars forward(ad::Tape& tape, const ad::Var& features) {
    return run(features, tape.parameter(params_[0]), tape.parameter(params_[1]));
  }

  EvidentialVars forward_frozen(ad::Tape& tape, const ad::Var& features) const {
    return run(features, tape.constant(params_[0].value), tape.constant(params_[1].value));
  }

 private:
  EvidentialVars run(const ad::Var& features, const ad::Var& w, const ad::Var& b) const {
    if (features.cols() != width_) {
      throw ShapeError("predictor expects feature width " + std::to_string(width_) + ", got " +
                       features.value().shape_string());
    }
    ad::Var raw = ad::matmul(features, w) + b;
    const auto evidence = [&](std::size_t group) {
      return ad::softplus(ad::slice_cols(raw, group * k_, k_)) + kEvidenceFloor;
    };
    return {ad::slice_cols(raw, 0, k_), evidence(1), evidence(2) + 1.0, evidence(3)};
  }

  void allocate() {
    params_.clear();
    params_.push_back({"head.weight", Matrix(width_, 4 * k_), {}});
    params_.push_back({"head.bias", Matrix(1, 4 * k_), {}});
  }

  std::size_t width_ = 0;
  std::size_t k_ = 0;
  std::vector<ad::Parameter> params_;
};

inline EvidentialOutput predict_evidential(const EvidentialHead& head, const FeatureBatch& features) {
  ad::Tape tape;
  return head.forward_frozen(tape, tape.constant(features.features)).values();
}

/// Row-wise mean of gamma across quantiles.
inline std::vector<double> point_rul(const EvidentialOutput& out) {
  std::vector<double> y(out.gamma.rows());
  for (std::size_t r = 0; r < out.gamma.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < out.gamma.cols(); ++c) s += out.gamma(r, c);
    y[r] = s / static_cast<double>(out.gamma.cols());
  }
  return y;
}

}  // namespace eviadapt
