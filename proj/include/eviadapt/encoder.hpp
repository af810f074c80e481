#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eviadapt/autodiff.hpp"
#include "eviadapt/window.hpp"

namespace eviadapt {

struct EncoderConfig {
  std::size_t input_channels = 14;
  std::size_t layers = 5;
  std::size_t hidden_size = 32;
  double dropout_rate = 0.5;

  void validate() const {
    if (input_channels < 1) throw UsageError("encoder.input-channels must be >= 1");
    if (layers < 1) throw UsageError("encoder.layers must be >= 1");
    if (hidden_size < 1) throw UsageError("encoder.hidden-size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw UsageError("encoder.dropout-rate must lie in [0, 1)");
    }
  }
};

enum class Mode { Train, Eval };

struct FeatureBatch {
  Matrix features;  // batch x hidden
  std::vector<SampleId> provenance;
};

/// Stacked LSTM. Gate column order inside each weight block is (input, forget, cell, output).
class LstmEncoder {
 public:
  LstmEncoder() = default;

  /// Recurrent weights uniform in [-1/sqrt(H), 1/sqrt(H)].
  LstmEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    allocate();
    std::mt19937_64 rng(seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(config_.hidden_size));
    std::uniform_real_distribution<double> dist(-k, k);
    for (auto& p : params_)
      for (auto& v : p.value.data()) v = dist(rng);
  }

  static LstmEncoder zeros(const EncoderConfig& config) {
    LstmEncoder e;
    e.config_ = config;
    e.config_.validate();
    e.allocate();
    return e;
  }

  const EncoderConfig& config() const { return config_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<ad::Parameter*> parameter_ptrs() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  /// Parameter-identical, independently trainable copy.
  LstmEncoder clone() const { return *this; }

  /// Final-step hidden state of the top layer. `steps` is time-major (L x [B x M]).
  /// Parameters are bound as tape leaves that accumulate gradients. Train mode
  /// applies dropout, drawn from `rng`, to the hidden sequences passed between layers.
  ad::Var forward(ad::Tape& tape, const std::vector<Matrix>& steps, Mode mode,
                  std::mt19937_64* rng = nullptr) {
    return run(tape, steps, mode, rng, [&](std::size_t k) { return tape.parameter(params_[k]); });
  }

  /// Same computation with the parameters entering the tape as constants.
  ad::Var forward_frozen(ad::Tape& tape, const std::vector<Matrix>& steps, Mode mode,
                         std::mt19937_64* rng = nullptr) const {
    return run(tape, steps, mode, rng,
               [&](std::size_t k) { return tape.constant(params_[k].value); });
  }

 private:
  template <class Bind>
  ad::Var run(ad::Tape& tape, const std::vector<Matrix>& steps, Mode mode, std::mt19937_64* rng,
              Bind bind) const {
    if (steps.empty()) throw UsageError("encoder input has zero time steps");
    const std::size_t batch = steps.front().rows();
    for (const auto& s : steps) {
      if (s.cols() != config_.input_channels || s.rows() != batch) {
        throw ShapeError("encoder input step " + s.shape_string() + ", expected (" +
                         std::to_string(batch) + "x" + std::to_string(config_.input_channels) +
                         ")");
      }
    }
    const std::size_t h = config_.hidden_size;
    std::vector<ad::Var> seq;
    seq.reserve(steps.size());
    for (const auto& s : steps) seq.push_back(tape.constant(s));

    const bool drop = mode == Mode::Train && config_.dropout_rate > 0.0 && config_.layers > 1;
    if (drop && rng == nullptr) throw UsageError("train-mode dropout needs a random generator");

    for (std::size_t layer = 0; layer < config_.layers; ++layer) {
      ad::Var w_ih = bind(3 * layer);
      ad::Var w_hh = bind(3 * layer + 1);
      ad::Var bias = bind(3 * layer + 2);
      ad::Var hs = tape.constant(Matrix(batch, h));
      ad::Var cs = tape.constant(Matrix(batch, h));
      std::vector<ad::Var> out;
      out.reserve(seq.size());
      for (const auto& x : seq) {
        ad::Var gates = ad::matmul(x, w_ih) + ad::matmul(hs, w_hh) + bias;
        ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, h));
        ad::Var f = ad::sigmoid(ad::slice_cols(gates, h, h));
        ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * h, h));
        ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
        cs = f * cs + i * g;
        hs = o * ad::tanh(cs);
        out.push_back(hs);
      }
      const bool top = layer + 1 == config_.layers;
      if (drop && !top) {
        std::bernoulli_distribution keep(1.0 - config_.dropout_rate);
        const double scale = 1.0 / (1.0 - config_.dropout_rate);
        for (auto& v : out) {
          Matrix mask(batch, h);
          for (auto& m : mask.data()) m = keep(*rng) ? scale : 0.0;
          v = v * tape.constant(std::move(mask));
        }
      }
      seq = std::move(out);
    }
    return seq.back();
  }

  void allocate() {
    params_.clear();
    const std::size_t h = config_.hidden_size;
    for (std::size_t layer = 0; layer < config_.layers; ++layer) {
      const std::size_t in = layer == 0 ? config_.input_channels : h;
      const std::string tag = "lstm" + std::to_string(layer);
      params_.push_back({tag + ".w_ih", Matrix(in, 4 * h), {}});
      params_.push_back({tag + ".w_hh", Matrix(h, 4 * h), {}});
      params_.push_back({tag + ".bias", Matrix(1, 4 * h), {}});
    }
  }

  EncoderConfig config_;
  std::vector<ad::Parameter> params_;
};

/// Eval/train-mode feature extraction outside of any training step.
inline FeatureBatch encode(const LstmEncoder& encoder, std::span<const TimeWindow> windows,
                           Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr) {
  const auto steps = to_time_major(windows);
  ad::Tape tape;
  ad::Var f = encoder.forward_frozen(tape, steps, mode, rng);
  FeatureBatch out{f.value(), {}};
  out.provenance.reserve(windows.size());
  for (const auto& w : windows) out.provenance.push_back(w.id());
  return out;
}

}  // namespace eviadapt
