#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/param_store.hpp"
#include "neurbf/rbf.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

enum class OutputActivation { none, sigmoid };

struct DecoderConfig {
  int input_dim = 0;
  int width = 64;
  int output_dim = 1;
  double freq_low = 1.0;    // m_l0
  double freq_high = 1000.0;  // m_h0
  bool compose = true;      // sin(h0 * m0) + h0 after the first layer
  OutputActivation activation = OutputActivation::none;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

/// Activations of one forward batch, kept for the backward pass. Columns are samples.
struct DecoderTape {
  Matrix h0;   // first-layer output
  Matrix f0;   // after feature composition
  Matrix z1;   // second-layer pre-activation
  Matrix h1;   // ReLU(z1)
  Matrix out;  // final output (after squashing)
};

/// Three fully connected layers: h0 = W1 x + b1; f0 = sin(h0 .* m0) + h0; h1 = relu(W2 f0 + b2);
/// y = W3 h1 + b3, optionally squashed by a sigmoid.
class Decoder {
 public:
  Decoder() = default;

  explicit Decoder(DecoderConfig cfg) : cfg_(cfg) {
    require(cfg.input_dim >= 1 && cfg.width >= 1 && cfg.output_dim >= 1, ErrorKind::config,
            "Decoder: dimensions must be positive");
    freq_ = cfg.compose ? freq_ladder(cfg.freq_low, cfg.freq_high, cfg.width)
                        : std::vector<double>(static_cast<std::size_t>(cfg.width), 0.0);
  }

  const DecoderConfig& config() const noexcept { return cfg_; }
  const std::vector<double>& freq() const noexcept { return freq_; }

  /// Replaces m0 (e.g. all zeros to disable composition, or restored from a checkpoint).
  void set_freq(std::vector<double> m0) {
    require(m0.size() == static_cast<std::size_t>(cfg_.width), ErrorKind::config, "Decoder: m0 size mismatch");
    freq_ = std::move(m0);
  }

  std::size_t trainable_size() const noexcept { return params_for(cfg_.input_dim, cfg_.width, cfg_.output_dim); }

  static std::size_t params_for(int in, int width, int out) noexcept {
    const auto i = static_cast<std::size_t>(in), w = static_cast<std::size_t>(width),
               o = static_cast<std::size_t>(out);
    return w * i + w + w * w + w + o * w + o;
  }

  /// Registers dec.fc{1,2,3}.{weight,bias}; weights are column-major (out x in).
  void bind(ParamStore& store, double lr) {
    const auto in = static_cast<std::size_t>(cfg_.input_dim), w = static_cast<std::size_t>(cfg_.width),
               o = static_cast<std::size_t>(cfg_.output_dim);
    w1_ = store.add("dec.fc1.weight", w * in, lr);
    b1_ = store.add("dec.fc1.bias", w, lr);
    w2_ = store.add("dec.fc2.weight", w * w, lr);
    b2_ = store.add("dec.fc2.bias", w, lr);
    w3_ = store.add("dec.fc3.weight", o * w, lr);
    b3_ = store.add("dec.fc3.bias", o, lr);
  }

  /// He-uniform weights in +-sqrt(6 / fan_in); zero biases.
  void init_params(std::span<double> values, Rng& rng) const {
    auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < n; ++i) values[off + i] = rng.uniform(-bound, bound);
    };
    const auto in = static_cast<std::size_t>(cfg_.input_dim), w = static_cast<std::size_t>(cfg_.width),
               o = static_cast<std::size_t>(cfg_.output_dim);
    fill(w1_, w * in, cfg_.input_dim);
    fill(w2_, w * w, cfg_.width);
    fill(w3_, o * w, cfg_.width);
    for (std::size_t i = 0; i < w; ++i) values[b1_ + i] = values[b2_ + i] = 0.0;
    for (std::size_t i = 0; i < o; ++i) values[b3_ + i] = 0.0;
  }

  /// Batched forward; `x` is input_dim x B.
  void forward(const Eigen::Ref<const Matrix>& x, std::span<const double> params, DecoderTape& tape) const {
    require(x.rows() == cfg_.input_dim, ErrorKind::logic,
            "Decoder: input has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(cfg_.input_dim));
    const int in = cfg_.input_dim, w = cfg_.width, o = cfg_.output_dim;
    // Products only touch aligned Eigen storage: vectorized paths depend on pointer alignment,
    // which would make results vary with where the parameter buffer happens to be allocated.
    const Matrix W1 = ConstMatrixMap(params.data() + w1_, w, in), W2 = ConstMatrixMap(params.data() + w2_, w, w),
                 W3 = ConstMatrixMap(params.data() + w3_, o, w);
    const ConstVectorMap B1(params.data() + b1_, w), B2(params.data() + b2_, w), B3(params.data() + b3_, o);

    tape.h0.noalias() = W1 * x;
    tape.h0.colwise() += B1;
    tape.f0.resize(w, x.cols());
    if (cfg_.compose) {
      for (Eigen::Index s = 0; s < x.cols(); ++s)
        for (int r = 0; r < w; ++r) {
          const double h = tape.h0(r, s);
          tape.f0(r, s) = std::sin(h * freq_[static_cast<std::size_t>(r)]) + h;
        }
    } else {
      tape.f0 = tape.h0;
    }
    tape.z1.noalias() = W2 * tape.f0;
    tape.z1.colwise() += B2;
    tape.h1 = tape.z1.cwiseMax(0.0);
    tape.out.noalias() = W3 * tape.h1;
    tape.out.colwise() += B3;
    if (cfg_.activation == OutputActivation::sigmoid)
      tape.out = tape.out.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }

  /// Batched backward. `d_out` is output_dim x B (d loss / d y). Accumulates parameter grads;
  /// writes d loss / d x into `d_x` when it is non-empty.
  void backward(const Eigen::Ref<const Matrix>& x, std::span<const double> params, const DecoderTape& tape,
                const Eigen::Ref<const Matrix>& d_out, std::span<double> grads, Matrix* d_x) const {
    const int in = cfg_.input_dim, w = cfg_.width, o = cfg_.output_dim;
    const Matrix W2 = ConstMatrixMap(params.data() + w2_, w, w), W3 = ConstMatrixMap(params.data() + w3_, o, w),
                 W1 = ConstMatrixMap(params.data() + w1_, w, in);
    MatrixMap gW1(grads.data() + w1_, w, in), gW2(grads.data() + w2_, w, w), gW3(grads.data() + w3_, o, w);
    VectorMap gB1(grads.data() + b1_, w), gB2(grads.data() + b2_, w), gB3(grads.data() + b3_, o);

    Matrix d_pre = d_out;
    if (cfg_.activation == OutputActivation::sigmoid) d_pre = d_out.cwiseProduct(tape.out.cwiseProduct((1.0 - tape.out.array()).matrix()));
    gW3 += Matrix(d_pre * tape.h1.transpose());
    gB3 += Eigen::VectorXd(d_pre.rowwise().sum());

    Matrix d_z1 = W3.transpose() * d_pre;
    for (Eigen::Index s = 0; s < d_z1.cols(); ++s)
      for (int r = 0; r < w; ++r)
        if (!(tape.z1(r, s) > 0.0)) d_z1(r, s) = 0.0;
    gW2 += Matrix(d_z1 * tape.f0.transpose());
    gB2 += Eigen::VectorXd(d_z1.rowwise().sum());

    Matrix d_h0 = W2.transpose() * d_z1;
    if (cfg_.compose) {
      for (Eigen::Index s = 0; s < d_h0.cols(); ++s)
        for (int r = 0; r < w; ++r) {
          const double m = freq_[static_cast<std::size_t>(r)];
          d_h0(r, s) *= std::cos(tape.h0(r, s) * m) * m + 1.0;
        }
    }
    gW1 += Matrix(d_h0 * x.transpose());
    gB1 += Eigen::VectorXd(d_h0.rowwise().sum());
    if (d_x) d_x->noalias() = W1.transpose() * d_h0;
  }

  /// Single-sample convenience forward.
  std::vector<double> decode(std::span<const double> feature, std::span<const double> params) const {
    require(feature.size() == static_cast<std::size_t>(cfg_.input_dim), ErrorKind::config,
            "Decoder: feature has " + std::to_string(feature.size()) + " entries, expected " +
                std::to_string(cfg_.input_dim));
    DecoderTape tape;
    forward(ConstMatrixMap(feature.data(), cfg_.input_dim, 1), params, tape);
    return std::vector<double>(tape.out.data(), tape.out.data() + cfg_.output_dim);
  }

  std::size_t offset() const noexcept { return w1_; }

 private:
  DecoderConfig cfg_;
  std::vector<double> freq_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0;
};

}  // namespace neurbf
