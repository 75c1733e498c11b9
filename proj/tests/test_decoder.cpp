#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "neurbf/decoder.hpp"
#include "neurbf/param_store.hpp"

using namespace neurbf;

namespace {

struct Net {
  Decoder dec;
  ParamStore store;

  explicit Net(DecoderConfig cfg, std::uint64_t seed = 1) : dec(cfg) {
    dec.bind(store, 1.0);
    Rng rng(seed);
    dec.init_params(store.values(), rng);
    for (double& v : store.values("dec.fc1.bias")) v = rng.uniform(-0.5, 0.5);
    for (double& v : store.values("dec.fc2.bias")) v = rng.uniform(-0.5, 0.5);
    for (double& v : store.values("dec.fc3.bias")) v = rng.uniform(-0.5, 0.5);
  }
};

/// Scalar-loop forward over column-major weight blocks.
std::vector<double> reference_forward(const Decoder& d, const ParamStore& s, const std::vector<double>& x) {
  const auto& c = d.config();
  auto W = [&](const char* name, int rows, int r, int col) { return s.values(name)[static_cast<std::size_t>(col * rows + r)]; };
  auto B = [&](const char* name, int r) { return s.values(name)[static_cast<std::size_t>(r)]; };
  std::vector<double> f0(static_cast<std::size_t>(c.width)), h1(static_cast<std::size_t>(c.width)),
      y(static_cast<std::size_t>(c.output_dim));
  for (int r = 0; r < c.width; ++r) {
    double h = B("dec.fc1.bias", r);
    for (int i = 0; i < c.input_dim; ++i) h += W("dec.fc1.weight", c.width, r, i) * x[static_cast<std::size_t>(i)];
    f0[static_cast<std::size_t>(r)] = c.compose ? std::sin(h * d.freq()[static_cast<std::size_t>(r)]) + h : h;
  }
  for (int r = 0; r < c.width; ++r) {
    double z = B("dec.fc2.bias", r);
    for (int i = 0; i < c.width; ++i) z += W("dec.fc2.weight", c.width, r, i) * f0[static_cast<std::size_t>(i)];
    h1[static_cast<std::size_t>(r)] = z > 0.0 ? z : 0.0;
  }
  for (int r = 0; r < c.output_dim; ++r) {
    double v = B("dec.fc3.bias", r);
    for (int i = 0; i < c.width; ++i) v += W("dec.fc3.weight", c.output_dim, r, i) * h1[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(r)] = c.activation == OutputActivation::sigmoid ? 1.0 / (1.0 + std::exp(-v)) : v;
  }
  return y;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double s = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-s, s);
  return v;
}

}  // namespace

TEST(Decoder, ParamCount) {
  EXPECT_EQ(Decoder::params_for(3, 4, 2), 4u * 3 + 4 + 16 + 4 + 8 + 2);
  EXPECT_EQ(Decoder::params_for(48, 64, 3), 7491u);
  Net n({5, 7, 3, 1.0, 10.0, true, OutputActivation::none});
  EXPECT_EQ(n.store.size(), Decoder::params_for(5, 7, 3));
}

TEST(Decoder, MatchesScalarReference) {
  for (bool compose : {true, false})
    for (auto act : {OutputActivation::none, OutputActivation::sigmoid}) {
      Net n({6, 16, 3, 1.0, 100.0, compose, act}, 2);
      Rng rng(3);
      for (int t = 0; t < 50; ++t) {
        const auto x = random_vec(6, rng);
        const auto got = n.dec.decode(x, n.store.values());
        const auto want = reference_forward(n.dec, n.store, x);
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
      }
    }
}

TEST(Decoder, ZeroFrequenciesReduceToPlainMlp) {
  Net composed({4, 8, 2, 1.0, 50.0, true, OutputActivation::none}, 4);
  composed.dec.set_freq(std::vector<double>(8, 0.0));
  Decoder plain({4, 8, 2, 1.0, 50.0, false, OutputActivation::none});
  ParamStore layout;
  plain.bind(layout, 1.0);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_vec(4, rng);
    const auto a = composed.dec.decode(x, composed.store.values());
    const auto b = plain.decode(x, composed.store.values());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  }
}

TEST(Decoder, ZeroLastLayerGivesBias) {
  Net n({3, 5, 2, 1.0, 10.0, true, OutputActivation::none}, 6);
  for (double& v : n.store.values("dec.fc3.weight")) v = 0.0;
  n.store.values("dec.fc3.bias")[0] = 0.25;
  n.store.values("dec.fc3.bias")[1] = -1.5;
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const auto y = n.dec.decode(random_vec(3, rng), n.store.values());
    EXPECT_EQ(y[0], 0.25);
    EXPECT_EQ(y[1], -1.5);
  }
}

TEST(Decoder, FrequencyLadderSpansRange) {
  const Decoder d({2, 30, 1, 1.0, 1000.0, true, OutputActivation::none});
  EXPECT_EQ(d.freq().front(), 1.0);
  EXPECT_EQ(d.freq().back(), 1000.0);
  EXPECT_THROW(d.decode(std::vector<double>(3, 0.0), std::vector<double>(d.trainable_size(), 0.0)), Error);
}

TEST(Decoder, InitWithinHeBounds) {
  Net n({10, 32, 3, 1.0, 10.0, true, OutputActivation::none}, 8);
  ParamStore s;
  Decoder d(n.dec.config());
  d.bind(s, 1.0);
  Rng rng(9);
  d.init_params(s.values(), rng);
  const double b1 = std::sqrt(6.0 / 10.0), b2 = std::sqrt(6.0 / 32.0);
  double max1 = 0.0;
  for (double v : s.values("dec.fc1.weight")) {
    EXPECT_LE(std::abs(v), b1);
    max1 = std::max(max1, std::abs(v));
  }
  EXPECT_GT(max1, 0.8 * b1);
  for (double v : s.values("dec.fc2.weight")) EXPECT_LE(std::abs(v), b2);
  for (double v : s.values("dec.fc3.weight")) EXPECT_LE(std::abs(v), b2);
  for (double v : s.values("dec.fc2.bias")) EXPECT_EQ(v, 0.0);
}

TEST(Decoder, GradientMatchesFiniteDifference) {
  for (bool compose : {true, false})
    for (auto act : {OutputActivation::none, OutputActivation::sigmoid}) {
      Net n({5, 12, 2, 1.0, 20.0, compose, act}, 10);
      Rng rng(11);
      const int B = 8;
      Matrix x(5, B), target(2, B);
      for (int s = 0; s < B; ++s) {
        for (int i = 0; i < 5; ++i) x(i, s) = rng.uniform(-1.0, 1.0);
        for (int i = 0; i < 2; ++i) target(i, s) = rng.uniform(-1.0, 1.0);
      }
      DecoderTape tape;
      LossEval eval = [&](bool with_grad) {
        n.dec.forward(x, n.store.values(), tape);
        const Matrix diff = tape.out - target;
        if (with_grad) n.dec.backward(x, n.store.values(), tape, 2.0 * diff, n.store.grads(), nullptr);
        return diff.squaredNorm();
      };
      for (const char* seg : {"dec.fc1.weight", "dec.fc1.bias", "dec.fc2.weight", "dec.fc3.weight", "dec.fc3.bias"}) {
        Rng probe(12);
        const auto r = finite_diff_check_segment(eval, n.store, seg, 20, 1e-6, probe);
        EXPECT_LT(r.max_rel_error, 1e-5) << seg << " compose=" << compose;
      }
    }
}

TEST(Decoder, InputGradientMatchesFiniteDifference) {
  Net n({4, 10, 3, 1.0, 30.0, true, OutputActivation::none}, 13);
  Rng rng(14);
  Matrix x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
  Matrix up(3, 3);
  for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = rng.uniform(-1.0, 1.0);
  DecoderTape tape;
  n.dec.forward(x, n.store.values(), tape);
  std::vector<double> scratch(n.store.size(), 0.0);
  Matrix dx;
  n.dec.backward(x, n.store.values(), tape, up, scratch, &dx);
  auto loss = [&](const Matrix& xx) {
    DecoderTape t;
    n.dec.forward(xx, n.store.values(), t);
    return (t.out.array() * up.array()).sum();
  };
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (loss(xp) - loss(xm)) / (2.0 * h);
    EXPECT_NEAR(dx.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}
