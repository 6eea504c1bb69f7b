#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "rmgpmsi/nn/layers.hpp"

using namespace rmgpmsi;
using DTensor = rmgpmsi::Tensor<double>;

namespace {

/// Weighted-sum probe loss so every output element gets a distinct gradient.
struct Probe {
  DTensor weights;
  double operator()(const DTensor& y) const {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  }
};

void check_layer(nn::Layer<double>& layer, DTensor x, nn::Mode mode, Rng& rng, double tol = 1e-6) {
  const DTensor y0 = layer.forward(x, mode);
  Probe probe{gradcheck::random_tensor(y0.shape(), rng)};
  auto params = nn::params_of(layer);
  for (auto* p : params) p->grad.zero();
  layer.forward(x, mode);
  const DTensor dx = layer.backward(probe.weights);
  gradcheck::Report report;
  auto loss = [&] { return probe(layer.forward(x, mode)); };
  gradcheck::check_params(loss, params, report);
  gradcheck::check_tensor(loss, x, dx, "input", report);
  EXPECT_LT(report.max_rel, tol) << report.worst;
  EXPECT_GT(report.checked, 0u);
}

}  // namespace

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(1);
  nn::Conv2d<double> conv("c", {3, 4, 3, 2, 1, true}, nn::ParamGroup::Added, rng);
  for (auto& b : conv.bias()->value.values()) b = rng.normal();
  const DTensor x = gradcheck::random_tensor({2, 3, 7, 6}, rng);
  const DTensor y = conv.forward(x, nn::Mode::Eval);
  ASSERT_EQ(y.h(), 4u);
  ASSERT_EQ(y.w(), 3u);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t oy = 0; oy < y.h(); ++oy)
        for (std::size_t ox = 0; ox < y.w(); ++ox) {
          double s = conv.bias()->value[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = static_cast<int>(oy) * 2 + ky - 1, ix = static_cast<int>(ox) * 2 + kx - 1;
                if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                s += conv.weight().value.at(o, c, ky, kx) * x.at(b, c, iy, ix);
              }
          EXPECT_NEAR(y.at(b, o, oy, ox), s, 1e-12);
        }
}

TEST(Conv2d, Gradients) {
  Rng rng(2);
  nn::Conv2d<double> conv("c", {2, 3, 3, 1, 1, true}, nn::ParamGroup::Added, rng);
  check_layer(conv, gradcheck::random_tensor({2, 2, 5, 4}, rng), nn::Mode::Train, rng);
  nn::Conv2d<double> strided("s", {2, 3, 3, 2, 1, false}, nn::ParamGroup::Added, rng);
  check_layer(strided, gradcheck::random_tensor({2, 2, 6, 6}, rng), nn::Mode::Train, rng);
}

TEST(BatchNorm, TrainAndEvalGradients) {
  Rng rng(3);
  nn::BatchNorm<double> bn("bn", 3, nn::ParamGroup::Added);
  for (auto& g : bn.gamma().value.values()) g = 1.0 + 0.3 * rng.normal();
  for (auto& b : bn.beta().value.values()) b = rng.normal();
  // Probe weights change per call in train mode only through batch statistics.
  check_layer(bn, gradcheck::random_tensor({3, 3, 2, 2}, rng), nn::Mode::Train, rng, 1e-4);
  check_layer(bn, gradcheck::random_tensor({3, 3, 2, 2}, rng), nn::Mode::Eval, rng);
}

TEST(BatchNorm, NormalizesBatchAndTracksRunningStats) {
  Rng rng(4);
  nn::BatchNorm<double> bn("bn", 2, nn::ParamGroup::Added);
  DTensor x = gradcheck::random_tensor({4, 2, 3, 3}, rng, 3.0);
  const DTensor y = bn.forward(x, nn::Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) mean += y.item(b)[c * 9 + i];
    mean /= 36;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) sq += std::pow(y.item(b)[c * 9 + i] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, 1.0, 1e-4);
  }
  EXPECT_NE(bn.running_mean().value[0], 0.0);
}

TEST(Elu, ValuesAndGradients) {
  EXPECT_DOUBLE_EQ(nn::elu(2.0), 2.0);
  EXPECT_NEAR(nn::elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);
  Rng rng(5);
  nn::Elu<double> act;
  check_layer(act, gradcheck::random_tensor({2, 3, 2, 2}, rng), nn::Mode::Train, rng);
}

TEST(Linear, Gradients) {
  Rng rng(6);
  nn::Linear<double> fc("fc", 5, 3, nn::ParamGroup::Added, rng);
  check_layer(fc, gradcheck::random_tensor({4, 5, 1, 1}, rng), nn::Mode::Train, rng);
}

TEST(GlobalMaxPool, PicksMaxAndRoutesGradient) {
  Rng rng(7);
  nn::GlobalMaxPool<double> pool;
  DTensor single(1, 3, 1, 1);
  single[0] = 1; single[1] = -2; single[2] = 5;
  EXPECT_EQ(pool.forward(single, nn::Mode::Eval), single);
  check_layer(pool, gradcheck::random_tensor({2, 3, 4, 4}, rng), nn::Mode::Train, rng);
}

TEST(Sequential, ChainsForwardAndBackward) {
  Rng rng(8);
  nn::Sequential<double> seq;
  seq.emplace<nn::Conv2d<double>>("a", nn::Conv2d<double>::Options{2, 4, 1, 1, 0, true}, nn::ParamGroup::Added, rng);
  seq.emplace<nn::BatchNorm<double>>("b", 4, nn::ParamGroup::Added);
  seq.emplace<nn::Elu<double>>();
  check_layer(seq, gradcheck::random_tensor({3, 2, 3, 3}, rng), nn::Mode::Train, rng, 1e-4);
  EXPECT_EQ(nn::params_of(seq).size(), 4u);
}
