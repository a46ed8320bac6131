#include <cmath>
#include <memory>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rprloc/nn/sequential.hpp"

using namespace rprloc;
using namespace rprloc::nn;
using rprloc::testing::check_gradients;
using rprloc::testing::random_vector;

namespace {

Tensor<double> random_tensor(int n, int c, int d, int h, int w, std::uint64_t seed) {
  Tensor<double> t(n, c, d, h, w);
  t.data = random_vector(t.size(), seed);
  return t;
}

// Weighted sum of the output so every output element gets a distinct upstream gradient.
struct Probe {
  Sequential<double>& net;
  Tensor<double>& x;
  Buffer<double> weights;

  double loss() {
    const Tensor<double> y = net.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y.data[i];
    return s;
  }

  std::vector<Buffer<double>> analytic(bool with_input) {
    const Tensor<double> y = net.forward(x);
    Tensor<double> g(y.n, y.c, y.d, y.h, y.w);
    g.data = weights;
    net.zero_grad();
    const Tensor<double> gx = net.backward(g);
    std::vector<Buffer<double>> out;
    if (with_input) out.push_back(gx.data);
    for (Param<double>* p : net.params()) out.push_back(p->grad);
    return out;
  }
};

void gradcheck(Sequential<double>& net, Tensor<double> x, std::uint64_t seed, bool with_input = true) {
  const Tensor<double> y0 = net.forward(x);
  Probe probe{net, x, random_vector(y0.size(), seed + 1)};
  std::vector<Buffer<double>*> values;
  if (with_input) values.push_back(&x.data);
  for (Param<double>* p : net.params()) values.push_back(&p->value);
  const auto r = check_gradients(values, [&] { return probe.loss(); }, [&] { return probe.analytic(with_input); },
                                 60, seed + 2);
  INFO("max rel " << r.max_rel_error << " norm rel " << r.norm_rel_error);
  CHECK(r.checked > 0);
  CHECK(r.norm_rel_error < 1e-5);
}

}  // namespace

TEST_CASE("conv3d matches a direct zero-padded convolution") {
  Conv3d<double> conv(2, 3, 3);
  std::mt19937_64 rng(1);
  conv.init_kaiming(rng);
  conv.params()[1]->value = {0.1, -0.2, 0.3};
  const Tensor<double> x = random_tensor(2, 2, 4, 5, 6, 2);
  const Tensor<double> y = conv.infer(x);
  REQUIRE((y.n == 2 && y.c == 3 && y.d == 4 && y.h == 5 && y.w == 6));
  const auto& w = conv.params()[0]->value;
  const auto& b = conv.params()[1]->value;
  double max_err = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 3; ++co)
      for (int z = 0; z < 4; ++z)
        for (int yy = 0; yy < 5; ++yy)
          for (int xx = 0; xx < 6; ++xx) {
            double s = b[co];
            for (int ci = 0; ci < 2; ++ci)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const int iz = z + kz - 1;
                    const int iy = yy + ky - 1;
                    const int ix = xx + kx - 1;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= 4 || iy >= 5 || ix >= 6) continue;
                    s += w[(((co * 2 + ci) * 3 + kz) * 3 + ky) * 3 + kx] * x.channel(n, ci)[(iz * 5 + iy) * 6 + ix];
                  }
            max_err = std::max(max_err, std::fabs(s - y.channel(n, co)[(z * 5 + yy) * 6 + xx]));
          }
  CHECK(max_err < 1e-12);
}

TEST_CASE("conv3d gradients") {
  Sequential<double> net;
  auto& conv = net.add(std::make_unique<Conv3d<double>>(2, 3, 3));
  std::mt19937_64 rng(3);
  conv.init_kaiming(rng);
  gradcheck(net, random_tensor(2, 2, 3, 4, 5, 4), 10);
}

TEST_CASE("batchnorm gradients in training mode") {
  Sequential<double> net;
  auto& bn = net.add(std::make_unique<BatchNorm3d<double>>(3));
  bn.params()[0]->value = {1.5, 0.5, -1.0};
  bn.params()[1]->value = {0.1, 0.2, 0.3};
  gradcheck(net, random_tensor(2, 3, 2, 3, 4, 5), 20);
}

TEST_CASE("batchnorm normalizes with batch statistics and infers with running ones") {
  BatchNorm3d<double> bn(1, 1.0);
  Tensor<double> x(2, 1, 1, 1, 2);
  x.data = {1, 2, 3, 4};
  const Tensor<double> y = bn.forward(x);
  double mean = 0.0;
  double var = 0.0;
  for (double v : y.data) mean += v / 4;
  for (double v : y.data) var += (v - mean) * (v - mean) / 4;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  // Momentum 1: running stats are the last batch's mean 2.5 and unbiased variance 5/3.
  const Tensor<double> z = bn.infer(x);
  CHECK(z.data[0] == doctest::Approx((1.0 - 2.5) / std::sqrt(5.0 / 3.0 + 1e-5)));
}

TEST_CASE("relu, maxpool, pooling and linear gradients") {
  Sequential<double> net;
  auto& conv = net.add(std::make_unique<Conv3d<double>>(1, 2, 3));
  std::mt19937_64 rng(5);
  conv.init_kaiming(rng);
  net.add(std::make_unique<ReLU<double>>());
  net.add(std::make_unique<MaxPool3d<double>>());
  net.add(std::make_unique<GlobalAvgPool<double>>());
  auto& fc = net.add(std::make_unique<Linear<double>>(2, 3));
  fc.init_kaiming(rng);
  gradcheck(net, random_tensor(3, 1, 4, 5, 3, 6), 30);
}

TEST_CASE("maxpool halves with ceil and routes gradients to the argmax") {
  MaxPool3d<double> pool;
  Tensor<double> x(1, 1, 1, 1, 3);
  x.data = {1.0, 5.0, 2.0};
  const Tensor<double> y = pool.forward(x);
  REQUIRE(y.w == 2);
  CHECK(y.data == Buffer<double>{5.0, 2.0});
  Tensor<double> g(1, 1, 1, 1, 2);
  g.data = {1.0, 3.0};
  CHECK(pool.backward(g).data == Buffer<double>{0.0, 1.0, 3.0});
}

TEST_CASE("reshape and upsample gradients") {
  Sequential<double> net;
  auto& fc = net.add(std::make_unique<Linear<double>>(4, 2 * 2 * 2 * 1));
  std::mt19937_64 rng(6);
  fc.init_kaiming(rng);
  net.add(std::make_unique<Reshape<double>>(2, 2, 2, 1));
  net.add(std::make_unique<Upsample<double>>(3, 4, 3));
  gradcheck(net, random_tensor(2, 4, 1, 1, 1, 7), 40);
}

TEST_CASE("adam takes a learning-rate sized first step") {
  Param<double> p("w", 2);
  p.value = {1.0, -1.0};
  p.grad = {0.5, -2.0};
  Adam<double> opt({&p}, 0.1);
  opt.step();
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-6));
}
