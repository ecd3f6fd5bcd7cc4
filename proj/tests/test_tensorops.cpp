#include <cmath>
#include <sstream>

#include "doctest.h"
#include "llts/errors.hpp"
#include "llts/gradcheck.hpp"
#include "llts/ops.hpp"
#include "llts/serialize.hpp"
#include "test_util.hpp"

using namespace llts;
using namespace llts::testing;

TEST_SUITE("conv2d") {
  TEST_CASE("scaling kernel") {
    ConvSpec s = ConvSpec::make(1, 1, 1, 1);
    s.weight.mutable_data()[0] = 2.0;
    Tensor y = conv2d(Tensor({1, 1, 3, 3}, 1.0), s);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (double v : y.data()) CHECK(v == 2.0);
  }

  TEST_CASE("identity kernel is the identity map") {
    for (std::size_t k : {1u, 3u, 5u}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ConvSpec s = ConvSpec::make(3, 3, k, k, 1, (k - 1) / 2);
        for (std::size_t c = 0; c < 3; ++c)
          s.weight.mutable_data()[((c * 3 + c) * k + k / 2) * k + k / 2] = 1.0;
        Tensor x = random_tensor({2, 3, 6, 7}, seed);
        CHECK(max_abs_diff(conv2d(x, s), x) == 0.0);
      }
    }
  }

  TEST_CASE("matches the direct loop oracle") {
    ConvSpec s = ConvSpec::make(3, 4, 3, 3, 1, 1);
    randomize(s, 11);
    Tensor x = random_tensor({2, 3, 5, 5}, 12);
    CHECK(max_rel_diff(conv2d(x, s), conv_oracle_tensor(x, s)) < 1e-6);

    ConvSpec strided = ConvSpec::make(3, 5, 3, 3, 2, 1);
    randomize(strided, 13);
    Tensor x2 = random_tensor({3, 3, 9, 8}, 14);
    Tensor y2 = conv2d(x2, strided);
    CHECK(y2.shape() == Shape{3, 5, 5, 4});
    CHECK(max_rel_diff(y2, conv_oracle_tensor(x2, strided)) < 1e-12);
  }

  TEST_CASE("errors") {
    ConvSpec s = ConvSpec::make(3, 4, 3, 3, 1, 0);
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 5, 5}), s), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 3, 2, 2}), s), ShapeError);
    Tensor bad({1, 3, 5, 5});
    bad.mutable_data()[7] = NAN;
    CHECK_THROWS_AS(conv2d(bad, s), NumericError);
    try {
      conv2d(Tensor({1, 2, 5, 5}), s);
    } catch (const ShapeError& e) {
      std::string msg = e.what();
      CHECK(msg.find("[1,2,5,5]") != std::string::npos);
      CHECK(msg.find("[4,3,3,3]") != std::string::npos);
    }
  }
}

TEST_SUITE("bilinear_upsample") {
  TEST_CASE("constant maps stay constant") {
    Tensor y = bilinear_upsample(Tensor({1, 2, 3, 5}, 7.0), 11, 13);
    for (double v : y.data()) CHECK(v == 7.0);
  }

  TEST_CASE("same size is identity") {
    Tensor x = random_tensor({2, 3, 4, 5}, 3);
    CHECK(max_abs_diff(bilinear_upsample(x, 4, 5), x) == 0.0);
  }

  TEST_CASE("2x2 to 4x4 equals half-pixel hand evaluation") {
    // The input is f(y, x) = 2y + x, so the output is f at the clamped
    // half-pixel sample coordinates {0, 0.25, 0.75, 1}.
    Tensor x({1, 1, 2, 2}, {0, 1, 2, 3});
    const std::vector<double> expected{0,   0.25, 0.75, 1,    0.5, 0.75, 1.25, 1.5,
                                       1.5, 1.75, 2.25, 2.5,  2,   2.25, 2.75, 3};
    CHECK(max_abs_diff(bilinear_upsample(x, 4, 4).data(), expected) < 1e-15);
  }

  TEST_CASE("min/max envelope is preserved") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Tensor x = random_tensor({1, 2, 3, 4}, seed, -5, 5);
      Tensor y = bilinear_upsample(x, 10, 9);
      auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
      for (double v : y.data()) {
        CHECK(v >= *lo - 1e-12);
        CHECK(v <= *hi + 1e-12);
      }
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(bilinear_upsample(Tensor({1, 1, 2, 2}), 0, 4), ShapeError);
    CHECK_THROWS_AS(bilinear_upsample(Tensor({1, 1, 4, 4}), 2, 4), ShapeError);
  }
}

TEST_SUITE("gaussian_blur") {
  TEST_CASE("kernel is normalized") {
    for (std::size_t k : {1u, 3u, 5u, 7u})
      for (double s : {0.3, 1.0, 2.5}) {
        auto ker = gaussian_kernel(k, s);
        double total = 0;
        for (double v : ker) total += v;
        CHECK(std::fabs(total - 1.0) < 1e-12);
      }
  }

  TEST_CASE("constant image unchanged") {
    Tensor y = gaussian_blur(Tensor({1, 3, 6, 6}, 0.25), 5, 1.0);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
  }

  TEST_CASE("impulse response is the kernel") {
    Tensor x({1, 1, 5, 5});
    x.mutable_data()[12] = 1.0;
    Tensor y = gaussian_blur(x, 3, 1.0);
    // exp(-(i^2 + j^2) / 2) / Z with Z = 1 + 4 e^-0.5 + 4 e^-1.
    const double center = 0.2041799555716581, edge = 0.12384140315297397, corner = 0.07511360795411151;
    CHECK(y.at(0, 0, 2, 2) == doctest::Approx(center).epsilon(1e-14));
    CHECK(y.at(0, 0, 1, 2) == doctest::Approx(edge).epsilon(1e-14));
    CHECK(y.at(0, 0, 2, 3) == doctest::Approx(edge).epsilon(1e-14));
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(corner).epsilon(1e-14));
    CHECK(y.at(0, 0, 3, 3) == doctest::Approx(corner).epsilon(1e-14));
    CHECK(y.at(0, 0, 0, 0) == 0.0);
  }

  TEST_CASE("matches a direct 2-D mirrored-border convolution") {
    auto reflect = [](long i, long n) {
      while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
      return static_cast<std::size_t>(i);
    };
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const std::size_t H = 5 + seed, W = 9 - seed, ks = seed % 2 ? 7 : 5;
      Tensor x = random_tensor({2, 2, H, W}, seed);
      Tensor y = gaussian_blur(x, ks, 1.1);
      auto ker = gaussian_kernel(ks, 1.1);
      const long r = static_cast<long>(ks / 2);
      double worst = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
              double acc = 0.0;
              for (long dy = -r; dy <= r; ++dy)
                for (long dx = -r; dx <= r; ++dx)
                  acc += ker[(dy + r) * ks + (dx + r)] *
                         x.at(n, c, reflect(static_cast<long>(i) + dy, H), reflect(static_cast<long>(j) + dx, W));
              worst = std::max(worst, std::fabs(acc - y.at(n, c, i, j)));
            }
      CHECK(worst < 1e-13);
    }
  }

  TEST_CASE("ksize 1 is identity") {
    Tensor x = random_tensor({1, 2, 4, 4}, 5);
    CHECK(max_abs_diff(gaussian_blur(x, 1, 0.7), x) == 0.0);
  }

  TEST_CASE("channel means preserved") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Tensor x = random_tensor({2, 3, 7, 9}, seed, 0, 1);
      Tensor y = gaussian_blur(x, 5, 1.3);
      Tensor mx = pool_channel_descriptor(x, PoolMode::avg);
      Tensor my = pool_channel_descriptor(y, PoolMode::avg);
      CHECK(max_abs_diff(mx, my) < 1e-6);
    }
  }

  TEST_CASE("even ksize rejected") {
    CHECK_THROWS_AS(gaussian_blur(Tensor({1, 1, 4, 4}), 4, 1.0), UsageError);
  }
}

TEST_SUITE("pooling") {
  TEST_CASE("constant input") {
    Tensor x({2, 3, 4, 4}, 3.0);
    for (PoolMode m : {PoolMode::avg, PoolMode::max}) {
      Tensor c = pool_channel_descriptor(x, m);
      CHECK(c.shape() == Shape{2, 3});
      for (double v : c.data()) CHECK(v == 3.0);
      Tensor s = pool_spatial_descriptor(x, m);
      CHECK(s.shape() == Shape{2, 1, 4, 4});
      for (double v : s.data()) CHECK(v == 3.0);
    }
  }

  TEST_CASE("small arithmetic") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(pool_channel_descriptor(x, PoolMode::avg).item() == 2.5);
    CHECK(pool_channel_descriptor(x, PoolMode::max).item() == 4.0);
    Tensor xc({1, 4, 1, 1}, {1, 2, 3, 4});
    CHECK(pool_spatial_descriptor(xc, PoolMode::avg).item() == 2.5);
    CHECK(pool_spatial_descriptor(xc, PoolMode::max).item() == 4.0);
  }

  TEST_CASE("random input matches loop oracle") {
    Tensor x = random_tensor({2, 3, 4, 5}, 21);
    Tensor ca = pool_channel_descriptor(x, PoolMode::avg);
    Tensor cm = pool_channel_descriptor(x, PoolMode::max);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, m = -INFINITY;
        for (std::size_t h = 0; h < 4; ++h)
          for (std::size_t w = 0; w < 5; ++w) {
            s += x.at(n, c, h, w);
            m = std::max(m, x.at(n, c, h, w));
          }
        CHECK(ca.data()[n * 3 + c] == s / 20.0);
        CHECK(cm.data()[n * 3 + c] == m);
      }
    Tensor sa = pool_spatial_descriptor(x, PoolMode::avg);
    Tensor sm = pool_spatial_descriptor(x, PoolMode::max);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 5; ++w) {
          double s = 0, m = -INFINITY;
          for (std::size_t c = 0; c < 3; ++c) {
            s += x.at(n, c, h, w);
            m = std::max(m, x.at(n, c, h, w));
          }
          CHECK(sa.at(n, 0, h, w) == s / 3.0);
          CHECK(sm.at(n, 0, h, w) == m);
        }
  }
}

TEST_SUITE("elementwise") {
  TEST_CASE("scalar identities") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
    CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(abs(Tensor::scalar(-3.0)).item() == 3.0);
    CHECK(clamp(Tensor::scalar(9.0), -8, 8).item() == 8.0);
    CHECK(scale(Tensor::scalar(1.5), 2.0).item() == 3.0);
  }

  TEST_CASE("channel-weight broadcast matches loop oracle") {
    Tensor w({1, 2}, {0.5, -2.0});
    Tensor f = random_tensor({1, 2, 2, 2}, 4);
    Tensor y = mul(w, f);
    CHECK(y.shape() == f.shape());
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t x = 0; x < 2; ++x) CHECK(y.at(0, c, h, x) == w.data()[c] * f.at(0, c, h, x));
    Tensor beta = random_tensor({1, 1, 2, 2}, 5);
    Tensor z = add(f, beta);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t x = 0; x < 2; ++x)
          CHECK(z.at(0, c, h, x) == f.at(0, c, h, x) + beta.at(0, 0, h, x));
  }

  TEST_CASE("incompatible shapes") {
    CHECK_THROWS_AS(add(Tensor({1, 3, 2, 2}), Tensor({1, 2, 2, 2})), ShapeError);
    CHECK_THROWS_AS(mul(Tensor({2, 3}), Tensor({3, 3})), ShapeError);
  }

  TEST_CASE("non-finite results are errors") {
    CHECK_THROWS_AS(llts::exp(Tensor::scalar(1000.0)), NumericError);
  }
}

TEST_SUITE("shape ops") {
  TEST_CASE("concat then slice recovers parts") {
    Tensor a = random_tensor({2, 3, 2, 2}, 1);
    Tensor b = random_tensor({2, 5, 2, 2}, 2);
    Tensor parts[] = {a, b};
    Tensor c = concat_channels(parts);
    CHECK(c.shape() == Shape{2, 8, 2, 2});
    CHECK(max_abs_diff(slice_channels(c, 0, 3), a) == 0.0);
    CHECK(max_abs_diff(slice_channels(c, 3, 8), b) == 0.0);
    CHECK_THROWS_AS(slice_channels(c, 3, 9), ShapeError);
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("sum of squares") {
    auto f = [](const Tensor& x) { return sum(mul(x, x)); };
    CHECK(grad_check(f, random_tensor({3, 4}, 1), 1e-6) < 1e-6);
  }

  TEST_CASE("sum of conv2d") {
    ConvSpec s = ConvSpec::make(2, 3, 3, 3, 1, 1);
    randomize(s, 7);
    auto f = [&](const Tensor& x) { return sum(conv2d(x, s)); };
    CHECK(grad_check(f, random_tensor({1, 2, 5, 5}, 8), 1e-6) < 1e-4);
  }

  TEST_CASE("sum of sigmoid") {
    auto f = [](const Tensor& x) { return sum(sigmoid(x)); };
    CHECK(grad_check(f, random_tensor({2, 3, 3, 3}, 9, -3, 3), 1e-6) < 1e-5);
  }

  TEST_CASE("a kink within eps falls back to the matching side") {
    // relu(x - 0.3) has its kink 5e-7 above x = 0.3 - 5e-7.
    Tensor x({1}, 0.3 - 5e-7);
    Tensor shift({1}, -0.3);
    GradCheckReport r = grad_check_leaves([&] { return sum(relu(add(x, shift))); }, {x}, 1e-6);
    CHECK(r.kinks == 1);
    CHECK(r.max_rel_error < 1e-8);
  }

  TEST_CASE("a wrong backward is still caught") {
    // Forward 2x, backward claims 3.
    auto bad = [](const Tensor& x) {
      std::vector<double> v(x.data().begin(), x.data().end());
      for (double& e : v) e *= 2.0;
      return detail::make_result(x.shape(), std::move(v), {x}, [](detail::Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * self.grad[i];
      });
    };
    Tensor x = random_tensor({4}, 3);
    GradCheckReport r = grad_check_leaves([&] { return sum(bad(x)); }, {x}, 1e-6);
    CHECK(r.max_rel_error > 0.3);
    CHECK(r.kinks == 0);
    // Just above a kink the wrong slope 3 matches neither side (2 and 0).
    Tensor y({1}, 0.3 + 5e-7), shift({1}, -0.3);
    r = grad_check_leaves([&] { return sum(bad(relu(add(y, shift)))); }, {y}, 1e-6);
    CHECK(r.max_rel_error > 0.3);
  }

  TEST_CASE("errors") {
    auto vec = [](const Tensor& x) { return scale(x, 2.0); };
    CHECK_THROWS_AS(grad_check(vec, random_tensor({3}, 1), 1e-6), ShapeError);
    auto f = [](const Tensor& x) { return sum(x); };
    CHECK_THROWS_AS(grad_check(f, random_tensor({3}, 1), 1e-2), UsageError);
  }

  TEST_CASE("every differentiable op passes on 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CAPTURE(seed);
      Tensor x = random_tensor({2, 3, 5, 6}, seed);
      Tensor probe = random_tensor({2, 3, 5, 6}, seed + 1000);
      auto ws = [](const Tensor& t, std::uint64_t s) { return weighted_sum(t, random_tensor(t.shape(), s).data()); };

      ConvSpec conv = ConvSpec::make(3, 4, 3, 3, 2, 1);
      randomize(conv, seed + 1);
      auto rc = grad_check_leaves([&] { return ws(conv2d(x, conv), seed); }, {x, conv.weight, conv.bias});
      CHECK(rc.max_rel_error <= 1e-4);

      CHECK(grad_check([&](const Tensor& t) { return ws(bilinear_upsample(t, 9, 11), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(gaussian_blur(t, 5, 1.0), seed); }, x) <= 1e-4);
      for (PoolMode m : {PoolMode::avg, PoolMode::max}) {
        CHECK(grad_check([&](const Tensor& t) { return ws(pool_channel_descriptor(t, m), seed); }, x) <= 1e-4);
        CHECK(grad_check([&](const Tensor& t) { return ws(pool_spatial_descriptor(t, m), seed); }, x) <= 1e-4);
      }
      Tensor cw = random_tensor({2, 3}, seed + 3);
      Tensor sw = random_tensor({2, 1, 5, 6}, seed + 4);
      auto rb = grad_check_leaves(
          [&] { return ws(add(mul(cw, x), sub(probe, mul(x, sw))), seed); }, {x, cw, sw, probe});
      CHECK(rb.max_rel_error <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(llts::exp(t), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(llts::abs(t), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(relu(t), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(sigmoid(t), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(softplus(t), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(clamp(t, -0.5, 0.5), seed); }, x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return ws(scale(t, -1.7), seed); }, x) <= 1e-4);
      CHECK(grad_check(
                [&](const Tensor& t) {
                  Tensor parts[] = {slice_channels(t, 1, 3), t};
                  return ws(reshape(concat_channels(parts), {2, 5, 30}), seed);
                },
                x) <= 1e-4);
      CHECK(grad_check([&](const Tensor& t) { return mean(mul(t, t)); }, x) <= 1e-4);
    }
  }
}

TEST_SUITE("autograd core") {
  TEST_CASE("no-grad guard records nothing") {
    Tensor w = random_tensor({3}, 1);
    w.set_requires_grad(true);
    {
      NoGradGuard g;
      Tensor y = sum(mul(w, w));
      CHECK_FALSE(y.requires_grad());
    }
    Tensor y = sum(mul(w, w));
    CHECK(y.requires_grad());
    y.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == 2.0 * w.data()[i]);
  }

  TEST_CASE("shared subexpressions accumulate") {
    Tensor x = Tensor::scalar(3.0);
    x.set_requires_grad(true);
    Tensor a = mul(x, x);
    Tensor y = add(a, a);
    y.backward();
    CHECK(x.grad()[0] == 12.0);
  }

  TEST_CASE("ops are bitwise deterministic") {
    ConvSpec s = ConvSpec::make(4, 6, 3, 3, 1, 1);
    randomize(s, 3);
    Tensor x = random_tensor({3, 4, 12, 12}, 4);
    auto run = [&] {
      Tensor xx = x.detach();
      xx.set_requires_grad(true);
      s.weight.zero_grad();
      Tensor y = sum(sigmoid(gaussian_blur(bilinear_upsample(conv2d(xx, s), 20, 20), 5, 1.0)));
      y.backward();
      std::vector<double> out{y.item()};
      out.insert(out.end(), xx.grad().begin(), xx.grad().end());
      out.insert(out.end(), s.weight.grad().begin(), s.weight.grad().end());
      return out;
    };
    auto a = run();
    auto b = run();
    CHECK(a == b);
  }
}

TEST_SUITE("serialization") {
  TEST_CASE("container round trip and layout") {
    Tensor t = random_tensor({2, 3, 4}, 5);
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.size() == 4 + 4 + 3 * 4 + 24 * 8);
    CHECK(bytes.substr(0, 4) == "LLTS");
    CHECK(static_cast<unsigned char>(bytes[4]) == 3);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    Tensor back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(max_abs_diff(back, t) == 0.0);
  }

  TEST_CASE("bad magic and truncation") {
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_tensor(bad), DataError);
    std::stringstream ss;
    write_tensor(ss, Tensor({4}, 1.0));
    std::string s = ss.str();
    std::stringstream cut(s.substr(0, s.size() - 3));
    CHECK_THROWS_AS(read_tensor(cut), DataError);
  }
}
