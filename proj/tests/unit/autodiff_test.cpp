#include <doctest.h>

#include <cmath>
#include <vector>

#include "lagcast/autodiff.hpp"
#include "lagcast/gradcheck.hpp"
#include "lagcast/rng.hpp"

using namespace lagcast;
using ad::Var;

namespace {

Tensor<double> randn(Rng& rng, Shape s) {
    Tensor<double> t(s);
    for (auto& v : t.vec()) v = rng.gaussian();
    return t;
}

/// Straightforward dense convolution used as an independent oracle.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w,
                              const std::vector<double>& bias, int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const int Ho = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int Wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor<double> out({xs.b, ws.b, Ho, Wo});
    for (int b = 0; b < xs.b; ++b)
        for (int co = 0; co < ws.b; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int kh = 0; kh < ws.h; ++kh)
                            for (int kw = 0; kw < ws.w; ++kw) {
                                const int ih = oh * stride + kh - pad;
                                const int iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                                acc += w.at(co, ci, kh, kw) * x.at(b, ci, ih, iw);
                            }
                    out.at(b, co, oh, ow) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("elementwise forward values") {
    auto a = Var<double>::constant(Tensor<double>(Shape{1, 1, 1, 3}, {1.0, -2.0, 3.0}));
    auto b = Var<double>::constant(Tensor<double>(Shape{1, 1, 1, 3}, {0.5, 4.0, -1.0}));
    CHECK(ad::add(a, b).value().vec() == std::vector<double>{1.5, 2.0, 2.0});
    CHECK(ad::sub(a, b).value().vec() == std::vector<double>{0.5, -6.0, 4.0});
    CHECK(ad::mul(a, b).value().vec() == std::vector<double>{0.5, -8.0, -3.0});
    CHECK(ad::add_scalar(a, 1.0).value().vec() == std::vector<double>{2.0, -1.0, 4.0});
    CHECK(ad::mul_scalar(a, -2.0).value().vec() == std::vector<double>{-2.0, 4.0, -6.0});
    CHECK(ad::relu(a).value().vec() == std::vector<double>{1.0, 0.0, 3.0});
    CHECK(ad::abs(a).value().vec() == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(ad::clamp_min(a, 0.5).value().vec() == std::vector<double>{1.0, 0.5, 3.0});
    CHECK(ad::leaky_relu(a, 0.1).value().vec() == std::vector<double>{1.0, -0.2, 3.0});
}

TEST_CASE("relu gradient is 0 below zero and 1 above") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 2}, {-1.0, 2.0}), true);
    ad::backward(ad::sum_all(ad::relu(x)));
    CHECK(x.grad().vec()[0] == 0.0);
    CHECK(x.grad().vec()[1] == 1.0);
}

TEST_CASE("sum of squares has gradient 2x exactly") {
    Rng rng(3);
    auto xt = randn(rng, {2, 1, 3, 3});
    auto x = Var<double>::leaf(xt, true);
    ad::backward(ad::sum_all(ad::mul(x, x)));
    for (std::size_t i = 0; i < xt.vec().size(); ++i) CHECK(x.grad().vec()[i] == 2.0 * xt.vec()[i]);
}

TEST_CASE("two backward calls double leaf gradients exactly") {
    Rng rng(4);
    auto x = Var<double>::leaf(randn(rng, {1, 2, 3, 3}), true);
    auto root = ad::sum_all(ad::mul(x, x));
    ad::backward(root);
    const std::vector<double> once = x.grad().vec();
    ad::backward(root);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad().vec()[i] == 2.0 * once[i]);
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 2, 2}), true);
    CHECK_THROWS_AS(ad::backward(ad::relu(x)), ShapeError);
}

TEST_CASE("shape mismatches name the operation") {
    auto a = Var<double>::constant(Tensor<double>(Shape{1, 1, 2, 2}));
    auto b = Var<double>::constant(Tensor<double>(Shape{1, 1, 2, 3}));
    CHECK_THROWS_WITH_AS(ad::add(a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_WITH_AS(ad::mul(a, b), doctest::Contains("mul"), ShapeError);
}

TEST_CASE("conv2d with identity kernel reproduces the input") {
    Rng rng(5);
    auto xt = randn(rng, {2, 1, 6, 7});
    Tensor<double> k(Shape{1, 1, 3, 3});
    k.at(0, 0, 1, 1) = 1.0;
    auto y = ad::conv2d(Var<double>::constant(xt), Var<double>::constant(k), Var<double>(), 1, 1);
    REQUIRE(y.shape() == xt.shape());
    for (std::size_t i = 0; i < xt.vec().size(); ++i) CHECK(y.value().vec()[i] == xt.vec()[i]);
}

TEST_CASE("conv2d matches the dense reference over strides and paddings") {
    Rng rng(6);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1, 2}) {
            auto xt = randn(rng, {2, 3, 9, 8});
            auto wt = randn(rng, {4, 3, 3, 3});
            std::vector<double> bias = {0.3, -1.0, 0.0, 2.0};
            Tensor<double> bt(Shape{1, 4, 1, 1}, std::vector<double>(bias));
            auto y = ad::conv2d(Var<double>::constant(xt), Var<double>::constant(wt),
                                Var<double>::constant(bt), stride, pad);
            auto ref = conv_reference(xt, wt, bias, stride, pad);
            REQUIRE(y.shape() == ref.shape());
            for (std::size_t i = 0; i < ref.vec().size(); ++i)
                CHECK(y.value().vec()[i] == doctest::Approx(ref.vec()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv2d validates kernel size and channel counts") {
    auto x = Var<double>::constant(Tensor<double>(Shape{1, 2, 6, 6}));
    CHECK_THROWS_WITH_AS(
        ad::conv2d(x, Var<double>::constant(Tensor<double>(Shape{1, 2, 2, 2})), Var<double>(), 1, 1),
        doctest::Contains("odd"), ShapeError);
    CHECK_THROWS_WITH_AS(
        ad::conv2d(x, Var<double>::constant(Tensor<double>(Shape{1, 3, 3, 3})), Var<double>(), 1, 1),
        doctest::Contains("channels"), ShapeError);
}

TEST_CASE("gradient of mean(conv2d) matches finite differences") {
    Rng rng(7);
    auto xt = randn(rng, {1, 2, 6, 6});
    auto wt = randn(rng, {2, 2, 3, 3});
    const double err = gradcheck::max_rel_error(
        [](std::vector<Var<double>>& in) {
            return ad::mean_all(ad::conv2d(in[0], in[1], Var<double>(), 1, 1));
        },
        {xt, wt});
    CHECK(err < 1e-5);
}

TEST_CASE("max_pool2d picks maxima and routes gradient to the first tie") {
    Tensor<double> xt(Shape{1, 1, 2, 4}, {5.0, 5.0, 1.0, 7.0, 2.0, 3.0, 7.0, 4.0});
    auto x = Var<double>::leaf(xt, true);
    auto y = ad::max_pool2d(x);
    CHECK(y.value().vec() == std::vector<double>{5.0, 7.0});
    ad::backward(ad::sum_all(y));
    // window 1: 5 appears at (0,0) and (0,1); the first in row-major order wins
    CHECK(x.grad().vec() == std::vector<double>{1, 0, 0, 1, 0, 0, 0, 0});
}

TEST_CASE("max_pool2d requires even spatial dims") {
    auto x = Var<double>::constant(Tensor<double>(Shape{1, 1, 3, 4}));
    CHECK_THROWS_WITH_AS(ad::max_pool2d(x), doctest::Contains("even"), ShapeError);
}

TEST_CASE("upsample_nearest2 repeats values and sums gradients") {
    Tensor<double> xt(Shape{1, 1, 1, 2}, {3.0, -1.0});
    auto x = Var<double>::leaf(xt, true);
    auto y = ad::upsample_nearest2(x);
    CHECK(y.value().vec() == std::vector<double>{3, 3, -1, -1, 3, 3, -1, -1});
    ad::backward(ad::sum_all(y));
    CHECK(x.grad().vec() == std::vector<double>{4.0, 4.0});
}

TEST_CASE("concat, slice_channels and crop round-trip") {
    Rng rng(8);
    auto a = randn(rng, {1, 2, 3, 3});
    auto b = randn(rng, {1, 1, 3, 3});
    auto cat = ad::concat<double>({Var<double>::constant(a), Var<double>::constant(b)});
    CHECK(cat.shape() == Shape{1, 3, 3, 3});
    auto back = ad::slice_channels(cat, 0, 2);
    for (std::size_t i = 0; i < a.vec().size(); ++i) CHECK(back.value().vec()[i] == a.vec()[i]);
    auto c = ad::crop(cat, 1, 0, 2, 3);
    CHECK(c.shape() == Shape{1, 3, 2, 3});
    CHECK(c.value().at(0, 0, 0, 0) == a.at(0, 0, 1, 0));
}

TEST_CASE("grid sampling at identity coordinates returns the input exactly") {
    Rng rng(9);
    auto xt = randn(rng, {1, 3, 5, 6});
    Tensor<double> coords(Shape{1, 2, 5, 6});
    for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 6; ++w) {
            coords.at(0, 0, h, w) = w;
            coords.at(0, 1, h, w) = h;
        }
    auto y = ad::grid_sample_bilinear(Var<double>::constant(xt), Var<double>::constant(coords));
    for (std::size_t i = 0; i < xt.vec().size(); ++i) CHECK(y.value().vec()[i] == xt.vec()[i]);
}

TEST_CASE("grid sampling outside the domain reads zero and has zero coordinate gradient") {
    Rng rng(10);
    auto xt = randn(rng, {1, 1, 4, 4});
    Tensor<double> coords(Shape{1, 2, 1, 2});
    coords.at(0, 0, 0, 0) = -7.5;  // fully outside
    coords.at(0, 1, 0, 0) = 2.25;
    coords.at(0, 0, 0, 1) = 1.5;  // interior
    coords.at(0, 1, 0, 1) = 1.5;
    auto x = Var<double>::constant(xt);
    auto c = Var<double>::leaf(coords, true);
    auto y = ad::grid_sample_bilinear(x, c);
    CHECK(y.value().vec()[0] == 0.0);
    ad::backward(ad::sum_all(y));
    CHECK(c.grad().at(0, 0, 0, 0) == 0.0);
    CHECK(c.grad().at(0, 1, 0, 0) == 0.0);
    CHECK(c.grad().at(0, 0, 0, 1) != 0.0);
}

TEST_CASE("grid sampling coordinate gradients match finite differences on an 8x8 input") {
    Rng rng(11);
    auto xt = randn(rng, {1, 1, 8, 8});
    Tensor<double> coords(Shape{1, 2, 4, 4});
    for (int ch = 0; ch < 2; ++ch)
        for (std::int64_t i = 0; i < coords.shape().spatial(); ++i)
            coords.plane(0, ch)[i] = std::floor(rng.uniform(-1.0, 8.0)) + rng.uniform(0.2, 0.8);
    const double err = gradcheck::max_rel_error(
        [&xt](std::vector<Var<double>>& in) {
            auto y = ad::grid_sample_bilinear(Var<double>::constant(xt), in[0]);
            return ad::mean_all(ad::mul(y, y));
        },
        {coords});
    CHECK(err < 1e-5);
}

TEST_CASE("divergence is exact for affine motion away from the borders") {
    // u_x = 0.3x - 0.1y, u_y = 0.2x + 0.5y has divergence 0.3 + 0.5 everywhere
    const int H = 7, W = 9;
    Tensor<double> m(Shape{1, 2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            m.at(0, 0, y, x) = 0.3 * x - 0.1 * y;
            m.at(0, 1, y, x) = 0.2 * x + 0.5 * y;
        }
    auto d = ad::divergence(Var<double>::constant(m));
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x)
            CHECK(d.value().at(0, 0, y, x) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("divergence of a uniform translation field is zero everywhere") {
    Tensor<double> m(Shape{2, 2, 6, 6});
    for (int b = 0; b < 2; ++b) {
        for (std::int64_t i = 0; i < 36; ++i) {
            m.plane(b, 0)[i] = 1.7;
            m.plane(b, 1)[i] = -2.3;
        }
    }
    auto d = ad::divergence(Var<double>::constant(m));
    for (double v : d.value().vec()) CHECK(v == 0.0);
}

TEST_CASE("divergence gradient matches finite differences") {
    Rng rng(12);
    auto mt = randn(rng, {1, 2, 6, 6});
    const double err = gradcheck::max_rel_error(
        [](std::vector<Var<double>>& in) {
            auto d = ad::divergence(in[0]);
            return ad::mean_all(ad::mul(d, d));
        },
        {mt});
    CHECK(err < 1e-5);
}

TEST_CASE("detach blocks gradient flow") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1.0, 2.0}), true);
    auto d = ad::detach(ad::mul(x, x));
    CHECK_FALSE(d.requires_grad());
    auto y = ad::sum_all(ad::mul(d, d));
    ad::backward(y);
    CHECK(x.grad().numel() == 0);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1.0, 2.0}), true);
    ad::Var<double> y;
    {
        ad::NoGradGuard ng;
        y = ad::sum_all(ad::mul(x, x));
    }
    CHECK_FALSE(y.requires_grad());
    ad::backward(y);
    CHECK(x.grad().numel() == 0);
}

TEST_CASE("sigmoid and tanh gradients match finite differences") {
    Rng rng(13);
    const double err = gradcheck::max_rel_error(
        [](std::vector<Var<double>>& in) {
            return ad::mean_all(ad::mul(ad::sigmoid(in[0]), ad::tanh(in[1])));
        },
        {randn(rng, {1, 2, 4, 4}), randn(rng, {1, 2, 4, 4})});
    CHECK(err < 1e-5);
}
