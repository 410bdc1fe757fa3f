/// @file advection_test.cpp
/// @brief Semi-Lagrangian extrapolation, Lagrangian transforms, and the
///        divergence penalty.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "lagcast/advection.hpp"
#include "lagcast/autodiff.hpp"
#include "lagcast/rng.hpp"

using lagcast::Shape;
using lagcast::ShapeError;
using lagcast::Tensor;
using lagcast::ValidationError;
namespace ad = lagcast::ad;
namespace adv = lagcast::advect;

namespace {

template <typename T>
Tensor<T> constant_motion(int b, int h, int w, T ux, T uy) {
    Tensor<T> m(Shape{b, 2, h, w});
    for (int bi = 0; bi < b; ++bi) {
        T* x = m.plane(bi, 0);
        T* y = m.plane(bi, 1);
        for (int i = 0; i < h * w; ++i) {
            x[i] = ux;
            y[i] = uy;
        }
    }
    return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) return false;
    return std::memcmp(a.data(), b.data(), a.vec().size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("extrapolate with zero motion is bit-identical to the input") {
    lagcast::Rng rng(91);
    Tensor<float> field(Shape{2, 1, 9, 11});
    for (auto& v : field.vec()) v = static_cast<float>(rng.uniform(0.0, 30.0));
    auto f = ad::Var<float>::constant(field);
    auto u = ad::Var<float>::constant(constant_motion<float>(2, 9, 11, 0.0f, 0.0f));
    for (int t : {1, 2, 3}) {
        auto out = adv::extrapolate(f, u, t);
        CHECK(bitwise_equal(out.value(), field));
    }
}

TEST_CASE("extrapolate with steps = 0 returns the input node unchanged") {
    Tensor<float> field(Shape{1, 1, 4, 4});
    field.fill(3.0f);
    auto f = ad::Var<float>::constant(field);
    auto u = ad::Var<float>::constant(constant_motion<float>(1, 4, 4, 1.0f, 1.0f));
    auto out = adv::extrapolate(f, u, 0);
    CHECK(out.node() == f.node());
}

TEST_CASE("integer-constant motion shifts the field on the interior exactly") {
    // A single bright cell under u = (1, 0) px/step lands one column to the
    // right after one step.
    Tensor<double> field(Shape{1, 1, 8, 8});
    field.at(0, 0, 3, 4) = 7.5;
    auto f = ad::Var<double>::constant(field);
    auto u = ad::Var<double>::constant(constant_motion<double>(1, 8, 8, 1.0, 0.0));
    auto out = adv::extrapolate(f, u, 1);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            double expect = (r == 3 && c == 5) ? 7.5 : 0.0;
            CHECK(out.value().at(0, 0, r, c) == expect);
        }

    // Two steps move it two columns.
    auto out2 = adv::extrapolate(f, u, 2);
    CHECK(out2.value().at(0, 0, 3, 6) == 7.5);

    // Row motion: u = (0, 2) moves it two rows down after one step.
    auto uy = ad::Var<double>::constant(constant_motion<double>(1, 8, 8, 0.0, 2.0));
    auto out3 = adv::extrapolate(f, uy, 1);
    CHECK(out3.value().at(0, 0, 5, 4) == 7.5);
}

TEST_CASE("half-pixel motion matches the hand bilinear oracle") {
    // u = (0.5, 0): the unit cell splits evenly across two adjacent columns.
    Tensor<double> field(Shape{1, 1, 8, 8});
    field.at(0, 0, 4, 4) = 1.0;
    auto f = ad::Var<double>::constant(field);
    auto u = ad::Var<double>::constant(constant_motion<double>(1, 8, 8, 0.5, 0.0));
    auto out = adv::extrapolate(f, u, 1);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            double expect = (r == 4 && (c == 4 || c == 5)) ? 0.5 : 0.0;
            CHECK(out.value().at(0, 0, r, c) == doctest::Approx(expect).epsilon(1e-12));
        }

    // General fractional shift vs a hand-written bilinear pull-back.
    Tensor<double> dense(Shape{1, 1, 8, 8});
    lagcast::Rng rng(17);
    for (auto& v : dense.vec()) v = rng.uniform(0.0, 5.0);
    double ux = 0.3, uy = -0.7;
    auto ud = ad::Var<double>::constant(constant_motion<double>(1, 8, 8, ux, uy));
    auto outd = adv::extrapolate(ad::Var<double>::constant(dense), ud, 1);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            double sx = c - ux, sy = r - uy;
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            auto sample = [&](int y, int x) {
                if (y < 0 || y > 7 || x < 0 || x > 7) return 0.0;
                return dense.at(0, 0, y, x);
            };
            double expect = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                            fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
            CHECK(outd.value().at(0, 0, r, c) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("step composition is exact: t = a + b equals b steps after a steps") {
    lagcast::Rng rng(23);
    Tensor<double> field(Shape{1, 1, 12, 12});
    for (auto& v : field.vec()) v = rng.uniform(0.0, 10.0);
    Tensor<double> motion(Shape{1, 2, 12, 12});
    for (auto& v : motion.vec()) v = rng.uniform(-0.8, 0.8);

    auto f = ad::Var<double>::constant(field);
    auto u = ad::Var<double>::constant(motion);
    auto direct = adv::extrapolate(f, u, 3);
    auto staged = adv::extrapolate(adv::extrapolate(f, u, 2), u, 1);
    CHECK(bitwise_equal(direct.value(), staged.value()));
}

TEST_CASE("smooth constant motion conserves mass on interior-supported fields") {
    // Gaussian blob well away from the border; a constant fractional shift
    // redistributes each cell with bilinear weights that sum to one.
    int H = 32, W = 32;
    Tensor<double> field(Shape{1, 1, H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double dr = r - 16.0, dc = c - 16.0;
            field.at(0, 0, r, c) = 10.0 * std::exp(-(dr * dr + dc * dc) / 18.0);
        }
    auto f = ad::Var<double>::constant(field);
    auto u = ad::Var<double>::constant(constant_motion<double>(1, H, W, 0.3, -0.6));
    auto out = adv::extrapolate(f, u, 2);
    double mass_in = 0.0, mass_out = 0.0;
    for (const auto& v : field.vec()) mass_in += v;
    for (const auto& v : out.value().vec()) mass_out += v;
    CHECK(std::abs(mass_out - mass_in) / mass_in < 1e-5);
}

TEST_CASE("to_lagrangian warps frame i by reference - i steps") {
    lagcast::Rng rng(31);
    int n = 6, H = 10, W = 10;
    Tensor<double> frames(Shape{1, n, H, W});
    for (auto& v : frames.vec()) v = rng.uniform(0.0, 8.0);
    Tensor<double> motion(Shape{1, 2, H, W});
    for (auto& v : motion.vec()) v = rng.uniform(-0.5, 0.5);
    auto fr = ad::Var<double>::constant(frames);
    auto u = ad::Var<double>::constant(motion);

    SUBCASE("reference n + 1: every frame moves, last frame moves once") {
        auto lag = adv::to_lagrangian(fr, u, n + 1);
        CHECK(lag.shape() == frames.shape());
        for (int i = 0; i < n; ++i) {
            auto single = ad::slice_channels(fr, i, i + 1);
            auto oracle = single;
            for (int s = 0; s < n - i; ++s) oracle = adv::extrapolate(oracle, u, 1);
            auto got = ad::slice_channels(lag, i, i + 1);
            CHECK(bitwise_equal(got.value(), oracle.value()));
        }
    }

    SUBCASE("reference n: the last frame is untouched") {
        auto lag = adv::to_lagrangian(fr, u, n);
        auto last = ad::slice_channels(lag, n - 1, n);
        auto orig = ad::slice_channels(fr, n - 1, n);
        CHECK(bitwise_equal(last.value(), orig.value()));
        auto first = ad::slice_channels(lag, 0, 1);
        auto oracle = ad::slice_channels(fr, 0, 1);
        for (int s = 0; s < n - 1; ++s) oracle = adv::extrapolate(oracle, u, 1);
        CHECK(bitwise_equal(first.value(), oracle.value()));
    }

    SUBCASE("zero motion leaves the stack bit-identical") {
        auto uz = ad::Var<double>::constant(constant_motion<double>(1, H, W, 0.0, 0.0));
        auto lag = adv::to_lagrangian(fr, uz, n + 1);
        CHECK(bitwise_equal(lag.value(), frames));
    }

    SUBCASE("reference outside {n, n+1} is rejected") {
        CHECK_THROWS_AS(adv::to_lagrangian(fr, u, n - 1), ValidationError);
        CHECK_THROWS_AS(adv::to_lagrangian(fr, u, n + 2), ValidationError);
    }
}

TEST_CASE("temporal differences are exact pairwise subtractions") {
    Tensor<double> frames(Shape{1, 3, 2, 2});
    double vals[3] = {1.0, 4.0, 9.0};
    for (int i = 0; i < 3; ++i)
        for (int p = 0; p < 4; ++p) frames.plane(0, i)[p] = vals[i] + p;
    auto fr = ad::Var<double>::constant(frames);
    auto d = adv::temporal_difference(fr);
    CHECK(d.shape() == Shape{1, 2, 2, 2});
    for (int p = 0; p < 4; ++p) {
        CHECK(d.value().plane(0, 0)[p] == 3.0);
        CHECK(d.value().plane(0, 1)[p] == 5.0);
    }

    Tensor<double> one(Shape{1, 1, 2, 2});
    CHECK_THROWS_AS(adv::temporal_difference(ad::Var<double>::constant(one)), ShapeError);
}

TEST_CASE("divergence penalty: constant motion scores exactly zero") {
    auto u = ad::Var<double>::constant(constant_motion<double>(1, 9, 9, 1.7, -2.4));
    auto p = adv::divergence_penalty(u);
    CHECK(p.value().at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("divergence penalty: u = (x, y) scores 2 on the interior mean") {
    int H = 12, W = 12;
    Tensor<double> motion(Shape{1, 2, H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            motion.at(0, 0, r, c) = static_cast<double>(c);
            motion.at(0, 1, r, c) = static_cast<double>(r);
        }
    auto p = adv::divergence_penalty(ad::Var<double>::constant(motion));
    CHECK(p.value().at(0, 0, 0, 0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("divergence penalty gradient matches finite differences") {
    lagcast::Rng rng(47);
    Tensor<double> motion(Shape{1, 2, 6, 6});
    for (auto& v : motion.vec()) v = rng.uniform(-1.0, 1.0);
    auto u = ad::Var<double>::leaf(motion, true);
    auto p = adv::divergence_penalty(u);
    ad::backward(p);
    Tensor<double> analytic = u.grad();

    double h = 1e-6, max_err = 0.0;
    for (std::size_t i = 0; i < motion.vec().size(); ++i) {
        auto probe = [&](double delta) {
            ad::NoGradGuard guard;
            Tensor<double> m2 = motion;
            m2.vec()[i] += delta;
            auto val = adv::divergence_penalty(ad::Var<double>::constant(m2));
            return val.value().vec()[0];
        };
        double fd = (probe(h) - probe(-h)) / (2 * h);
        double denom = std::max({1.0, std::abs(analytic.vec()[i]), std::abs(fd)});
        max_err = std::max(max_err, std::abs(analytic.vec()[i] - fd) / denom);
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("extrapolate validates its inputs") {
    Tensor<float> field(Shape{1, 1, 8, 8});
    Tensor<float> motion3(Shape{1, 3, 8, 8});
    Tensor<float> motion_small(Shape{1, 2, 4, 4});
    auto f = ad::Var<float>::constant(field);
    CHECK_THROWS_AS(adv::extrapolate(f, ad::Var<float>::constant(motion3), 1), ShapeError);
    CHECK_THROWS_AS(adv::extrapolate(f, ad::Var<float>::constant(motion_small), 1), ShapeError);
    auto u = ad::Var<float>::constant(constant_motion<float>(1, 8, 8, 0.f, 0.f));
    CHECK_THROWS_AS(adv::extrapolate(f, u, -1), ValidationError);
}

TEST_CASE("gradients flow through composed extrapolation steps") {
    lagcast::Rng rng(53);
    Tensor<double> field(Shape{1, 1, 7, 7});
    for (auto& v : field.vec()) v = rng.uniform(0.0, 4.0);
    Tensor<double> motion(Shape{1, 2, 7, 7});
    for (auto& v : motion.vec()) v = rng.uniform(0.2, 0.8);

    auto f = ad::Var<double>::leaf(field, true);
    auto u = ad::Var<double>::leaf(motion, true);
    auto out = ad::mean_all(adv::extrapolate(f, u, 2));
    ad::backward(out);
    CHECK(f.grad().numel() > 0);
    CHECK(u.grad().numel() > 0);

    double h = 1e-6, max_err = 0.0;
    auto recompute = [&](const Tensor<double>& fv, const Tensor<double>& mv) {
        ad::NoGradGuard guard;
        auto o = ad::mean_all(adv::extrapolate(ad::Var<double>::constant(fv),
                                               ad::Var<double>::constant(mv), 2));
        return o.value().vec()[0];
    };
    for (std::size_t i = 0; i < motion.vec().size(); i += 7) {
        Tensor<double> mp = motion, mm = motion;
        mp.vec()[i] += h;
        mm.vec()[i] -= h;
        double fd = (recompute(field, mp) - recompute(field, mm)) / (2 * h);
        double a = u.grad().vec()[i];
        double denom = std::max({1.0, std::abs(a), std::abs(fd)});
        max_err = std::max(max_err, std::abs(a - fd) / denom);
    }
    CHECK(max_err < 1e-4);
}
