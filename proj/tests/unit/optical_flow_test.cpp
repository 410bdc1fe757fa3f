/// @file optical_flow_test.cpp
/// @brief Lucas-Kanade motion recovery, corner selection, and degenerate
///        input handling.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "lagcast/advection.hpp"
#include "lagcast/autodiff.hpp"
#include "lagcast/optical_flow.hpp"

using lagcast::FieldSequence;
using lagcast::RainField;
using lagcast::Shape;
using lagcast::TensorF;
using lagcast::ValidationError;
namespace flow = lagcast::flow;

namespace {

RainField blob_field(int h, int w, double cr, double cc, double peak, double sigma, int timestamp) {
    RainField f;
    f.height = h;
    f.width = w;
    f.timestamp = timestamp;
    f.values.resize(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
            f.values[static_cast<std::size_t>(r) * w + c] =
                static_cast<float>(peak * std::exp(-d2 / (2 * sigma * sigma)));
        }
    return f;
}

FieldSequence blob_sequence(int frames, double r0, double c0, double vr, double vc) {
    FieldSequence seq;
    for (int t = 0; t < frames; ++t)
        seq.fields.push_back(blob_field(64, 64, r0 + t * vr, c0 + t * vc, 20.0, 5.0, t));
    return seq;
}

}  // namespace

TEST_CASE("identical fields produce (near) zero motion") {
    FieldSequence seq;
    for (int t = 0; t < 4; ++t) seq.fields.push_back(blob_field(64, 64, 30, 30, 15.0, 6.0, t));
    auto mf = flow::lucas_kanade_flow(seq);
    CHECK_FALSE(mf.no_features);
    float max_abs = 0.0f;
    for (float v : mf.motion.vec()) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs < 0.05f);
}

TEST_CASE("translating blob motion is recovered at blob locations") {
    auto seq = blob_sequence(4, 24.0, 20.0, 1.0, 2.0);  // (2, 1) px/step as (x, y)
    auto mf = flow::lucas_kanade_flow(seq);
    CHECK_FALSE(mf.no_features);
    // Sample around the trajectory midpoint.
    const int mr = 25, mc = 23;
    for (int r = mr - 4; r <= mr + 4; ++r)
        for (int c = mc - 4; c <= mc + 4; ++c) {
            CHECK(std::abs(mf.motion.at(0, 0, r, c) - 2.0f) <= 0.25f);
            CHECK(std::abs(mf.motion.at(0, 1, r, c) - 1.0f) <= 0.25f);
        }
}

TEST_CASE("all-zero sequence yields zero motion and the warning flag") {
    FieldSequence seq;
    for (int t = 0; t < 3; ++t) {
        RainField f;
        f.height = 32;
        f.width = 32;
        f.timestamp = t;
        f.values.assign(32 * 32, 0.0f);
        seq.fields.push_back(f);
    }
    auto mf = flow::lucas_kanade_flow(seq);
    CHECK(mf.no_features);
    for (float v : mf.motion.vec()) CHECK(v == 0.0f);
}

TEST_CASE("flow estimation is deterministic") {
    auto seq = blob_sequence(4, 28.0, 24.0, 0.5, 1.5);
    auto a = flow::lucas_kanade_flow(seq);
    auto b = flow::lucas_kanade_flow(seq);
    CHECK(a.motion.vec() == b.motion.vec());
}

TEST_CASE("translation equivariance at feature locations") {
    auto base = blob_sequence(4, 22.0, 18.0, 1.0, 2.0);
    auto shifted = blob_sequence(4, 22.0 + 8, 18.0 + 11, 1.0, 2.0);
    auto fa = flow::lucas_kanade_flow(base);
    auto fb = flow::lucas_kanade_flow(shifted);
    const int mr = 23, mc = 21;
    for (int r = mr - 3; r <= mr + 3; ++r)
        for (int c = mc - 3; c <= mc + 3; ++c) {
            CHECK(std::abs(fa.motion.at(0, 0, r, c) - fb.motion.at(0, 0, r + 8, c + 11)) <= 0.25f);
            CHECK(std::abs(fa.motion.at(0, 1, r, c) - fb.motion.at(0, 1, r + 8, c + 11)) <= 0.25f);
        }
}

TEST_CASE("corner selection: uniform fields and zero budgets give no points") {
    RainField uniform;
    uniform.height = 32;
    uniform.width = 32;
    uniform.values.assign(32 * 32, 3.0f);
    CHECK(flow::feature_points(uniform, 50).empty());

    auto blob = blob_field(32, 32, 16, 16, 20.0, 4.0, 0);
    CHECK(flow::feature_points(blob, 0).empty());
}

TEST_CASE("corner selection: saturated blob points sit on the blob rim") {
    // A flat-topped cell: the core has zero gradient, so every selected
    // point must lie on the boundary band where the intensity falls off.
    auto blob = blob_field(64, 64, 32, 32, 25.0, 6.0, 0);
    for (auto& v : blob.values) v = std::min(v, 15.0f);
    auto pts = flow::feature_points(blob, 40);
    REQUIRE_FALSE(pts.empty());
    for (const auto& p : pts) {
        const double d = std::hypot(p.row - 32.0, p.col - 32.0);
        CHECK(d >= 2.0);
        CHECK(d <= 21.0);
    }
    // Deterministic ordering: strictly sorted by (score desc, row, col).
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const auto& a = pts[i - 1];
        const auto& b = pts[i];
        const bool ordered = a.score > b.score ||
                             (a.score == b.score &&
                              (a.row < b.row || (a.row == b.row && a.col < b.col)));
        CHECK(ordered);
    }
}

TEST_CASE("LK extrapolation beats persistence on a translating sequence") {
    auto seq = blob_sequence(5, 24.0, 20.0, 1.0, 2.0);
    FieldSequence inputs;
    for (int t = 0; t < 4; ++t) inputs.fields.push_back(seq.fields[static_cast<std::size_t>(t)]);
    const auto& target = seq.fields[4];

    auto mf = flow::lucas_kanade_flow(inputs);
    TensorF last(Shape{1, 1, 64, 64});
    for (std::size_t i = 0; i < last.vec().size(); ++i)
        last.vec()[i] = inputs.fields[3].values[i];
    namespace ad = lagcast::ad;
    auto warped = lagcast::advect::extrapolate(ad::Var<float>::constant(last),
                                               ad::Var<float>::constant(mf.motion), 1);

    double mse_lk = 0.0, mse_persist = 0.0;
    for (std::size_t i = 0; i < target.values.size(); ++i) {
        const double dl = warped.value().vec()[i] - target.values[i];
        const double dp = inputs.fields[3].values[i] - target.values[i];
        mse_lk += dl * dl;
        mse_persist += dp * dp;
    }
    CHECK(mse_lk <= 0.2 * mse_persist);
}

TEST_CASE("configuration and input validation") {
    flow::PyramidConfig bad;
    bad.levels = 0;
    CHECK_THROWS_AS(flow::validate_pyramid_config(bad), ValidationError);
    flow::PyramidConfig bad2;
    bad2.window_radius = 1;
    CHECK_THROWS_AS(flow::validate_pyramid_config(bad2), ValidationError);

    FieldSequence one;
    one.fields.push_back(blob_field(32, 32, 16, 16, 10.0, 4.0, 0));
    CHECK_THROWS_AS(flow::lucas_kanade_flow(one), ValidationError);
}
