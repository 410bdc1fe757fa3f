/// @file models_test.cpp
/// @brief Model assemblies: motion capping, persistence reductions, rollout
///        nesting, checkpoint round trip, gradient routing.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "lagcast/advection.hpp"
#include "lagcast/models.hpp"
#include "lagcast/rng.hpp"

using lagcast::Rng;
using lagcast::Shape;
using lagcast::ShapeError;
using lagcast::TensorF;
using lagcast::ValidationError;
namespace ad = lagcast::ad;
namespace models = lagcast::models;
using models::ModelConfig;
using models::ModelKind;
using models::NowcastModel;
using models::StepOptions;

namespace {

ModelConfig small_config(ModelKind kind) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.window = 6;
    cfg.depth = 2;
    cfg.base_channels = 4;
    return cfg;
}

TensorF moving_blob_frames(int b, int n, int h, int w, double vr, double vc) {
    TensorF t(Shape{b, n, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int f = 0; f < n; ++f) {
            float* p = t.plane(bi, f);
            const double cr = h / 2.0 + f * vr, cc = w / 2.0 + f * vc;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                    p[r * w + c] = static_cast<float>(2.5 * std::exp(-d2 / 8.0));
                }
        }
    return t;
}

void perturb_params(NowcastModel& model, std::uint64_t seed, float scale = 0.05f) {
    Rng rng(seed);
    for (const auto& p : model.params().items()) {
        ad::Var<float> var = p.var;
        for (auto& v : var.value().vec()) v += scale * static_cast<float>(rng.gaussian());
    }
}

bool bitwise_equal(const TensorF& a, const TensorF& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.vec().size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("model kind names round-trip and reject unknowns") {
    for (auto kind : {ModelKind::kLagrangian, ModelKind::kLagrangianLk, ModelKind::kEulerian})
        CHECK(models::parse_model_kind(models::to_string(kind)) == kind);
    CHECK_THROWS_AS(models::parse_model_kind("resnet"), ValidationError);
}

TEST_CASE("network-space transform round-trips rain rates") {
    TensorF rain(Shape{1, 1, 1, 8});
    const float rates[8] = {0.01f, 0.1f, 0.6f, 1.0f, 5.0f, 30.0f, 120.0f, 300.0f};
    for (int i = 0; i < 8; ++i) rain.vec()[static_cast<std::size_t>(i)] = rates[i];
    auto t = models::to_network_space(rain, 0.25f);
    auto back = models::to_rain_space(t, 0.25f);
    for (int i = 0; i < 8; ++i)
        CHECK(back.vec()[static_cast<std::size_t>(i)] ==
              doctest::Approx(rates[i]).epsilon(1e-5));
}

TEST_CASE("predicted motion respects the componentwise cap") {
    auto cfg = small_config(ModelKind::kLagrangian);
    cfg.motion_cap = 3.0f;
    NowcastModel model(cfg, 11);
    perturb_params(model, 12, 2.0f);  // large weights to push tanh toward saturation

    auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.5, 1.0));
    auto motion = model.predict_motion(frames);
    CHECK(motion.shape() == Shape{1, 2, 16, 16});
    // tanh saturates to exactly +/-1 in float, so the cap is inclusive.
    for (float v : motion.value().vec()) {
        CHECK(v >= -3.0f);
        CHECK(v <= 3.0f);
    }

    NowcastModel eulerian(small_config(ModelKind::kEulerian), 13);
    CHECK_THROWS_AS(eulerian.predict_motion(frames), ValidationError);
}

TEST_CASE("freshly initialised model is the persistence map with zero source") {
    // Zero-initialised heads mean u = 0 and S = 0, so the nowcast equals the
    // last input frame exactly and zero input stays zero over a rollout.
    NowcastModel model(small_config(ModelKind::kLagrangian), 21);
    auto frames_t = moving_blob_frames(2, 6, 16, 16, 1.0, 0.5);
    auto frames = ad::Var<float>::constant(frames_t);
    auto out = model.step(frames);
    TensorF last(Shape{2, 1, 16, 16});
    for (int b = 0; b < 2; ++b)
        std::memcpy(last.plane(b, 0), frames_t.plane(b, 5), sizeof(float) * 16 * 16);
    CHECK(bitwise_equal(out.nowcast.value(), last));

    auto zeros = ad::Var<float>::constant(TensorF(Shape{1, 6, 16, 16}));
    auto outputs = model.rollout(zeros, 6);
    REQUIRE(outputs.size() == 6);
    for (const auto& o : outputs)
        for (float v : o.nowcast.value().vec()) CHECK(v == 0.0f);
}

TEST_CASE("forcing zero source reduces the model to Lagrangian persistence") {
    auto cfg = small_config(ModelKind::kLagrangian);
    NowcastModel model(cfg, 31);
    perturb_params(model, 32);

    auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.7, -0.4));
    auto out = model.step(frames, StepOptions{.zero_motion = false, .zero_source = true});

    auto last = ad::slice_channels(frames, 5, 6);
    auto oracle = lagcast::advect::extrapolate(last, out.motion, 1);
    CHECK(bitwise_equal(out.nowcast.value(), oracle.value()));
}

TEST_CASE("forcing zero motion and zero source reduces to Eulerian persistence") {
    NowcastModel model(small_config(ModelKind::kLagrangian), 41);
    perturb_params(model, 42);
    auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.7, -0.4));
    auto out = model.step(frames, StepOptions{.zero_motion = true, .zero_source = true});
    auto last = ad::slice_channels(frames, 5, 6);
    CHECK(bitwise_equal(out.nowcast.value(), last.value()));
}

TEST_CASE("nowcasts are non-negative for arbitrary parameters") {
    for (auto kind : {ModelKind::kLagrangian, ModelKind::kLagrangianLk, ModelKind::kEulerian}) {
        NowcastModel model(small_config(kind), 51);
        perturb_params(model, 52, 0.3f);
        auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.5, 0.5));
        auto out = model.step(frames);
        for (float v : out.nowcast.value().vec()) CHECK(v >= 0.0f);
    }
}

TEST_CASE("rollout equals nested single steps exactly") {
    NowcastModel model(small_config(ModelKind::kLagrangian), 61);
    perturb_params(model, 62);
    auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.6, 1.1));

    auto rolled = model.rollout(frames, 3);
    REQUIRE(rolled.size() == 3);

    ad::Var<float> window = frames;
    for (int k = 0; k < 3; ++k) {
        auto manual = model.step(window);
        CHECK(bitwise_equal(rolled[static_cast<std::size_t>(k)].nowcast.value(),
                            manual.nowcast.value()));
        window = ad::concat<float>({ad::slice_channels(window, 1, 6), manual.nowcast});
    }

    CHECK_THROWS_AS(model.rollout(frames, 0), ValidationError);
}

TEST_CASE("motion gradients are blocked for the LK variant and when detached") {
    auto frames_t = moving_blob_frames(1, 6, 16, 16, 0.5, 1.0);

    SUBCASE("lagrangian-lk: source net trains, motion is a constant") {
        NowcastModel model(small_config(ModelKind::kLagrangianLk), 71);
        perturb_params(model, 72);
        auto frames = ad::Var<float>::constant(frames_t);
        auto out = model.step(frames);
        CHECK_FALSE(out.motion.requires_grad());
        ad::backward(ad::mean_all(ad::mul(out.nowcast, out.nowcast)));
        for (const auto& p : model.params().items()) CHECK(p.var.grad().numel() > 0);
    }

    SUBCASE("detach_motion: motion-net parameters receive no gradient") {
        NowcastModel model(small_config(ModelKind::kLagrangian), 73);
        perturb_params(model, 74);
        auto frames = ad::Var<float>::constant(frames_t);
        auto out = model.step(frames, StepOptions{.detach_motion = true});
        ad::backward(ad::mean_all(ad::mul(out.nowcast, out.nowcast)));
        for (const auto& p : model.params().items()) {
            if (model.is_motion_param(p.name))
                CHECK(p.var.grad().numel() == 0);
            else
                CHECK(p.var.grad().numel() > 0);
        }
    }

    SUBCASE("full step: motion-net parameters do receive gradient") {
        NowcastModel model(small_config(ModelKind::kLagrangian), 75);
        perturb_params(model, 76);
        auto frames = ad::Var<float>::constant(frames_t);
        auto out = model.step(frames);
        ad::backward(ad::mean_all(ad::mul(out.nowcast, out.nowcast)));
        bool any_mf_nonzero = false;
        for (const auto& p : model.params().items()) {
            REQUIRE(p.var.grad().numel() > 0);
            if (model.is_motion_param(p.name))
                for (float g : p.var.grad().vec()) any_mf_nonzero |= (g != 0.0f);
        }
        CHECK(any_mf_nonzero);
    }
}

TEST_CASE("checkpoint round trip preserves parameters and behaviour") {
    NowcastModel model(small_config(ModelKind::kLagrangian), 81);
    perturb_params(model, 82);

    const char* path = "models_test_roundtrip.ckpt";
    lagcast::save_checkpoint(path, model.to_checkpoint());
    auto restored = NowcastModel::from_checkpoint(lagcast::load_checkpoint(path));
    std::remove(path);

    CHECK(restored.config().window == model.config().window);
    CHECK(restored.config().kind == model.config().kind);
    const auto& a = model.params().items();
    const auto& b = restored.params().items();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].var.value().vec() == b[i].var.value().vec());
    }

    auto frames = ad::Var<float>::constant(moving_blob_frames(1, 6, 16, 16, 0.4, 0.9));
    auto out_a = model.step(frames);
    auto out_b = restored.step(frames);
    CHECK(bitwise_equal(out_a.nowcast.value(), out_b.nowcast.value()));
}

TEST_CASE("model configuration is validated") {
    ModelConfig bad = small_config(ModelKind::kLagrangian);
    bad.window = 1;
    CHECK_THROWS_AS(NowcastModel(bad, 1), ValidationError);
    ModelConfig bad2 = small_config(ModelKind::kLagrangian);
    bad2.motion_cap = 0.0f;
    CHECK_THROWS_AS(NowcastModel(bad2, 1), ValidationError);

    NowcastModel model(small_config(ModelKind::kLagrangian), 1);
    TensorF wrong(Shape{1, 5, 16, 16});
    CHECK_THROWS_AS(model.step(ad::Var<float>::constant(wrong)), ShapeError);
}
