/// @file verification.cpp
/// @brief Forecast scores, motion fitness, and CSV report writers.

#include "lagcast/verification.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>

#include "lagcast/advection.hpp"
#include "lagcast/autodiff.hpp"
#include "lagcast/errors.hpp"

namespace lagcast::verify {

namespace {

constexpr float kRainyThreshold = 0.1f;  ///< mm/h; cells at or above count as rainy

void require_same_shape(const TensorF& a, const TensorF& b, const char* who) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(who) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    if (a.numel() == 0) throw ShapeError(std::string(who) + ": empty tensors");
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string format_threshold(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", static_cast<double>(v));
    return buf;
}

}  // namespace

ContingencyTable contingency(const TensorF& forecast, const TensorF& observed, float threshold) {
    require_same_shape(forecast, observed, "contingency");
    ContingencyTable t;
    const float* f = forecast.data();
    const float* o = observed.data();
    const std::size_t n = forecast.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const bool fp = f[i] >= threshold;
        const bool op = o[i] >= threshold;
        if (fp && op)
            ++t.hits;
        else if (!fp && op)
            ++t.misses;
        else if (fp && !op)
            ++t.false_alarms;
        else
            ++t.correct_negatives;
    }
    return t;
}

void accumulate(ContingencyTable& table, const ContingencyTable& other) {
    table.hits += other.hits;
    table.misses += other.misses;
    table.false_alarms += other.false_alarms;
    table.correct_negatives += other.correct_negatives;
}

std::optional<double> precision(const ContingencyTable& t) {
    const std::int64_t denom = t.hits + t.false_alarms;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(t.hits) / static_cast<double>(denom);
}

std::optional<double> recall(const ContingencyTable& t) {
    const std::int64_t denom = t.hits + t.misses;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(t.hits) / static_cast<double>(denom);
}

std::optional<double> equitable_threat_score(const ContingencyTable& t) {
    const std::int64_t total = t.total();
    if (total == 0) return std::nullopt;
    const double hr = static_cast<double>(t.hits + t.misses) *
                      static_cast<double>(t.hits + t.false_alarms) / static_cast<double>(total);
    const double denom = static_cast<double>(t.hits + t.misses + t.false_alarms) - hr;
    if (denom == 0.0) return std::nullopt;
    return (static_cast<double>(t.hits) - hr) / denom;
}

double mse(const TensorF& forecast, const TensorF& observed) {
    require_same_shape(forecast, observed, "mse");
    const float* f = forecast.data();
    const float* o = observed.data();
    const std::size_t n = forecast.numel();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(f[i]) - static_cast<double>(o[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(n);
}

double mean_error(const TensorF& forecast, const TensorF& observed) {
    require_same_shape(forecast, observed, "mean_error");
    const float* f = forecast.data();
    const float* o = observed.data();
    const std::size_t n = forecast.numel();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        sum += static_cast<double>(f[i]) - static_cast<double>(o[i]);
    return sum / static_cast<double>(n);
}

std::vector<float> default_thresholds() { return {1.0f, 5.0f, 10.0f}; }

namespace {

struct WindowGeometry {
    Shape shape;
    int input_frames = 0;
};

WindowGeometry check_windows(const std::vector<TensorF>& windows, int input_frames, int leads,
                             const char* who) {
    if (windows.empty()) throw ValidationError(std::string(who) + ": no evaluation windows");
    if (leads < 1) throw ValidationError(std::string(who) + ": need at least one lead");
    const Shape s = windows.front().shape();
    if (s.b != 1) throw ShapeError(std::string(who) + ": windows must be single-sample stacks");
    if (s.c < input_frames + leads)
        throw ShapeError(std::string(who) + ": windows hold " + std::to_string(s.c) +
                         " frames but " + std::to_string(input_frames + leads) + " are needed");
    for (const auto& w : windows)
        if (!(w.shape() == s)) throw ShapeError(std::string(who) + ": inconsistent window shapes");
    return {s, input_frames};
}

TensorF window_inputs(const TensorF& window, int input_frames) {
    const Shape s = window.shape();
    TensorF x(Shape{1, input_frames, s.h, s.w});
    std::memcpy(x.data(), window.data(),
                sizeof(float) * static_cast<std::size_t>(input_frames) * s.h * s.w);
    return x;
}

TensorF window_lead(const TensorF& window, int input_frames, int lead) {
    const Shape s = window.shape();
    TensorF y(Shape{1, 1, s.h, s.w});
    std::memcpy(y.data(), window.plane(0, input_frames + lead - 1),
                sizeof(float) * static_cast<std::size_t>(s.h) * s.w);
    return y;
}

/// Per-lead pooled accumulators shared by the fitness paths.
struct FitnessAccum {
    double abs_div = 0.0;
    std::int64_t rainy_cells = 0;
    double sq_err = 0.0;
    std::int64_t cells = 0;
};

/// Runs the shared mask/divergence/error pooling. `provide` fills, for one
/// window, the per-lead motion fields and network-space predictions.
MotionFitnessReport fitness_impl(
    const std::string& source, const std::vector<TensorF>& windows, int input_frames, int leads,
    float norm_scale,
    const std::function<void(const TensorF&, std::vector<TensorF>&, std::vector<TensorF>&)>&
        provide) {
    check_windows(windows, input_frames, leads, "motion_fitness");
    ad::NoGradGuard guard;
    std::vector<FitnessAccum> acc(static_cast<std::size_t>(leads));

    for (const auto& window : windows) {
        std::vector<TensorF> motions, preds;
        provide(window, motions, preds);

        // Rainy mask from the last observed frame, in rain space.
        const Shape s = window.shape();
        const float* last = window.plane(0, input_frames - 1);
        std::vector<bool> rainy(static_cast<std::size_t>(s.h) * s.w);
        for (std::size_t i = 0; i < rainy.size(); ++i)
            rainy[i] = std::expm1(std::max(last[i], 0.0f) / norm_scale) >= kRainyThreshold;

        for (int k = 0; k < leads; ++k) {
            auto& a = acc[static_cast<std::size_t>(k)];
            TensorF div =
                ad::divergence(ad::Var<float>::constant(motions[static_cast<std::size_t>(k)]), 1.0f)
                    .value();
            const float* d = div.data();
            for (std::size_t i = 0; i < rainy.size(); ++i)
                if (rainy[i]) {
                    a.abs_div += std::abs(static_cast<double>(d[i]));
                    ++a.rainy_cells;
                }

            const TensorF pred =
                models::to_rain_space(preds[static_cast<std::size_t>(k)], norm_scale);
            const TensorF obs = models::to_rain_space(
                window_lead(window, input_frames, k + 1), norm_scale);
            const float* p = pred.data();
            const float* o = obs.data();
            for (std::size_t i = 0; i < rainy.size(); ++i) {
                const double e = static_cast<double>(p[i]) - static_cast<double>(o[i]);
                a.sq_err += e * e;
                ++a.cells;
            }
        }
    }

    MotionFitnessReport report;
    report.source = source;
    for (int k = 0; k < leads; ++k) {
        const auto& a = acc[static_cast<std::size_t>(k)];
        MotionLeadFitness lf;
        lf.lead = k + 1;
        if (a.rainy_cells > 0)
            lf.mean_abs_divergence = a.abs_div / static_cast<double>(a.rainy_cells);
        lf.extrapolation_mse = a.sq_err / static_cast<double>(a.cells);
        report.leads.push_back(lf);
    }
    return report;
}

}  // namespace

EvaluationReport evaluate_model(const models::NowcastModel& model, const std::string& name,
                                const std::vector<TensorF>& windows, const EvaluateOptions& opts) {
    const int input_frames = model.config().window;
    check_windows(windows, input_frames, opts.leads, "evaluate_model");
    const float scale = model.config().norm_scale;
    ad::NoGradGuard guard;

    struct LeadAccum {
        double sq = 0.0, err = 0.0;
        std::int64_t cells = 0;
        std::vector<ContingencyTable> tables;
    };
    std::vector<LeadAccum> acc(static_cast<std::size_t>(opts.leads));
    for (auto& a : acc) a.tables.resize(opts.thresholds.size());

    for (const auto& window : windows) {
        auto inputs = ad::Var<float>::constant(window_inputs(window, input_frames));
        auto outs = model.rollout(inputs, opts.leads);
        for (int k = 0; k < opts.leads; ++k) {
            const TensorF pred = models::to_rain_space(
                outs[static_cast<std::size_t>(k)].nowcast.value(), scale);
            const TensorF obs =
                models::to_rain_space(window_lead(window, input_frames, k + 1), scale);
            auto& a = acc[static_cast<std::size_t>(k)];
            const float* p = pred.data();
            const float* o = obs.data();
            const std::size_t n = pred.numel();
            for (std::size_t i = 0; i < n; ++i) {
                const double e = static_cast<double>(p[i]) - static_cast<double>(o[i]);
                a.sq += e * e;
                a.err += e;
            }
            a.cells += static_cast<std::int64_t>(n);
            for (std::size_t ti = 0; ti < opts.thresholds.size(); ++ti)
                accumulate(a.tables[ti], contingency(pred, obs, opts.thresholds[ti]));
        }
    }

    EvaluationReport report;
    report.model_name = name;
    report.step_minutes = opts.step_minutes;
    for (int k = 0; k < opts.leads; ++k) {
        const auto& a = acc[static_cast<std::size_t>(k)];
        LeadScores ls;
        ls.lead = k + 1;
        ls.mse = a.sq / static_cast<double>(a.cells);
        ls.mean_error = a.err / static_cast<double>(a.cells);
        for (std::size_t ti = 0; ti < opts.thresholds.size(); ++ti) {
            LeadScores::Categorical cat;
            cat.threshold = opts.thresholds[ti];
            cat.precision = precision(a.tables[ti]);
            cat.recall = recall(a.tables[ti]);
            cat.ets = equitable_threat_score(a.tables[ti]);
            ls.categorical.push_back(cat);
        }
        report.leads.push_back(ls);
    }
    return report;
}

void write_scores_csv(const std::string& path, const std::vector<EvaluationReport>& reports) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_scores_csv: cannot open '" + path + "'");
    out << "model,lead_minutes,metric,threshold,value\n";
    for (const auto& report : reports) {
        for (const auto& ls : report.leads) {
            const int minutes = ls.lead * report.step_minutes;
            out << report.model_name << ',' << minutes << ",mse,," << format_number(ls.mse)
                << '\n';
            out << report.model_name << ',' << minutes << ",me,," << format_number(ls.mean_error)
                << '\n';
            for (const auto& cat : ls.categorical) {
                const std::string th = format_threshold(cat.threshold);
                auto row = [&](const char* metric, const std::optional<double>& v) {
                    out << report.model_name << ',' << minutes << ',' << metric << ',' << th
                        << ',';
                    if (v) out << format_number(*v);
                    out << '\n';
                };
                row("precision", cat.precision);
                row("recall", cat.recall);
                row("ets", cat.ets);
            }
        }
    }
    if (!out) throw IoError("write_scores_csv: write failed for '" + path + "'");
}

MotionFitnessReport motion_fitness(const models::NowcastModel& model, const std::string& source,
                                   const std::vector<TensorF>& windows, int leads) {
    if (model.config().kind == models::ModelKind::kEulerian)
        throw ValidationError("motion_fitness: the direct model carries no motion field");
    const int input_frames = model.config().window;
    return fitness_impl(
        source, windows, input_frames, leads, model.config().norm_scale,
        [&](const TensorF& window, std::vector<TensorF>& motions, std::vector<TensorF>& preds) {
            auto inputs = ad::Var<float>::constant(window_inputs(window, input_frames));
            models::StepOptions opts;
            opts.zero_source = true;
            auto outs = model.rollout(inputs, leads, opts);
            for (const auto& out : outs) {
                motions.push_back(out.motion.value());
                preds.push_back(out.nowcast.value());
            }
        });
}

MotionFitnessReport motion_fitness_lk(const flow::PyramidConfig& cfg, const std::string& source,
                                      const std::vector<TensorF>& windows, float norm_scale,
                                      int input_frames, int leads) {
    flow::validate_pyramid_config(cfg);
    return fitness_impl(
        source, windows, input_frames, leads, norm_scale,
        [&](const TensorF& window, std::vector<TensorF>& motions, std::vector<TensorF>& preds) {
            const Shape ws = window.shape();
            std::vector<std::vector<float>> planes;
            for (int c = 0; c < input_frames; ++c) {
                const float* p = window.plane(0, c);
                planes.emplace_back(p, p + static_cast<std::size_t>(ws.h) * ws.w);
            }
            flow::MotionField field =
                flow::lucas_kanade_flow_planes(planes, ws.h, ws.w, cfg);
            auto motion = ad::Var<float>::constant(field.motion);
            TensorF last_t(Shape{1, 1, ws.h, ws.w});
            std::memcpy(last_t.data(), window.plane(0, input_frames - 1),
                        sizeof(float) * static_cast<std::size_t>(ws.h) * ws.w);
            auto last = ad::Var<float>::constant(std::move(last_t));
            for (int k = 1; k <= leads; ++k) {
                motions.push_back(field.motion);
                TensorF pred = advect::extrapolate(last, motion, k).value();
                for (float& v : pred.vec()) v = std::max(v, 0.0f);
                preds.push_back(std::move(pred));
            }
        });
}

void write_motion_csv(const std::string& path, const std::vector<MotionFitnessReport>& reports) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_motion_csv: cannot open '" + path + "'");
    out << "source,lead_minutes,metric,value\n";
    for (const auto& report : reports) {
        for (const auto& lf : report.leads) {
            const int minutes = lf.lead * report.step_minutes;
            out << report.source << ',' << minutes << ",mean_abs_divergence,";
            if (lf.mean_abs_divergence) out << format_number(*lf.mean_abs_divergence);
            out << '\n';
            out << report.source << ',' << minutes << ",extrapolation_mse,"
                << format_number(lf.extrapolation_mse) << '\n';
        }
    }
    if (!out) throw IoError("write_motion_csv: write failed for '" + path + "'");
}

}  // namespace lagcast::verify
