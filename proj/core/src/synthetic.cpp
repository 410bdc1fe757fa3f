/// @file synthetic.cpp
/// @brief Layered Gaussian-cell storm generator with exact motion and source
///        ground truth, plus corpus presets and the on-disk corpus writer.

#include "lagcast/synthetic.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "lagcast/advection.hpp"
#include "lagcast/autodiff.hpp"
#include "lagcast/errors.hpp"
#include "lagcast/rng.hpp"
#include "lagcast/stack_io.hpp"

namespace lagcast::synth {

std::string to_string(FlowKind kind) {
    switch (kind) {
        case FlowKind::kTranslate: return "translate";
        case FlowKind::kRotate: return "rotate";
        case FlowKind::kSolenoidal: return "solenoidal";
    }
    return "unknown";
}

void validate_storm_spec(const StormSpec& spec) {
    if (spec.height < 16 || spec.width < 16)
        throw ValidationError("StormSpec: domain must be at least 16x16");
    if (spec.frames < 2) throw ValidationError("StormSpec: need at least 2 frames");
    if (spec.cells.empty() && spec.injections.empty())
        throw ValidationError("StormSpec: need at least one cell or injection");
    auto check_cell = [](const CellSpec& cell) {
        if (cell.sigma <= 0.0f) throw ValidationError("StormSpec: cell sigma must be positive");
        if (!(cell.peak > 0.0f && cell.peak <= 150.0f))
            throw ValidationError("StormSpec: cell peak must lie in (0, 150] mm/h");
        if (!(cell.growth > -0.95f && cell.growth < 1.0f))
            throw ValidationError("StormSpec: cell growth must lie in (-0.95, 1)");
    };
    for (const auto& cell : spec.cells) check_cell(cell);
    for (const auto& inj : spec.injections) {
        check_cell(inj.cell);
        if (inj.frame < 1 || inj.frame >= spec.frames)
            throw ValidationError("StormSpec: injection frame out of range");
    }
    if (spec.noise_sigma < 0.0f || spec.noise_sigma > 1.0f)
        throw ValidationError("StormSpec: noise sigma must lie in [0, 1]");
    if (spec.flow == FlowKind::kSolenoidal) {
        if (spec.stream_speed <= 0.0f)
            throw ValidationError("StormSpec: stream speed must be positive");
        if (spec.stream_modes < 1)
            throw ValidationError("StormSpec: need at least one stream mode");
    }
    if (spec.dx_km <= 0.0) throw ValidationError("StormSpec: dx must be positive");
    if (spec.step_minutes < 1) throw ValidationError("StormSpec: step must be positive");
}

namespace {

// Discrete Sobel derivative halves, mirroring the divergence stencil:
// a replicate-padded 1-2-1 smoothing pass followed by a central difference,
// scaled by 1/(8 dx). Applying the cross derivatives to a stream function in
// either order agrees in the interior, which makes the resulting flow
// divergence free there.
int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

std::vector<double> smooth_rows(const std::vector<double>& f, int h, int w) {
    std::vector<double> out(f.size());
    for (int r = 0; r < h; ++r) {
        const int rm = clampi(r - 1, h - 1), rp = clampi(r + 1, h - 1);
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(r) * w + c] =
                f[static_cast<std::size_t>(rm) * w + c] +
                2.0 * f[static_cast<std::size_t>(r) * w + c] +
                f[static_cast<std::size_t>(rp) * w + c];
    }
    return out;
}

std::vector<double> smooth_cols(const std::vector<double>& f, int h, int w) {
    std::vector<double> out(f.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int cm = clampi(c - 1, w - 1), cp = clampi(c + 1, w - 1);
            out[static_cast<std::size_t>(r) * w + c] =
                f[static_cast<std::size_t>(r) * w + cm] +
                2.0 * f[static_cast<std::size_t>(r) * w + c] +
                f[static_cast<std::size_t>(r) * w + cp];
        }
    return out;
}

std::vector<double> diff_cols(const std::vector<double>& f, int h, int w, double scale) {
    std::vector<double> out(f.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int cm = clampi(c - 1, w - 1), cp = clampi(c + 1, w - 1);
            out[static_cast<std::size_t>(r) * w + c] =
                (f[static_cast<std::size_t>(r) * w + cp] -
                 f[static_cast<std::size_t>(r) * w + cm]) *
                scale;
        }
    return out;
}

std::vector<double> diff_rows(const std::vector<double>& f, int h, int w, double scale) {
    std::vector<double> out(f.size());
    for (int r = 0; r < h; ++r) {
        const int rm = clampi(r - 1, h - 1), rp = clampi(r + 1, h - 1);
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(r) * w + c] =
                (f[static_cast<std::size_t>(rp) * w + c] -
                 f[static_cast<std::size_t>(rm) * w + c]) *
                scale;
    }
    return out;
}

TensorF make_flow(const StormSpec& spec, Rng& rng) {
    const int h = spec.height, w = spec.width;
    TensorF flow(Shape{1, 2, h, w});
    float* fx = flow.plane(0, 0);
    float* fy = flow.plane(0, 1);

    switch (spec.flow) {
        case FlowKind::kTranslate: {
            for (int i = 0; i < h * w; ++i) {
                fx[i] = spec.flow_col;
                fy[i] = spec.flow_row;
            }
            break;
        }
        case FlowKind::kRotate: {
            const double cr = spec.center_row < 0 ? (h - 1) / 2.0 : spec.center_row;
            const double cc = spec.center_col < 0 ? (w - 1) / 2.0 : spec.center_col;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    fx[r * w + c] = static_cast<float>(-spec.omega * (r - cr));
                    fy[r * w + c] = static_cast<float>(spec.omega * (c - cc));
                }
            break;
        }
        case FlowKind::kSolenoidal: {
            std::vector<double> psi(static_cast<std::size_t>(h) * w, 0.0);
            const double tau = 6.283185307179586476925286766559;
            for (int m = 0; m < spec.stream_modes; ++m) {
                const double pc = 1.0 + static_cast<double>(rng.uniform_index(2));
                const double pr = 1.0 + static_cast<double>(rng.uniform_index(2));
                const double amp = rng.uniform(0.5, 1.0);
                const double ph_c = rng.uniform(0.0, tau);
                const double ph_r = rng.uniform(0.0, tau);
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c)
                        psi[static_cast<std::size_t>(r) * w + c] +=
                            amp * std::sin(tau * pc * c / w + ph_c) *
                            std::sin(tau * pr * r / h + ph_r);
            }
            const double scale = 1.0 / (8.0 * spec.dx_km);
            // u = Dy(psi), v = -Dx(psi): the cross derivatives cancel in the
            // divergence stencil.
            std::vector<double> u = diff_rows(smooth_cols(psi, h, w), h, w, scale);
            std::vector<double> v = diff_cols(smooth_rows(psi, h, w), h, w, -scale);
            double peak = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i)
                peak = std::max(peak, std::max(std::abs(u[i]), std::abs(v[i])));
            const double gain = peak > 0.0 ? spec.stream_speed / peak : 0.0;
            for (int i = 0; i < h * w; ++i) {
                fx[i] = static_cast<float>(u[static_cast<std::size_t>(i)] * gain +
                                           spec.flow_col);
                fy[i] = static_cast<float>(v[static_cast<std::size_t>(i)] * gain +
                                           spec.flow_row);
            }
            break;
        }
    }
    return flow;
}

std::vector<float> gaussian_plane(const CellSpec& cell, int h, int w) {
    std::vector<float> plane(static_cast<std::size_t>(h) * w);
    const double inv = 1.0 / (2.0 * static_cast<double>(cell.sigma) * cell.sigma);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double dr = r - static_cast<double>(cell.row);
            const double dc = c - static_cast<double>(cell.col);
            plane[static_cast<std::size_t>(r) * w + c] =
                static_cast<float>(cell.peak * std::exp(-(dr * dr + dc * dc) * inv));
        }
    return plane;
}

}  // namespace

SyntheticStorm generate(const StormSpec& spec, std::uint64_t seed) {
    validate_storm_spec(spec);
    Rng rng(seed);
    Rng flow_rng = rng.fork(0xF10Dull);
    Rng noise_rng = rng.fork(0x4015Eull);

    const int h = spec.height, w = spec.width, frames = spec.frames;
    const std::size_t plane_size = static_cast<std::size_t>(h) * w;

    SyntheticStorm storm;
    storm.motion = TensorF(Shape{frames - 1, 2, h, w});
    storm.source = TensorF(Shape{frames - 1, 1, h, w});

    const TensorF flow = make_flow(spec, flow_rng);
    ad::NoGradGuard guard;
    const auto flow_var = ad::Var<float>::constant(flow);

    std::vector<std::vector<float>> layers;
    std::vector<float> growths;
    for (const auto& cell : spec.cells) {
        layers.push_back(gaussian_plane(cell, h, w));
        growths.push_back(cell.growth);
    }

    auto sum_layers = [&]() {
        std::vector<float> frame(plane_size, 0.0f);
        for (const auto& layer : layers)
            for (std::size_t i = 0; i < plane_size; ++i) frame[i] += layer[i];
        return frame;
    };

    auto make_field = [&](std::int64_t t, std::vector<float> values) {
        RainField field;
        field.height = h;
        field.width = w;
        field.dx_km = spec.dx_km;
        field.timestamp = t;
        field.values = std::move(values);
        return field;
    };

    storm.latent.step_minutes = spec.step_minutes;
    storm.latent.fields.push_back(make_field(0, sum_layers()));

    for (int t = 0; t + 1 < frames; ++t) {
        // One warp moves every layer: channels share the coordinate field.
        const int n_layers = static_cast<int>(layers.size());
        TensorF stacked(Shape{1, n_layers, h, w});
        for (int c = 0; c < n_layers; ++c)
            std::memcpy(stacked.plane(0, c), layers[static_cast<std::size_t>(c)].data(),
                        sizeof(float) * plane_size);
        const TensorF warped =
            advect::extrapolate(ad::Var<float>::constant(std::move(stacked)), flow_var, 1)
                .value();

        float* source = storm.source.plane(t, 0);
        std::fill(source, source + plane_size, 0.0f);
        for (int c = 0; c < n_layers; ++c) {
            const float* wp = warped.plane(0, c);
            const float g = growths[static_cast<std::size_t>(c)];
            float* layer = layers[static_cast<std::size_t>(c)].data();
            for (std::size_t i = 0; i < plane_size; ++i) {
                source[i] += g * wp[i];
                layer[i] = (1.0f + g) * wp[i];
            }
        }
        for (const auto& inj : spec.injections) {
            if (inj.frame != t + 1) continue;
            layers.push_back(gaussian_plane(inj.cell, h, w));
            growths.push_back(inj.cell.growth);
            const auto& fresh = layers.back();
            for (std::size_t i = 0; i < plane_size; ++i) source[i] += fresh[i];
        }

        std::memcpy(storm.motion.plane(t, 0), flow.plane(0, 0), sizeof(float) * plane_size);
        std::memcpy(storm.motion.plane(t, 1), flow.plane(0, 1), sizeof(float) * plane_size);
        storm.latent.fields.push_back(make_field(t + 1, sum_layers()));
    }

    storm.observations = storm.latent;
    if (spec.noise_sigma > 0.0f) {
        const double s = spec.noise_sigma;
        const double bias = -0.5 * s * s;  // mean-one log-normal factors
        for (auto& field : storm.observations.fields)
            for (float& v : field.values)
                v *= static_cast<float>(std::exp(s * noise_rng.gaussian() + bias));
    }
    return storm;
}

StormSpec preset_storm(const std::string& preset, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0xC0D5ull);
    StormSpec spec;
    spec.height = 64;
    spec.width = 64;

    auto random_cell = [&](float row_lo, float row_hi, float col_lo, float col_hi,
                           float peak_lo, float peak_hi, float growth_lo, float growth_hi) {
        CellSpec cell;
        cell.row = static_cast<float>(rng.uniform(row_lo, row_hi));
        cell.col = static_cast<float>(rng.uniform(col_lo, col_hi));
        cell.sigma = static_cast<float>(rng.uniform(3.5, 6.5));
        cell.peak = static_cast<float>(rng.uniform(peak_lo, peak_hi));
        cell.growth = static_cast<float>(rng.uniform(growth_lo, growth_hi));
        return cell;
    };

    // 240 frames leave every split populated after the overlap pruning at the
    // split boundaries; drift speeds are sized so cells stay inside the domain
    // (or are replaced by injections) for the whole run.
    if (preset == "translate") {
        spec.frames = 240;
        spec.flow = FlowKind::kTranslate;
        spec.flow_col = 0.12f;
        spec.flow_row = 0.05f;
        for (int i = 0; i < 6; ++i)
            spec.cells.push_back(random_cell(8, 46, 4, 30, 3, 30, 0, 0));
    } else if (preset == "growdecay") {
        spec.frames = 240;
        spec.flow = FlowKind::kTranslate;
        spec.flow_col = 0.2f;
        spec.flow_row = 0.08f;
        for (int i = 0; i < 2; ++i)
            spec.cells.push_back(random_cell(8, 50, 4, 28, 0.8f, 2.0f, 0.010f, 0.014f));
        for (int i = 0; i < 2; ++i)
            spec.cells.push_back(random_cell(8, 50, 4, 28, 20, 45, -0.025f, -0.015f));
        spec.cells.push_back(random_cell(8, 50, 4, 28, 5, 15, 0, 0));
        for (int frame = 20; frame < spec.frames - 20; frame += 24) {
            Injection inj;
            inj.frame = frame;
            inj.cell = (frame / 24) % 2 == 0
                           ? random_cell(8, 50, 4, 32, 1, 3, 0.012f, 0.018f)
                           : random_cell(8, 50, 4, 32, 18, 40, -0.03f, -0.018f);
            spec.injections.push_back(inj);
        }
    } else if (preset == "mixed") {
        spec.frames = 240;
        spec.flow = FlowKind::kSolenoidal;
        spec.stream_speed = 0.8f;
        spec.stream_modes = 2;
        spec.flow_col = 0.22f;
        spec.flow_row = 0.08f;
        spec.noise_sigma = 0.12f;
        for (int i = 0; i < 8; ++i)
            spec.cells.push_back(random_cell(6, 56, 4, 46, 4, 35, -0.008f, 0.004f));
        for (int frame = 18; frame < spec.frames - 15; frame += 20) {
            Injection inj;
            inj.frame = frame;
            inj.cell = random_cell(6, 56, 4, 48, 5, 28, -0.010f, 0.006f);
            spec.injections.push_back(inj);
        }
    } else {
        throw ValidationError("unknown corpus preset '" + preset +
                              "' (expected translate, growdecay, or mixed)");
    }
    return spec;
}

namespace {

void write_truth_stack(const std::string& path, const TensorF& truth, int channels,
                       const std::string& units, const StormSpec& spec) {
    RawStack stack;
    stack.header.frames = truth.shape().b;
    stack.header.height = spec.height;
    stack.header.width = spec.width;
    stack.header.dx_km = spec.dx_km;
    stack.header.step_minutes = spec.step_minutes;
    stack.header.units = units;
    stack.header.channels = channels;
    stack.payload = truth.vec();
    write_raw_stack(path, stack);
}

void write_window_stack(const std::string& path, const FieldSequence& archive,
                        const std::vector<std::int64_t>& targets, int lead_count,
                        const StormSpec& spec) {
    if (targets.empty()) return;
    const int window = lead_count + 1;
    const std::size_t plane_size =
        static_cast<std::size_t>(spec.height) * spec.width;
    RawStack stack;
    stack.header.frames = static_cast<std::int64_t>(targets.size()) * window;
    stack.header.height = spec.height;
    stack.header.width = spec.width;
    stack.header.dx_km = spec.dx_km;
    stack.header.step_minutes = spec.step_minutes;
    stack.header.units = "mm/h";
    stack.header.window = window;
    stack.payload.resize(static_cast<std::size_t>(stack.header.frames) * plane_size);
    std::size_t offset = 0;
    for (std::int64_t target : targets) {
        const std::int64_t begin = target - lead_count;
        stack.header.window_t0.push_back(archive.fields[static_cast<std::size_t>(begin)].timestamp);
        for (int k = 0; k < window; ++k) {
            const auto& field = archive.fields[static_cast<std::size_t>(begin + k)];
            std::memcpy(stack.payload.data() + offset, field.values.data(),
                        sizeof(float) * plane_size);
            offset += plane_size;
        }
    }
    write_raw_stack(path, stack);
}

}  // namespace

CorpusSummary write_corpus(const std::string& preset, const std::string& out_dir,
                           std::uint64_t seed) {
    const StormSpec spec = preset_storm(preset, seed);
    const SyntheticStorm storm = generate(spec, seed);
    std::filesystem::create_directories(out_dir);

    write_stack(storm.observations, out_dir + "/archive.rfs");
    write_truth_stack(out_dir + "/truth_motion.rfs", storm.motion, 2, "px/step", spec);
    write_truth_stack(out_dir + "/truth_source.rfs", storm.source, 1, "mm/h/step", spec);

    const DatasetSplit split = build_split(storm.observations);
    write_window_stack(out_dir + "/train.rfs", storm.observations, split.train,
                       split.lead_count, spec);
    write_window_stack(out_dir + "/validation.rfs", storm.observations, split.validation,
                       split.lead_count, spec);
    write_window_stack(out_dir + "/test.rfs", storm.observations, split.test,
                       split.lead_count, spec);

    nlohmann::json manifest;
    manifest["preset"] = preset;
    manifest["seed"] = seed;
    manifest["frames"] = spec.frames;
    manifest["height"] = spec.height;
    manifest["width"] = spec.width;
    manifest["flow"] = to_string(spec.flow);
    manifest["noise_sigma"] = spec.noise_sigma;
    manifest["initial_cells"] = spec.cells.size();
    manifest["injections"] = spec.injections.size();
    manifest["window"] = split.lead_count + 1;
    manifest["step_minutes"] = spec.step_minutes;
    manifest["dx_km"] = spec.dx_km;
    manifest["splits"] = {{"train", split.train.size()},
                          {"validation", split.validation.size()},
                          {"test", split.test.size()}};

    CorpusSummary summary;
    summary.spec = spec;
    summary.split = split;
    summary.manifest_path = out_dir + "/manifest.json";
    std::ofstream out(summary.manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_corpus: cannot write manifest under '" + out_dir + "'");
    out << manifest.dump(2) << "\n";
    return summary;
}

}  // namespace lagcast::synth
