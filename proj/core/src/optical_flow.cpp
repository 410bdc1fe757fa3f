/// @file optical_flow.cpp
/// @brief Pyramidal Lucas-Kanade: Shi-Tomasi corners, coarse-to-fine sparse
///        tracking, Gaussian densification, pairwise averaging.

#include "lagcast/optical_flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lagcast/errors.hpp"

namespace lagcast::flow {

void validate_pyramid_config(const PyramidConfig& cfg) {
    if (cfg.levels < 1) throw ValidationError("PyramidConfig: levels must be >= 1");
    if (cfg.window_radius < 2) throw ValidationError("PyramidConfig: window_radius must be >= 2");
    if (cfg.iterations < 1) throw ValidationError("PyramidConfig: iterations must be >= 1");
    if (!(cfg.min_eigenvalue >= 0.0))
        throw ValidationError("PyramidConfig: min_eigenvalue must be non-negative");
    if (!(cfg.smoothing_sigma > 0.0))
        throw ValidationError("PyramidConfig: smoothing_sigma must be positive");
    if (cfg.max_features < 0) throw ValidationError("PyramidConfig: max_features must be >= 0");
    if (!(cfg.quality > 0.0 && cfg.quality <= 1.0))
        throw ValidationError("PyramidConfig: quality must lie in (0, 1]");
}

namespace {

/// Absolute floor separating "flat field, nothing to track" from real
/// corners; candidate strength is otherwise judged relative to the image.
constexpr double kCornerFloor = 1e-8;

struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Image() = default;
    Image(int hh, int ww) : h(hh), w(ww), v(static_cast<std::size_t>(hh) * ww, 0.0) {}

    double at(int r, int c) const {
        r = std::clamp(r, 0, h - 1);
        c = std::clamp(c, 0, w - 1);
        return v[static_cast<std::size_t>(r) * w + c];
    }
    double& ref(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
};

/// Bilinear sample with replicate border, safe for any real coordinate.
double sample(const Image& img, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x0 + 1)) +
           fy * ((1 - fx) * img.at(y0 + 1, x0) + fx * img.at(y0 + 1, x0 + 1));
}

/// 5-tap binomial blur then 2x decimation.
Image blur_downsample(const Image& src) {
    static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    Image tmp(src.h, src.w);
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.at(r, c + i);
            tmp.ref(r, c) = acc;
        }
    Image smooth(src.h, src.w);
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(r + i, c);
            smooth.ref(r, c) = acc;
        }
    Image down((src.h + 1) / 2, (src.w + 1) / 2);
    for (int r = 0; r < down.h; ++r)
        for (int c = 0; c < down.w; ++c) down.ref(r, c) = smooth.at(2 * r, 2 * c);
    return down;
}

void gradients(const Image& img, Image& gx, Image& gy) {
    gx = Image(img.h, img.w);
    gy = Image(img.h, img.w);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            gx.ref(r, c) = 0.5 * (img.at(r, c + 1) - img.at(r, c - 1));
            gy.ref(r, c) = 0.5 * (img.at(r + 1, c) - img.at(r - 1, c));
        }
}

std::vector<FeaturePoint> shi_tomasi(const Image& img, int max_points, double quality,
                                     double min_eig_floor) {
    if (max_points <= 0) return {};
    Image gx, gy;
    gradients(img, gx, gy);

    Image eig(img.h, img.w);
    double eig_max = 0.0;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            double a = 0, b = 0, d = 0;
            for (int i = -1; i <= 1; ++i)
                for (int j = -1; j <= 1; ++j) {
                    const double ix = gx.at(r + i, c + j);
                    const double iy = gy.at(r + i, c + j);
                    a += ix * ix;
                    b += ix * iy;
                    d += iy * iy;
                }
            const double lmin = 0.5 * ((a + d) - std::sqrt((a - d) * (a - d) + 4 * b * b)) / 9.0;
            eig.ref(r, c) = lmin;
            eig_max = std::max(eig_max, lmin);
        }

    const double threshold = std::max(quality * eig_max, min_eig_floor);
    std::vector<FeaturePoint> candidates;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            const double s = eig.ref(r, c);
            if (s < threshold || s <= 0.0) continue;
            bool local_max = true;
            for (int i = -1; i <= 1 && local_max; ++i)
                for (int j = -1; j <= 1; ++j) {
                    if (i == 0 && j == 0) continue;
                    const double n = eig.at(r + i, c + j);
                    // Strictly-greater on the lexicographically earlier side
                    // keeps exactly one winner in constant-score plateaus.
                    if (n > s || (n == s && (i < 0 || (i == 0 && j < 0)))) {
                        local_max = false;
                        break;
                    }
                }
            if (local_max) candidates.push_back(FeaturePoint{r, c, s});
        }

    std::sort(candidates.begin(), candidates.end(), [](const FeaturePoint& a, const FeaturePoint& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    const int min_dist2 = 5 * 5;
    std::vector<FeaturePoint> kept;
    for (const auto& cand : candidates) {
        bool clear = true;
        for (const auto& k : kept) {
            const int dr = cand.row - k.row, dc = cand.col - k.col;
            if (dr * dr + dc * dc < min_dist2) {
                clear = false;
                break;
            }
        }
        if (clear) {
            kept.push_back(cand);
            if (static_cast<int>(kept.size()) >= max_points) break;
        }
    }
    return kept;
}

struct Pyramid {
    std::vector<Image> img, gx, gy;
};

Pyramid build_pyramid(Image base, int levels) {
    Pyramid p;
    p.img.push_back(std::move(base));
    for (int l = 1; l < levels; ++l) p.img.push_back(blur_downsample(p.img.back()));
    p.gx.resize(p.img.size());
    p.gy.resize(p.img.size());
    for (std::size_t l = 0; l < p.img.size(); ++l) gradients(p.img[l], p.gx[l], p.gy[l]);
    return p;
}

struct TrackedVector {
    double row, col;  // feature position in the first frame
    double u, v;      // displacement in px (x = columns, y = rows)
};

bool track_feature(const Pyramid& a, const Pyramid& b, const PyramidConfig& cfg, double row0,
                   double col0, double& out_u, double& out_v) {
    const int top = static_cast<int>(a.img.size()) - 1;
    double gx_acc = 0.0, gy_acc = 0.0;  // accumulated guess, finer-level units
    for (int level = top; level >= 0; --level) {
        const Image& A = a.img[static_cast<std::size_t>(level)];
        const Image& B = b.img[static_cast<std::size_t>(level)];
        const Image& Gx = a.gx[static_cast<std::size_t>(level)];
        const Image& Gy = a.gy[static_cast<std::size_t>(level)];
        const double scale = static_cast<double>(1 << level);
        const double pr = row0 / scale, pc = col0 / scale;
        const int radius = std::max(2, std::min(cfg.window_radius, (std::min(A.h, A.w) - 2) / 2));

        // Structure tensor of the template window.
        double gxx = 0, gxy = 0, gyy = 0;
        for (int i = -radius; i <= radius; ++i)
            for (int j = -radius; j <= radius; ++j) {
                const double ix = sample(Gx, pr + i, pc + j);
                const double iy = sample(Gy, pr + i, pc + j);
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        const double count = static_cast<double>((2 * radius + 1) * (2 * radius + 1));
        const double det = gxx * gyy - gxy * gxy;
        const double lmin = 0.5 * ((gxx + gyy) - std::sqrt((gxx - gyy) * (gxx - gyy) + 4 * gxy * gxy));
        if (det <= 0.0 || lmin / count < cfg.min_eigenvalue) return false;

        double du = 0.0, dv = 0.0;
        for (int it = 0; it < cfg.iterations; ++it) {
            double bx = 0, by = 0;
            for (int i = -radius; i <= radius; ++i)
                for (int j = -radius; j <= radius; ++j) {
                    const double ix = sample(Gx, pr + i, pc + j);
                    const double iy = sample(Gy, pr + i, pc + j);
                    const double diff = sample(A, pr + i, pc + j) -
                                        sample(B, pr + i + gy_acc + dv, pc + j + gx_acc + du);
                    bx += diff * ix;
                    by += diff * iy;
                }
            const double step_u = (gyy * bx - gxy * by) / det;
            const double step_v = (gxx * by - gxy * bx) / det;
            du += step_u;
            dv += step_v;
            if (std::abs(step_u) < 5e-3 && std::abs(step_v) < 5e-3) break;
        }
        if (level > 0) {
            gx_acc = 2.0 * (gx_acc + du);
            gy_acc = 2.0 * (gy_acc + dv);
        } else {
            gx_acc += du;
            gy_acc += dv;
        }
    }
    const double limit = 0.5 * std::min(a.img[0].h, a.img[0].w);
    if (!std::isfinite(gx_acc) || !std::isfinite(gy_acc) || std::abs(gx_acc) > limit ||
        std::abs(gy_acc) > limit)
        return false;
    out_u = gx_acc;
    out_v = gy_acc;
    return true;
}

/// Gaussian-weighted scattered-data interpolation of sparse vectors.
void densify(const std::vector<TrackedVector>& vecs, double sigma, TensorF& motion) {
    const int h = motion.shape().h, w = motion.shape().w;
    float* uc = motion.plane(0, 0);
    float* vc = motion.plane(0, 1);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double num_u = 0, num_v = 0, den = 0;
            for (const auto& t : vecs) {
                const double dr = r - t.row, dc = c - t.col;
                const double wgt = std::exp(-(dr * dr + dc * dc) * inv);
                num_u += wgt * t.u;
                num_v += wgt * t.v;
                den += wgt;
            }
            const std::size_t at = static_cast<std::size_t>(r) * w + c;
            if (den > 1e-30) {
                uc[at] = static_cast<float>(num_u / den);
                vc[at] = static_cast<float>(num_v / den);
            }
        }
}

}  // namespace

std::vector<FeaturePoint> feature_points(const RainField& field, int max_points, double quality) {
    validate_rain_field(field);
    if (!(quality > 0.0 && quality <= 1.0))
        throw ValidationError("feature_points: quality must lie in (0, 1]");
    Image img(field.height, field.width);
    for (std::size_t i = 0; i < field.values.size(); ++i)
        img.v[i] = std::log1p(static_cast<double>(std::max(field.values[i], 0.0f)));
    return shi_tomasi(img, max_points, quality, kCornerFloor);
}

MotionField lucas_kanade_flow_planes(const std::vector<std::vector<float>>& planes, int height,
                                     int width, const PyramidConfig& cfg) {
    validate_pyramid_config(cfg);
    if (planes.size() < 2)
        throw ValidationError("lucas_kanade_flow: need at least 2 frames, got " +
                              std::to_string(planes.size()));
    const std::size_t plane_size = static_cast<std::size_t>(height) * width;
    for (const auto& p : planes)
        if (p.size() != plane_size)
            throw ShapeError("lucas_kanade_flow: frame size mismatch");

    int levels = cfg.levels;
    while (levels > 1 && (std::min(height, width) >> (levels - 1)) < 16) --levels;

    std::vector<Pyramid> pyramids;
    pyramids.reserve(planes.size());
    for (const auto& p : planes) {
        Image img(height, width);
        for (std::size_t i = 0; i < plane_size; ++i) img.v[i] = static_cast<double>(p[i]);
        pyramids.push_back(build_pyramid(std::move(img), levels));
    }

    MotionField result;
    result.motion = TensorF(Shape{1, 2, height, width});
    TensorF pair_field(Shape{1, 2, height, width});
    int contributing_pairs = 0;

    for (std::size_t t = 0; t + 1 < pyramids.size(); ++t) {
        const auto corners = shi_tomasi(pyramids[t].img[0], cfg.max_features, cfg.quality,
                                        kCornerFloor);
        std::vector<TrackedVector> tracked;
        tracked.reserve(corners.size());
        for (const auto& fp : corners) {
            double u = 0, v = 0;
            if (track_feature(pyramids[t], pyramids[t + 1], cfg, fp.row, fp.col, u, v))
                tracked.push_back(TrackedVector{static_cast<double>(fp.row),
                                                static_cast<double>(fp.col), u, v});
        }
        if (tracked.empty()) continue;
        pair_field.fill(0.0f);
        densify(tracked, cfg.smoothing_sigma, pair_field);
        for (std::size_t i = 0; i < result.motion.vec().size(); ++i)
            result.motion.vec()[i] += pair_field.vec()[i];
        ++contributing_pairs;
    }

    if (contributing_pairs == 0) {
        result.motion.fill(0.0f);
        result.no_features = true;
        return result;
    }
    const float inv = 1.0f / static_cast<float>(contributing_pairs);
    for (auto& v : result.motion.vec()) v *= inv;
    return result;
}

MotionField lucas_kanade_flow(const FieldSequence& seq, const PyramidConfig& cfg) {
    validate_sequence(seq);
    if (seq.size() < 2)
        throw ValidationError("lucas_kanade_flow: need at least 2 fields, got " +
                              std::to_string(seq.size()));
    std::vector<std::vector<float>> planes;
    planes.reserve(seq.size());
    for (const auto& f : seq.fields) {
        std::vector<float> p(f.values.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = std::log1p(std::max(f.values[i], 0.0f));
        planes.push_back(std::move(p));
    }
    return lucas_kanade_flow_planes(planes, seq.fields.front().height, seq.fields.front().width,
                                    cfg);
}

}  // namespace lagcast::flow
