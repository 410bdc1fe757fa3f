/**
 * @file gradcheck.cpp
 */
#include "lagcast/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lagcast/advection.hpp"
#include "lagcast/params.hpp"
#include "lagcast/rng.hpp"
#include "lagcast/unet.hpp"

namespace lagcast::gradcheck {

using ad::Var;

namespace {
void append_composed_checks(Rng& rng, int instances, std::vector<CheckResult>& results);
}

double max_rel_error(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double h) {
    // analytic gradients
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t, true));
    Var<double> y = fn(leaves);
    ad::backward(y);
    std::vector<Tensor<double>> grads;
    grads.reserve(leaves.size());
    for (auto& l : leaves) grads.push_back(l.grad());

    // numeric gradients, one element at a time
    auto eval = [&fn](const std::vector<Tensor<double>>& xs) {
        ad::NoGradGuard ng;
        std::vector<Var<double>> vs;
        vs.reserve(xs.size());
        for (const auto& t : xs) vs.push_back(Var<double>::constant(t));
        return fn(vs).value().vec()[0];
    };

    double worst = 0.0;
    std::vector<Tensor<double>> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& vec = probe[i].vec();
        for (std::size_t j = 0; j < vec.size(); ++j) {
            const double x0 = vec[j];
            vec[j] = x0 + h;
            const double fp = eval(probe);
            vec[j] = x0 - h;
            const double fm = eval(probe);
            vec[j] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grads[i].vec()[j];
            const double denom = std::max({1.0, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, std::fabs(an - fd) / denom);
        }
    }
    return worst;
}

namespace {

/// sum(z * mask): a random-cotangent probe turning any tensor into a scalar.
Var<double> probe_scalar(const Var<double>& z, const Tensor<double>& mask) {
    return ad::sum_all(ad::mul(z, Var<double>::constant(mask)));
}

Tensor<double> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
    Tensor<double> t(s);
    for (auto& v : t.vec()) v = scale * rng.gaussian();
    return t;
}

/// Push values away from |x| = margin kinks so finite differences stay on
/// one side of the non-smooth point.
Tensor<double> nudged_tensor(Rng& rng, Shape s, double kink, double margin = 1e-2) {
    Tensor<double> t = random_tensor(rng, s);
    for (auto& v : t.vec()) {
        if (std::fabs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin);
    }
    return t;
}

struct Suite {
    Rng rng;
    int instances;
    std::vector<CheckResult> results;

    void run(const std::string& name, double tol,
             const std::function<double(Rng&)>& one_instance) {
        CheckResult r;
        r.name = name;
        r.tolerance = tol;
        r.instances = instances;
        for (int k = 0; k < instances; ++k) {
            Rng inst = rng.fork(static_cast<std::uint64_t>(k) + 1);
            r.max_rel_err = std::max(r.max_rel_err, one_instance(inst));
        }
        results.push_back(std::move(r));
    }
};

Shape small_shape(Rng& rng, bool even_spatial = false) {
    int b = 1 + static_cast<int>(rng.uniform_index(2));
    int c = 1 + static_cast<int>(rng.uniform_index(3));
    int h = 4 + static_cast<int>(rng.uniform_index(5));
    int w = 4 + static_cast<int>(rng.uniform_index(5));
    if (even_spatial) {
        h += h % 2;
        w += w % 2;
    }
    return {b, c, h, w};
}

double check_binary(Rng& rng, Var<double> (*op)(const Var<double>&, const Var<double>&)) {
    Shape s = small_shape(rng);
    Tensor<double> mask = random_tensor(rng, s);
    return max_rel_error(
        [op, &mask](std::vector<Var<double>>& in) { return probe_scalar(op(in[0], in[1]), mask); },
        {random_tensor(rng, s), random_tensor(rng, s)});
}

double check_unary(Rng& rng, const std::function<Var<double>(const Var<double>&)>& op, double kink,
                   bool has_kink) {
    Shape s = small_shape(rng);
    Tensor<double> mask = random_tensor(rng, s);
    Tensor<double> x = has_kink ? nudged_tensor(rng, s, kink) : random_tensor(rng, s);
    return max_rel_error(
        [&op, &mask](std::vector<Var<double>>& in) { return probe_scalar(op(in[0]), mask); }, {x});
}

double check_conv(Rng& rng) {
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(3));
    const int k = rng.uniform() < 0.5 ? 3 : 5;
    const int ci = 1 + static_cast<int>(rng.uniform_index(2));
    const int co = 1 + static_cast<int>(rng.uniform_index(2));
    const int hw = k + 2 + static_cast<int>(rng.uniform_index(4));
    Shape xs{1 + static_cast<int>(rng.uniform_index(2)), ci, hw, hw};
    Shape ws{co, ci, k, k};
    Shape bs{1, co, 1, 1};
    const int ho = (xs.h + 2 * pad - k) / stride + 1;
    const int wo = (xs.w + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) return 0.0;
    Tensor<double> mask = random_tensor(rng, {xs.b, co, ho, wo});
    return max_rel_error(
        [&mask, stride, pad](std::vector<Var<double>>& in) {
            return probe_scalar(ad::conv2d(in[0], in[1], in[2], stride, pad), mask);
        },
        {random_tensor(rng, xs), random_tensor(rng, ws), random_tensor(rng, bs)});
}

double check_max_pool(Rng& rng) {
    Shape s = small_shape(rng, /*even_spatial=*/true);
    // gradient routing needs a clear per-window maximum: retry collisions away
    Tensor<double> x(s);
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            double* p = x.plane(b, c);
            for (int oh = 0; oh < s.h / 2; ++oh)
                for (int ow = 0; ow < s.w / 2; ++ow) {
                    std::array<double, 4> v{};
                    for (;;) {
                        for (auto& e : v) e = rng.gaussian();
                        std::sort(v.begin(), v.end());
                        if (v[3] - v[2] > 1e-3) break;
                    }
                    rng.shuffle(v);
                    p[(2 * oh) * s.w + 2 * ow] = v[0];
                    p[(2 * oh) * s.w + 2 * ow + 1] = v[1];
                    p[(2 * oh + 1) * s.w + 2 * ow] = v[2];
                    p[(2 * oh + 1) * s.w + 2 * ow + 1] = v[3];
                }
        }
    Tensor<double> mask = random_tensor(rng, {s.b, s.c, s.h / 2, s.w / 2});
    return max_rel_error(
        [&mask](std::vector<Var<double>>& in) { return probe_scalar(ad::max_pool2d(in[0]), mask); }, {x});
}

double check_grid_sample(Rng& rng) {
    Shape xs{1, 1 + static_cast<int>(rng.uniform_index(2)), 8, 8};
    Shape cs{1, 2, 6, 6};
    Tensor<double> coords(cs);
    // integer part may land outside the domain; fractional part stays away
    // from cell boundaries so the finite difference cannot cross one
    for (int ch = 0; ch < 2; ++ch) {
        double* p = coords.plane(0, ch);
        for (std::int64_t i = 0; i < cs.spatial(); ++i) {
            const double ipart = std::floor(rng.uniform(-2.0, 9.0));
            p[i] = ipart + rng.uniform(0.2, 0.8);
        }
    }
    Tensor<double> mask = random_tensor(rng, {1, xs.c, cs.h, cs.w});
    return max_rel_error(
        [&mask](std::vector<Var<double>>& in) {
            return probe_scalar(ad::grid_sample_bilinear(in[0], in[1]), mask);
        },
        {random_tensor(rng, xs), coords});
}

double check_divergence(Rng& rng) {
    Shape s{1 + static_cast<int>(rng.uniform_index(2)), 2, 6, 6};
    Tensor<double> mask = random_tensor(rng, {s.b, 1, s.h, s.w});
    return max_rel_error(
        [&mask](std::vector<Var<double>>& in) { return probe_scalar(ad::divergence(in[0]), mask); },
        {random_tensor(rng, s)});
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t seed, int instances) {
    Suite s{Rng(seed), instances, {}};
    const double tol = 1e-5;

    s.run("add", tol, [](Rng& r) { return check_binary(r, &ad::add<double>); });
    s.run("sub", tol, [](Rng& r) { return check_binary(r, &ad::sub<double>); });
    s.run("mul", tol, [](Rng& r) { return check_binary(r, &ad::mul<double>); });
    s.run("add_scalar", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::add_scalar(v, 0.7); }, 0, false);
    });
    s.run("mul_scalar", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::mul_scalar(v, -1.3); }, 0, false);
    });
    s.run("relu", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::relu(v); }, 0.0, true);
    });
    s.run("leaky_relu", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::leaky_relu(v, 0.1); }, 0.0, true);
    });
    s.run("sigmoid", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::sigmoid(v); }, 0, false);
    });
    s.run("tanh", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::tanh(v); }, 0, false);
    });
    s.run("abs", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::abs(v); }, 0.0, true);
    });
    s.run("clamp_min", tol, [](Rng& r) {
        return check_unary(r, [](const Var<double>& v) { return ad::clamp_min(v, -0.2); }, -0.2, true);
    });
    s.run("concat", tol, [](Rng& r) {
        Shape s0 = small_shape(r);
        Shape s1{s0.b, 1 + static_cast<int>(r.uniform_index(2)), s0.h, s0.w};
        Tensor<double> mask = random_tensor(r, {s0.b, s0.c + s1.c, s0.h, s0.w});
        return max_rel_error(
            [&mask](std::vector<Var<double>>& in) {
                return probe_scalar(ad::concat<double>({in[0], in[1]}), mask);
            },
            {random_tensor(r, s0), random_tensor(r, s1)});
    });
    s.run("slice_channels", tol, [](Rng& r) {
        Shape s0{1, 4, 5, 5};
        Tensor<double> mask = random_tensor(r, {1, 2, 5, 5});
        return max_rel_error(
            [&mask](std::vector<Var<double>>& in) {
                return probe_scalar(ad::slice_channels(in[0], 1, 3), mask);
            },
            {random_tensor(r, s0)});
    });
    s.run("crop", tol, [](Rng& r) {
        Shape s0 = small_shape(r);
        const int top = static_cast<int>(r.uniform_index(static_cast<std::size_t>(s0.h - 2)));
        const int left = static_cast<int>(r.uniform_index(static_cast<std::size_t>(s0.w - 2)));
        const int h = s0.h - top - 1, w = s0.w - left - 1;
        Tensor<double> mask = random_tensor(r, {s0.b, s0.c, h, w});
        return max_rel_error(
            [&mask, top, left, h, w](std::vector<Var<double>>& in) {
                return probe_scalar(ad::crop(in[0], top, left, h, w), mask);
            },
            {random_tensor(r, s0)});
    });
    s.run("sum", tol, [](Rng& r) {
        return max_rel_error([](std::vector<Var<double>>& in) { return ad::sum_all(in[0]); },
                             {random_tensor(r, small_shape(r))});
    });
    s.run("mean", tol, [](Rng& r) {
        return max_rel_error([](std::vector<Var<double>>& in) { return ad::mean_all(in[0]); },
                             {random_tensor(r, small_shape(r))});
    });
    s.run("conv2d", tol, check_conv);
    s.run("max_pool2d", tol, check_max_pool);
    s.run("upsample_nearest2", tol, [](Rng& r) {
        Shape s0 = small_shape(r);
        Tensor<double> mask = random_tensor(r, {s0.b, s0.c, s0.h * 2, s0.w * 2});
        return max_rel_error(
            [&mask](std::vector<Var<double>>& in) {
                return probe_scalar(ad::upsample_nearest2(in[0]), mask);
            },
            {random_tensor(r, s0)});
    });
    s.run("grid_sample_bilinear", tol, check_grid_sample);
    s.run("divergence", tol, check_divergence);

    append_composed_checks(s.rng, instances, s.results);
    return s.results;
}

namespace {

/// Motion whose fractional parts stay in [0.2, 0.8] so repeated bilinear
/// sampling never lands near the integer-coordinate kinks.
Tensor<double> safe_motion(Rng& rng, int h, int w) {
    Tensor<double> m(Shape{1, 2, h, w});
    for (auto& v : m.vec()) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        v = sign * (rng.uniform_index(2) + rng.uniform(0.2, 0.8));
    }
    return m;
}

double check_warp_steps(Rng& rng, int steps) {
    const int H = 6, W = 6;
    Tensor<double> field = random_tensor(rng, Shape{1, 1, H, W});
    Tensor<double> motion = safe_motion(rng, H, W);
    Tensor<double> mask = random_tensor(rng, Shape{1, 1, H, W});
    auto fn = [steps, mask](std::vector<Var<double>>& vs) {
        return probe_scalar(advect::extrapolate(vs[0], vs[1], steps), mask);
    };
    return max_rel_error(fn, {field, motion});
}

double check_lagrangian_transform(Rng& rng) {
    constexpr int n = 4;
    const int H = 6, W = 6;
    Tensor<double> frames = random_tensor(rng, Shape{1, n, H, W});
    Tensor<double> motion = safe_motion(rng, H, W);
    Tensor<double> mask = random_tensor(rng, Shape{1, n, H, W});
    auto fn = [mask](std::vector<Var<double>>& vs) {
        return probe_scalar(advect::to_lagrangian(vs[0], vs[1], n + 1), mask);
    };
    return max_rel_error(fn, {frames, motion});
}

double check_divergence_penalty(Rng& rng) {
    Tensor<double> motion = random_tensor(rng, Shape{1, 2, 6, 6});
    auto fn = [](std::vector<Var<double>>& vs) { return advect::divergence_penalty(vs[0]); };
    return max_rel_error(fn, {motion});
}

double check_unet_depth1(Rng& rng) {
    nets::UNetConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 1;
    cfg.depth = 1;
    cfg.base_channels = 2;
    ParamStore<double> store;
    nets::UNet<double> net(cfg, store, "g.", rng);

    Tensor<double> input = random_tensor(rng, Shape{1, 2, 4, 4});
    Tensor<double> mask = random_tensor(rng, Shape{1, 1, 4, 4});
    auto x = Var<double>::leaf(input, true);
    // The zero head would zero every upstream gradient; give it a random
    // value so the check exercises the whole network.
    std::vector<Var<double>> leaves;
    for (const auto& p : store.items()) {
        Var<double> var = p.var;
        for (auto& v : var.value().vec()) v = 0.5 * rng.gaussian();
        leaves.push_back(var);
    }
    leaves.push_back(x);
    auto fn = [&net, &x, mask]() { return probe_scalar(net.forward(x), mask); };
    return max_rel_error_inplace(fn, leaves);
}

void append_composed_checks(Rng& rng, int instances, std::vector<CheckResult>& results) {
    Suite s{rng.fork(0xC0DAull), instances, {}};
    const double tol = 1e-4;
    s.run("warp-1step", tol, [](Rng& r) { return check_warp_steps(r, 1); });
    s.run("warp-3step", tol, [](Rng& r) { return check_warp_steps(r, 3); });
    s.run("lagrangian-transform", tol, check_lagrangian_transform);
    s.run("divergence-penalty", tol, check_divergence_penalty);
    s.run("unet-depth1", tol, check_unet_depth1);
    for (auto& r : s.results) results.push_back(std::move(r));
}

}  // namespace

double max_rel_error_inplace(const std::function<ad::Var<double>()>& fn,
                             const std::vector<ad::Var<double>>& leaves, double h) {
    Var<double> y = fn();
    ad::backward(y);
    std::vector<Tensor<double>> grads;
    grads.reserve(leaves.size());
    for (const auto& l : leaves) grads.push_back(l.grad());

    auto eval = [&fn]() {
        ad::NoGradGuard ng;
        return fn().value().vec()[0];
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        Var<double> leaf = leaves[i];
        auto& vec = leaf.value().vec();
        for (std::size_t j = 0; j < vec.size(); ++j) {
            const double x0 = vec[j];
            vec[j] = x0 + h;
            const double fp = eval();
            vec[j] = x0 - h;
            const double fm = eval();
            vec[j] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grads[i].numel() > 0 ? grads[i].vec()[j] : 0.0;
            const double denom = std::max({1.0, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, std::fabs(an - fd) / denom);
        }
    }
    return worst;
}

}  // namespace lagcast::gradcheck
