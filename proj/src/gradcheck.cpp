#include "qgfs/gradcheck.hpp"

#include "qgfs/losses.hpp"
#include "qgfs/model.hpp"
#include "qgfs/nnkit.hpp"
#include "qgfs/raster.hpp"
#include "qgfs/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace qgfs::gradcheck {

bool Report::pass() const {
    if (rel_errors.empty()) return false;
    return worst <= loose_tol && quantile_err <= tight_tol;
}

void Report::finalize() {
    if (rel_errors.empty()) {
        worst = quantile_err = 0;
        return;
    }
    std::vector<real> s = rel_errors;
    std::sort(s.begin(), s.end());
    worst = s.back();
    size_t qi = size_t(std::ceil(quantile * real(s.size())));
    qi = qi > 0 ? qi - 1 : 0;
    quantile_err = s[std::min(qi, s.size() - 1)];
}

namespace {

constexpr real kFdStep = real(1e-4);

real rel_err(real a, real f, real floor) {
    return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

// ---------------------------------------------------------------- raster --

struct RasterProbe {
    raster::GaussianCloud cloud;
    geom::Camera cam;
    raster::RenderSettings settings = raster::RenderSettings::exact();
    std::vector<real> d_color, d_feature;

    real loss() const {
        auto out = raster::render_forward(cloud, cam, settings, nullptr);
        real l = 0;
        for (size_t i = 0; i < out.color.size(); ++i) l += d_color[i] * out.color[i];
        for (size_t i = 0; i < out.feature.size(); ++i) l += d_feature[i] * out.feature[i];
        return l;
    }

    real fd(real* slot) const {
        real keep = *slot;
        *slot = keep + kFdStep;
        real lp = loss();
        *slot = keep - kFdStep;
        real lm = loss();
        *slot = keep;
        return (lp - lm) / (2 * kFdStep);
    }
};

RasterProbe make_raster_probe(Rng& rng) {
    RasterProbe p;
    int n = 1 + int(rng.uniform_int(5));
    for (int i = 0; i < n; ++i) {
        raster::GaussianPrimitive g;
        g.mean = geom::Vec3(real(0.5) - rng.uniform(), real(0.5) - rng.uniform(),
                            real(0.5) - rng.uniform()) *
                 real(0.5);
        g.rot = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        g.scale = geom::Vec3(real(0.03) + real(0.09) * rng.uniform(),
                             real(0.03) + real(0.09) * rng.uniform(),
                             real(0.03) + real(0.09) * rng.uniform());
        g.opacity = real(0.15) + real(0.7) * rng.uniform();
        g.color = geom::Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        g.feature = geom::Vec3(2 * rng.uniform() - 1, 2 * rng.uniform() - 1,
                               2 * rng.uniform() - 1) *
                    real(0.9);
        p.cloud.prims.push_back(g);
    }
    real az = 2 * kPi * rng.uniform();
    real el = real(0.2) + real(0.6) * rng.uniform();
    geom::Vec3 pos(real(1.2) * std::cos(el) * std::cos(az),
                   real(1.2) * std::cos(el) * std::sin(az), real(1.2) * std::sin(el));
    p.cam = geom::look_at_camera(pos, geom::Vec3::Zero(), 8, 8, real(3.5), real(3.5), 8, 8);
    p.d_color.resize(size_t(8 * 8 * 3));
    p.d_feature.resize(size_t(8 * 8 * 3));
    for (auto& v : p.d_color) v = rng.normal();
    for (auto& v : p.d_feature) v = rng.normal();
    return p;
}

}  // namespace

Report check_raster(uint64_t seed, int trials) {
    Report rep;
    rep.module = "raster";
    rep.tight_tol = real(1e-3);
    rep.loose_tol = real(1e-2);
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, fnv1a64("gradcheck-raster") + uint64_t(t)));
        RasterProbe p = make_raster_probe(rng);

        raster::ForwardSaved saved;
        raster::render_forward(p.cloud, p.cam, p.settings, &saved);
        auto grads = raster::render_backward(p.cloud, saved, p.d_color, p.d_feature);

        real gmax = 0;
        for (size_t i = 0; i < p.cloud.size(); ++i) {
            for (int k = 0; k < 4; ++k) gmax = std::max(gmax, std::abs(grads.d_rot[i][k]));
            for (int k = 0; k < 3; ++k) {
                gmax = std::max(gmax, std::abs(grads.d_scale[i][k]));
                gmax = std::max(gmax, std::abs(grads.d_feature[i][k]));
            }
            gmax = std::max(gmax, std::abs(grads.d_opacity[i]));
        }
        real floor = std::max(real(1e-12), real(1e-6) * gmax);

        for (size_t i = 0; i < p.cloud.size(); ++i) {
            auto& g = p.cloud.prims[i];
            real* rot[4] = {&g.rot.w, &g.rot.x, &g.rot.y, &g.rot.z};
            for (int k = 0; k < 4; ++k)
                rep.rel_errors.push_back(rel_err(grads.d_rot[i][k], p.fd(rot[k]), floor));
            for (int k = 0; k < 3; ++k)
                rep.rel_errors.push_back(rel_err(grads.d_scale[i][k], p.fd(&g.scale[k]), floor));
            rep.rel_errors.push_back(rel_err(grads.d_opacity[i], p.fd(&g.opacity), floor));
            for (int k = 0; k < 3; ++k)
                rep.rel_errors.push_back(
                    rel_err(grads.d_feature[i][k], p.fd(&g.feature[k]), floor));
        }
    }
    rep.finalize();
    return rep;
}

// ---------------------------------------------------------------- nnkit ---

namespace {

struct NnProbe {
    nn::LayerStack stack;
    nn::Tensor x;
    nn::Tensor dy;

    real loss() {
        nn::Tape tape;
        nn::Tensor y = nn::forward(stack, x, tape);
        real l = 0;
        for (size_t i = 0; i < y.v.size(); ++i) l += dy.v[i] * y.v[i];
        return l;
    }

    real fd(real* slot) {
        real keep = *slot;
        *slot = keep + kFdStep;
        real lp = loss();
        *slot = keep - kFdStep;
        real lm = loss();
        *slot = keep;
        return (lp - lm) / (2 * kFdStep);
    }
};

NnProbe make_nn_probe(int variant, Rng& rng) {
    NnProbe p;
    switch (variant % 4) {
        case 0:
            p.stack.add(std::make_unique<nn::Dense>(5, 7, nn::Act::Tanh, rng));
            p.stack.add(std::make_unique<nn::Dense>(7, 6, nn::Act::ReLU, rng));
            p.stack.add(std::make_unique<nn::Dense>(6, 4, nn::Act::Sigmoid, rng));
            p.x = nn::Tensor({2, 5});
            break;
        case 1:
            p.stack.add(std::make_unique<nn::Conv2d>(2, 3, 3, nn::Act::ReLU, rng));
            p.stack.add(std::make_unique<nn::Conv2d>(3, 4, 4, nn::Act::Linear, rng));
            p.stack.add(std::make_unique<nn::GlobalAvgPool>());
            p.x = nn::Tensor({2, 6, 6});
            break;
        case 2: {
            auto inner = std::make_unique<nn::LayerStack>();
            inner->add(std::make_unique<nn::Conv2d>(3, 3, 3, nn::Act::ReLU, rng));
            inner->add(std::make_unique<nn::Conv2d>(3, 3, 3, nn::Act::Linear, rng));
            p.stack.add(std::make_unique<nn::Conv2d>(2, 3, 1, nn::Act::Tanh, rng));
            p.stack.add(std::make_unique<nn::ResidualBlock>(std::move(inner)));
            p.stack.add(std::make_unique<nn::GlobalAvgPool>());
            p.x = nn::Tensor({2, 5, 5});
            break;
        }
        default:
            p.stack.add(std::make_unique<nn::Dense>(5, 6, nn::Act::L2Norm, rng));
            p.stack.add(std::make_unique<nn::Dense>(6, 5, nn::Act::Exp, rng));
            p.stack.add(std::make_unique<nn::Dense>(5, 3, nn::Act::Linear, rng));
            p.x = nn::Tensor({2, 5});
            break;
    }
    for (auto& v : p.x.v) v = rng.normal();
    nn::Tape tape;
    nn::Tensor y = nn::forward(p.stack, p.x, tape);
    p.dy = nn::Tensor(y.shape);
    for (auto& v : p.dy.v) v = rng.normal();
    return p;
}

}  // namespace

Report check_nnkit(uint64_t seed, int trials) {
    Report rep;
    rep.module = "nnkit";
    rep.tight_tol = real(1e-4);
    rep.loose_tol = real(1e-4);
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, fnv1a64("gradcheck-nnkit") + uint64_t(t)));
        NnProbe p = make_nn_probe(t, rng);
        auto params = nn::collect_params(p.stack, "net");

        nn::Tape tape;
        nn::forward(p.stack, p.x, tape);
        nn::zero_grads(params);
        nn::Tensor d_input = nn::backward(p.stack, tape, p.dy);

        real gmax = 0;
        for (const auto& pr : params)
            for (real g : pr.grad->v) gmax = std::max(gmax, std::abs(g));
        for (real g : d_input.v) gmax = std::max(gmax, std::abs(g));
        real floor = std::max(real(1e-12), real(1e-4) * gmax);

        for (const auto& pr : params)
            for (size_t i = 0; i < pr.value->v.size(); ++i)
                rep.rel_errors.push_back(rel_err(pr.grad->v[i], p.fd(&pr.value->v[i]), floor));
        for (size_t i = 0; i < p.x.v.size(); ++i)
            rep.rel_errors.push_back(rel_err(d_input.v[i], p.fd(&p.x.v[i]), floor));
    }
    rep.finalize();
    return rep;
}

// ------------------------------------------------------------------ e2e ---

namespace {

struct E2eProbe {
    std::vector<query::RgbdView> inputs;
    geom::Camera target_cam;
    std::vector<real> target_rgb, target_feat;
    losses::LossWeights weights;
    raster::RenderSettings settings = raster::RenderSettings::exact();

    real loss(model::RepresentationModel& m) const {
        auto fwd = m.forward(inputs);
        auto out = raster::render_forward(fwd.cloud, target_cam, settings, nullptr);
        real l_gs = losses::loss_gs(target_rgb, out.color, 4, 4, weights.lambda, nullptr);
        real l_feat = losses::loss_feat(target_feat, out.feature, 4, 4, weights.eta, nullptr);
        return losses::loss_total(l_gs, l_feat, weights, weights.warmup_iters);
    }
};

E2eProbe make_e2e_probe(Rng& rng) {
    E2eProbe p;
    auto cams = scenes::ring_cameras(scenes::kViewsPerEpisode, 4, 4, scenes::kRingRadius,
                                     scenes::kRingElevation);
    for (int v = 0; v < 2; ++v) {
        query::RgbdView view;
        view.width = 4;
        view.height = 4;
        view.camera = cams[size_t(v)];
        view.rgb.resize(4 * 4 * 3);
        view.depth.resize(4 * 4);
        for (auto& c : view.rgb) c = rng.uniform();
        for (auto& d : view.depth) d = real(1.1) + real(0.6) * rng.uniform();
        p.inputs.push_back(std::move(view));
    }
    p.target_cam = cams[2];
    p.target_rgb.resize(4 * 4 * 3);
    p.target_feat.resize(4 * 4 * 3);
    for (auto& c : p.target_rgb) c = rng.uniform();
    for (auto& f : p.target_feat) f = 2 * rng.uniform() - 1;
    return p;
}

}  // namespace

Report check_e2e(uint64_t seed, int trials) {
    Report rep;
    rep.module = "e2e";
    rep.tight_tol = real(1e-2);
    rep.loose_tol = real(1e-2);
    constexpr int kSampledPerTrial = 64;
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, fnv1a64("gradcheck-e2e") + uint64_t(t)));
        E2eProbe p = make_e2e_probe(rng);
        // Stride 4 on 4x4 views keeps one point per view: two Gaussians total.
        model::RepresentationModel m(rng, 4);

        auto fwd = m.forward(p.inputs);
        raster::ForwardSaved saved;
        auto out = raster::render_forward(fwd.cloud, p.target_cam, p.settings, &saved);
        std::vector<real> d_color, d_feat;
        losses::loss_gs(p.target_rgb, out.color, 4, 4, p.weights.lambda, &d_color);
        losses::loss_feat(p.target_feat, out.feature, 4, 4, p.weights.eta, &d_feat);
        for (auto& d : d_color) d *= p.weights.beta1;
        for (auto& d : d_feat) d *= p.weights.beta2;
        auto grads = raster::render_backward(fwd.cloud, saved, d_color, d_feat);
        auto params = m.params();
        nn::zero_grads(params);
        m.backward(fwd, grads, true);

        real gmax = 0;
        size_t n_comps = 0;
        for (const auto& pr : params) {
            n_comps += pr.value->v.size();
            for (real g : pr.grad->v) gmax = std::max(gmax, std::abs(g));
        }
        real floor = std::max(real(1e-12), real(1e-3) * gmax);
        real l0 = p.loss(m);

        for (int s = 0; s < kSampledPerTrial; ++s) {
            size_t pick = size_t(rng.uniform_int(uint64_t(n_comps)));
            size_t off = pick;
            for (const auto& pr : params) {
                if (off < pr.value->v.size()) {
                    real* slot = &pr.value->v[off];
                    real analytic = pr.grad->v[off];
                    real keep = *slot;
                    *slot = keep + kFdStep;
                    real lp = p.loss(m);
                    *slot = keep - kFdStep;
                    real lm = p.loss(m);
                    *slot = keep;
                    real fd = (lp - lm) / (2 * kFdStep);
                    real rel = rel_err(analytic, fd, floor);
                    if (rel > rep.tight_tol) {
                        // The loss is only piecewise smooth (L1 terms). When
                        // the window straddles a residual sign flip, the
                        // central difference mixes two slopes; a one-sided
                        // difference stays within one piece and must match
                        // the analytic slope at the evaluation point. A wrong
                        // gradient matches neither side.
                        real fd_f = (lp - l0) / kFdStep;
                        real fd_b = (l0 - lm) / kFdStep;
                        rel = std::min({rel, rel_err(analytic, fd_f, floor),
                                        rel_err(analytic, fd_b, floor)});
                    }
                    rep.rel_errors.push_back(rel);
                    break;
                }
                off -= pr.value->v.size();
            }
        }
    }
    rep.finalize();
    return rep;
}

}  // namespace qgfs::gradcheck
