#include "qgfs/raster.hpp"

#include <algorithm>
#include <thread>

namespace qgfs::raster {

void GaussianCloud::validate() const {
    for (size_t i = 0; i < prims.size(); ++i) {
        const auto& p = prims[i];
        if (!(p.opacity > 0 && p.opacity < 1))
            throw ContractError("primitive " + std::to_string(i) + ": opacity outside (0,1)");
        if (!(p.scale.x() > 0 && p.scale.y() > 0 && p.scale.z() > 0))
            throw ContractError("primitive " + std::to_string(i) + ": non-positive scale");
        if (p.rot.norm() < real(1e-12))
            throw ContractError("primitive " + std::to_string(i) + ": zero quaternion");
    }
}

real gaussian_alpha_2d(real opacity, const Vec2& mean, const Mat2& cov, const Vec2& x) {
    real det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (det <= geom::kDegenerateDet) return 0;  // singular: contribution skipped
    real qa = cov(1, 1) / det, qb = -cov(0, 1) / det, qc = cov(0, 0) / det;
    real du = x.x() - mean.x(), dv = x.y() - mean.y();
    real m = qa * du * du + 2 * qb * du * dv + qc * dv * dv;
    real a = opacity * std::exp(real(-0.5) * m);
    return a > real(0.99) ? real(0.99) : a;
}

namespace {

struct AlphaEval {
    real du, dv, G, alpha;
    bool clamped;
};

// The single alpha expression shared by every path, so tiled/brute/backward
// agree bit-for-bit.
inline AlphaEval eval_alpha(const Prepared& g, real opacity, real px, real py) {
    AlphaEval e;
    e.du = px - g.u;
    e.dv = py - g.v;
    real m = g.qa * e.du * e.du + 2 * g.qb * e.du * e.dv + g.qc * e.dv * e.dv;
    e.G = std::exp(real(-0.5) * m);
    real raw = opacity * e.G;
    e.clamped = raw > real(0.99);
    e.alpha = e.clamped ? real(0.99) : raw;
    return e;
}

std::vector<Prepared> prepare(const GaussianCloud& cloud, const Camera& cam, real radius_sigmas) {
    cam.validate();
    cloud.validate();
    std::vector<Prepared> prep(cloud.size());
    const Mat3 W = cam.cam_from_world_rot();
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.prims[i];
        Vec3 t = cam.world_to_cam(p.mean);
        if (t.z() <= geom::kMinDepth) continue;  // behind camera: culled
        Mat3 sigma = geom::covariance_3d(p.rot, p.scale);
        auto cp = geom::project_covariance_jw(geom::projection_jacobian(t, cam.fx, cam.fy), W, sigma);
        if (cp.degenerate) continue;
        real det = cp.cov(0, 0) * cp.cov(1, 1) - cp.cov(0, 1) * cp.cov(1, 0);
        if (det <= geom::kDegenerateDet) continue;
        Prepared& g = prep[i];
        g.qa = cp.cov(1, 1) / det;
        g.qb = -cp.cov(0, 1) / det;
        g.qc = cp.cov(0, 0) / det;
        g.u = cam.fx * t.x() / t.z() + cam.cx;
        g.v = cam.fy * t.y() / t.z() + cam.cy;
        g.z = t.z();
        real tr = cp.cov(0, 0) + cp.cov(1, 1);
        real lmax = tr * real(0.5) + std::sqrt(std::max(real(0), tr * tr * real(0.25) - det));
        g.radius = radius_sigmas * std::sqrt(lmax);
        g.valid = true;
    }
    return prep;
}

// Global blend order: ascending camera depth, ties by primitive index.
std::vector<int32_t> depth_order(const std::vector<Prepared>& prep) {
    std::vector<int32_t> order;
    order.reserve(prep.size());
    for (size_t i = 0; i < prep.size(); ++i)
        if (prep[i].valid) order.push_back(int32_t(i));
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (prep[size_t(a)].z != prep[size_t(b)].z) return prep[size_t(a)].z < prep[size_t(b)].z;
        return a < b;
    });
    return order;
}

void init_output(RenderOutput& out, int w, int h) {
    out.width = w;
    out.height = h;
    out.color.assign(size_t(w) * h * 3, 0);
    out.feature.assign(size_t(w) * h * 3, 0);
    out.alpha.assign(size_t(w) * h, 0);
    out.transmittance.assign(size_t(w) * h, 1);
    out.depth.assign(size_t(w) * h, 0);
    out.dominant.assign(size_t(w) * h, -1);
}

void blend_pixel(const GaussianCloud& cloud, const std::vector<Prepared>& prep,
                 const int32_t* glist, size_t count, real px, real py,
                 real alpha_cutoff, real tfloor, RenderOutput& out, size_t pix,
                 std::vector<int32_t>* entries) {
    real T = 1;
    real c0 = 0, c1 = 0, c2 = 0, f0 = 0, f1 = 0, f2 = 0, d = 0;
    int32_t dom = -1;
    real best_w = 0;
    for (size_t k = 0; k < count; ++k) {
        int32_t gi = glist[k];
        const Prepared& g = prep[size_t(gi)];
        const auto& pr = cloud.prims[size_t(gi)];
        AlphaEval e = eval_alpha(g, pr.opacity, px, py);
        if (e.alpha < alpha_cutoff) continue;
        real w = e.alpha * T;
        c0 += pr.color.x() * w;
        c1 += pr.color.y() * w;
        c2 += pr.color.z() * w;
        f0 += pr.feature.x() * w;
        f1 += pr.feature.y() * w;
        f2 += pr.feature.z() * w;
        d += g.z * w;
        if (w > best_w) { best_w = w; dom = gi; }
        if (entries) entries->push_back(gi);
        T *= (1 - e.alpha);
        if (T < tfloor) break;
    }
    out.color[pix * 3 + 0] = c0;
    out.color[pix * 3 + 1] = c1;
    out.color[pix * 3 + 2] = c2;
    out.feature[pix * 3 + 0] = f0;
    out.feature[pix * 3 + 1] = f1;
    out.feature[pix * 3 + 2] = f2;
    // Expected surface depth given a hit; raw blended depth would shrink
    // toward zero wherever coverage is partial.
    out.depth[pix] = T < 1 ? d / (1 - T) : 0;
    out.transmittance[pix] = T;
    out.alpha[pix] = 1 - T;
    out.dominant[pix] = dom;
}

}  // namespace

RenderOutput render_forward(const GaussianCloud& cloud, const Camera& cam,
                            const RenderSettings& settings, ForwardSaved* saved) {
    if (settings.tile_size <= 0) throw ContractError("tile_size must be positive");
    const int W = cam.width, H = cam.height, ts = settings.tile_size;
    auto prep = prepare(cloud, cam, settings.radius_sigmas);
    auto order = depth_order(prep);

    const int tx = (W + ts - 1) / ts, ty = (H + ts - 1) / ts;
    std::vector<std::vector<int32_t>> tiles(size_t(tx) * ty);
    for (int32_t gi : order) {
        const Prepared& g = prep[size_t(gi)];
        int px0 = std::max(0, int(std::floor(g.u - g.radius)));
        int px1 = std::min(W - 1, int(std::ceil(g.u + g.radius)));
        int py0 = std::max(0, int(std::floor(g.v - g.radius)));
        int py1 = std::min(H - 1, int(std::ceil(g.v + g.radius)));
        if (px0 > px1 || py0 > py1) continue;
        for (int tyi = py0 / ts; tyi <= py1 / ts; ++tyi)
            for (int txi = px0 / ts; txi <= px1 / ts; ++txi)
                tiles[size_t(tyi) * tx + txi].push_back(gi);
    }

    RenderOutput out;
    init_output(out, W, H);
    if (saved) {
        saved->settings = settings;
        saved->camera = cam;
        saved->tiles_x = tx;
        saved->tiles_y = ty;
        saved->tile_entries.assign(tiles.size(), {});
        saved->tile_offsets.assign(tiles.size(), {});
    }

    auto run_tile = [&](int t) {
        const auto& glist = tiles[size_t(t)];
        int x0 = (t % tx) * ts, y0 = (t / tx) * ts;
        int x1 = std::min(W, x0 + ts), y1 = std::min(H, y0 + ts);
        std::vector<int32_t>* entries = saved ? &saved->tile_entries[size_t(t)] : nullptr;
        std::vector<int32_t>* offsets = saved ? &saved->tile_offsets[size_t(t)] : nullptr;
        if (offsets) offsets->push_back(0);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                blend_pixel(cloud, prep, glist.data(), glist.size(), real(x), real(y),
                            settings.alpha_cutoff, settings.transmittance_floor, out,
                            size_t(y) * W + x, entries);
                if (offsets) offsets->push_back(int32_t(entries->size()));
            }
        }
    };

    int workers = resolve_threads(settings.threads);
    int ntiles = tx * ty;
    if (workers <= 1 || ntiles <= 1) {
        for (int t = 0; t < ntiles; ++t) run_tile(t);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(size_t(workers));
        for (int wkr = 0; wkr < workers; ++wkr)
            pool.emplace_back([&, wkr] {
                for (int t = wkr; t < ntiles; t += workers) run_tile(t);
            });
        for (auto& th : pool) th.join();
    }

    if (saved) saved->prep = std::move(prep);
    return out;
}

RenderOutput brute_force_render(const GaussianCloud& cloud, const Camera& cam) {
    auto prep = prepare(cloud, cam, 0);
    auto order = depth_order(prep);
    RenderOutput out;
    init_output(out, cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            blend_pixel(cloud, prep, order.data(), order.size(), real(x), real(y),
                        /*alpha_cutoff=*/0, /*tfloor=*/0, out,
                        size_t(y) * cam.width + x, nullptr);
    return out;
}

CloudGrads render_backward(const GaussianCloud& cloud, const ForwardSaved& saved,
                           const std::vector<real>& d_color,
                           const std::vector<real>& d_feature) {
    const Camera& cam = saved.camera;
    const int W = cam.width, H = cam.height, ts = saved.settings.tile_size;
    const size_t npix = size_t(W) * H;
    if (!d_color.empty() && d_color.size() != npix * 3)
        throw ContractError("render_backward: d_color size mismatch");
    if (!d_feature.empty() && d_feature.size() != npix * 3)
        throw ContractError("render_backward: d_feature size mismatch");
    if (saved.prep.size() != cloud.size())
        throw ContractError("render_backward: saved state does not match cloud");

    const size_t N = cloud.size();
    // Accumulators per primitive: conic (a, b, c), opacity, feature (3).
    std::vector<real> acc(N * 7, 0);

    std::vector<real> a_list, g_list, du_list, dv_list, t_list;
    std::vector<uint8_t> clamp_list;

    const int tx = saved.tiles_x;
    for (size_t t = 0; t < saved.tile_entries.size(); ++t) {
        const auto& entries = saved.tile_entries[t];
        const auto& offsets = saved.tile_offsets[t];
        if (entries.empty()) continue;
        int x0 = (int(t) % tx) * ts, y0 = (int(t) / tx) * ts;
        int x1 = std::min(W, x0 + ts), y1 = std::min(H, y0 + ts);
        size_t local = 0;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x, ++local) {
                int32_t k0 = offsets[local], k1 = offsets[local + 1];
                int m = k1 - k0;
                if (m == 0) continue;
                size_t pix = size_t(y) * W + x;
                const real* dc = d_color.empty() ? nullptr : &d_color[pix * 3];
                const real* df = d_feature.empty() ? nullptr : &d_feature[pix * 3];
                if (!dc && !df) continue;

                a_list.resize(size_t(m));
                g_list.resize(size_t(m));
                du_list.resize(size_t(m));
                dv_list.resize(size_t(m));
                clamp_list.resize(size_t(m));
                t_list.resize(size_t(m));
                real T = 1;
                for (int k = 0; k < m; ++k) {
                    int32_t gi = entries[size_t(k0 + k)];
                    const Prepared& g = saved.prep[size_t(gi)];
                    AlphaEval e = eval_alpha(g, cloud.prims[size_t(gi)].opacity, real(x), real(y));
                    a_list[size_t(k)] = e.alpha;
                    g_list[size_t(k)] = e.G;
                    du_list[size_t(k)] = e.du;
                    dv_list[size_t(k)] = e.dv;
                    clamp_list[size_t(k)] = e.clamped ? 1 : 0;
                    t_list[size_t(k)] = T;
                    T *= (1 - e.alpha);
                }

                real accC[3] = {0, 0, 0}, accF[3] = {0, 0, 0};
                for (int k = m - 1; k >= 0; --k) {
                    int32_t gi = entries[size_t(k0 + k)];
                    const auto& pr = cloud.prims[size_t(gi)];
                    real alpha = a_list[size_t(k)], Tk = t_list[size_t(k)];
                    real om = 1 - alpha;
                    real* A = &acc[size_t(gi) * 7];
                    real d_alpha = 0;
                    if (dc) {
                        for (int ch = 0; ch < 3; ++ch)
                            d_alpha += dc[ch] * (pr.color[ch] * Tk - accC[ch] / om);
                    }
                    if (df) {
                        real w = alpha * Tk;
                        for (int ch = 0; ch < 3; ++ch) {
                            d_alpha += df[ch] * (pr.feature[ch] * Tk - accF[ch] / om);
                            A[4 + ch] += df[ch] * w;
                        }
                    }
                    if (!clamp_list[size_t(k)]) {
                        A[3] += d_alpha * g_list[size_t(k)];
                        real dm = d_alpha * real(-0.5) * alpha;
                        real du = du_list[size_t(k)], dv = dv_list[size_t(k)];
                        A[0] += dm * du * du;
                        A[1] += dm * 2 * du * dv;
                        A[2] += dm * dv * dv;
                    }
                    real w = alpha * Tk;
                    for (int ch = 0; ch < 3; ++ch) {
                        accC[ch] += pr.color[ch] * w;
                        accF[ch] += pr.feature[ch] * w;
                    }
                }
            }
        }
    }

    // Chain the conic gradients back to rotation and scale per primitive.
    CloudGrads grads;
    grads.d_rot.assign(N, Vec4::Zero());
    grads.d_scale.assign(N, Vec3::Zero());
    grads.d_opacity.assign(N, 0);
    grads.d_feature.assign(N, Vec3::Zero());

    const Mat3 Wr = cam.cam_from_world_rot();
    for (size_t i = 0; i < N; ++i) {
        const real* A = &acc[i * 7];
        grads.d_opacity[i] = A[3];
        grads.d_feature[i] = Vec3(A[4], A[5], A[6]);
        if (!saved.prep[i].valid) continue;
        if (A[0] == 0 && A[1] == 0 && A[2] == 0) continue;

        const auto& pr = cloud.prims[i];
        Vec3 tcam = cam.world_to_cam(pr.mean);
        geom::Mat23 P = geom::projection_jacobian(tcam, cam.fx, cam.fy) * Wr;

        Mat2 Q;
        Q << saved.prep[i].qa, saved.prep[i].qb, saved.prep[i].qb, saved.prep[i].qc;
        Mat2 GQ;
        GQ << A[0], A[1] * real(0.5), A[1] * real(0.5), A[2];
        Mat2 d_sig2 = -Q * GQ * Q;
        Mat3 d_sig3 = P.transpose() * d_sig2 * P;

        Quaternion qh = pr.rot.normalized();
        Mat3 R = geom::quat_to_rotmat(qh);
        Mat3 M = R * pr.scale.asDiagonal();
        Mat3 dM = 2 * d_sig3 * M;

        for (int c = 0; c < 3; ++c) {
            real ds = 0;
            for (int r = 0; r < 3; ++r) ds += dM(r, c) * R(r, c);
            grads.d_scale[i][c] = ds;
        }
        Mat3 dR;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) dR(r, c) = dM(r, c) * pr.scale[c];

        Mat3 Jq[4];
        geom::rotmat_quat_jacobian(qh, Jq);
        Vec4 dqh;
        for (int k = 0; k < 4; ++k) dqh[k] = (dR.array() * Jq[k].array()).sum();
        Vec4 qv(qh.w, qh.x, qh.y, qh.z);
        grads.d_rot[i] = (dqh - qv * qv.dot(dqh)) / pr.rot.norm();
    }
    return grads;
}

}  // namespace qgfs::raster
