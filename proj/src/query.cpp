#include "qgfs/query.hpp"

#include <cmath>

namespace qgfs::query {

void RgbdView::validate() const {
    if (width <= 0 || height <= 0) throw ContractError("RgbdView: non-positive dimensions");
    size_t n = size_t(width) * size_t(height);
    if (rgb.size() != n * 3 || depth.size() != n) throw ContractError("RgbdView: buffer size mismatch");
    camera.validate();
    if (camera.width != width || camera.height != height)
        throw ContractError("RgbdView: camera resolution mismatch");
}

std::vector<QueryPoint> unproject_rgbd(const RgbdView& view, int view_index, int stride) {
    view.validate();
    if (stride < 1) throw ContractError("unproject_rgbd: stride must be >= 1");
    std::vector<QueryPoint> out;
    out.reserve(size_t(view.width / stride + 1) * size_t(view.height / stride + 1));
    for (int r = 0; r < view.height; r += stride) {
        for (int c = 0; c < view.width; c += stride) {
            size_t pix = size_t(r) * size_t(view.width) + size_t(c);
            real d = view.depth[pix];
            if (!(d > 0) || !std::isfinite(d)) continue;
            QueryPoint p;
            p.position = geom::unproject_pixel(real(c), real(r), d, view.camera);
            p.color = geom::Vec3(view.rgb[pix * 3 + 0], view.rgb[pix * 3 + 1], view.rgb[pix * 3 + 2]);
            p.view = view_index;
            p.u = c;
            p.v = r;
            out.push_back(p);
        }
    }
    return out;
}

void positional_encode(const geom::Vec3& x, real* out) {
    int idx = 0;
    for (int axis = 0; axis < 3; ++axis) {
        real p = x[axis];
        real freq = kPi;
        for (int k = 0; k < kPosEncFreqs; ++k) {
            out[idx++] = std::sin(freq * p);
            out[idx++] = std::cos(freq * p);
            freq *= 2;
        }
    }
}

void encode_query(const QueryPoint& p, real* out) {
    positional_encode(p.position, out);
    out[kPosEncDim + 0] = p.position[0];
    out[kPosEncDim + 1] = p.position[1];
    out[kPosEncDim + 2] = p.position[2];
    out[kPosEncDim + 3] = p.color[0];
    out[kPosEncDim + 4] = p.color[1];
    out[kPosEncDim + 5] = p.color[2];
}

geom::Quaternion activate_rotation(const geom::Vec4& raw) {
    real n = raw.norm();
    if (n < real(1e-12)) return geom::Quaternion{1, 0, 0, 0};
    return geom::Quaternion{raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n};
}

geom::Vec3 activate_scale(const geom::Vec3& raw) {
    geom::Vec3 s;
    for (int i = 0; i < 3; ++i) s[i] = std::clamp(std::exp(raw[i]), kScaleMin, kScaleMax);
    return s;
}

real activate_opacity(real raw) { return 1 / (1 + std::exp(-raw)); }

geom::Vec3 activate_feature(const geom::Vec3& raw) {
    return geom::Vec3(std::tanh(raw[0]), std::tanh(raw[1]), std::tanh(raw[2]));
}

namespace {

void fill_head(nn::LayerStack& s, int out_dim, Rng& rng) {
    s.add(std::make_unique<nn::Dense>(kLocalDim, 32, nn::Act::ReLU, rng));
    s.add(std::make_unique<nn::Dense>(32, out_dim, nn::Act::Linear, rng));
}

}  // namespace

QueryPipeline::QueryPipeline(int latent_dim, Rng& rng) : latent_dim_(latent_dim) {
    if (latent_dim <= 0) throw ContractError("QueryPipeline: bad latent dim");
    qd_.add(std::make_unique<nn::Dense>(kQueryDim + latent_dim, kLocalDim, nn::Act::ReLU, rng));
    qd_.add(std::make_unique<nn::Dense>(kLocalDim, kLocalDim, nn::Act::Linear, rng));

    fill_head(rot_head_, 4, rng);
    fill_head(scale_head_, 3, rng);
    fill_head(opac_head_, 1, rng);
    fill_head(feat_head_, 3, rng);

    // Start splats at a usable physical size: exp biases the scale head would
    // otherwise put every point on the 0.5 m clamp where the gradient is zero.
    scale_head_.visit_params("", [](const std::string& name, nn::Tensor& v, nn::Tensor&) {
        if (name.size() >= 2 && name.substr(name.size() - 2) == ".b" && v.numel() == 3)
            for (auto& x : v.v) x = std::log(real(0.05));
    });
}

QueryPipeline::Forward QueryPipeline::run(const std::vector<QueryPoint>& points,
                                          const nn::Tensor& z) {
    if (z.numel() != latent_dim_) throw ContractError("QueryPipeline: latent dim mismatch");
    if (points.empty()) throw ContractError("QueryPipeline: no query points");
    const int64_t n = int64_t(points.size());
    const int in_dim = kQueryDim + latent_dim_;

    nn::Tensor qin({n, in_dim});
    for (int64_t i = 0; i < n; ++i) {
        real* row = qin.data() + i * in_dim;
        encode_query(points[size_t(i)], row);
        for (int j = 0; j < latent_dim_; ++j) row[kQueryDim + j] = z.v[size_t(j)];
    }

    Forward fwd;
    fwd.n_points = n;
    nn::Tensor f_local = nn::forward(qd_, qin, fwd.qd_tape);
    fwd.rot_raw = nn::forward(rot_head_, f_local, fwd.rot_tape);
    fwd.scale_raw = nn::forward(scale_head_, f_local, fwd.scale_tape);
    fwd.opac_raw = nn::forward(opac_head_, f_local, fwd.opac_tape);
    fwd.feat_raw = nn::forward(feat_head_, f_local, fwd.feat_tape);

    fwd.params.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        auto& p = fwd.params[size_t(i)];
        p.rot = activate_rotation(geom::Vec4(fwd.rot_raw.v[size_t(i * 4 + 0)],
                                             fwd.rot_raw.v[size_t(i * 4 + 1)],
                                             fwd.rot_raw.v[size_t(i * 4 + 2)],
                                             fwd.rot_raw.v[size_t(i * 4 + 3)]));
        p.scale = activate_scale(geom::Vec3(fwd.scale_raw.v[size_t(i * 3 + 0)],
                                            fwd.scale_raw.v[size_t(i * 3 + 1)],
                                            fwd.scale_raw.v[size_t(i * 3 + 2)]));
        p.opacity = activate_opacity(fwd.opac_raw.v[size_t(i)]);
        p.feature = activate_feature(geom::Vec3(fwd.feat_raw.v[size_t(i * 3 + 0)],
                                                fwd.feat_raw.v[size_t(i * 3 + 1)],
                                                fwd.feat_raw.v[size_t(i * 3 + 2)]));
    }
    return fwd;
}

void QueryPipeline::backward(Forward& fwd, const raster::CloudGrads& grads, nn::Tensor& d_z,
                             bool train_feature_head) {
    const int64_t n = fwd.n_points;
    if (int64_t(grads.d_opacity.size()) != n) throw ContractError("QueryPipeline: grad count mismatch");
    if (d_z.numel() != latent_dim_) throw ContractError("QueryPipeline: d_z dim mismatch");

    nn::Tensor d_rot({n, 4}), d_scale({n, 3}), d_opac({n, 1}), d_feat({n, 3});
    for (int64_t i = 0; i < n; ++i) {
        const auto& p = fwd.params[size_t(i)];
        // rot = raw / |raw|: project the incoming gradient onto the tangent
        // space and divide by the raw norm; identity fallback has zero grad.
        geom::Vec4 raw(fwd.rot_raw.v[size_t(i * 4 + 0)], fwd.rot_raw.v[size_t(i * 4 + 1)],
                       fwd.rot_raw.v[size_t(i * 4 + 2)], fwd.rot_raw.v[size_t(i * 4 + 3)]);
        real rn = raw.norm();
        if (rn >= real(1e-12)) {
            geom::Vec4 q = raw / rn;
            geom::Vec4 g = grads.d_rot[size_t(i)];
            geom::Vec4 dr = (g - q * q.dot(g)) / rn;
            for (int k = 0; k < 4; ++k) d_rot.v[size_t(i * 4 + k)] = dr[k];
        }
        for (int k = 0; k < 3; ++k) {
            real s = p.scale[k];
            bool interior = s > kScaleMin && s < kScaleMax;
            d_scale.v[size_t(i * 3 + k)] = interior ? grads.d_scale[size_t(i)][k] * s : 0;
        }
        real o = p.opacity;
        d_opac.v[size_t(i)] = grads.d_opacity[size_t(i)] * o * (1 - o);
        if (train_feature_head) {
            for (int k = 0; k < 3; ++k) {
                real f = p.feature[k];
                d_feat.v[size_t(i * 3 + k)] = grads.d_feature[size_t(i)][k] * (1 - f * f);
            }
        }
    }

    nn::Tensor d_local = nn::backward(rot_head_, fwd.rot_tape, d_rot);
    nn::Tensor t = nn::backward(scale_head_, fwd.scale_tape, d_scale);
    for (size_t i = 0; i < d_local.v.size(); ++i) d_local.v[i] += t.v[i];
    t = nn::backward(opac_head_, fwd.opac_tape, d_opac);
    for (size_t i = 0; i < d_local.v.size(); ++i) d_local.v[i] += t.v[i];
    t = nn::backward(feat_head_, fwd.feat_tape, d_feat);  // zero when gated
    for (size_t i = 0; i < d_local.v.size(); ++i) d_local.v[i] += t.v[i];

    nn::Tensor d_in = nn::backward(qd_, fwd.qd_tape, d_local);
    const int in_dim = kQueryDim + latent_dim_;
    for (int64_t i = 0; i < n; ++i)
        for (int j = 0; j < latent_dim_; ++j)
            d_z.v[size_t(j)] += d_in.v[size_t(i * in_dim + kQueryDim + j)];
}

std::vector<nn::ParamRef> QueryPipeline::params(const std::string& prefix) {
    std::vector<nn::ParamRef> out;
    auto take = [&](const std::string& name, nn::Tensor& v, nn::Tensor& g) {
        out.push_back({name, &v, &g});
    };
    qd_.visit_params(prefix + ".qd", take);
    rot_head_.visit_params(prefix + ".rot", take);
    scale_head_.visit_params(prefix + ".scale", take);
    opac_head_.visit_params(prefix + ".opac", take);
    feat_head_.visit_params(prefix + ".feat", take);
    return out;
}

std::vector<nn::ParamRef> QueryPipeline::feature_head_params(const std::string& prefix) {
    std::vector<nn::ParamRef> out;
    feat_head_.visit_params(prefix + ".feat", [&](const std::string& name, nn::Tensor& v, nn::Tensor& g) {
        out.push_back({name, &v, &g});
    });
    return out;
}

raster::GaussianCloud assemble_cloud(const std::vector<QueryPoint>& points,
                                     const std::vector<GaussianParams>& params) {
    if (points.size() != params.size()) throw ContractError("assemble_cloud: size mismatch");
    raster::GaussianCloud cloud;
    cloud.prims.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        auto& g = cloud.prims[i];
        g.mean = points[i].position;
        g.color = points[i].color;
        g.rot = params[i].rot;
        g.scale = params[i].scale;
        g.opacity = params[i].opacity;
        g.feature = params[i].feature;
    }
    return cloud;
}

}  // namespace qgfs::query
