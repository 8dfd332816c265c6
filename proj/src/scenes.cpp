#include "qgfs/scenes.hpp"

#include "qgfs/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace qgfs::scenes {

using nlohmann::json;

namespace {

// Category (and part slot) must show up in appearance, otherwise the feature
// targets keyed on them cannot be inferred from the input views. One anchor
// color per (category, slot), evenly spaced hues, slots offset half a step.
geom::Vec3 category_color(int category, int slot) {
    real hue = (real(category) + real(0.5) * real(slot)) / real(kCategories);
    real sat = slot == 0 ? real(0.55) : real(0.85);
    real val = slot == 0 ? real(0.80) : real(0.65);
    real h6 = hue * 6;
    int i = int(h6) % 6;
    real f = h6 - std::floor(h6);
    real p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
    switch (i) {
        case 0: return {val, t, p};
        case 1: return {q, val, p};
        case 2: return {p, val, t};
        case 3: return {p, q, val};
        case 4: return {t, p, val};
        default: return {val, p, q};
    }
}

geom::Mat3 yaw_matrix(real yaw) {
    geom::Mat3 R;
    real c = std::cos(yaw), s = std::sin(yaw);
    R << c, -s, 0, s, c, 0, 0, 0, 1;
    return R;
}

geom::Quaternion random_quat(Rng& rng) {
    geom::Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    real n = q.norm();
    if (n < real(1e-9)) return geom::Quaternion{1, 0, 0, 0};
    return geom::Quaternion{q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

geom::Vec3 sample_in_ball(Rng& rng, real radius) {
    geom::Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    real n = dir.norm();
    if (n < real(1e-9)) dir = geom::Vec3(1, 0, 0), n = 1;
    real r = radius * std::cbrt(rng.uniform());
    return dir * (r / n);
}

geom::Vec3 jitter_color(Rng& rng, const geom::Vec3& base) {
    geom::Vec3 c;
    for (int i = 0; i < 3; ++i)
        c[i] = std::clamp(base[i] + real(0.06) * (rng.uniform() - real(0.5)), real(0.02), real(0.98));
    return c;
}

}  // namespace

SceneSpec generate_scene_spec(uint64_t seed) {
    Rng rng(mix_seed(seed, fnv1a64("scene-spec")));
    SceneSpec spec;
    spec.seed = seed;
    int n_obj = 1 + int(rng.uniform_int(4));
    for (int i = 0; i < n_obj; ++i) {
        ObjectSpec obj;
        obj.category = int(rng.uniform_int(kCategories));
        obj.shape = obj.category % 2;
        // Keep object centers apart so part masks stay mostly unoccluded.
        for (int attempt = 0; attempt < 24; ++attempt) {
            obj.center = geom::Vec3(real(0.6) * (rng.uniform() - real(0.5)),
                                    real(0.6) * (rng.uniform() - real(0.5)),
                                    real(-0.1) + real(0.35) * rng.uniform());
            bool ok = true;
            for (const auto& other : spec.objects) {
                geom::Vec3 d = obj.center - other.center;
                if (std::sqrt(d.x() * d.x() + d.y() * d.y()) < real(0.28)) ok = false;
            }
            if (ok) break;
        }
        obj.yaw = 2 * kPi * rng.uniform();
        obj.half_extent = geom::Vec3(real(0.05) + real(0.07) * rng.uniform(),
                                     real(0.05) + real(0.07) * rng.uniform(),
                                     real(0.05) + real(0.07) * rng.uniform());
        obj.color_body = jitter_color(rng, category_color(obj.category, 0));
        obj.color_part = jitter_color(rng, category_color(obj.category, 1));
        spec.objects.push_back(obj);
    }
    return spec;
}

LabeledCloud realize_scene(const SceneSpec& spec) {
    Rng rng(mix_seed(spec.seed, fnv1a64("scene-realize")));
    LabeledCloud lc;
    for (int oi = 0; oi < int(spec.objects.size()); ++oi) {
        const ObjectSpec& obj = spec.objects[size_t(oi)];
        geom::Mat3 R = yaw_matrix(obj.yaw);
        int body_part = int(lc.part_object.size());
        lc.part_object.push_back(oi);
        lc.part_category.push_back(obj.category);
        lc.part_slot.push_back(0);
        int att_part = int(lc.part_object.size());
        lc.part_object.push_back(oi);
        lc.part_category.push_back(obj.category);
        lc.part_slot.push_back(1);

        int n_body = 40 + int(rng.uniform_int(111));  // 40..150
        int n_att = 10 + int(rng.uniform_int(41));    // 10..50
        real att_radius = real(0.03) + real(0.02) * rng.uniform();
        geom::Vec3 att_center_local(0, 0, obj.half_extent.z() + real(0.8) * att_radius);

        for (int k = 0; k < n_body + n_att; ++k) {
            bool body = k < n_body;
            geom::Vec3 local;
            if (body) {
                if (obj.shape == 0) {
                    local = geom::Vec3(obj.half_extent.x() * 2 * (rng.uniform() - real(0.5)),
                                       obj.half_extent.y() * 2 * (rng.uniform() - real(0.5)),
                                       obj.half_extent.z() * 2 * (rng.uniform() - real(0.5)));
                } else {
                    local = sample_in_ball(rng, obj.half_extent.x());
                }
            } else {
                local = att_center_local + sample_in_ball(rng, att_radius);
            }
            raster::GaussianPrimitive g;
            g.mean = obj.center + R * local;
            g.rot = random_quat(rng);
            real lo = body ? real(0.015) : real(0.010);
            real hi = body ? real(0.050) : real(0.030);
            g.scale = geom::Vec3(lo + (hi - lo) * rng.uniform(), lo + (hi - lo) * rng.uniform(),
                                 lo + (hi - lo) * rng.uniform());
            g.opacity = kGroundTruthOpacity;
            g.color = jitter_color(rng, body ? obj.color_body : obj.color_part);
            lc.cloud.prims.push_back(g);
            lc.object_inst.push_back(oi);
            lc.part_inst.push_back(body ? body_part : att_part);
        }
    }
    lc.cloud.validate();
    return lc;
}

std::pair<SceneSpec, LabeledCloud> generate_scene(uint64_t seed) {
    SceneSpec spec = generate_scene_spec(seed);
    return {spec, realize_scene(spec)};
}

std::vector<geom::Camera> ring_cameras(int count, int width, int height, real radius,
                                       real elevation) {
    std::vector<geom::Camera> cams;
    cams.reserve(size_t(count));
    for (int k = 0; k < count; ++k) {
        real az = 2 * kPi * real(k) / real(count);
        geom::Vec3 pos(radius * std::cos(elevation) * std::cos(az),
                       radius * std::cos(elevation) * std::sin(az), radius * std::sin(elevation));
        geom::Camera cam =
            geom::look_at_camera(pos, geom::Vec3::Zero(), real(width), real(width),
                                 (real(width) - 1) / 2, (real(height) - 1) / 2, width, height);
        cam.validate();
        cams.push_back(cam);
    }
    return cams;
}

std::vector<real> View::rgb_real() const {
    std::vector<real> out(rgb8.size());
    for (size_t i = 0; i < rgb8.size(); ++i) out[i] = real(rgb8[i]) / 255;
    return out;
}

query::RgbdView View::rgbd() const {
    query::RgbdView v;
    v.width = camera.width;
    v.height = camera.height;
    v.rgb = rgb_real();
    v.depth = depth;
    v.camera = camera;
    return v;
}

hse::LabelView label_view(const raster::RenderOutput& out, const LabeledCloud& lc) {
    hse::LabelView labels;
    labels.width = out.width;
    labels.height = out.height;
    size_t n = size_t(out.width) * size_t(out.height);
    labels.object_inst.assign(n, -1);
    labels.part_inst.assign(n, -1);
    for (size_t p = 0; p < n; ++p) {
        if (out.alpha[p] < kCoverageAlphaMin) continue;
        int32_t g = out.dominant[p];
        if (g < 0) continue;
        labels.object_inst[p] = lc.object_inst[size_t(g)];
        labels.part_inst[p] = lc.part_inst[size_t(g)];
    }
    labels.part_object = lc.part_object;
    labels.part_category = lc.part_category;
    labels.part_slot = lc.part_slot;
    return labels;
}

std::vector<real> view_feature_targets(const raster::RenderOutput& out, const LabeledCloud& lc,
                                       hse::Autoencoder& ae, uint64_t feature_seed) {
    hse::LabelView labels = label_view(out, lc);
    hse::SynthView synth = hse::synth_features(labels, feature_seed);
    const size_t n = size_t(out.width) * size_t(out.height);
    std::vector<real> targets(n * 3, 0);
    if (synth.masks.empty()) return targets;
    hse::PooledMap pooled = hse::pool_stack(synth.masks, synth.feat);

    // Pixels with the same (object, part) labels share one aggregated vector;
    // aggregate and encode per distinct pair instead of per pixel.
    std::map<std::pair<int32_t, int32_t>, std::vector<size_t>> groups;
    for (size_t p = 0; p < n; ++p)
        if (labels.part_inst[p] >= 0)
            groups[{labels.object_inst[p], labels.part_inst[p]}].push_back(p);
    if (groups.empty()) return targets;

    nn::Tensor batch({int64_t(groups.size()), hse::kFeatureDim});
    int64_t row = 0;
    for (const auto& [key, pixels] : groups) {
        size_t p0 = pixels.front();
        auto agg = hse::aggregate_hierarchical(int(p0 / size_t(out.width)),
                                               int(p0 % size_t(out.width)), synth.masks, pooled);
        std::copy(agg.begin(), agg.end(), batch.data() + row * hse::kFeatureDim);
        ++row;
    }
    nn::Tensor compact = ae.encode(batch);
    row = 0;
    for (const auto& [key, pixels] : groups) {
        const real* c = compact.data() + row * hse::kCompactDim;
        for (size_t p : pixels) {
            targets[p * 3 + 0] = c[0];
            targets[p * 3 + 1] = c[1];
            targets[p * 3 + 2] = c[2];
        }
        ++row;
    }
    return targets;
}

Episode render_episode(const SceneSpec& spec, const LabeledCloud& lc, int width, int height,
                       hse::Autoencoder* ae, uint64_t feature_seed) {
    Episode ep;
    ep.seed = spec.seed;
    ep.spec = spec;
    ep.object_inst = lc.object_inst;
    ep.part_inst = lc.part_inst;
    ep.part_object = lc.part_object;
    ep.part_category = lc.part_category;
    ep.part_slot = lc.part_slot;

    auto cams = ring_cameras(kViewsPerEpisode, width, height, kRingRadius, kRingElevation);
    raster::RenderSettings settings = raster::RenderSettings::fast();
    for (const auto& cam : cams) {
        raster::RenderOutput out = raster::render_forward(lc.cloud, cam, settings);
        View view;
        view.camera = cam;
        view.rgb8.resize(out.color.size());
        for (size_t i = 0; i < out.color.size(); ++i) {
            real v = std::clamp(out.color[i], real(0), real(1));
            view.rgb8[i] = uint8_t(std::lround(v * 255));
        }
        view.depth.resize(out.depth.size());
        for (size_t p = 0; p < out.depth.size(); ++p)
            view.depth[p] = out.alpha[p] >= kCoverageAlphaMin ? out.depth[p] : 0;
        if (ae) view.feature = view_feature_targets(out, lc, *ae, feature_seed);
        ep.views.push_back(std::move(view));
    }
    return ep;
}

Dataset generate_dataset(uint64_t seed, int count, int width, int height, hse::Autoencoder* ae) {
    if (count <= 0) throw ContractError("generate_dataset: episode count must be positive");
    Dataset ds;
    ds.width = width;
    ds.height = height;
    ds.seed = seed;
    for (int i = 0; i < count; ++i) {
        uint64_t scene_seed = mix_seed(seed, uint64_t(i) + 1);
        auto [spec, lc] = generate_scene(scene_seed);
        ds.episodes.push_back(render_episode(spec, lc, width, height, ae, seed));
    }
    return ds;
}

void bake_feature_targets(Dataset& ds, hse::Autoencoder& ae) {
    auto cams = ring_cameras(kViewsPerEpisode, ds.width, ds.height, kRingRadius, kRingElevation);
    raster::RenderSettings settings = raster::RenderSettings::fast();
    for (auto& ep : ds.episodes) {
        if (!ep.features_pending()) continue;
        LabeledCloud lc = realize_scene(ep.spec);
        for (int k = 0; k < kViewsPerEpisode; ++k) {
            raster::RenderOutput out = raster::render_forward(lc.cloud, cams[size_t(k)], settings);
            ep.views[size_t(k)].feature = view_feature_targets(out, lc, ae, ds.seed);
        }
    }
}

namespace {

json spec_to_json(const SceneSpec& spec) {
    json objs = json::array();
    for (const auto& o : spec.objects) {
        objs.push_back({{"category", o.category},
                        {"shape", o.shape},
                        {"center", {o.center.x(), o.center.y(), o.center.z()}},
                        {"yaw", o.yaw},
                        {"half_extent", {o.half_extent.x(), o.half_extent.y(), o.half_extent.z()}},
                        {"color_body", {o.color_body.x(), o.color_body.y(), o.color_body.z()}},
                        {"color_part", {o.color_part.x(), o.color_part.y(), o.color_part.z()}}});
    }
    return objs;
}

SceneSpec spec_from_json(uint64_t seed, const json& objs) {
    SceneSpec spec;
    spec.seed = seed;
    for (const auto& j : objs) {
        ObjectSpec o;
        o.category = j.at("category").get<int>();
        o.shape = j.at("shape").get<int>();
        auto v3 = [&](const char* key) {
            const auto& a = j.at(key);
            return geom::Vec3(a.at(0).get<real>(), a.at(1).get<real>(), a.at(2).get<real>());
        };
        o.center = v3("center");
        o.yaw = j.at("yaw").get<real>();
        o.half_extent = v3("half_extent");
        o.color_body = v3("color_body");
        o.color_part = v3("color_part");
        spec.objects.push_back(o);
    }
    return spec;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    bool features = !ds.episodes.empty() && !ds.episodes[0].features_pending();
    for (const auto& ep : ds.episodes)
        if (ep.features_pending() == features)
            throw ContractError("save_dataset: mixed pending/baked feature targets");

    io::BinaryWriter bw(path);
    bw.bytes("QGFSDS01", 8);
    bw.u32(uint32_t(ds.width));
    bw.u32(uint32_t(ds.height));
    bw.u64(ds.seed);
    bw.u32(uint32_t(ds.episodes.size()));
    bw.u8(features ? 1 : 0);
    const size_t n_pix = size_t(ds.width) * size_t(ds.height);
    for (const auto& ep : ds.episodes) {
        bw.u64(ep.seed);
        json labels = {{"objects", spec_to_json(ep.spec)},
                       {"gaussian_object", ep.object_inst},
                       {"gaussian_part", ep.part_inst},
                       {"part_object", ep.part_object},
                       {"part_category", ep.part_category},
                       {"part_slot", ep.part_slot}};
        bw.str(labels.dump());
        if (ep.views.size() != kViewsPerEpisode)
            throw ContractError("save_dataset: episode must have 12 views");
        for (const auto& view : ep.views) {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) bw.f32(float(view.camera.R_wc(r, c)));
            for (int r = 0; r < 3; ++r) bw.f32(float(view.camera.t_wc[r]));
            if (view.rgb8.size() != n_pix * 3 || view.depth.size() != n_pix)
                throw ContractError("save_dataset: view buffer size mismatch");
            bw.vec(view.rgb8);
            std::vector<float> tmp(n_pix);
            for (size_t p = 0; p < n_pix; ++p) tmp[p] = float(view.depth[p]);
            bw.vec(tmp);
            if (features) {
                if (view.feature.size() != n_pix * 3)
                    throw ContractError("save_dataset: feature buffer size mismatch");
                std::vector<float> ft(n_pix * 3);
                for (size_t i = 0; i < ft.size(); ++i) ft[i] = float(view.feature[i]);
                bw.vec(ft);
            }
        }
    }
    bw.finish();
}

Dataset load_dataset(const std::string& path) {
    io::BinaryReader br(path);
    br.verify_checksum();
    char magic[8];
    br.bytes(magic, 8);
    if (std::string(magic, 8) != "QGFSDS01") throw IoError("dataset: bad magic in " + path);
    Dataset ds;
    ds.width = int(br.u32());
    ds.height = int(br.u32());
    ds.seed = br.u64();
    uint32_t n_ep = br.u32();
    bool features = br.u8() != 0;
    const size_t n_pix = size_t(ds.width) * size_t(ds.height);

    auto cams = ring_cameras(kViewsPerEpisode, ds.width, ds.height, kRingRadius, kRingElevation);
    for (uint32_t e = 0; e < n_ep; ++e) {
        Episode ep;
        ep.seed = br.u64();
        json labels = json::parse(br.str());
        ep.spec = spec_from_json(ep.seed, labels.at("objects"));
        ep.object_inst = labels.at("gaussian_object").get<std::vector<int32_t>>();
        ep.part_inst = labels.at("gaussian_part").get<std::vector<int32_t>>();
        ep.part_object = labels.at("part_object").get<std::vector<int32_t>>();
        ep.part_category = labels.at("part_category").get<std::vector<int32_t>>();
        ep.part_slot = labels.at("part_slot").get<std::vector<int32_t>>();
        for (int k = 0; k < kViewsPerEpisode; ++k) {
            View view;
            view.camera = cams[size_t(k)];  // carries intrinsics/resolution
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) view.camera.R_wc(r, c) = real(br.f32());
            for (int r = 0; r < 3; ++r) view.camera.t_wc[r] = real(br.f32());
            br.vec(view.rgb8, n_pix * 3);
            std::vector<float> tmp;
            br.vec(tmp, n_pix);
            view.depth.resize(n_pix);
            for (size_t p = 0; p < n_pix; ++p) view.depth[p] = real(tmp[p]);
            if (features) {
                std::vector<float> ft;
                br.vec(ft, n_pix * 3);
                view.feature.resize(ft.size());
                for (size_t i = 0; i < ft.size(); ++i) view.feature[i] = real(ft[i]);
            }
            ep.views.push_back(std::move(view));
        }
        ds.episodes.push_back(std::move(ep));
    }
    if (br.remaining() != 4) throw IoError("dataset: trailing bytes in " + path);
    return ds;
}

}  // namespace qgfs::scenes
