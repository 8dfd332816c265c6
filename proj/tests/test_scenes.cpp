#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qgfs/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

using namespace qgfs;

namespace {

std::string temp_path(const char* name) {
    return std::string("/tmp/qgfs_scene_test_") + name;
}

bool same_cloud(const raster::GaussianCloud& a, const raster::GaussianCloud& b) {
    if (a.prims.size() != b.prims.size()) return false;
    for (size_t i = 0; i < a.prims.size(); ++i) {
        const auto& x = a.prims[i];
        const auto& y = b.prims[i];
        if (x.mean != y.mean || x.color != y.color || x.scale != y.scale) return false;
        if (x.opacity != y.opacity || x.feature != y.feature) return false;
        if (x.rot.w != y.rot.w || x.rot.x != y.rot.x || x.rot.y != y.rot.y || x.rot.z != y.rot.z)
            return false;
    }
    return true;
}

std::vector<char> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("scene generation is seed-deterministic") {
    auto [spec_a, lc_a] = scenes::generate_scene(1234);
    auto [spec_b, lc_b] = scenes::generate_scene(1234);

    REQUIRE(spec_a.objects.size() == spec_b.objects.size());
    for (size_t i = 0; i < spec_a.objects.size(); ++i) {
        CHECK(spec_a.objects[i].category == spec_b.objects[i].category);
        CHECK(spec_a.objects[i].shape == spec_b.objects[i].shape);
        CHECK(spec_a.objects[i].center == spec_b.objects[i].center);
        CHECK(spec_a.objects[i].yaw == spec_b.objects[i].yaw);
        CHECK(spec_a.objects[i].half_extent == spec_b.objects[i].half_extent);
    }
    CHECK(same_cloud(lc_a.cloud, lc_b.cloud));
    CHECK(lc_a.object_inst == lc_b.object_inst);
    CHECK(lc_a.part_inst == lc_b.part_inst);
    CHECK(lc_a.part_category == lc_b.part_category);

    auto [spec_c, lc_c] = scenes::generate_scene(1235);
    CHECK(!same_cloud(lc_a.cloud, lc_c.cloud));
}

TEST_CASE("scenes stay inside the workspace with 1-4 objects of 50-200 splats") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        auto spec = scenes::generate_scene_spec(seed);
        CHECK(spec.objects.size() >= 1);
        CHECK(spec.objects.size() <= 4);
    }

    for (uint64_t seed = 0; seed < 40; ++seed) {
        auto [spec, lc] = scenes::generate_scene(seed);
        REQUIRE(lc.object_inst.size() == lc.cloud.prims.size());
        REQUIRE(lc.part_inst.size() == lc.cloud.prims.size());
        REQUIRE(lc.part_object.size() == lc.part_category.size());
        REQUIRE(lc.part_object.size() == lc.part_slot.size());
        CHECK(lc.part_object.size() == spec.objects.size() * scenes::kPartsPerObject);

        std::vector<int> per_object(spec.objects.size(), 0);
        for (size_t i = 0; i < lc.cloud.prims.size(); ++i) {
            const auto& mu = lc.cloud.prims[i].mean;
            CHECK(std::abs(mu[0]) <= real(0.5));
            CHECK(std::abs(mu[1]) <= real(0.5));
            CHECK(std::abs(mu[2]) <= real(0.5));
            int32_t oi = lc.object_inst[i];
            REQUIRE(oi >= 0);
            REQUIRE(size_t(oi) < per_object.size());
            ++per_object[size_t(oi)];
            // part instance belongs to that same object
            int32_t pi = lc.part_inst[i];
            REQUIRE(pi >= 0);
            REQUIRE(size_t(pi) < lc.part_object.size());
            CHECK(lc.part_object[size_t(pi)] == oi);
        }
        for (size_t o = 0; o < per_object.size(); ++o) {
            CHECK(per_object[o] >= 50);
            CHECK(per_object[o] <= 200);
            // both part slots are populated for every object
            std::set<int32_t> slots;
            for (size_t i = 0; i < lc.part_inst.size(); ++i)
                if (lc.object_inst[i] == int32_t(o))
                    slots.insert(lc.part_slot[size_t(lc.part_inst[i])]);
            CHECK(slots == std::set<int32_t>{0, 1});
        }
        lc.cloud.validate();
    }
}

TEST_CASE("ring cameras are azimuth-ordered and look at the origin") {
    auto cams = scenes::ring_cameras(scenes::kViewsPerEpisode, 32, 32, scenes::kRingRadius,
                                     scenes::kRingElevation);
    REQUIRE(cams.size() == size_t(scenes::kViewsPerEpisode));

    real az0 = std::atan2(cams[0].t_wc[1], cams[0].t_wc[0]);
    for (size_t i = 0; i < cams.size(); ++i) {
        const auto& cam = cams[i];
        CHECK(cam.t_wc.norm() == doctest::Approx(scenes::kRingRadius).epsilon(1e-12));
        CHECK(cam.t_wc[2] ==
              doctest::Approx(scenes::kRingRadius * std::sin(scenes::kRingElevation)).epsilon(1e-12));
        // equally spaced, increasing azimuth (modulo the atan2 wrap)
        real az = std::atan2(cam.t_wc[1], cam.t_wc[0]);
        real expect = az0 + real(i) * 2 * kPi / real(cams.size());
        real diff = std::remainder(az - expect, 2 * kPi);
        CHECK(std::abs(diff) <= 1e-9);

        geom::Vec3 origin_cam = cam.world_to_cam(geom::Vec3::Zero());
        CHECK(std::abs(origin_cam[0]) <= 1e-9);
        CHECK(std::abs(origin_cam[1]) <= 1e-9);
        CHECK(origin_cam[2] > 0);
        cam.validate();
    }

    CHECK(scenes::ring_cameras(5, 16, 16, 1, real(0.3)).size() == 5);
}

TEST_CASE("episodes rerender identically and group into 4 triples") {
    auto [spec, lc] = scenes::generate_scene(77);
    auto ep1 = scenes::render_episode(spec, lc, 16, 16, nullptr, 99);
    auto ep2 = scenes::render_episode(spec, lc, 16, 16, nullptr, 99);

    REQUIRE(ep1.views.size() == size_t(scenes::kViewsPerEpisode));
    CHECK(scenes::Dataset::kTriples == 4);
    CHECK(ep1.features_pending());
    for (size_t k = 0; k < ep1.views.size(); ++k) {
        CHECK(ep1.views[k].rgb8 == ep2.views[k].rgb8);
        CHECK(ep1.views[k].depth == ep2.views[k].depth);
        CHECK(ep1.views[k].feature.empty());
    }

    // Baked features are deterministic too and flip the pending flag.
    Rng ae_rng(5);
    hse::Autoencoder ae(ae_rng);
    auto ep3 = scenes::render_episode(spec, lc, 16, 16, &ae, 99);
    auto ep4 = scenes::render_episode(spec, lc, 16, 16, &ae, 99);
    CHECK(!ep3.features_pending());
    for (size_t k = 0; k < ep3.views.size(); ++k) {
        REQUIRE(ep3.views[k].feature.size() == size_t(16 * 16 * 3));
        CHECK(ep3.views[k].feature == ep4.views[k].feature);
    }
}

TEST_CASE("blended depth at an opaque splat matches its camera-space z") {
    // One isolated ground-truth-style splat in an otherwise empty scene.
    raster::GaussianCloud cloud;
    raster::GaussianPrimitive g;
    g.mean = geom::Vec3(real(0.05), real(-0.02), real(0.4));
    g.rot = geom::Quaternion{1, 0, 0, 0};
    g.scale = geom::Vec3(real(0.06), real(0.06), real(0.06));
    g.opacity = scenes::kGroundTruthOpacity;
    g.color = geom::Vec3(real(0.8), real(0.2), real(0.2));
    g.feature = geom::Vec3::Zero();
    cloud.prims.push_back(g);

    auto cams = scenes::ring_cameras(scenes::kViewsPerEpisode, 32, 32, scenes::kRingRadius,
                                     scenes::kRingElevation);
    for (int vi : {0, 3, 7}) {
        auto out = raster::render_forward(cloud, cams[size_t(vi)], raster::RenderSettings::fast());
        real z_cam = cams[size_t(vi)].world_to_cam(g.mean)[2];
        int covered = 0;
        for (size_t p = 0; p < out.depth.size(); ++p) {
            if (out.alpha[p] < scenes::kCoverageAlphaMin) continue;
            ++covered;
            CHECK(out.depth[p] == doctest::Approx(z_cam).epsilon(1e-6));
        }
        CHECK(covered > 0);
    }
}

TEST_CASE("adjacent views agree on the observed surface") {
    // Unproject every valid pixel of view i and project into view i+1: within
    // 1 px of the landing point, view i+1 must hold a sample of the same
    // surface patch. Blended (expected) depth is noisy along the ray, so
    // "same patch" uses a 3-px-equivalent world gate; points whose landing
    // area is clearly occluded by a nearer surface are unverifiable and
    // excluded. A camera or unprojection convention error drives the ratio
    // to ~0, while measured clean runs sit above 0.97.
    const int W = 64;
    for (uint64_t seed : {31ull, 123ull}) {
        auto [spec, lc] = scenes::generate_scene(seed);
        auto ep = scenes::render_episode(spec, lc, W, W, nullptr, 0);

        int64_t candidates = 0, consistent = 0;
        for (int i = 0; i < scenes::kViewsPerEpisode; ++i) {
            int j = (i + 1) % scenes::kViewsPerEpisode;
            const auto& vi = ep.views[size_t(i)];
            const auto& vj = ep.views[size_t(j)];
            for (int r = 0; r < W; ++r)
                for (int c = 0; c < W; ++c) {
                    real d = vi.depth[size_t(r) * size_t(W) + size_t(c)];
                    if (!(d > 0)) continue;
                    geom::Vec3 X = geom::unproject_pixel(real(c), real(r), d, vi.camera);
                    auto pp = geom::project_point(X, vj.camera);
                    if (pp.behind) continue;
                    int cu = int(std::lround(pp.u)), cv = int(std::lround(pp.v));
                    if (cu < 1 || cu >= W - 1 || cv < 1 || cv >= W - 1) continue;
                    real gate = 3 * pp.depth / vj.camera.fx;
                    bool ok = false, occluded = false;
                    for (int dv = -1; dv <= 1; ++dv)
                        for (int du = -1; du <= 1; ++du) {
                            real dj = vj.depth[size_t(cv + dv) * size_t(W) + size_t(cu + du)];
                            if (!(dj > 0)) continue;
                            geom::Vec3 Y = geom::unproject_pixel(real(cu + du), real(cv + dv),
                                                                 dj, vj.camera);
                            if ((Y - X).norm() <= gate) ok = true;
                            else if (dj < pp.depth - gate) occluded = true;
                        }
                    if (!ok && occluded) continue;
                    ++candidates;
                    consistent += ok ? 1 : 0;
                }
        }
        CAPTURE(seed);
        REQUIRE(candidates > 1000);
        CHECK(real(consistent) >= real(0.95) * real(candidates));
    }
}

TEST_CASE("dataset save/load round-trips byte for byte") {
    Rng ae_rng(8);
    hse::Autoencoder ae(ae_rng);
    auto ds = scenes::generate_dataset(42, 2, 16, 16, &ae);
    REQUIRE(ds.episodes.size() == 2);
    CHECK(!ds.episodes[0].features_pending());

    std::string p1 = temp_path("roundtrip.bin");
    std::string p2 = temp_path("roundtrip2.bin");
    scenes::save_dataset(ds, p1);
    auto loaded = scenes::load_dataset(p1);

    CHECK(loaded.width == ds.width);
    CHECK(loaded.height == ds.height);
    CHECK(loaded.seed == ds.seed);
    REQUIRE(loaded.episodes.size() == ds.episodes.size());
    for (size_t e = 0; e < ds.episodes.size(); ++e) {
        const auto& a = ds.episodes[e];
        const auto& b = loaded.episodes[e];
        CHECK(a.seed == b.seed);
        CHECK(a.object_inst == b.object_inst);
        CHECK(a.part_inst == b.part_inst);
        CHECK(a.part_object == b.part_object);
        CHECK(a.part_category == b.part_category);
        CHECK(a.part_slot == b.part_slot);
        REQUIRE(a.views.size() == b.views.size());
        for (size_t k = 0; k < a.views.size(); ++k) {
            // depth, features, and poses live on disk as 32-bit floats
            CHECK(a.views[k].rgb8 == b.views[k].rgb8);
            REQUIRE(a.views[k].depth.size() == b.views[k].depth.size());
            for (size_t p = 0; p < a.views[k].depth.size(); ++p)
                CHECK(b.views[k].depth[p] == real(float(a.views[k].depth[p])));
            REQUIRE(a.views[k].feature.size() == b.views[k].feature.size());
            for (size_t p = 0; p < a.views[k].feature.size(); ++p)
                CHECK(b.views[k].feature[p] == real(float(a.views[k].feature[p])));
            CHECK(a.views[k].camera.fx == b.views[k].camera.fx);
            for (int r = 0; r < 3; ++r) {
                CHECK(b.views[k].camera.t_wc[r] == real(float(a.views[k].camera.t_wc[r])));
                for (int c = 0; c < 3; ++c)
                    CHECK(b.views[k].camera.R_wc(r, c) == real(float(a.views[k].camera.R_wc(r, c))));
            }
        }
    }

    scenes::save_dataset(loaded, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    // Pending-feature datasets round-trip too.
    auto pending = scenes::generate_dataset(43, 1, 16, 16, nullptr);
    std::string p3 = temp_path("pending.bin");
    scenes::save_dataset(pending, p3);
    auto pending2 = scenes::load_dataset(p3);
    CHECK(pending2.episodes[0].features_pending());

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("corrupt dataset files are rejected") {
    auto ds = scenes::generate_dataset(7, 1, 16, 16, nullptr);
    std::string path = temp_path("corrupt.bin");
    scenes::save_dataset(ds, path);
    auto bytes = file_bytes(path);

    // truncation
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    }
    CHECK_THROWS_AS(scenes::load_dataset(path), IoError);

    // bit flip in the payload
    {
        auto flipped = bytes;
        flipped[flipped.size() / 2] = char(flipped[flipped.size() / 2] ^ 0x40);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(flipped.data(), std::streamsize(flipped.size()));
    }
    CHECK_THROWS_AS(scenes::load_dataset(path), IoError);

    // wrong magic
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "not a dataset at all";
    }
    CHECK_THROWS_AS(scenes::load_dataset(path), IoError);
    CHECK_THROWS_AS(scenes::load_dataset(temp_path("missing.bin")), IoError);

    std::remove(path.c_str());
}

TEST_CASE("on-disk size extrapolates well under the 200 MB budget") {
    Rng ae_rng(8);
    hse::Autoencoder ae(ae_rng);
    auto ds = scenes::generate_dataset(11, 4, 64, 64, &ae);
    std::string path = temp_path("size.bin");
    scenes::save_dataset(ds, path);
    size_t bytes = file_bytes(path).size();
    std::remove(path.c_str());

    // 64 episodes cost at most 16x the 4-episode file plus slack; keep the
    // whole budget with a 2x margin.
    CHECK(bytes * 16 <= size_t(100) * 1024 * 1024);
}
