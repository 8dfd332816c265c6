#pragma once

#include "qgfs/common.hpp"
#include "qgfs/geom.hpp"
#include "qgfs/hse.hpp"
#include "qgfs/query.hpp"
#include "qgfs/raster.hpp"

#include <string>
#include <vector>

namespace qgfs::scenes {

inline constexpr int kViewsPerEpisode = 12;
inline constexpr int kCategories = 8;
inline constexpr int kPartsPerObject = 2;
inline constexpr real kRingRadius = real(1.5);
inline constexpr real kRingElevation = kPi / 6;  // 30 degrees
inline constexpr real kGroundTruthOpacity = real(0.95);
// Pixels below this accumulated alpha count as background: depth invalid,
// no semantic label.
inline constexpr real kCoverageAlphaMin = real(0.5);

struct ObjectSpec {
    int category = 0;              // 0..kCategories-1
    int shape = 0;                 // 0 box, 1 sphere
    geom::Vec3 center = geom::Vec3::Zero();
    real yaw = 0;                  // about world +z
    geom::Vec3 half_extent = geom::Vec3::Zero();
    geom::Vec3 color_body = geom::Vec3::Zero();
    geom::Vec3 color_part = geom::Vec3::Zero();
};

struct SceneSpec {
    uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
};

// Ground-truth cloud with per-Gaussian instance labels plus the part-instance
// tables consumed by the synthetic feature provider.
struct LabeledCloud {
    raster::GaussianCloud cloud;
    std::vector<int32_t> object_inst;   // per Gaussian
    std::vector<int32_t> part_inst;     // per Gaussian
    std::vector<int32_t> part_object;   // per part instance
    std::vector<int32_t> part_category;
    std::vector<int32_t> part_slot;     // 0 = body, 1 = attachment
};

// Deterministic per seed: 1-4 objects, each 50-200 Gaussians in two labeled
// parts, all means inside the unit workspace cube.
SceneSpec generate_scene_spec(uint64_t seed);
LabeledCloud realize_scene(const SceneSpec& spec);
std::pair<SceneSpec, LabeledCloud> generate_scene(uint64_t seed);

// Azimuth-ordered ring of cameras looking at the origin.
std::vector<geom::Camera> ring_cameras(int count, int width, int height, real radius,
                                       real elevation);

struct View {
    geom::Camera camera;
    std::vector<uint8_t> rgb8;     // H*W*3, quantized as stored on disk
    std::vector<real> depth;       // H*W meters, 0 = invalid
    std::vector<real> feature;     // H*W*3 compact targets; empty while pending

    std::vector<real> rgb_real() const;
    query::RgbdView rgbd() const;
};

struct Episode {
    uint64_t seed = 0;             // scene seed, regenerates the ground truth
    SceneSpec spec;
    std::vector<View> views;
    // Per-Gaussian and part tables copied from the labeled cloud.
    std::vector<int32_t> object_inst, part_inst;
    std::vector<int32_t> part_object, part_category, part_slot;

    bool features_pending() const { return !views.empty() && views[0].feature.empty(); }
};

// Renders the 12 ring views of a ground-truth cloud. When ae is non-null the
// per-view compact feature targets are computed (synthetic provider ->
// pooling -> hierarchical aggregate -> encode) with feature vectors keyed by
// feature_seed; otherwise targets stay pending.
Episode render_episode(const SceneSpec& spec, const LabeledCloud& lc, int width, int height,
                       hse::Autoencoder* ae, uint64_t feature_seed);

// Per-pixel instance labels of one rendered view, derived from the dominant
// contributor map and masked to covered pixels.
hse::LabelView label_view(const raster::RenderOutput& out, const LabeledCloud& lc);

// Compact feature targets for one view (H*W*3 interleaved).
std::vector<real> view_feature_targets(const raster::RenderOutput& out, const LabeledCloud& lc,
                                       hse::Autoencoder& ae, uint64_t feature_seed);

struct Dataset {
    int width = 64, height = 64;
    uint64_t seed = 0;          // dataset seed; also keys the part features
    std::vector<Episode> episodes;

    // Input-input-target triples: views (3k, 3k+1) -> 3k+2.
    static constexpr int kTriples = kViewsPerEpisode / 3;
};

// Generates `count` episodes from a root seed. Feature targets are baked when
// ae is non-null.
Dataset generate_dataset(uint64_t seed, int count, int width, int height, hse::Autoencoder* ae);

// Computes feature targets for every pending episode in place (regenerates
// the ground-truth clouds from their seeds).
void bake_feature_targets(Dataset& ds, hse::Autoencoder& ae);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace qgfs::scenes
