#pragma once

#include "qgfs/geom.hpp"

#include <vector>
#include <cstdint>

namespace qgfs::raster {

using geom::Vec2;
using geom::Vec3;
using geom::Vec4;
using geom::Mat2;
using geom::Mat3;
using geom::Camera;
using geom::Quaternion;

struct GaussianPrimitive {
    Vec3 mean = Vec3::Zero();
    Quaternion rot;                 // unit quaternion
    Vec3 scale = Vec3::Ones();      // per-axis stddev, meters
    real opacity = real(0.5);       // in (0, 1)
    Vec3 color = Vec3::Zero();      // linear RGB
    Vec3 feature = Vec3::Zero();    // compact semantic feature
};

struct GaussianCloud {
    std::vector<GaussianPrimitive> prims;

    size_t size() const { return prims.size(); }
    // Contract checks: opacity strictly inside (0,1), positive scales,
    // non-degenerate quaternions.
    void validate() const;
};

struct RenderSettings {
    real alpha_cutoff = real(1.0 / 255.0);   // contributions below are skipped
    real transmittance_floor = real(1e-4);   // early termination threshold
    real radius_sigmas = real(3.0);          // bounding-box extent
    int tile_size = 16;
    int threads = 1;                         // 0 = auto, capped by QGFS_THREADS

    // Standard-practice constants; used for training and dataset rendering.
    static RenderSettings fast() { return RenderSettings{}; }
    // No cutoffs, wide boxes; matches the brute-force oracle to ~1e-30 and is
    // required for finite-difference gradient checks.
    static RenderSettings exact() {
        RenderSettings s;
        s.alpha_cutoff = 0;
        s.transmittance_floor = 0;
        s.radius_sigmas = real(12.0);
        return s;
    }
};

struct RenderOutput {
    int width = 0, height = 0;
    std::vector<real> color;          // H*W*3
    std::vector<real> feature;        // H*W*3
    std::vector<real> alpha;          // H*W, 1 - final transmittance
    std::vector<real> transmittance;  // H*W
    std::vector<real> depth;          // H*W, alpha-normalized blended camera-space z
    std::vector<int32_t> dominant;    // H*W, index of max-weight primitive, -1 if none
};

// Per-primitive screen-space data shared by the forward paths and backward.
struct Prepared {
    bool valid = false;
    real u = 0, v = 0, z = 0;
    real qa = 0, qb = 0, qc = 0;  // conic (inverse dilated 2D covariance)
    real radius = 0;              // bbox half-extent in pixels
};

// State saved by the forward pass for the analytic backward: the per-pixel
// contribution lists (exactly the terms that were blended, in blend order).
struct ForwardSaved {
    RenderSettings settings;
    Camera camera;
    int tiles_x = 0, tiles_y = 0;
    std::vector<Prepared> prep;
    // Per tile: pixel-major offsets into a flat list of primitive indices.
    std::vector<std::vector<int32_t>> tile_entries;
    std::vector<std::vector<int32_t>> tile_offsets;  // size tile_pixels+1
};

struct CloudGrads {
    std::vector<Vec4> d_rot;      // w,x,y,z order
    std::vector<Vec3> d_scale;
    std::vector<real> d_opacity;
    std::vector<Vec3> d_feature;
};

// alpha = opacity * exp(-0.5 * (x-mu)^T cov^-1 (x-mu)), clamped to <= 0.99.
// Singular covariance (det <= 1e-12) contributes nothing (returns 0).
real gaussian_alpha_2d(real opacity, const Vec2& mean, const Mat2& cov, const Vec2& x);

// Tiled, optionally multithreaded forward. Bit-identical across worker counts.
// Pass `saved` to retain the state needed by render_backward.
RenderOutput render_forward(const GaussianCloud& cloud, const Camera& cam,
                            const RenderSettings& settings, ForwardSaved* saved = nullptr);

// Oracle: full sort, full per-pixel blend, no tiling, no cutoffs, no early
// termination.
RenderOutput brute_force_render(const GaussianCloud& cloud, const Camera& cam);

// Analytic gradients for {rot, scale, opacity, feature} given upstream
// gradients on the color and feature maps (each H*W*3; either may be empty
// meaning zero). Means and colors are fixed inputs by design and receive none.
CloudGrads render_backward(const GaussianCloud& cloud, const ForwardSaved& saved,
                           const std::vector<real>& d_color,
                           const std::vector<real>& d_feature);

}  // namespace qgfs::raster
