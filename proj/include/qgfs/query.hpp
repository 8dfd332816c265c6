#pragma once

#include "qgfs/common.hpp"
#include "qgfs/geom.hpp"
#include "qgfs/nnkit.hpp"
#include "qgfs/raster.hpp"

#include <string>
#include <vector>

namespace qgfs::query {

inline constexpr int kPosEncFreqs = 6;
inline constexpr int kPosEncDim = 2 * kPosEncFreqs * 3;      // 36
inline constexpr int kQueryDim = kPosEncDim + 3 + 3;         // 42
inline constexpr int kLocalDim = 64;
inline constexpr real kScaleMin = real(1e-4);
inline constexpr real kScaleMax = real(0.5);

struct QueryPoint {
    geom::Vec3 position = geom::Vec3::Zero();  // world meters
    geom::Vec3 color = geom::Vec3::Zero();     // [0,1]
    int view = 0;
    int u = 0, v = 0;  // source pixel, u = column, v = row
};

// One posed RGBD view. rgb is H*W*3 interleaved, depth H*W in meters.
struct RgbdView {
    int width = 0, height = 0;
    std::vector<real> rgb;
    std::vector<real> depth;
    geom::Camera camera;

    void validate() const;
};

// One point per pixel with depth > 0 on the stride grid (rows and columns
// divisible by stride), so coarser grids are subsets of finer ones.
std::vector<QueryPoint> unproject_rgbd(const RgbdView& view, int view_index, int stride);

// Axis-major sin/cos pairs: for each axis p, k = 0..5 -> sin(2^k pi p),
// cos(2^k pi p). out has kPosEncDim entries.
void positional_encode(const geom::Vec3& x, real* out);

// [gamma(x) | x | c], kQueryDim entries.
void encode_query(const QueryPoint& p, real* out);

struct GaussianParams {
    geom::Quaternion rot;
    geom::Vec3 scale = geom::Vec3::Zero();
    real opacity = 0;
    geom::Vec3 feature = geom::Vec3::Zero();
};

// Head activations. Rotation falls back to identity on a zero-norm raw
// vector; scale is exp then clamped to [kScaleMin, kScaleMax].
geom::Quaternion activate_rotation(const geom::Vec4& raw);
geom::Vec3 activate_scale(const geom::Vec3& raw);
real activate_opacity(real raw);
geom::Vec3 activate_feature(const geom::Vec3& raw);

// Query decoder (two dense layers, ReLU between) plus the four per-point
// parameter heads (each 64 -> 32 ReLU -> output).
class QueryPipeline {
public:
    QueryPipeline(int latent_dim, Rng& rng);

    struct Forward {
        int64_t n_points = 0;
        nn::Tape qd_tape, rot_tape, scale_tape, opac_tape, feat_tape;
        nn::Tensor rot_raw, scale_raw, opac_raw, feat_raw;  // head pre-activations
        std::vector<GaussianParams> params;
    };

    // z is the scene latent, shape [latent_dim].
    Forward run(const std::vector<QueryPoint>& points, const nn::Tensor& z);

    // Pushes raster gradients through heads and decoder. Accumulates into the
    // layer parameter grads and into d_z (shape [latent_dim]). Consumes the
    // forward's tapes. When train_feature_head is false the feature head gets
    // zero gradient throughout.
    void backward(Forward& fwd, const raster::CloudGrads& grads, nn::Tensor& d_z,
                  bool train_feature_head = true);

    std::vector<nn::ParamRef> params(const std::string& prefix);
    std::vector<nn::ParamRef> feature_head_params(const std::string& prefix);
    int latent_dim() const { return latent_dim_; }

private:
    int latent_dim_;
    nn::LayerStack qd_, rot_head_, scale_head_, opac_head_, feat_head_;
};

// Cloud with fixed mean/color from the points and trainable parameters from
// the heads.
raster::GaussianCloud assemble_cloud(const std::vector<QueryPoint>& points,
                                     const std::vector<GaussianParams>& params);

}  // namespace qgfs::query
