#pragma once

#include "qgfs/common.hpp"
#include "qgfs/nnkit.hpp"

#include <map>
#include <string>
#include <vector>

namespace qgfs::hse {

inline constexpr int kFeatureDim = 512;
inline constexpr int kCompactDim = 3;

enum class MaskLevel : int32_t { Object = 0, Part = 1 };

// Dense per-pixel feature map, pixel-major: v[(r*width + c)*dim + k].
struct FeatureMap {
    int width = 0, height = 0, dim = kFeatureDim;
    std::vector<real> v;

    FeatureMap() = default;
    FeatureMap(int w, int h, int d) : width(w), height(h), dim(d) {
        v.assign(size_t(w) * size_t(h) * size_t(d), 0);
    }
    real* at(int r, int c) { return v.data() + (size_t(r) * size_t(width) + size_t(c)) * size_t(dim); }
    const real* at(int r, int c) const {
        return v.data() + (size_t(r) * size_t(width) + size_t(c)) * size_t(dim);
    }
};

struct Mask {
    MaskLevel level = MaskLevel::Part;
    int id = 0;  // key into pooled-vector maps; unique within a stack
    int width = 0, height = 0;
    std::vector<uint8_t> on;  // w*h, 0/1

    bool at(int r, int c) const { return on[size_t(r) * size_t(width) + size_t(c)] != 0; }
    int64_t count() const;
};

using MaskStack = std::vector<Mask>;
using PooledMap = std::map<int, std::vector<real>>;

// Mask-mean of per-pixel-normalized features (MAP). Throws DomainError on an
// empty mask. Zero-norm pixels contribute a zero vector but still count.
std::vector<real> masked_average_pool(const Mask& mask, const FeatureMap& feat);

// MAP vector for every mask in the stack, keyed by mask id.
PooledMap pool_stack(const MaskStack& stack, const FeatureMap& feat);

// Unweighted mean of the pooled vectors of all masks (any level) covering the
// pixel; zero vector if none. Throws ContractError if a covering mask's id is
// missing from pooled.
std::vector<real> aggregate_hierarchical(int r, int c, const MaskStack& stack,
                                         const PooledMap& pooled);

// Full aggregated map: pool each mask once, then aggregate per pixel.
FeatureMap hse_aggregate_map(const FeatureMap& feat, const MaskStack& stack);

// Dense 512 -> 256 -> 128 -> 3 (tanh) encoder with the mirror decoder.
class Autoencoder {
public:
    explicit Autoencoder(Rng& rng);

    // x is [512] or [N, 512]; l is [3] or [N, 3] in [-1, 1].
    nn::Tensor encode(const nn::Tensor& x);
    nn::Tensor decode(const nn::Tensor& l);

    // Mean over the batch of the squared reconstruction residual norm.
    real reconstruction_loss(const nn::Tensor& batch);
    // One Adam step on that loss; returns the pre-step loss.
    real train_step(const nn::Tensor& batch, nn::Adam& opt);

    std::vector<nn::ParamRef> params();

private:
    nn::LayerStack enc_, dec_;
};

// Mean over the batch of ||decode(encode(x)) - x||^2 without touching state,
// convenience wrapper over Autoencoder::reconstruction_loss.
real ae_loss(Autoencoder& ae, const nn::Tensor& batch);

// Deterministic unit 512-vector for a (category, part-slot) pair.
std::vector<real> synth_part_feature(uint64_t seed, int category, int part);

// Per-pixel instance labels for one rendered view; -1 marks background.
struct LabelView {
    int width = 0, height = 0;
    std::vector<int32_t> object_inst;   // per pixel
    std::vector<int32_t> part_inst;     // per pixel
    std::vector<int32_t> part_object;   // per part instance: owning object
    std::vector<int32_t> part_category; // per part instance
    std::vector<int32_t> part_slot;     // per part instance: slot within object
};

struct SynthView {
    FeatureMap feat;  // per-pixel 512-d semantic vectors
    MaskStack masks;  // object-level and part-level masks
};

// Stand-in for a vision/segmentation stack: assigns the (category, slot)
// vector to every pixel of a part and emits object + part masks.
SynthView synth_features(const LabelView& labels, uint64_t seed);

// Compact per-pixel targets, H*W*3 interleaved; uncovered pixels stay zero.
std::vector<real> compact_feature_map(Autoencoder& ae, const FeatureMap& aggregated);

// Feature-view container: 32-bit raw feature planes, packed mask bitmaps, and
// a JSON block describing mask ids/levels. Round-trips bit-exactly at f32
// precision (save-load-save produces identical bytes).
void save_feature_view(const std::string& path, const FeatureMap& feat, const MaskStack& masks);
void load_feature_view(const std::string& path, FeatureMap& feat, MaskStack& masks);

}  // namespace qgfs::hse
