#pragma once

#include "qgfs/common.hpp"
#include "qgfs/nnkit.hpp"
#include "qgfs/query.hpp"

#include <string>
#include <vector>

namespace qgfs::encoder {

inline constexpr int kLatentDim = 128;
inline constexpr int kViews = 2;
// Projection-matrix entries carry focal-length magnitudes; scaled down so the
// conditioning branch starts in the same range as the pooled features.
inline constexpr real kCamScale = real(0.01);

// Maps two posed RGBD views to a single scene latent. Views are concatenated
// channel-wise (8 input channels), passed through a strided conv, a conv
// block and two residual blocks, pooled, combined with an embedding of the
// flattened projection matrices and projected to the latent.
class MultiviewEncoder {
public:
    explicit MultiviewEncoder(Rng& rng);

    struct Forward {
        nn::Tape conv_tape, cam_tape, final_tape;
        nn::Tensor pooled;   // conv trunk output after pooling, [64]
        nn::Tensor cam_emb;  // camera embedding, [64]
        nn::Tensor z;        // scene latent, [kLatentDim]
    };

    Forward encode(const std::vector<query::RgbdView>& views);

    // Accumulates parameter gradients from d_z; when d_input is non-null it
    // receives the gradient w.r.t. the stacked [8, H, W] input.
    void backward(Forward& fwd, const nn::Tensor& d_z, nn::Tensor* d_input = nullptr);

    // Stacks two views into the [8, H, W] network input (view 0 rgb, view 0
    // depth, view 1 rgb, view 1 depth).
    static nn::Tensor stack_input(const std::vector<query::RgbdView>& views);
    // Flattened, scaled projection matrices of both views, [24].
    static nn::Tensor camera_vector(const std::vector<query::RgbdView>& views);

    // Forward from raw tensors; lets gradient checks perturb input pixels.
    Forward encode_tensors(const nn::Tensor& input, const nn::Tensor& cams);

    std::vector<nn::ParamRef> params(const std::string& prefix);
    // Stable digest of the layer topology, persisted with checkpoints.
    static uint64_t arch_hash();

private:
    nn::LayerStack conv_;    // 8 -> 32 -> 64 trunk ending in global pooling
    nn::LayerStack cam_;     // 24 -> 64
    nn::LayerStack final_;   // 64 -> kLatentDim
};

}  // namespace qgfs::encoder
