#pragma once

#include "qgfs/common.hpp"

#include <vector>

namespace qgfs::losses {

inline constexpr real kSsimC1 = real(0.01 * 0.01);
inline constexpr real kSsimC2 = real(0.03 * 0.03);
inline constexpr int kSsimWindow = 11;
inline constexpr real kSsimSigma = real(1.5);
inline constexpr real kPsnrCap = real(60);

struct LossWeights {
    real beta1 = real(0.4);   // photometric weight
    real beta2 = real(0.6);   // feature weight
    real lambda = real(0.8);  // L1 share inside L_gs
    real eta = real(0.99);    // L1 share inside L_feat
    int64_t warmup_iters = 500;

    void validate() const {
        if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must be in [0,1]");
        if (!(eta >= 0 && eta <= 1)) throw ConfigError("eta must be in [0,1]");
        if (!(beta1 >= 0) || !(beta2 >= 0)) throw ConfigError("loss weights must be non-negative");
        if (warmup_iters < 0) throw ConfigError("warmup_iters must be non-negative");
    }
};

// Cached blurred moment maps from an SSIM forward, reused by its backward.
struct SsimCache {
    int width = 0, height = 0, channels = 0;
    std::vector<real> mu_a, mu_b, e_aa, e_bb, e_ab;  // channel-planar
};

// Mean SSIM over pixels and channels, 11x11 Gaussian window (sigma 1.5) with
// border-renormalized weights. ssim(I, I) == 1.0 exactly.
real ssim(const std::vector<real>& a, const std::vector<real>& b, int width, int height,
          int channels, SsimCache* cache = nullptr);

// Accumulates upstream * d(ssim)/d(b) into d_b (sized like b).
void ssim_backward(const SsimCache& cache, const std::vector<real>& a,
                   const std::vector<real>& b, real upstream, std::vector<real>& d_b);

real mean_l1(const std::vector<real>& a, const std::vector<real>& b);

// L_gs = lambda * L1 + (1 - lambda) * (1 - SSIM). If d_rendered is non-null it
// receives the gradient w.r.t. the rendered image (overwritten).
real loss_gs(const std::vector<real>& target, const std::vector<real>& rendered,
             int width, int height, real lambda, std::vector<real>* d_rendered = nullptr);

// L_feat = eta * L1 + (1 - eta) * (1 - mean per-pixel cosine). Maps are
// H*W*3. Pixels where either side has near-zero norm contribute cosine 0.
real loss_feat(const std::vector<real>& target, const std::vector<real>& rendered,
               int width, int height, real eta, std::vector<real>* d_rendered = nullptr);

// Warm-up gate: before warmup_iters only the photometric term contributes.
real loss_total(real l_gs, real l_feat, const LossWeights& w, int64_t iter);
bool feature_term_active(const LossWeights& w, int64_t iter);

// Mean per-pixel cosine over pixels whose target norm exceeds eps; the
// evaluation metric for feature maps (background excluded).
real masked_feature_cosine(const std::vector<real>& target, const std::vector<real>& rendered,
                           real eps = real(1e-8));

// 10*log10(1/MSE) on [0,1] images, capped at 60 dB.
real psnr(const std::vector<real>& a, const std::vector<real>& b);

}  // namespace qgfs::losses
