#pragma once

#include "qgfs/common.hpp"

#include <string>
#include <vector>

namespace qgfs::gradcheck {

// Result of one finite-difference sweep. Each entry of `rel_errors` is
// |analytic - fd| / max(|analytic|, |fd|, floor) for one checked component,
// with a floor scaled to the largest gradient of its trial.
struct Report {
    std::string module;
    std::vector<real> rel_errors;
    real tight_tol = 0;            // bound at the quantile
    real loose_tol = 0;            // hard bound on every component
    real quantile = real(0.95);
    real worst = 0;
    real quantile_err = 0;

    int total() const { return int(rel_errors.size()); }
    bool pass() const;
    void finalize();  // fills worst / quantile_err from rel_errors
};

// render_backward vs central differences (h = 1e-4) over random micro-scenes
// of at most 5 Gaussians on an 8x8 image, exact render settings. Checks every
// rotation, scale, opacity and feature component.
Report check_raster(uint64_t seed, int trials);

// Three-layer stacks (dense, conv, residual variants) vs central differences,
// parameters and inputs both.
Report check_nnkit(uint64_t seed, int trials);

// Full chain: encoder -> query heads -> rasterizer -> training loss on a
// two-Gaussian 4x4 instance; checks sampled parameter components against
// central differences of the total loss.
Report check_e2e(uint64_t seed, int trials);

}  // namespace qgfs::gradcheck
