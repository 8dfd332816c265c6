#include "qgfs/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace qgfs::losses {

namespace {

constexpr int kHalf = kSsimWindow / 2;

const std::array<real, kSsimWindow>& window_1d() {
    static const std::array<real, kSsimWindow> w = [] {
        std::array<real, kSsimWindow> out{};
        real sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            real d = real(i - kHalf);
            out[i] = std::exp(-(d * d) / (2 * kSsimSigma * kSsimSigma));
            sum += out[i];
        }
        for (auto& v : out) v /= sum;
        return out;
    }();
    return w;
}

// Sum of in-bounds window weights at each position along an axis of length n.
std::vector<real> axis_norms(int n) {
    const auto& w = window_1d();
    std::vector<real> norms(size_t(n), 0);
    for (int p = 0; p < n; ++p) {
        real s = 0;
        for (int k = 0; k < kSsimWindow; ++k) {
            int q = p + k - kHalf;
            if (q >= 0 && q < n) s += w[k];
        }
        norms[size_t(p)] = s;
    }
    return norms;
}

// Renormalized separable Gaussian blur of one w*h plane. The border
// renormalization factors along a rectangle factor per axis, so blurring each
// axis with its own renormalization is exact.
void blur_plane(const real* in, int w, int h, const std::vector<real>& nx,
                const std::vector<real>& ny, std::vector<real>& tmp, real* out) {
    const auto& win = window_1d();
    tmp.assign(size_t(w) * size_t(h), 0);
    for (int r = 0; r < h; ++r) {
        const real* row = in + size_t(r) * size_t(w);
        real* trow = tmp.data() + size_t(r) * size_t(w);
        for (int c = 0; c < w; ++c) {
            real s = 0;
            int k0 = std::max(0, kHalf - c), k1 = std::min(kSsimWindow, w - c + kHalf);
            for (int k = k0; k < k1; ++k) s += win[size_t(k)] * row[c + k - kHalf];
            trow[c] = s / nx[size_t(c)];
        }
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            real s = 0;
            int k0 = std::max(0, kHalf - r), k1 = std::min(kSsimWindow, h - r + kHalf);
            for (int k = k0; k < k1; ++k) s += win[size_t(k)] * tmp[size_t(r + k - kHalf) * size_t(w) + size_t(c)];
            out[size_t(r) * size_t(w) + size_t(c)] = s / ny[size_t(r)];
        }
    }
}

// Adjoint of blur_plane: divide by the output-side norms, then correlate with
// the raw (symmetric) window, column axis first.
void blur_plane_adjoint(const real* g, int w, int h, const std::vector<real>& nx,
                        const std::vector<real>& ny, std::vector<real>& tmp, real* out) {
    const auto& win = window_1d();
    tmp.assign(size_t(w) * size_t(h), 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            real s = 0;
            int k0 = std::max(0, kHalf - r), k1 = std::min(kSsimWindow, h - r + kHalf);
            for (int k = k0; k < k1; ++k) {
                int q = r + k - kHalf;
                s += win[size_t(k)] * g[size_t(q) * size_t(w) + size_t(c)] / ny[size_t(q)];
            }
            tmp[size_t(r) * size_t(w) + size_t(c)] = s;
        }
    }
    for (int r = 0; r < h; ++r) {
        const real* trow = tmp.data() + size_t(r) * size_t(w);
        real* orow = out + size_t(r) * size_t(w);
        for (int c = 0; c < w; ++c) {
            real s = 0;
            int k0 = std::max(0, kHalf - c), k1 = std::min(kSsimWindow, w - c + kHalf);
            for (int k = k0; k < k1; ++k) {
                int q = c + k - kHalf;
                s += win[size_t(k)] * trow[q] / nx[size_t(q)];
            }
            orow[c] = s;
        }
    }
}

void check_pair(const std::vector<real>& a, const std::vector<real>& b, int width, int height,
                int channels, const char* what) {
    size_t n = size_t(width) * size_t(height) * size_t(channels);
    if (width <= 0 || height <= 0 || channels <= 0)
        throw ContractError(std::string(what) + ": non-positive dimensions");
    if (a.size() != n || b.size() != n)
        throw ContractError(std::string(what) + ": image size mismatch");
}

}  // namespace

real ssim(const std::vector<real>& a, const std::vector<real>& b, int width, int height,
          int channels, SsimCache* cache) {
    check_pair(a, b, width, height, channels, "ssim");
    const size_t plane = size_t(width) * size_t(height);
    auto nx = axis_norms(width);
    auto ny = axis_norms(height);

    std::vector<real> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane), tmp;
    std::vector<real> mu_a(plane), mu_b(plane), e_aa(plane), e_bb(plane), e_ab(plane);
    if (cache) {
        cache->width = width;
        cache->height = height;
        cache->channels = channels;
        cache->mu_a.resize(plane * size_t(channels));
        cache->mu_b.resize(plane * size_t(channels));
        cache->e_aa.resize(plane * size_t(channels));
        cache->e_bb.resize(plane * size_t(channels));
        cache->e_ab.resize(plane * size_t(channels));
    }

    real total = 0;
    for (int ch = 0; ch < channels; ++ch) {
        for (size_t p = 0; p < plane; ++p) {
            real va = a[p * size_t(channels) + size_t(ch)];
            real vb = b[p * size_t(channels) + size_t(ch)];
            pa[p] = va;
            pb[p] = vb;
            paa[p] = va * va;
            pbb[p] = vb * vb;
            pab[p] = va * vb;
        }
        blur_plane(pa.data(), width, height, nx, ny, tmp, mu_a.data());
        blur_plane(pb.data(), width, height, nx, ny, tmp, mu_b.data());
        blur_plane(paa.data(), width, height, nx, ny, tmp, e_aa.data());
        blur_plane(pbb.data(), width, height, nx, ny, tmp, e_bb.data());
        blur_plane(pab.data(), width, height, nx, ny, tmp, e_ab.data());
        for (size_t p = 0; p < plane; ++p) {
            real ma = mu_a[p], mb = mu_b[p];
            real saa = e_aa[p] - ma * ma;
            real sbb = e_bb[p] - mb * mb;
            real sab = e_ab[p] - ma * mb;
            real a1 = 2 * (ma * mb) + kSsimC1;
            real a2 = 2 * sab + kSsimC2;
            real b1 = (ma * ma + mb * mb) + kSsimC1;
            real b2 = (saa + sbb) + kSsimC2;
            total += (a1 * a2) / (b1 * b2);
        }
        if (cache) {
            size_t off = size_t(ch) * plane;
            std::copy(mu_a.begin(), mu_a.end(), cache->mu_a.begin() + ptrdiff_t(off));
            std::copy(mu_b.begin(), mu_b.end(), cache->mu_b.begin() + ptrdiff_t(off));
            std::copy(e_aa.begin(), e_aa.end(), cache->e_aa.begin() + ptrdiff_t(off));
            std::copy(e_bb.begin(), e_bb.end(), cache->e_bb.begin() + ptrdiff_t(off));
            std::copy(e_ab.begin(), e_ab.end(), cache->e_ab.begin() + ptrdiff_t(off));
        }
    }
    return total / (real(plane) * real(channels));
}

void ssim_backward(const SsimCache& cache, const std::vector<real>& a,
                   const std::vector<real>& b, real upstream, std::vector<real>& d_b) {
    int width = cache.width, height = cache.height, channels = cache.channels;
    check_pair(a, b, width, height, channels, "ssim_backward");
    if (d_b.size() != a.size()) throw ContractError("ssim_backward: gradient size mismatch");
    const size_t plane = size_t(width) * size_t(height);
    if (cache.mu_a.size() != plane * size_t(channels)) throw ContractError("ssim_backward: stale cache");
    auto nx = axis_norms(width);
    auto ny = axis_norms(height);

    const real scale = upstream / (real(plane) * real(channels));
    std::vector<real> g_mu(plane), g_ebb(plane), g_eab(plane), acc(plane), tmp;
    for (int ch = 0; ch < channels; ++ch) {
        size_t off = size_t(ch) * plane;
        for (size_t p = 0; p < plane; ++p) {
            real ma = cache.mu_a[off + p], mb = cache.mu_b[off + p];
            real saa = cache.e_aa[off + p] - ma * ma;
            real sbb = cache.e_bb[off + p] - mb * mb;
            real sab = cache.e_ab[off + p] - ma * mb;
            real a1 = 2 * (ma * mb) + kSsimC1;
            real a2 = 2 * sab + kSsimC2;
            real b1 = (ma * ma + mb * mb) + kSsimC1;
            real b2 = (saa + sbb) + kSsimC2;
            real denom = b1 * b2;
            real s = (a1 * a2) / denom;
            // Partials w.r.t. the blurred moment maps.
            real d_sbb = -s / b2;
            real d_sab = 2 * a1 / denom;
            real d_mb = 2 * ma * a2 / denom - s * 2 * mb / b1  // direct through a1, b1
                        - 2 * mb * d_sbb                       // sbb = e_bb - mb^2
                        - ma * d_sab;                          // sab = e_ab - ma*mb
            g_mu[p] = scale * d_mb;
            g_ebb[p] = scale * d_sbb;
            g_eab[p] = scale * d_sab;
        }
        blur_plane_adjoint(g_mu.data(), width, height, nx, ny, tmp, acc.data());
        for (size_t p = 0; p < plane; ++p) d_b[p * size_t(channels) + size_t(ch)] += acc[p];
        blur_plane_adjoint(g_ebb.data(), width, height, nx, ny, tmp, acc.data());
        for (size_t p = 0; p < plane; ++p)
            d_b[p * size_t(channels) + size_t(ch)] += 2 * b[p * size_t(channels) + size_t(ch)] * acc[p];
        blur_plane_adjoint(g_eab.data(), width, height, nx, ny, tmp, acc.data());
        for (size_t p = 0; p < plane; ++p)
            d_b[p * size_t(channels) + size_t(ch)] += a[p * size_t(channels) + size_t(ch)] * acc[p];
    }
}

real mean_l1(const std::vector<real>& a, const std::vector<real>& b) {
    if (a.size() != b.size() || a.empty()) throw ContractError("mean_l1: size mismatch");
    real s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / real(a.size());
}

real loss_gs(const std::vector<real>& target, const std::vector<real>& rendered,
             int width, int height, real lambda, std::vector<real>* d_rendered) {
    check_pair(target, rendered, width, height, 3, "loss_gs");
    SsimCache cache;
    real s = ssim(target, rendered, width, height, 3, d_rendered ? &cache : nullptr);
    real l1 = mean_l1(target, rendered);
    real value = lambda * l1 + (1 - lambda) * (1 - s);
    if (d_rendered) {
        d_rendered->assign(rendered.size(), 0);
        real inv_n = lambda / real(rendered.size());
        for (size_t i = 0; i < rendered.size(); ++i) {
            real d = rendered[i] - target[i];
            (*d_rendered)[i] = d > 0 ? inv_n : (d < 0 ? -inv_n : 0);
        }
        ssim_backward(cache, target, rendered, -(1 - lambda), *d_rendered);
    }
    return value;
}

real loss_feat(const std::vector<real>& target, const std::vector<real>& rendered,
               int width, int height, real eta, std::vector<real>* d_rendered) {
    check_pair(target, rendered, width, height, 3, "loss_feat");
    const size_t n_pix = size_t(width) * size_t(height);
    const real eps = real(1e-8);
    if (d_rendered) d_rendered->assign(rendered.size(), 0);

    real cos_sum = 0;
    for (size_t p = 0; p < n_pix; ++p) {
        const real* t = &target[p * 3];
        const real* r = &rendered[p * 3];
        real nt = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
        real nr = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if (nt < eps || nr < eps) continue;  // cosine 0, no gradient
        real dot = t[0] * r[0] + t[1] * r[1] + t[2] * r[2];
        real c = dot / (nt * nr);
        cos_sum += c;
        if (d_rendered) {
            // d(1 - mean cos)/dr = -(t/(nt*nr) - c*r/nr^2)/n_pix, scaled by (1-eta)
            real k = -(1 - eta) / real(n_pix);
            for (int ch = 0; ch < 3; ++ch)
                (*d_rendered)[p * 3 + size_t(ch)] = k * (t[ch] / (nt * nr) - c * r[ch] / (nr * nr));
        }
    }
    real mean_cos = cos_sum / real(n_pix);
    real l1 = mean_l1(target, rendered);
    if (d_rendered) {
        real inv_n = eta / real(rendered.size());
        for (size_t i = 0; i < rendered.size(); ++i) {
            real d = rendered[i] - target[i];
            (*d_rendered)[i] += d > 0 ? inv_n : (d < 0 ? -inv_n : 0);
        }
    }
    return eta * l1 + (1 - eta) * (1 - mean_cos);
}

bool feature_term_active(const LossWeights& w, int64_t iter) { return iter >= w.warmup_iters; }

real loss_total(real l_gs, real l_feat, const LossWeights& w, int64_t iter) {
    w.validate();
    real v = w.beta1 * l_gs;
    if (feature_term_active(w, iter)) v += w.beta2 * l_feat;
    return v;
}

real masked_feature_cosine(const std::vector<real>& target, const std::vector<real>& rendered,
                           real eps) {
    if (target.size() != rendered.size() || target.size() % 3 != 0)
        throw ContractError("masked_feature_cosine: size mismatch");
    size_t n_pix = target.size() / 3;
    real sum = 0;
    int64_t count = 0;
    for (size_t p = 0; p < n_pix; ++p) {
        const real* t = &target[p * 3];
        const real* r = &rendered[p * 3];
        real nt = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
        if (nt <= eps) continue;
        ++count;
        real nr = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if (nr <= eps) continue;
        sum += (t[0] * r[0] + t[1] * r[1] + t[2] * r[2]) / (nt * nr);
    }
    return count == 0 ? real(0) : sum / real(count);
}

real psnr(const std::vector<real>& a, const std::vector<real>& b) {
    if (a.size() != b.size() || a.empty()) throw ContractError("psnr: size mismatch");
    real mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        real d = a[i] - b[i];
        mse += d * d;
    }
    mse /= real(a.size());
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10 * std::log10(real(1) / mse));
}

}  // namespace qgfs::losses
