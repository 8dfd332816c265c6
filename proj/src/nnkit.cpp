#include "qgfs/nnkit.hpp"
#include "qgfs/io.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>

namespace qgfs::nn {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

namespace {

void uniform_init(Tensor& t, int fan_in, Rng& rng) {
    real bound = real(1) / std::sqrt(real(fan_in));
    for (auto& x : t.v) x = real(rng.uniform(-double(bound), double(bound)));
}

// Rows/cols view of a dense input: 1D [in] is a single row.
std::pair<int64_t, int64_t> as_matrix(const Tensor& t) {
    if (t.ndim() == 1) return {1, t.shape[0]};
    if (t.ndim() == 2) return {t.shape[0], t.shape[1]};
    throw ContractError("dense layers take 1D or 2D tensors");
}

}  // namespace

void act_apply(Act a, const Tensor& u, Tensor& y) {
    y.shape = u.shape;
    y.v.resize(u.v.size());
    const size_t n = u.v.size();
    switch (a) {
        case Act::Linear:
            y.v = u.v;
            break;
        case Act::ReLU:
            for (size_t i = 0; i < n; ++i) y.v[i] = u.v[i] > 0 ? u.v[i] : 0;
            break;
        case Act::Sigmoid:
            for (size_t i = 0; i < n; ++i) y.v[i] = real(1) / (real(1) + std::exp(-u.v[i]));
            break;
        case Act::Tanh:
            for (size_t i = 0; i < n; ++i) y.v[i] = std::tanh(u.v[i]);
            break;
        case Act::Exp:
            for (size_t i = 0; i < n; ++i) y.v[i] = std::exp(u.v[i]);
            break;
        case Act::L2Norm: {
            auto [rows, cols] = as_matrix(u);
            for (int64_t r = 0; r < rows; ++r) {
                const real* src = u.data() + r * cols;
                real* dst = y.data() + r * cols;
                real s = 0;
                for (int64_t c = 0; c < cols; ++c) s += src[c] * src[c];
                s = std::sqrt(s);
                if (s < real(1e-12)) throw DomainError("l2norm of a zero row");
                for (int64_t c = 0; c < cols; ++c) dst[c] = src[c] / s;
            }
            break;
        }
    }
}

void act_backward(Act a, const Tensor& u, const Tensor& y, const Tensor& dy, Tensor& du) {
    du.shape = u.shape;
    du.v.resize(u.v.size());
    const size_t n = u.v.size();
    switch (a) {
        case Act::Linear:
            du.v = dy.v;
            break;
        case Act::ReLU:
            for (size_t i = 0; i < n; ++i) du.v[i] = u.v[i] > 0 ? dy.v[i] : 0;
            break;
        case Act::Sigmoid:
            for (size_t i = 0; i < n; ++i) du.v[i] = dy.v[i] * y.v[i] * (1 - y.v[i]);
            break;
        case Act::Tanh:
            for (size_t i = 0; i < n; ++i) du.v[i] = dy.v[i] * (1 - y.v[i] * y.v[i]);
            break;
        case Act::Exp:
            for (size_t i = 0; i < n; ++i) du.v[i] = dy.v[i] * y.v[i];
            break;
        case Act::L2Norm: {
            auto [rows, cols] = as_matrix(u);
            for (int64_t r = 0; r < rows; ++r) {
                const real* us = u.data() + r * cols;
                const real* ys = y.data() + r * cols;
                const real* dys = dy.data() + r * cols;
                real* dus = du.data() + r * cols;
                real s = 0, dot = 0;
                for (int64_t c = 0; c < cols; ++c) s += us[c] * us[c];
                s = std::sqrt(s);
                for (int64_t c = 0; c < cols; ++c) dot += ys[c] * dys[c];
                for (int64_t c = 0; c < cols; ++c) dus[c] = (dys[c] - ys[c] * dot) / s;
            }
            break;
        }
    }
}

// --- Dense ------------------------------------------------------------------

Dense::Dense(int in, int out, Act act, Rng& rng) : in_(in), out_(out), act_(act) {
    if (in <= 0 || out <= 0) throw ContractError("dense dims must be positive");
    W = Tensor({out, in});
    b = Tensor({out});
    dW = Tensor({out, in});
    db = Tensor({out});
    uniform_init(W, in, rng);  // biases stay zero
}

Tensor Dense::forward(const Tensor& x, Tape& tape) {
    auto [rows, cols] = as_matrix(x);
    if (cols != in_) throw ContractError("dense input dim mismatch");
    Tensor u(x.ndim() == 1 ? std::vector<int64_t>{out_} : std::vector<int64_t>{rows, out_});
    MapConst xm(x.data(), rows, cols);
    MapConst wm(W.data(), out_, in_);
    MapMat um(u.data(), rows, out_);
    um.noalias() = xm * wm.transpose();
    um.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(b.data(), out_);
    Tensor y;
    act_apply(act_, u, y);
    tape.push(x);
    tape.push(u);
    tape.push(act_ == Act::Linear ? Tensor() : y);  // post-activation when needed
    return y;
}

Tensor Dense::backward(const Tensor& dy, Tape& tape) {
    Tensor y = tape.pop();
    Tensor u = tape.pop();
    Tensor x = tape.pop();
    if (!dy.same_shape(u)) throw ContractError("dense backward shape mismatch");
    Tensor du;
    act_backward(act_, u, act_ == Act::Linear ? u : y, dy, du);
    auto [rows, cols] = as_matrix(x);
    MapConst xm(x.data(), rows, cols);
    MapConst dum(du.data(), rows, out_);
    MapMat dwm(dW.data(), out_, in_);
    dwm.noalias() += dum.transpose() * xm;
    Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>> dbm(db.data(), out_);
    dbm.noalias() += dum.colwise().sum().transpose();
    Tensor dx(x.shape);
    MapMat dxm(dx.data(), rows, cols);
    MapConst wm(W.data(), out_, in_);
    dxm.noalias() = dum * wm;
    return dx;
}

void Dense::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".W", W, dW);
    fn(prefix + ".b", b, db);
}

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, Act act, Rng& rng)
    : in_(in_ch), out_(out_ch), k_(ksize), act_(act) {
    switch (ksize) {
        case 1: stride_ = 1; pad_ = 0; break;
        case 3: stride_ = 1; pad_ = 1; break;
        case 4: stride_ = 2; pad_ = 1; break;
        default: throw ContractError("conv kernel must be 1, 3 or 4");
    }
    W = Tensor({out_, in_, k_, k_});
    b = Tensor({out_});
    dW = Tensor({out_, in_, k_, k_});
    db = Tensor({out_});
    uniform_init(W, in_ * k_ * k_, rng);
}

namespace {

void im2col(const real* x, int C, int H, int Wd, int k, int stride, int pad,
            int Ho, int Wo, real* cols) {
    int idx = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj, ++idx) {
                real* dst = cols + size_t(idx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + size_t(oy) * Wo, dst + size_t(oy + 1) * Wo, real(0));
                        continue;
                    }
                    const real* src = x + (size_t(c) * H + iy) * Wd;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kj;
                        dst[size_t(oy) * Wo + ox] = (ix >= 0 && ix < Wd) ? src[ix] : 0;
                    }
                }
            }
        }
    }
}

void col2im(const real* cols, int C, int H, int Wd, int k, int stride, int pad,
            int Ho, int Wo, real* x) {
    std::fill(x, x + size_t(C) * H * Wd, real(0));
    int idx = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj, ++idx) {
                const real* src = cols + size_t(idx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    real* dst = x + (size_t(c) * H + iy) * Wd;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < Wd) dst[ix] += src[size_t(oy) * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Tape& tape) {
    if (x.ndim() != 3 || x.shape[0] != in_) throw ContractError("conv input shape mismatch");
    const int H = int(x.shape[1]), Wd = int(x.shape[2]);
    const int Ho = (H + 2 * pad_ - k_) / stride_ + 1;
    const int Wo = (Wd + 2 * pad_ - k_) / stride_ + 1;
    const int patch = in_ * k_ * k_;
    std::vector<real> cols(size_t(patch) * Ho * Wo);
    im2col(x.data(), in_, H, Wd, k_, stride_, pad_, Ho, Wo, cols.data());
    Tensor u({out_, Ho, Wo});
    MapConst wm(W.data(), out_, patch);
    MapConst cm(cols.data(), patch, int64_t(Ho) * Wo);
    MapMat um(u.data(), out_, int64_t(Ho) * Wo);
    um.noalias() = wm * cm;
    um.colwise() += Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>(b.data(), out_);
    Tensor y;
    act_apply(act_, u, y);
    tape.push(x);
    tape.push(u);
    tape.push(act_ == Act::Linear ? Tensor() : y);
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, Tape& tape) {
    Tensor y = tape.pop();
    Tensor u = tape.pop();
    Tensor x = tape.pop();
    if (!dy.same_shape(u)) throw ContractError("conv backward shape mismatch");
    Tensor du;
    act_backward(act_, u, act_ == Act::Linear ? u : y, dy, du);

    const int H = int(x.shape[1]), Wd = int(x.shape[2]);
    const int Ho = int(u.shape[1]), Wo = int(u.shape[2]);
    const int patch = in_ * k_ * k_;
    std::vector<real> cols(size_t(patch) * Ho * Wo);
    im2col(x.data(), in_, H, Wd, k_, stride_, pad_, Ho, Wo, cols.data());

    MapConst dum(du.data(), out_, int64_t(Ho) * Wo);
    MapConst cm(cols.data(), patch, int64_t(Ho) * Wo);
    MapMat dwm(dW.data(), out_, patch);
    dwm.noalias() += dum * cm.transpose();
    Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>> dbm(db.data(), out_);
    dbm.noalias() += dum.rowwise().sum();

    std::vector<real> dcols(size_t(patch) * Ho * Wo);
    MapMat dcm(dcols.data(), patch, int64_t(Ho) * Wo);
    MapConst wm(W.data(), out_, patch);
    dcm.noalias() = wm.transpose() * dum;
    Tensor dx(x.shape);
    col2im(dcols.data(), in_, H, Wd, k_, stride_, pad_, Ho, Wo, dx.data());
    return dx;
}

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".W", W, dW);
    fn(prefix + ".b", b, db);
}

// --- GlobalAvgPool ----------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Tape& tape) {
    if (x.ndim() != 3) throw ContractError("pool input must be [C,H,W]");
    const int C = int(x.shape[0]);
    const int64_t hw = x.shape[1] * x.shape[2];
    Tensor y({C});
    for (int c = 0; c < C; ++c) {
        real s = 0;
        const real* src = x.data() + int64_t(c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += src[i];
        y.v[size_t(c)] = s / real(hw);
    }
    Tensor dims({3});
    dims.v = {real(x.shape[0]), real(x.shape[1]), real(x.shape[2])};
    tape.push(dims);
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, Tape& tape) {
    Tensor dims = tape.pop();
    if (dims.numel() != 3) throw ContractError("pool tape mismatch");
    const int C = int(dims.v[0]), H = int(dims.v[1]), Wd = int(dims.v[2]);
    if (dy.numel() != C) throw ContractError("pool backward shape mismatch");
    Tensor dx({C, H, Wd});
    const real inv = real(1) / real(int64_t(H) * Wd);
    for (int c = 0; c < C; ++c) {
        real g = dy.v[size_t(c)] * inv;
        real* dst = dx.data() + (int64_t(c) * H) * Wd;
        for (int64_t i = 0; i < int64_t(H) * Wd; ++i) dst[i] = g;
    }
    return dx;
}

// --- ResidualBlock ----------------------------------------------------------

ResidualBlock::ResidualBlock(std::unique_ptr<LayerStack> inner) : inner_(std::move(inner)) {}
ResidualBlock::~ResidualBlock() = default;

Tensor ResidualBlock::forward(const Tensor& x, Tape& tape) {
    Tensor inner_y = inner_->forward(x, tape);
    if (!inner_y.same_shape(x)) throw ContractError("residual inner changed shape");
    Tensor u(x.shape);
    for (size_t i = 0; i < u.v.size(); ++i) u.v[i] = x.v[i] + inner_y.v[i];
    Tensor y;
    act_apply(Act::ReLU, u, y);
    tape.push(u);
    return y;
}

Tensor ResidualBlock::backward(const Tensor& dy, Tape& tape) {
    Tensor u = tape.pop();
    if (!dy.same_shape(u)) throw ContractError("residual backward shape mismatch");
    Tensor du;
    act_backward(Act::ReLU, u, u, dy, du);
    Tensor dx_inner = inner_->backward(du, tape);
    for (size_t i = 0; i < du.v.size(); ++i) du.v[i] += dx_inner.v[i];
    return du;
}

void ResidualBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    inner_->visit_params(prefix + ".res", fn);
}

// --- LayerStack -------------------------------------------------------------

Tensor LayerStack::forward(const Tensor& x, Tape& tape) {
    Tensor y = x;
    for (auto& l : layers_) y = l->forward(y, tape);
    return y;
}

Tensor LayerStack::backward(const Tensor& dy, Tape& tape) {
    Tensor d = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d, tape);
    return d;
}

void LayerStack::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->visit_params(prefix + "." + std::to_string(i), fn);
}

Tensor forward(LayerStack& stack, const Tensor& x, Tape& tape) {
    if (!tape.saved.empty() || tape.token != nullptr)
        throw ContractError("forward requires a fresh tape");
    tape.token = &stack;
    return stack.forward(x, tape);
}

Tensor backward(LayerStack& stack, Tape& tape, const Tensor& dy) {
    if (tape.token != &stack) throw ContractError("tape does not belong to this stack (stale tape?)");
    Tensor dx = stack.backward(dy, tape);
    if (!tape.saved.empty()) throw ContractError("tape not fully consumed");
    tape.token = nullptr;
    return dx;
}

std::vector<ParamRef> collect_params(Layer& root, const std::string& prefix) {
    std::vector<ParamRef> out;
    root.visit_params(prefix, [&](const std::string& name, Tensor& w, Tensor& g) {
        out.push_back({name, &w, &g});
    });
    return out;
}

void zero_grads(const std::vector<ParamRef>& params) {
    for (auto& p : params) p.grad->zero();
}

// --- Adam -------------------------------------------------------------------

void Adam::step(const std::vector<ParamRef>& params) {
    if (m_.empty()) {
        for (auto& p : params) {
            m_.emplace_back(p.value->shape);
            v_.emplace_back(p.value->shape);
        }
    }
    if (m_.size() != params.size()) throw ContractError("optimizer/param registry mismatch");
    ++t_;
    for (auto& p : params)
        for (real g : p.grad->v)
            if (!std::isfinite(g))
                throw DivergedError("non-finite gradient in " + p.name + " at step " +
                                    std::to_string(t_));
    const real c1 = 1 - std::pow(b1_, real(t_));
    const real c2 = 1 - std::pow(b2_, real(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].value->v;
        auto& g = params[i].grad->v;
        auto& m = m_[i].v;
        auto& v = v_[i].v;
        if (w.size() != g.size() || w.size() != m.size())
            throw ContractError("optimizer state shape mismatch for " + params[i].name);
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = b1_ * m[j] + (1 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1 - b2_) * g[j] * g[j];
            real mh = m[j] / c1;
            real vh = v[j] / c2;
            w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

// --- Checkpoints ------------------------------------------------------------

static constexpr char kCkptMagic[8] = {'Q', 'G', 'F', 'S', 'C', 'K', '0', '1'};

void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                     const std::string& meta_json) {
    io::BinaryWriter w(path);
    w.bytes(kCkptMagic, 8);
    w.str(meta_json);
    w.u64(params.size());
    for (auto& p : params) {
        w.str(p.name);
        w.u32(uint32_t(p.value->shape.size()));
        for (auto d : p.value->shape) w.i64(d);
        for (real x : p.value->v) w.f64(double(x));
    }
    w.finish();
}

std::string load_checkpoint(const std::string& path, const std::vector<ParamRef>& params) {
    io::BinaryReader r(path);
    r.verify_checksum();
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
    std::string meta = r.str();
    uint64_t count = r.u64();
    std::map<std::string, ParamRef> by_name;
    for (auto& p : params) by_name[p.name] = p;
    size_t filled = 0;
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = r.str();
        uint32_t nd = r.u32();
        std::vector<int64_t> shape(nd);
        for (auto& d : shape) d = r.i64();
        int64_t n = Tensor::numel_of(shape);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint has unknown tensor: " + name);
        if (it->second.value->shape != shape)
            throw IoError("checkpoint shape mismatch for " + name);
        for (int64_t j = 0; j < n; ++j) it->second.value->v[size_t(j)] = real(r.f64());
        ++filled;
    }
    if (filled != params.size()) throw IoError("checkpoint is missing tensors");
    return meta;
}

std::string read_checkpoint_meta(const std::string& path) {
    io::BinaryReader r(path);
    r.verify_checksum();
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
    return r.str();
}

}  // namespace qgfs::nn
