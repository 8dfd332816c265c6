#pragma once

#include "qgfs/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace qgfs::nn {

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<real> v;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        v.assign(size_t(numel_of(shape)), 0);
    }
    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
    int64_t numel() const { return int64_t(v.size()); }
    int ndim() const { return int(shape.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void zero() { std::fill(v.begin(), v.end(), real(0)); }
    real* data() { return v.data(); }
    const real* data() const { return v.data(); }
};

enum class Act { Linear, ReLU, Sigmoid, Tanh, Exp, L2Norm };

// Elementwise / rowwise activations. u is the pre-activation, y the output.
void act_apply(Act a, const Tensor& u, Tensor& y);
// Returns dL/du given dL/dy. For L2Norm, rows of a 2D tensor are normalized
// independently (a 1D tensor is one row).
void act_backward(Act a, const Tensor& u, const Tensor& y, const Tensor& dy, Tensor& du);

class Layer;

// Saved activations of one forward pass, consumed LIFO by the backward pass.
struct Tape {
    std::vector<Tensor> saved;
    const void* token = nullptr;

    void push(Tensor t) { saved.push_back(std::move(t)); }
    Tensor pop() {
        if (saved.empty()) throw ContractError("tape exhausted (stale or mismatched tape)");
        Tensor t = std::move(saved.back());
        saved.pop_back();
        return t;
    }
};

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&, Tensor&)>;

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Tape& tape) = 0;
    virtual Tensor backward(const Tensor& dy, Tape& tape) = 0;
    virtual void visit_params(const std::string& prefix, const ParamVisitor& fn) = 0;
};

// Fully connected layer on [in] or [N, in] inputs.
class Dense : public Layer {
public:
    Dense(int in, int out, Act act, Rng& rng);
    Tensor forward(const Tensor& x, Tape& tape) override;
    Tensor backward(const Tensor& dy, Tape& tape) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    int in_dim() const { return in_; }
    int out_dim() const { return out_; }
    Tensor W, b, dW, db;

private:
    int in_, out_;
    Act act_;
};

// 2D convolution on [C, H, W] inputs. Supported shapes: 1x1 stride 1 pad 0,
// 3x3 stride 1 pad 1, 4x4 stride 2 pad 1.
class Conv2d : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int ksize, Act act, Rng& rng);
    Tensor forward(const Tensor& x, Tape& tape) override;
    Tensor backward(const Tensor& dy, Tape& tape) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Tensor W, b, dW, db;  // W is [out, in, k, k]

private:
    int in_, out_, k_, stride_, pad_;
    Act act_;
};

// [C, H, W] -> [C] mean pool.
class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x, Tape& tape) override;
    Tensor backward(const Tensor& dy, Tape& tape) override;
    void visit_params(const std::string&, const ParamVisitor&) override {}
};

class LayerStack;

// y = relu(x + inner(x)); inner must preserve shape.
class ResidualBlock : public Layer {
public:
    explicit ResidualBlock(std::unique_ptr<LayerStack> inner);
    ~ResidualBlock() override;
    Tensor forward(const Tensor& x, Tape& tape) override;
    Tensor backward(const Tensor& dy, Tape& tape) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

private:
    std::unique_ptr<LayerStack> inner_;
};

class LayerStack : public Layer {
public:
    LayerStack() = default;
    void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
    size_t size() const { return layers_.size(); }
    Tensor forward(const Tensor& x, Tape& tape) override;
    Tensor backward(const Tensor& dy, Tape& tape) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Module-level entry points: forward binds the tape to the stack, backward
// consumes it exactly once.
Tensor forward(LayerStack& stack, const Tensor& x, Tape& tape);
Tensor backward(LayerStack& stack, Tape& tape, const Tensor& dy);

std::vector<ParamRef> collect_params(Layer& root, const std::string& prefix);
void zero_grads(const std::vector<ParamRef>& params);

class Adam {
public:
    explicit Adam(real lr, real beta1 = real(0.9), real beta2 = real(0.999),
                  real eps = real(1e-8))
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    // One update. Throws DivergedError on non-finite gradients, reporting the
    // 1-based step index.
    void step(const std::vector<ParamRef>& params);
    int64_t steps_taken() const { return t_; }
    real lr() const { return lr_; }
    void set_lr(real lr) { lr_ = lr; }

private:
    real lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Named-tensor checkpoint container (little-endian, f64 payload, trailing
// CRC32). Save/load round-trips are bit-exact in the 64-bit profile.
void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                     const std::string& meta_json);
std::string load_checkpoint(const std::string& path, const std::vector<ParamRef>& params);
// Reads just the metadata block.
std::string read_checkpoint_meta(const std::string& path);

}  // namespace qgfs::nn
