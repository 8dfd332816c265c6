#include "qgfs/encoder.hpp"

namespace qgfs::encoder {

MultiviewEncoder::MultiviewEncoder(Rng& rng) {
    conv_.add(std::make_unique<nn::Conv2d>(2 * 4, 32, 4, nn::Act::ReLU, rng));
    conv_.add(std::make_unique<nn::Conv2d>(32, 64, 3, nn::Act::ReLU, rng));
    for (int i = 0; i < 2; ++i) {
        auto inner = std::make_unique<nn::LayerStack>();
        inner->add(std::make_unique<nn::Conv2d>(64, 64, 3, nn::Act::ReLU, rng));
        inner->add(std::make_unique<nn::Conv2d>(64, 64, 3, nn::Act::Linear, rng));
        conv_.add(std::make_unique<nn::ResidualBlock>(std::move(inner)));
    }
    conv_.add(std::make_unique<nn::GlobalAvgPool>());
    cam_.add(std::make_unique<nn::Dense>(24, 64, nn::Act::Linear, rng));
    final_.add(std::make_unique<nn::Dense>(64, kLatentDim, nn::Act::Linear, rng));
}

nn::Tensor MultiviewEncoder::stack_input(const std::vector<query::RgbdView>& views) {
    if (views.size() != kViews) throw ContractError("encoder: expected exactly 2 views");
    for (const auto& v : views) v.validate();
    const int w = views[0].width, h = views[0].height;
    if (views[1].width != w || views[1].height != h)
        throw ContractError("encoder: views must share resolution");

    nn::Tensor x({2 * 4, h, w});
    const size_t plane = size_t(w) * size_t(h);
    for (int vi = 0; vi < kViews; ++vi) {
        const auto& view = views[size_t(vi)];
        real* base = x.data() + size_t(vi) * 4 * plane;
        for (size_t p = 0; p < plane; ++p) {
            base[0 * plane + p] = view.rgb[p * 3 + 0];
            base[1 * plane + p] = view.rgb[p * 3 + 1];
            base[2 * plane + p] = view.rgb[p * 3 + 2];
            base[3 * plane + p] = view.depth[p];
        }
    }
    return x;
}

nn::Tensor MultiviewEncoder::camera_vector(const std::vector<query::RgbdView>& views) {
    if (views.size() != kViews) throw ContractError("encoder: expected exactly 2 views");
    nn::Tensor cams({24});
    int idx = 0;
    for (const auto& view : views) {
        geom::Mat34 P = view.camera.projection_matrix();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) cams.v[size_t(idx++)] = P(r, c) * kCamScale;
    }
    return cams;
}

MultiviewEncoder::Forward MultiviewEncoder::encode(const std::vector<query::RgbdView>& views) {
    return encode_tensors(stack_input(views), camera_vector(views));
}

MultiviewEncoder::Forward MultiviewEncoder::encode_tensors(const nn::Tensor& input,
                                                           const nn::Tensor& cams) {
    Forward fwd;
    fwd.pooled = nn::forward(conv_, input, fwd.conv_tape);
    fwd.cam_emb = nn::forward(cam_, cams, fwd.cam_tape);
    nn::Tensor sum = fwd.pooled;
    for (size_t i = 0; i < sum.v.size(); ++i) sum.v[i] += fwd.cam_emb.v[i];
    fwd.z = nn::forward(final_, sum, fwd.final_tape);
    return fwd;
}

void MultiviewEncoder::backward(Forward& fwd, const nn::Tensor& d_z, nn::Tensor* d_input) {
    if (d_z.numel() != kLatentDim) throw ContractError("encoder backward: latent dim mismatch");
    nn::Tensor d_sum = nn::backward(final_, fwd.final_tape, d_z);
    nn::backward(cam_, fwd.cam_tape, d_sum);
    nn::Tensor d_in = nn::backward(conv_, fwd.conv_tape, d_sum);
    if (d_input) *d_input = std::move(d_in);
}

std::vector<nn::ParamRef> MultiviewEncoder::params(const std::string& prefix) {
    std::vector<nn::ParamRef> out;
    auto take = [&](const std::string& name, nn::Tensor& v, nn::Tensor& g) {
        out.push_back({name, &v, &g});
    };
    conv_.visit_params(prefix + ".conv", take);
    cam_.visit_params(prefix + ".cam", take);
    final_.visit_params(prefix + ".final", take);
    return out;
}

uint64_t MultiviewEncoder::arch_hash() {
    return fnv1a64(
        "omega:v1|in=8|conv4x4s2->32|conv3x3->64|res64x2|gap|cam24->64|dense64->128");
}

}  // namespace qgfs::encoder
