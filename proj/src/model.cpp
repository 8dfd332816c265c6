#include "qgfs/model.hpp"

#include <nlohmann/json.hpp>

namespace qgfs::model {

using nlohmann::json;

RepresentationModel::RepresentationModel(Rng& rng, int stride)
    : omega_(rng), pipeline_(encoder::kLatentDim, rng), stride_(stride) {
    if (stride < 1) throw ContractError("RepresentationModel: stride must be >= 1");
}

RepresentationModel::Forward RepresentationModel::forward(
    const std::vector<query::RgbdView>& inputs) {
    Forward fwd;
    fwd.enc = omega_.encode(inputs);
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto pts = query::unproject_rgbd(inputs[i], int(i), stride_);
        fwd.points.insert(fwd.points.end(), pts.begin(), pts.end());
    }
    fwd.qry = pipeline_.run(fwd.points, fwd.enc.z);
    fwd.cloud = query::assemble_cloud(fwd.points, fwd.qry.params);
    return fwd;
}

void RepresentationModel::backward(Forward& fwd, const raster::CloudGrads& grads,
                                   bool train_feature_head) {
    nn::Tensor d_z({encoder::kLatentDim});
    pipeline_.backward(fwd.qry, grads, d_z, train_feature_head);
    omega_.backward(fwd.enc, d_z);
}

std::vector<nn::ParamRef> RepresentationModel::params() {
    auto out = omega_.params("omega");
    auto qp = pipeline_.params("query");
    out.insert(out.end(), qp.begin(), qp.end());
    return out;
}

std::vector<nn::ParamRef> RepresentationModel::feature_head_params() {
    return pipeline_.feature_head_params("query");
}

void RepresentationModel::save(const std::string& path) {
    json meta = {{"kind", "qgfs-representation"},
                 {"arch", encoder::MultiviewEncoder::arch_hash()},
                 {"latent", encoder::kLatentDim},
                 {"stride", stride_}};
    nn::save_checkpoint(path, params(), meta.dump());
}

void RepresentationModel::load(const std::string& path) {
    std::string meta_s = nn::load_checkpoint(path, params());
    json meta = json::parse(meta_s);
    if (meta.value("kind", "") != "qgfs-representation")
        throw IoError("checkpoint kind mismatch in " + path);
    if (meta.value("arch", uint64_t(0)) != encoder::MultiviewEncoder::arch_hash())
        throw IoError("checkpoint architecture mismatch in " + path);
    if (meta.value("latent", 0) != encoder::kLatentDim)
        throw IoError("checkpoint latent dimension mismatch in " + path);
    stride_ = meta.value("stride", stride_);
}

}  // namespace qgfs::model
