#pragma once

#include "qgfs/encoder.hpp"
#include "qgfs/query.hpp"
#include "qgfs/raster.hpp"

#include <string>
#include <vector>

namespace qgfs::model {

// Encoder plus query decoder: the full trainable representation. Means and
// colors of the assembled cloud come straight from the unprojected RGBD.
class RepresentationModel {
public:
    RepresentationModel(Rng& rng, int stride = 2);

    struct Forward {
        encoder::MultiviewEncoder::Forward enc;
        query::QueryPipeline::Forward qry;
        std::vector<query::QueryPoint> points;
        raster::GaussianCloud cloud;
    };

    Forward forward(const std::vector<query::RgbdView>& inputs);
    // Routes raster gradients through heads, decoder and encoder.
    void backward(Forward& fwd, const raster::CloudGrads& grads, bool train_feature_head = true);

    std::vector<nn::ParamRef> params();
    std::vector<nn::ParamRef> feature_head_params();

    void save(const std::string& path);
    // Restores weights; validates architecture digest and stride.
    void load(const std::string& path);

    int stride() const { return stride_; }
    encoder::MultiviewEncoder& omega() { return omega_; }
    query::QueryPipeline& pipeline() { return pipeline_; }

private:
    encoder::MultiviewEncoder omega_;
    query::QueryPipeline pipeline_;
    int stride_;
};

}  // namespace qgfs::model
