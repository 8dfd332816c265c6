#pragma once

#include "qgfs/common.hpp"
#include "qgfs/hse.hpp"
#include "qgfs/losses.hpp"
#include "qgfs/model.hpp"
#include "qgfs/scenes.hpp"

#include <functional>
#include <string>
#include <vector>

namespace qgfs::trainer {

struct RunConfig {
    std::string dataset_path;
    std::string out_dir = ".";
    uint64_t seed = 1;
    int stride = 2;
    int threads = 1;
    bool deterministic = true;  // zeroes the wall-clock column, single worker
    int holdout_episodes = 8;

    real ae_lr = real(5e-4);
    int ae_epochs = 200;
    real rep_lr = real(5e-5);
    int rep_epochs = 10;

    losses::LossWeights weights;

    void validate() const;
    static RunConfig from_json_file(const std::string& path);
};

struct MetricsRow {
    int64_t iter = 0;
    real l_gs = 0, l_feat = 0, l_total = 0;
    real psnr = 0, ssim = 0, cosine = 0;
    real wall = 0;  // seconds since run start; 0.000 in deterministic mode
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// The 16-vector synthetic part corpus (category-major), keyed by seed.
nn::Tensor build_feature_corpus(uint64_t seed);

struct AeResult {
    real initial_mse = 0, final_mse = 0, mean_cosine = 0;
    std::string ckpt_path, metrics_path;
};

// Per-vector Adam steps over deterministic per-epoch shuffles of the corpus.
// Writes checkpoint + metrics CSV into cfg.out_dir.
AeResult train_autoencoder(const RunConfig& cfg, hse::Autoencoder& ae);

void save_ae_checkpoint(const std::string& path, hse::Autoencoder& ae);
void load_ae_checkpoint(const std::string& path, hse::Autoencoder& ae);

struct EvalResult {
    real psnr_mean = 0, psnr_std = 0;
    real ssim_mean = 0, ssim_std = 0;
    real cosine_mean = 0, cosine_std = 0;
    int samples = 0;
};

// Metrics over the (input, input, target) triples of the given episodes.
EvalResult evaluate(model::RepresentationModel& m, const scenes::Dataset& ds,
                    const std::vector<int>& episodes, int threads);

struct TrainHooks {
    std::function<void(int64_t iter, const MetricsRow& row, model::RepresentationModel& m)>
        after_step;
};

struct RepResult {
    EvalResult baseline, trained;
    std::vector<MetricsRow> metrics;
    std::string ckpt_path, metrics_path;
};

// Full representation training: evaluates the fresh model on the hold-out
// split first (the baseline), trains on the remaining episodes with the
// warm-up-gated loss, evaluates again, writes checkpoint + metrics CSV.
// Requires baked feature targets (ConfigError otherwise).
RepResult train_representation(const RunConfig& cfg, const scenes::Dataset& ds,
                               const TrainHooks& hooks = {});

// Episode indices of the train/hold-out split (hold-out is the tail).
std::pair<std::vector<int>, std::vector<int>> split_dataset(const scenes::Dataset& ds,
                                                            int holdout);

}  // namespace qgfs::trainer
