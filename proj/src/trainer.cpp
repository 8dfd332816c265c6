#include "qgfs/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace qgfs::trainer {

using nlohmann::json;

void RunConfig::validate() const {
    if (!(ae_lr > 0) || !(rep_lr > 0)) throw ConfigError("learning rates must be positive");
    if (ae_epochs < 0 || rep_epochs < 0) throw ConfigError("epoch counts must be non-negative");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (holdout_episodes < 0) throw ConfigError("holdout_episodes must be >= 0");
    weights.validate();
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config parse failure in " + path + ": " + e.what());
    }
    RunConfig c;
    c.dataset_path = j.value("dataset", c.dataset_path);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.stride = j.value("stride", c.stride);
    c.threads = j.value("threads", c.threads);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.holdout_episodes = j.value("holdout_episodes", c.holdout_episodes);
    if (j.contains("ae")) {
        c.ae_lr = j["ae"].value("lr", c.ae_lr);
        c.ae_epochs = j["ae"].value("epochs", c.ae_epochs);
    }
    if (j.contains("representation")) {
        c.rep_lr = j["representation"].value("lr", c.rep_lr);
        c.rep_epochs = j["representation"].value("epochs", c.rep_epochs);
    }
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        c.weights.beta1 = l.value("beta1", c.weights.beta1);
        c.weights.beta2 = l.value("beta2", c.weights.beta2);
        c.weights.lambda = l.value("lambda", c.weights.lambda);
        c.weights.eta = l.value("eta", c.weights.eta);
        c.weights.warmup_iters = l.value("warmup_iters", c.weights.warmup_iters);
    }
    c.validate();
    return c;
}

namespace {

std::string fmt_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", double(v));
    return buf;
}

std::string fmt_wall(real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", double(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

real mean_of(const std::vector<real>& v) {
    return v.empty() ? real(0) : std::accumulate(v.begin(), v.end(), real(0)) / real(v.size());
}

real std_of(const std::vector<real>& v, real mean) {
    if (v.size() < 2) return 0;
    real s = 0;
    for (real x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / real(v.size()));
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write metrics to " + path);
    f << "iter,loss_gs,loss_feat,loss_total,psnr,ssim,feature_cosine,wall_clock\n";
    for (const auto& r : rows) {
        f << r.iter << ',' << fmt_real(r.l_gs) << ',' << fmt_real(r.l_feat) << ','
          << fmt_real(r.l_total) << ',' << fmt_real(r.psnr) << ',' << fmt_real(r.ssim) << ','
          << fmt_real(r.cosine) << ',' << fmt_wall(r.wall) << '\n';
    }
}

nn::Tensor build_feature_corpus(uint64_t seed) {
    nn::Tensor corpus({int64_t(scenes::kCategories * scenes::kPartsPerObject), hse::kFeatureDim});
    int64_t row = 0;
    for (int cat = 0; cat < scenes::kCategories; ++cat) {
        for (int slot = 0; slot < scenes::kPartsPerObject; ++slot) {
            auto v = hse::synth_part_feature(seed, cat, slot);
            std::copy(v.begin(), v.end(), corpus.data() + row * hse::kFeatureDim);
            ++row;
        }
    }
    return corpus;
}

void save_ae_checkpoint(const std::string& path, hse::Autoencoder& ae) {
    json meta = {{"kind", "qgfs-ae"},
                 {"feature_dim", hse::kFeatureDim},
                 {"compact_dim", hse::kCompactDim}};
    nn::save_checkpoint(path, ae.params(), meta.dump());
}

void load_ae_checkpoint(const std::string& path, hse::Autoencoder& ae) {
    std::string meta_s = nn::load_checkpoint(path, ae.params());
    json meta = json::parse(meta_s);
    if (meta.value("kind", "") != "qgfs-ae") throw IoError("checkpoint kind mismatch in " + path);
}

AeResult train_autoencoder(const RunConfig& cfg, hse::Autoencoder& ae) {
    cfg.validate();
    ensure_dir(cfg.out_dir);
    nn::Tensor corpus = build_feature_corpus(cfg.seed);
    const int64_t n = corpus.shape[0];

    AeResult res;
    res.initial_mse = ae.reconstruction_loss(corpus);
    nn::Adam opt(cfg.ae_lr);
    Timer timer;

    std::vector<MetricsRow> rows;
    std::vector<int64_t> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.ae_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, fnv1a64("ae-epoch") + uint64_t(epoch)));
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[size_t(rng.uniform_int(uint64_t(i + 1)))]);
        real epoch_loss = 0;
        nn::Tensor sample({1, hse::kFeatureDim});
        for (int64_t i = 0; i < n; ++i) {
            std::copy_n(corpus.data() + order[size_t(i)] * hse::kFeatureDim, hse::kFeatureDim,
                        sample.data());
            epoch_loss += ae.train_step(sample, opt);
        }
        MetricsRow row;
        row.iter = epoch;
        row.l_total = epoch_loss / real(n);
        row.wall = cfg.deterministic ? real(0) : real(timer.seconds());
        rows.push_back(row);
    }
    res.final_mse = ae.reconstruction_loss(corpus);

    // Mean reconstruction cosine over the corpus.
    nn::Tensor recon = ae.decode(ae.encode(corpus));
    real cos_sum = 0;
    for (int64_t i = 0; i < n; ++i) {
        const real* x = corpus.data() + i * hse::kFeatureDim;
        const real* y = recon.data() + i * hse::kFeatureDim;
        real dot = 0, nx = 0, ny = 0;
        for (int k = 0; k < hse::kFeatureDim; ++k) {
            dot += x[k] * y[k];
            nx += x[k] * x[k];
            ny += y[k] * y[k];
        }
        real denom = std::sqrt(nx) * std::sqrt(ny);
        cos_sum += denom > 0 ? dot / denom : 0;
    }
    res.mean_cosine = cos_sum / real(n);

    res.ckpt_path = (std::filesystem::path(cfg.out_dir) / "ae.ckpt").string();
    res.metrics_path = (std::filesystem::path(cfg.out_dir) / "ae_metrics.csv").string();
    save_ae_checkpoint(res.ckpt_path, ae);
    std::ofstream f(res.metrics_path, std::ios::trunc);
    if (!f) throw IoError("cannot write metrics to " + res.metrics_path);
    f << "iter,mse,wall_clock\n";
    for (const auto& r : rows)
        f << r.iter << ',' << fmt_real(r.l_total) << ',' << fmt_wall(r.wall) << '\n';
    return res;
}

std::pair<std::vector<int>, std::vector<int>> split_dataset(const scenes::Dataset& ds,
                                                            int holdout) {
    int n = int(ds.episodes.size());
    if (holdout >= n) throw ConfigError("holdout_episodes must leave at least one training episode");
    std::vector<int> train, hold;
    for (int i = 0; i < n - holdout; ++i) train.push_back(i);
    for (int i = n - holdout; i < n; ++i) hold.push_back(i);
    return {train, hold};
}

namespace {

struct Sample {
    int episode = 0;
    int triple = 0;
};

struct SampleEval {
    raster::RenderOutput out;
    std::vector<real> target_rgb;
    const scenes::View* target = nullptr;
};

SampleEval run_sample(model::RepresentationModel& m, const scenes::Episode& ep, int triple,
                      const raster::RenderSettings& rs, model::RepresentationModel::Forward* fwd,
                      raster::ForwardSaved* saved) {
    std::vector<query::RgbdView> inputs{ep.views[size_t(3 * triple)].rgbd(),
                                        ep.views[size_t(3 * triple + 1)].rgbd()};
    const scenes::View& tv = ep.views[size_t(3 * triple + 2)];
    auto f = m.forward(inputs);
    SampleEval ev;
    ev.out = raster::render_forward(f.cloud, tv.camera, rs, saved);
    ev.target_rgb = tv.rgb_real();
    ev.target = &tv;
    if (fwd) *fwd = std::move(f);
    return ev;
}

}  // namespace

EvalResult evaluate(model::RepresentationModel& m, const scenes::Dataset& ds,
                    const std::vector<int>& episodes, int threads) {
    raster::RenderSettings rs = raster::RenderSettings::fast();
    rs.threads = threads;
    std::vector<real> psnrs, ssims, cosines;
    for (int ei : episodes) {
        const auto& ep = ds.episodes.at(size_t(ei));
        for (int t = 0; t < scenes::Dataset::kTriples; ++t) {
            SampleEval ev = run_sample(m, ep, t, rs, nullptr, nullptr);
            int w = ev.target->camera.width, h = ev.target->camera.height;
            psnrs.push_back(losses::psnr(ev.target_rgb, ev.out.color));
            ssims.push_back(losses::ssim(ev.target_rgb, ev.out.color, w, h, 3));
            cosines.push_back(ev.target->feature.empty()
                                  ? real(0)
                                  : losses::masked_feature_cosine(ev.target->feature,
                                                                  ev.out.feature));
        }
    }
    EvalResult r;
    r.samples = int(psnrs.size());
    r.psnr_mean = mean_of(psnrs);
    r.psnr_std = std_of(psnrs, r.psnr_mean);
    r.ssim_mean = mean_of(ssims);
    r.ssim_std = std_of(ssims, r.ssim_mean);
    r.cosine_mean = mean_of(cosines);
    r.cosine_std = std_of(cosines, r.cosine_mean);
    return r;
}

RepResult train_representation(const RunConfig& cfg, const scenes::Dataset& ds,
                               const TrainHooks& hooks) {
    cfg.validate();
    ensure_dir(cfg.out_dir);
    if (ds.episodes.empty()) throw ConfigError("dataset is empty");
    for (const auto& ep : ds.episodes)
        if (ep.features_pending())
            throw ConfigError("dataset has pending feature targets; bake them first");
    auto [train_eps, hold_eps] = split_dataset(ds, cfg.holdout_episodes);
    if (train_eps.empty()) throw ConfigError("no training episodes after split");

    Rng init_rng(mix_seed(cfg.seed, fnv1a64("rep-init")));
    model::RepresentationModel m(init_rng, cfg.stride);

    RepResult res;
    res.baseline = evaluate(m, ds, hold_eps, cfg.threads);

    auto params = m.params();
    nn::Adam opt(cfg.rep_lr);
    raster::RenderSettings rs = raster::RenderSettings::fast();
    rs.threads = cfg.threads;
    const int w = ds.width, h = ds.height;

    std::vector<Sample> samples;
    for (int ei : train_eps)
        for (int t = 0; t < scenes::Dataset::kTriples; ++t) samples.push_back({ei, t});

    Timer timer;
    int64_t iter = 0;
    for (int epoch = 0; epoch < cfg.rep_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, fnv1a64("rep-epoch") + uint64_t(epoch)));
        for (size_t i = samples.size() - 1; i > 0; --i)
            std::swap(samples[i], samples[size_t(rng.uniform_int(uint64_t(i + 1)))]);
        for (const Sample& s : samples) {
            const auto& ep = ds.episodes[size_t(s.episode)];
            model::RepresentationModel::Forward fwd;
            raster::ForwardSaved saved;
            SampleEval ev = run_sample(m, ep, s.triple, rs, &fwd, &saved);

            std::vector<real> d_color, d_feat;
            real l_gs =
                losses::loss_gs(ev.target_rgb, ev.out.color, w, h, cfg.weights.lambda, &d_color);
            bool active = losses::feature_term_active(cfg.weights, iter);
            real l_feat = losses::loss_feat(ev.target->feature, ev.out.feature, w, h,
                                            cfg.weights.eta, active ? &d_feat : nullptr);
            real l_total = losses::loss_total(l_gs, l_feat, cfg.weights, iter);

            for (auto& d : d_color) d *= cfg.weights.beta1;
            for (auto& d : d_feat) d *= cfg.weights.beta2;
            auto grads = raster::render_backward(fwd.cloud, saved, d_color, d_feat);
            nn::zero_grads(params);
            m.backward(fwd, grads, active);
            opt.step(params);

            MetricsRow row;
            row.iter = iter;
            row.l_gs = l_gs;
            row.l_feat = l_feat;
            row.l_total = l_total;
            row.psnr = losses::psnr(ev.target_rgb, ev.out.color);
            row.ssim = losses::ssim(ev.target_rgb, ev.out.color, w, h, 3);
            row.cosine = losses::masked_feature_cosine(ev.target->feature, ev.out.feature);
            row.wall = cfg.deterministic ? real(0) : real(timer.seconds());
            res.metrics.push_back(row);
            if (hooks.after_step) hooks.after_step(iter, row, m);
            ++iter;
        }
    }

    res.trained = evaluate(m, ds, hold_eps, cfg.threads);
    res.ckpt_path = (std::filesystem::path(cfg.out_dir) / "representation.ckpt").string();
    res.metrics_path = (std::filesystem::path(cfg.out_dir) / "train_metrics.csv").string();
    m.save(res.ckpt_path);
    write_metrics_csv(res.metrics_path, res.metrics);
    return res;
}

}  // namespace qgfs::trainer
