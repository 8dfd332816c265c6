#include "qgfs/gradcheck.hpp"
#include "qgfs/io.hpp"
#include "qgfs/model.hpp"
#include "qgfs/scenes.hpp"
#include "qgfs/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

namespace {

using namespace qgfs;

struct Args {
    std::string config, out = "dataset.bin", ae_ckpt, ckpt, data, module = "raster";
    uint64_t seed = 1;
    bool seed_given = false;
    int episodes = 64, width = 64, height = 64;
    uint64_t scene = 1;
    int view = 2;
    int trials = 20;
};

hse::Autoencoder load_ae(const std::string& path, uint64_t seed) {
    Rng rng(mix_seed(seed, fnv1a64("ae-init")));
    hse::Autoencoder ae(rng);
    trainer::load_ae_checkpoint(path, ae);
    return ae;
}

int cmd_gen_data(const Args& a) {
    hse::Autoencoder* ae_ptr = nullptr;
    std::optional<hse::Autoencoder> ae;
    if (!a.ae_ckpt.empty()) {
        ae.emplace(load_ae(a.ae_ckpt, a.seed));
        ae_ptr = &*ae;
    }
    scenes::Dataset ds = scenes::generate_dataset(a.seed, a.episodes, a.width, a.height, ae_ptr);
    scenes::save_dataset(ds, a.out);
    std::printf("wrote %d episodes (%dx%d, features %s) to %s\n", int(ds.episodes.size()),
                ds.width, ds.height, ae_ptr ? "baked" : "pending", a.out.c_str());
    return 0;
}

trainer::RunConfig load_config(const Args& a) {
    trainer::RunConfig cfg = trainer::RunConfig::from_json_file(a.config);
    if (a.seed_given) cfg.seed = a.seed;
    return cfg;
}

int cmd_train_ae(const Args& a) {
    trainer::RunConfig cfg = load_config(a);
    Rng rng(mix_seed(cfg.seed, fnv1a64("ae-init")));
    hse::Autoencoder ae(rng);
    trainer::AeResult r = trainer::train_autoencoder(cfg, ae);
    std::printf("ae mse %.6g -> %.6g, mean cosine %.4f\n", double(r.initial_mse),
                double(r.final_mse), double(r.mean_cosine));
    std::printf("checkpoint %s\nmetrics %s\n", r.ckpt_path.c_str(), r.metrics_path.c_str());
    return 0;
}

int cmd_train(const Args& a) {
    trainer::RunConfig cfg = load_config(a);
    scenes::Dataset ds = scenes::load_dataset(cfg.dataset_path);
    bool pending = false;
    for (const auto& ep : ds.episodes) pending = pending || ep.features_pending();
    if (pending) {
        if (a.ae_ckpt.empty())
            throw ConfigError("dataset has pending feature targets; pass --ae-ckpt");
        hse::Autoencoder ae = load_ae(a.ae_ckpt, cfg.seed);
        scenes::bake_feature_targets(ds, ae);
    }
    trainer::RepResult r = trainer::train_representation(cfg, ds);
    std::printf("baseline  psnr %.3f +- %.3f  ssim %.4f  cosine %.4f  (%d samples)\n",
                double(r.baseline.psnr_mean), double(r.baseline.psnr_std),
                double(r.baseline.ssim_mean), double(r.baseline.cosine_mean),
                r.baseline.samples);
    std::printf("trained   psnr %.3f +- %.3f  ssim %.4f  cosine %.4f\n",
                double(r.trained.psnr_mean), double(r.trained.psnr_std),
                double(r.trained.ssim_mean), double(r.trained.cosine_mean));
    std::printf("checkpoint %s\nmetrics %s\n", r.ckpt_path.c_str(), r.metrics_path.c_str());
    return 0;
}

int cmd_render(const Args& a) {
    Rng rng(mix_seed(a.seed, fnv1a64("rep-init")));
    model::RepresentationModel m(rng);
    m.load(a.ckpt);
    if (a.view < 0 || a.view >= scenes::kViewsPerEpisode)
        throw ConfigError("--view out of range");

    scenes::Dataset ds = scenes::generate_dataset(a.scene, 1, a.width, a.height, nullptr);
    const scenes::Episode& ep = ds.episodes.at(0);
    int triple = a.view / 3;
    std::vector<query::RgbdView> inputs{ep.views[size_t(3 * triple)].rgbd(),
                                        ep.views[size_t(3 * triple + 1)].rgbd()};
    auto fwd = m.forward(inputs);
    auto out = raster::render_forward(fwd.cloud, ep.views[size_t(a.view)].camera,
                                      raster::RenderSettings::fast(), nullptr);

    std::string base = a.out;
    if (base.size() > 4 && base.substr(base.size() - 4) == ".ppm")
        base = base.substr(0, base.size() - 4);
    io::write_ppm(base + ".ppm", out.width, out.height, out.color);
    io::write_raw_planes(base + ".feat.raw", out.width, out.height, 3, out.feature);
    std::printf("wrote %s.ppm and %s.feat.raw\n", base.c_str(), base.c_str());
    return 0;
}

int cmd_eval(const Args& a) {
    Rng rng(mix_seed(a.seed, fnv1a64("rep-init")));
    model::RepresentationModel m(rng);
    m.load(a.ckpt);
    scenes::Dataset ds = scenes::load_dataset(a.data);
    std::vector<int> all;
    for (int i = 0; i < int(ds.episodes.size()); ++i) all.push_back(i);
    trainer::EvalResult r = trainer::evaluate(m, ds, all, 1);
    std::printf("psnr %.3f +- %.3f\nssim %.4f +- %.4f\ncosine %.4f +- %.4f\nsamples %d\n",
                double(r.psnr_mean), double(r.psnr_std), double(r.ssim_mean),
                double(r.ssim_std), double(r.cosine_mean), double(r.cosine_std), r.samples);
    return 0;
}

int cmd_gradcheck(const Args& a) {
    gradcheck::Report r;
    if (a.module == "raster")
        r = gradcheck::check_raster(a.seed, a.trials);
    else if (a.module == "nnkit")
        r = gradcheck::check_nnkit(a.seed, a.trials);
    else
        r = gradcheck::check_e2e(a.seed, a.trials);
    std::printf("%s: %d components, worst rel err %.3g, p%02.0f %.3g -> %s\n",
                r.module.c_str(), r.total(), double(r.worst), double(100 * r.quantile),
                double(r.quantile_err), r.pass() ? "pass" : "FAIL");
    if (!r.pass()) {
        std::fprintf(stderr, "QGFS-ERR: gradient check failed for module %s\n",
                     r.module.c_str());
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query-based generalizable Gaussian feature splatting"};
    app.require_subcommand(1);
    Args a;

    auto add_seed = [&](CLI::App* c) {
        c->add_option("--seed", a.seed, "base RNG seed")->each([&](const std::string&) {
            a.seed_given = true;
        });
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_seed(gen);
    gen->add_option("--episodes", a.episodes, "episode count");
    gen->add_option("--out", a.out, "output dataset path");
    gen->add_option("--width", a.width, "view width");
    gen->add_option("--height", a.height, "view height");
    gen->add_option("--ae-ckpt", a.ae_ckpt, "autoencoder checkpoint (bakes feature targets)");

    CLI::App* tae = app.add_subcommand("train-ae", "train the feature autoencoder");
    tae->add_option("--config", a.config, "run config JSON")->required();
    add_seed(tae);

    CLI::App* tr = app.add_subcommand("train", "train the representation model");
    tr->add_option("--config", a.config, "run config JSON")->required();
    tr->add_option("--ae-ckpt", a.ae_ckpt, "autoencoder checkpoint for pending feature targets");
    add_seed(tr);

    CLI::App* ren = app.add_subcommand("render", "render a predicted view");
    ren->add_option("--ckpt", a.ckpt, "representation checkpoint")->required();
    ren->add_option("--scene", a.scene, "scene seed")->required();
    ren->add_option("--view", a.view, "target view index (0-11)")->required();
    ren->add_option("--out", a.out, "output path prefix")->required();
    ren->add_option("--width", a.width, "view width");
    ren->add_option("--height", a.height, "view height");
    add_seed(ren);

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--ckpt", a.ckpt, "representation checkpoint")->required();
    ev->add_option("--data", a.data, "dataset path")->required();
    add_seed(ev);

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--module", a.module, "raster | nnkit | e2e")
        ->required()
        ->check(CLI::IsMember({"raster", "nnkit", "e2e"}));
    gc->add_option("--trials", a.trials, "number of random trials");
    add_seed(gc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "QGFS-ERR: %s\n", e.what());
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(a);
        if (tae->parsed()) return cmd_train_ae(a);
        if (tr->parsed()) return cmd_train(a);
        if (ren->parsed()) return cmd_render(a);
        if (ev->parsed()) return cmd_eval(a);
        if (gc->parsed()) return cmd_gradcheck(a);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "QGFS-ERR: %s\n", e.what());
        return 1;
    }
    return 2;
}
