#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

// Exercises the installed binary end to end. The test runner passes its
// location in QGFS_BIN.

namespace {

struct RunResult {
    int code = -1;
    std::string out, err;
};

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string bin() {
    const char* b = std::getenv("QGFS_BIN");
    REQUIRE_MESSAGE(b != nullptr, "QGFS_BIN must point at the qgfs binary");
    return b;
}

RunResult run(const std::string& args) {
    static int counter = 0;
    std::string base = "/tmp/qgfs_cli_io_" + std::to_string(counter++);
    std::string cmd = bin() + " " + args + " >" + base + ".out 2>" + base + ".err";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_all(base + ".out");
    r.err = read_all(base + ".err");
    std::remove((base + ".out").c_str());
    std::remove((base + ".err").c_str());
    return r;
}

std::string work_dir() {
    static std::string dir = [] {
        std::string d = "/tmp/qgfs_cli_test";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit 2 with a greppable prefix") {
    auto none = run("");
    CHECK(none.code == 2);

    auto unknown = run("frobnicate --seed 1");
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("QGFS-ERR:") != std::string::npos);

    auto missing = run("train-ae");
    CHECK(missing.code == 2);
    CHECK(missing.err.find("QGFS-ERR:") != std::string::npos);
    CHECK(missing.err.find("--config") != std::string::npos);

    auto badmod = run("gradcheck --module warp");
    CHECK(badmod.code == 2);
    CHECK(badmod.err.find("QGFS-ERR:") != std::string::npos);

    auto help = run("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("gen-data") != std::string::npos);
}

TEST_CASE("runtime failures exit 1 with the prefix") {
    auto r = run("eval --ckpt /tmp/definitely_missing.ckpt --data /tmp/also_missing.bin");
    CHECK(r.code == 1);
    CHECK(r.err.find("QGFS-ERR:") != std::string::npos);
}

TEST_CASE("gen-data is deterministic and overwrites its output") {
    std::string d = work_dir();
    std::string a = d + "/ds_a.bin", b = d + "/ds_b.bin";

    auto r1 = run("gen-data --seed 7 --episodes 2 --width 16 --height 16 --out " + a);
    REQUIRE(r1.code == 0);
    std::string bytes1 = read_all(a);
    CHECK(!bytes1.empty());

    auto r2 = run("gen-data --seed 7 --episodes 2 --width 16 --height 16 --out " + b);
    REQUIRE(r2.code == 0);
    CHECK(read_all(b) == bytes1);

    // rerun onto the same path: truncate-and-replace, byte-identical
    auto r3 = run("gen-data --seed 7 --episodes 2 --width 16 --height 16 --out " + a);
    REQUIRE(r3.code == 0);
    CHECK(read_all(a) == bytes1);

    auto r4 = run("gen-data --seed 8 --episodes 2 --width 16 --height 16 --out " + b);
    REQUIRE(r4.code == 0);
    CHECK(read_all(b) != bytes1);
}

TEST_CASE("gradcheck passes and reports per-module lines") {
    auto r = run("gradcheck --module raster --trials 5 --seed 3");
    CHECK(r.code == 0);
    CHECK(r.out.find("raster:") != std::string::npos);
    CHECK(r.out.find("pass") != std::string::npos);

    auto n = run("gradcheck --module nnkit --trials 5 --seed 3");
    CHECK(n.code == 0);
    CHECK(n.out.find("nnkit:") != std::string::npos);
}

TEST_CASE("the full pipeline runs through the binary") {
    std::string d = work_dir();
    std::string ds = d + "/pipe.bin";
    std::string out_dir = d + "/run";
    std::string cfg_path = d + "/cfg.json";

    REQUIRE(run("gen-data --seed 5 --episodes 2 --width 16 --height 16 --out " + ds).code == 0);

    std::ofstream(cfg_path) << R"({
        "dataset": ")" << ds << R"(",
        "out_dir": ")" << out_dir << R"(",
        "seed": 11,
        "holdout_episodes": 1,
        "ae": {"lr": 5e-4, "epochs": 30},
        "representation": {"lr": 1e-4, "epochs": 1},
        "loss": {"warmup_iters": 2}
    })";

    auto tae = run("train-ae --config " + cfg_path);
    REQUIRE(tae.code == 0);
    std::string ae_ckpt = out_dir + "/ae.ckpt";
    CHECK(std::filesystem::exists(ae_ckpt));
    CHECK(std::filesystem::exists(out_dir + "/ae_metrics.csv"));

    // pending feature targets without an autoencoder checkpoint is an error
    auto notrain = run("train --config " + cfg_path);
    CHECK(notrain.code == 1);
    CHECK(notrain.err.find("QGFS-ERR:") != std::string::npos);

    auto tr = run("train --config " + cfg_path + " --ae-ckpt " + ae_ckpt);
    REQUIRE(tr.code == 0);
    std::string ckpt = out_dir + "/representation.ckpt";
    std::string csv = out_dir + "/train_metrics.csv";
    REQUIRE(std::filesystem::exists(ckpt));
    REQUIRE(std::filesystem::exists(csv));
    std::string ckpt_bytes = read_all(ckpt);
    std::string csv_bytes = read_all(csv);
    CHECK(csv_bytes.rfind("iter,loss_gs,loss_feat,loss_total,psnr,ssim,feature_cosine,wall_clock",
                          0) == 0);

    // reruns are reproducible and truncate the metrics file instead of appending
    auto tr2 = run("train --config " + cfg_path + " --ae-ckpt " + ae_ckpt);
    REQUIRE(tr2.code == 0);
    CHECK(read_all(ckpt) == ckpt_bytes);
    CHECK(read_all(csv) == csv_bytes);

    auto ev = run("eval --ckpt " + ckpt + " --data " + ds);
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("psnr") != std::string::npos);
    auto ev2 = run("eval --ckpt " + ckpt + " --data " + ds);
    CHECK(ev2.out == ev.out);

    auto ren = run("render --ckpt " + ckpt + " --scene 5 --view 2 --width 16 --height 16 --out " +
                   d + "/frame");
    REQUIRE(ren.code == 0);
    std::string ppm = read_all(d + "/frame.ppm");
    CHECK(ppm.rfind("P6", 0) == 0);
    CHECK(ppm.find("16 16") != std::string::npos);
    CHECK(std::filesystem::exists(d + "/frame.feat.raw"));

    auto badview = run("render --ckpt " + ckpt + " --scene 5 --view 99 --out " + d + "/bad");
    CHECK(badview.code == 1);
    CHECK(badview.err.find("QGFS-ERR:") != std::string::npos);
}
