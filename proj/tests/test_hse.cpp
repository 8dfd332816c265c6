#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qgfs/hse.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace qgfs;
using namespace qgfs::hse;

namespace {

FeatureMap random_features(int w, int h, int dim, Rng& rng) {
    FeatureMap f(w, h, dim);
    for (auto& v : f.v) v = rng.normal();
    return f;
}

Mask full_mask(int w, int h, int id, MaskLevel level) {
    Mask m;
    m.level = level;
    m.id = id;
    m.width = w;
    m.height = h;
    m.on.assign(size_t(w) * size_t(h), 1);
    return m;
}

Mask random_mask(int w, int h, int id, MaskLevel level, Rng& rng) {
    Mask m = full_mask(w, h, id, level);
    for (auto& b : m.on) b = rng.uniform() < real(0.4) ? 1 : 0;
    if (m.count() == 0) m.on[0] = 1;
    return m;
}

// Straight-line reimplementation of MAP: normalize each masked pixel, mean.
std::vector<real> naive_map(const Mask& mask, const FeatureMap& feat) {
    std::vector<real> acc(size_t(feat.dim), 0);
    int64_t n = 0;
    for (int r = 0; r < feat.height; ++r)
        for (int c = 0; c < feat.width; ++c) {
            if (!mask.at(r, c)) continue;
            const real* p = feat.at(r, c);
            real norm = 0;
            for (int k = 0; k < feat.dim; ++k) norm += p[k] * p[k];
            norm = std::sqrt(norm);
            if (norm > 0)
                for (int k = 0; k < feat.dim; ++k) acc[size_t(k)] += p[k] / norm;
            ++n;
        }
    for (auto& v : acc) v /= real(n);
    return acc;
}

real max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
    REQUIRE(a.size() == b.size());
    real m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("masked average pool closed forms") {
    SUBCASE("constant unit feature comes back unchanged") {
        FeatureMap f(3, 3, 4);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) f.at(r, c)[2] = 1;  // e3 everywhere
        auto v = masked_average_pool(full_mask(3, 3, 0, MaskLevel::Part), f);
        CHECK(v[2] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(v[0] == 0);
    }
    SUBCASE("two-pixel mask with orthonormal features averages them") {
        FeatureMap f(2, 1, 4);
        f.at(0, 0)[0] = 1;  // e1
        f.at(0, 1)[1] = 1;  // e2
        auto v = masked_average_pool(full_mask(2, 1, 0, MaskLevel::Part), f);
        CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(v[1] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(v[2] == 0);
    }
    SUBCASE("empty mask is a domain error") {
        FeatureMap f(2, 2, 4);
        Mask m = full_mask(2, 2, 0, MaskLevel::Part);
        m.on.assign(4, 0);
        CHECK_THROWS_AS(masked_average_pool(m, f), DomainError);
    }
    SUBCASE("matches the double-loop oracle on random inputs") {
        Rng rng(11);
        for (int trial = 0; trial < 10; ++trial) {
            FeatureMap f = random_features(9, 7, 16, rng);
            Mask m = random_mask(9, 7, 0, MaskLevel::Part, rng);
            CHECK(max_abs_diff(masked_average_pool(m, f), naive_map(m, f)) <= real(1e-6));
        }
    }
    SUBCASE("per-pixel scale invariance") {
        Rng rng(12);
        FeatureMap f = random_features(6, 6, 8, rng);
        Mask m = random_mask(6, 6, 0, MaskLevel::Part, rng);
        auto base = masked_average_pool(m, f);
        FeatureMap scaled = f;
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                real k = real(0.1) + 5 * rng.uniform();
                for (int d = 0; d < 8; ++d) scaled.at(r, c)[d] *= k;
            }
        CHECK(max_abs_diff(masked_average_pool(m, scaled), base) <= real(1e-9));
    }
}

TEST_CASE("hierarchical aggregation") {
    int w = 4, h = 4;
    Rng rng(13);
    FeatureMap f = random_features(w, h, 8, rng);

    // Object mask covers the left half; its single part covers the top-left
    // quarter. Right half is uncovered.
    Mask object = full_mask(w, h, 100, MaskLevel::Object);
    Mask part = full_mask(w, h, 1, MaskLevel::Part);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            object.on[size_t(r * w + c)] = c < 2 ? 1 : 0;
            part.on[size_t(r * w + c)] = (c < 2 && r < 2) ? 1 : 0;
        }
    MaskStack stack = {object, part};
    PooledMap pooled = pool_stack(stack, f);
    REQUIRE(pooled.size() == 2);

    SUBCASE("one covering mask returns its MAP") {
        auto v = aggregate_hierarchical(3, 0, stack, pooled);  // object only
        CHECK(max_abs_diff(v, pooled.at(100)) == 0);
    }
    SUBCASE("object plus part averages the two MAPs") {
        auto v = aggregate_hierarchical(0, 0, stack, pooled);
        for (size_t k = 0; k < v.size(); ++k)
            CHECK(v[k] == doctest::Approx((pooled.at(100)[k] + pooled.at(1)[k]) / 2)
                              .epsilon(1e-12));
    }
    SUBCASE("uncovered pixel is zero") {
        auto v = aggregate_hierarchical(0, 3, stack, pooled);
        for (real x : v) CHECK(x == 0);
    }
    SUBCASE("mask order does not matter") {
        MaskStack reversed = {part, object};
        PooledMap pooled2 = pool_stack(reversed, f);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                CHECK(max_abs_diff(aggregate_hierarchical(r, c, stack, pooled),
                                   aggregate_hierarchical(r, c, reversed, pooled2)) <=
                      real(1e-12));
    }
    SUBCASE("duplicate mask ids are rejected") {
        MaskStack dup = {object, object};
        CHECK_THROWS_AS(pool_stack(dup, f), ContractError);
    }
}

TEST_CASE("full aggregate map matches per-pixel recomputation") {
    Rng rng(14);
    FeatureMap f = random_features(16, 16, 32, rng);
    MaskStack stack;
    stack.push_back(random_mask(16, 16, 1000, MaskLevel::Object, rng));
    stack.push_back(random_mask(16, 16, 1, MaskLevel::Part, rng));
    stack.push_back(random_mask(16, 16, 2, MaskLevel::Part, rng));

    FeatureMap agg = hse_aggregate_map(f, stack);
    PooledMap pooled;
    for (const auto& m : stack) pooled[m.id] = naive_map(m, f);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            std::vector<real> acc(32, 0);
            int covering = 0;
            for (const auto& m : stack)
                if (m.at(r, c)) {
                    ++covering;
                    for (int k = 0; k < 32; ++k) acc[size_t(k)] += pooled[m.id][size_t(k)];
                }
            if (covering > 0)
                for (auto& v : acc) v /= real(covering);
            for (int k = 0; k < 32; ++k)
                CHECK(std::abs(agg.at(r, c)[k] - acc[size_t(k)]) <= real(1e-6));
        }
}

TEST_CASE("autoencoder basics") {
    Rng rng(15);
    Autoencoder ae(rng);
    nn::Tensor batch({4, kFeatureDim});
    Rng drng(16);
    for (auto& v : batch.v) v = drng.normal() * real(0.05);

    SUBCASE("encode lands in the tanh box and is deterministic") {
        nn::Tensor l = ae.encode(batch);
        REQUIRE(l.shape == std::vector<int64_t>{4, kCompactDim});
        for (real v : l.v) {
            CHECK(v >= -1);
            CHECK(v <= 1);
        }
        nn::Tensor l2 = ae.encode(batch);
        CHECK(l.v == l2.v);
    }
    SUBCASE("reconstruction loss matches the double-loop oracle") {
        nn::Tensor recon = ae.decode(ae.encode(batch));
        real naive = 0;
        for (int n = 0; n < 4; ++n) {
            real d2 = 0;
            for (int k = 0; k < kFeatureDim; ++k) {
                real d = recon.v[size_t(n * kFeatureDim + k)] -
                         batch.v[size_t(n * kFeatureDim + k)];
                d2 += d * d;
            }
            naive += d2;
        }
        naive /= 4;
        real loss = ae.reconstruction_loss(batch);
        CHECK(loss >= 0);
        CHECK(loss == doctest::Approx(naive).epsilon(1e-9));
        CHECK(ae_loss(ae, batch) == doctest::Approx(naive).epsilon(1e-9));
    }
    SUBCASE("a zeroed decoder reconstructs nothing, so the loss is the input norm") {
        for (auto& p : ae.params())
            if (p.name.find(".dec.") != std::string::npos)
                std::fill(p.value->v.begin(), p.value->v.end(), real(0));
        nn::Tensor one({1, kFeatureDim});
        real norm2 = 0;
        for (int k = 0; k < kFeatureDim; ++k) {
            one.v[size_t(k)] = drng.normal();
            norm2 += one.v[size_t(k)] * one.v[size_t(k)];
        }
        CHECK(ae.reconstruction_loss(one) == doctest::Approx(norm2).epsilon(1e-9));
    }
    SUBCASE("a tiny Adam step never raises the loss on the same batch") {
        nn::Adam opt(real(1e-5));
        for (int i = 0; i < 5; ++i) {
            real before = ae.train_step(batch, opt);
            CHECK(ae.reconstruction_loss(batch) <= before + real(1e-9));
        }
    }
}

TEST_CASE("synthetic part features") {
    SUBCASE("deterministic and unit norm") {
        auto a = synth_part_feature(1, 3, 0);
        auto b = synth_part_feature(1, 3, 0);
        CHECK(a == b);
        real n = 0;
        for (real v : a) n += v * v;
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(synth_part_feature(1, 3, 1) != a);
        CHECK(synth_part_feature(2, 3, 0) != a);
    }
    SUBCASE("distinct vectors are near-orthogonal") {
        std::vector<std::vector<real>> vs;
        for (int cat = 0; cat < 50; ++cat)
            for (int part = 0; part < 2; ++part) vs.push_back(synth_part_feature(9, cat, part));
        int64_t total = 0, bad = 0;
        for (size_t i = 0; i < vs.size(); ++i)
            for (size_t j = i + 1; j < vs.size(); ++j) {
                real dot = 0;
                for (size_t k = 0; k < vs[i].size(); ++k) dot += vs[i][k] * vs[j][k];
                ++total;
                if (std::abs(dot) >= real(0.3)) ++bad;
            }
        CHECK(real(bad) / real(total) < real(0.01));
    }
}

TEST_CASE("synthetic view features follow the labels") {
    // 4x4 view: object 0 (category 2) occupies the left half with parts 0
    // (body, rows 0-2) and 1 (attachment, row 3); right half is background.
    LabelView lv;
    lv.width = lv.height = 4;
    lv.object_inst.assign(16, -1);
    lv.part_inst.assign(16, -1);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c) {
            lv.object_inst[size_t(r * 4 + c)] = 0;
            lv.part_inst[size_t(r * 4 + c)] = r < 3 ? 0 : 1;
        }
    lv.part_object = {0, 0};
    lv.part_category = {2, 2};
    lv.part_slot = {0, 1};

    uint64_t seed = 77;
    SynthView sv = synth_features(lv, seed);
    auto body = synth_part_feature(seed, 2, 0);
    auto attach = synth_part_feature(seed, 2, 1);

    CHECK(max_abs_diff(std::vector<real>(sv.feat.at(0, 0), sv.feat.at(0, 0) + kFeatureDim),
                       body) == 0);
    CHECK(max_abs_diff(std::vector<real>(sv.feat.at(3, 1), sv.feat.at(3, 1) + kFeatureDim),
                       attach) == 0);
    for (int k = 0; k < kFeatureDim; ++k) CHECK(sv.feat.at(0, 3)[k] == 0);

    REQUIRE(sv.masks.size() == 3);  // one object mask + two part masks
    int object_masks = 0, part_masks = 0;
    for (const auto& m : sv.masks) {
        if (m.level == MaskLevel::Object) {
            ++object_masks;
            CHECK(m.count() == 8);
        } else {
            ++part_masks;
        }
    }
    CHECK(object_masks == 1);
    CHECK(part_masks == 2);
}

TEST_CASE("compact feature map encodes covered pixels only") {
    Rng rng(17);
    Autoencoder ae(rng);
    FeatureMap agg(3, 2, kFeatureDim);
    auto vec = synth_part_feature(5, 1, 0);
    std::copy(vec.begin(), vec.end(), agg.at(1, 2));

    auto compact = compact_feature_map(ae, agg);
    REQUIRE(compact.size() == size_t(3 * 2 * 3));

    nn::Tensor x({1, kFeatureDim});
    std::copy(vec.begin(), vec.end(), x.v.begin());
    nn::Tensor l = ae.encode(x);
    for (int k = 0; k < 3; ++k) {
        CHECK(compact[size_t((1 * 3 + 2) * 3 + k)] == doctest::Approx(l.v[size_t(k)]).epsilon(1e-12));
        CHECK(compact[size_t(k)] == 0);  // pixel (0,0) uncovered
    }
}

TEST_CASE("feature view container round-trips") {
    Rng rng(18);
    FeatureMap f = random_features(5, 4, 8, rng);
    MaskStack masks;
    masks.push_back(random_mask(5, 4, 1000, MaskLevel::Object, rng));
    masks.push_back(random_mask(5, 4, 3, MaskLevel::Part, rng));

    auto path = (std::filesystem::temp_directory_path() / "qgfs_featview.bin").string();
    save_feature_view(path, f, masks);

    FeatureMap f2;
    MaskStack masks2;
    load_feature_view(path, f2, masks2);
    CHECK(f2.width == f.width);
    CHECK(f2.height == f.height);
    CHECK(f2.dim == f.dim);
    // Planes are stored as 32-bit floats, so loading reproduces the f32
    // quantization of the input exactly.
    REQUIRE(f2.v.size() == f.v.size());
    for (size_t i = 0; i < f.v.size(); ++i) CHECK(f2.v[i] == real(float(f.v[i])));

    // A second save of the loaded data must be byte-identical.
    auto path2 = (std::filesystem::temp_directory_path() / "qgfs_featview2.bin").string();
    save_feature_view(path2, f2, masks2);
    {
        std::ifstream s1(path, std::ios::binary), s2(path2, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
        CHECK(b1 == b2);
    }
    std::filesystem::remove(path2);
    REQUIRE(masks2.size() == masks.size());
    for (size_t i = 0; i < masks.size(); ++i) {
        CHECK(masks2[i].id == masks[i].id);
        CHECK(masks2[i].level == masks[i].level);
        CHECK(masks2[i].on == masks[i].on);
    }

    // Corrupt one byte in the middle: the checksum must reject the file.
    {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(40);
        char c;
        fs.seekg(40);
        fs.get(c);
        fs.seekp(40);
        fs.put(char(c ^ 0x10));
    }
    FeatureMap f3;
    MaskStack masks3;
    CHECK_THROWS_AS(load_feature_view(path, f3, masks3), IoError);
    std::filesystem::remove(path);
}
