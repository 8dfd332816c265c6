#include "qgfs/hse.hpp"

#include "qgfs/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace qgfs::hse {

using nlohmann::json;

int64_t Mask::count() const {
    int64_t n = 0;
    for (auto b : on) n += b ? 1 : 0;
    return n;
}

std::vector<real> masked_average_pool(const Mask& mask, const FeatureMap& feat) {
    if (mask.width != feat.width || mask.height != feat.height)
        throw ContractError("masked_average_pool: mask/feature shape mismatch");
    std::vector<real> acc(size_t(feat.dim), 0);
    int64_t n = 0;
    for (int r = 0; r < feat.height; ++r) {
        for (int c = 0; c < feat.width; ++c) {
            if (!mask.at(r, c)) continue;
            ++n;
            const real* f = feat.at(r, c);
            real norm2 = 0;
            for (int k = 0; k < feat.dim; ++k) norm2 += f[k] * f[k];
            if (norm2 <= real(1e-24)) continue;
            real inv = 1 / std::sqrt(norm2);
            for (int k = 0; k < feat.dim; ++k) acc[size_t(k)] += f[k] * inv;
        }
    }
    if (n == 0) throw DomainError("masked_average_pool: empty mask");
    for (auto& v : acc) v /= real(n);
    return acc;
}

PooledMap pool_stack(const MaskStack& stack, const FeatureMap& feat) {
    PooledMap pooled;
    for (const auto& m : stack) {
        if (pooled.count(m.id)) throw ContractError("pool_stack: duplicate mask id");
        pooled.emplace(m.id, masked_average_pool(m, feat));
    }
    return pooled;
}

std::vector<real> aggregate_hierarchical(int r, int c, const MaskStack& stack,
                                         const PooledMap& pooled) {
    std::vector<real> acc;
    int64_t n = 0;
    for (const auto& m : stack) {
        if (!m.at(r, c)) continue;
        auto it = pooled.find(m.id);
        if (it == pooled.end()) throw ContractError("aggregate_hierarchical: mask id not pooled");
        const auto& v = it->second;
        if (acc.empty()) acc.assign(v.size(), 0);
        if (v.size() != acc.size()) throw ContractError("aggregate_hierarchical: pooled dim mismatch");
        for (size_t k = 0; k < v.size(); ++k) acc[k] += v[k];
        ++n;
    }
    if (n == 0) {
        size_t dim = pooled.empty() ? size_t(kFeatureDim) : pooled.begin()->second.size();
        return std::vector<real>(dim, 0);
    }
    for (auto& v : acc) v /= real(n);
    return acc;
}

FeatureMap hse_aggregate_map(const FeatureMap& feat, const MaskStack& stack) {
    PooledMap pooled = pool_stack(stack, feat);
    FeatureMap out(feat.width, feat.height, feat.dim);
    for (int r = 0; r < feat.height; ++r) {
        for (int c = 0; c < feat.width; ++c) {
            auto v = aggregate_hierarchical(r, c, stack, pooled);
            std::copy(v.begin(), v.end(), out.at(r, c));
        }
    }
    return out;
}

Autoencoder::Autoencoder(Rng& rng) {
    enc_.add(std::make_unique<nn::Dense>(kFeatureDim, 256, nn::Act::ReLU, rng));
    enc_.add(std::make_unique<nn::Dense>(256, 128, nn::Act::ReLU, rng));
    enc_.add(std::make_unique<nn::Dense>(128, kCompactDim, nn::Act::Tanh, rng));
    dec_.add(std::make_unique<nn::Dense>(kCompactDim, 128, nn::Act::ReLU, rng));
    dec_.add(std::make_unique<nn::Dense>(128, 256, nn::Act::ReLU, rng));
    dec_.add(std::make_unique<nn::Dense>(256, kFeatureDim, nn::Act::Linear, rng));
}

nn::Tensor Autoencoder::encode(const nn::Tensor& x) {
    nn::Tape tape;
    return nn::forward(enc_, x, tape);
}

nn::Tensor Autoencoder::decode(const nn::Tensor& l) {
    nn::Tape tape;
    return nn::forward(dec_, l, tape);
}

namespace {

real recon_sq_mean(const nn::Tensor& y, const nn::Tensor& x, int64_t batch) {
    real s = 0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        real d = y.v[i] - x.v[i];
        s += d * d;
    }
    return s / real(batch);
}

int64_t batch_rows(const nn::Tensor& x) { return x.ndim() == 2 ? x.shape[0] : 1; }

}  // namespace

real Autoencoder::reconstruction_loss(const nn::Tensor& batch) {
    nn::Tensor y = decode(encode(batch));
    return recon_sq_mean(y, batch, batch_rows(batch));
}

real Autoencoder::train_step(const nn::Tensor& batch, nn::Adam& opt) {
    auto prm = params();
    nn::zero_grads(prm);
    nn::Tape te, td;
    nn::Tensor l = nn::forward(enc_, batch, te);
    nn::Tensor y = nn::forward(dec_, l, td);
    int64_t b = batch_rows(batch);
    real loss = recon_sq_mean(y, batch, b);
    nn::Tensor dy = y;
    for (size_t i = 0; i < dy.v.size(); ++i) dy.v[i] = 2 * (y.v[i] - batch.v[i]) / real(b);
    nn::Tensor dl = nn::backward(dec_, td, dy);
    nn::backward(enc_, te, dl);
    opt.step(prm);
    return loss;
}

std::vector<nn::ParamRef> Autoencoder::params() {
    std::vector<nn::ParamRef> out;
    auto take = [&](const std::string& name, nn::Tensor& v, nn::Tensor& g) {
        out.push_back({name, &v, &g});
    };
    enc_.visit_params("ae.enc", take);
    dec_.visit_params("ae.dec", take);
    return out;
}

real ae_loss(Autoencoder& ae, const nn::Tensor& batch) { return ae.reconstruction_loss(batch); }

std::vector<real> synth_part_feature(uint64_t seed, int category, int part) {
    uint64_t s = mix_seed(seed, fnv1a64("part-feature"));
    s = mix_seed(s, uint64_t(uint32_t(category)));
    s = mix_seed(s, uint64_t(uint32_t(part)) + 0x9e3779b9u);
    Rng rng(s);
    std::vector<real> v(size_t(kFeatureDim), 0);
    real norm2 = 0;
    for (auto& x : v) {
        x = rng.normal();
        norm2 += x * x;
    }
    real inv = 1 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

SynthView synth_features(const LabelView& labels, uint64_t seed) {
    const int w = labels.width, h = labels.height;
    if (w <= 0 || h <= 0 || labels.object_inst.size() != size_t(w) * size_t(h) ||
        labels.part_inst.size() != size_t(w) * size_t(h))
        throw ContractError("synth_features: bad label view");
    const int n_parts = int(labels.part_object.size());
    if (labels.part_category.size() != size_t(n_parts) || labels.part_slot.size() != size_t(n_parts))
        throw ContractError("synth_features: part table size mismatch");

    SynthView out;
    out.feat = FeatureMap(w, h, kFeatureDim);

    std::vector<std::vector<real>> part_vec;
    part_vec.resize(size_t(n_parts));
    for (int p = 0; p < n_parts; ++p)
        part_vec[size_t(p)] =
            synth_part_feature(seed, labels.part_category[size_t(p)], labels.part_slot[size_t(p)]);

    std::set<int32_t> objects_seen, parts_seen;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            size_t pix = size_t(r) * size_t(w) + size_t(c);
            int32_t pi = labels.part_inst[pix];
            if (pi < 0) continue;
            if (pi >= n_parts) throw ContractError("synth_features: part index out of range");
            std::copy(part_vec[size_t(pi)].begin(), part_vec[size_t(pi)].end(), out.feat.at(r, c));
            parts_seen.insert(pi);
            if (labels.object_inst[pix] >= 0) objects_seen.insert(labels.object_inst[pix]);
        }
    }

    // Object masks first, then part masks; ids are disjoint (objects offset).
    const int kObjectIdBase = 1 << 20;
    for (int32_t oi : objects_seen) {
        Mask m;
        m.level = MaskLevel::Object;
        m.id = kObjectIdBase + oi;
        m.width = w;
        m.height = h;
        m.on.assign(size_t(w) * size_t(h), 0);
        for (size_t pix = 0; pix < m.on.size(); ++pix)
            if (labels.object_inst[pix] == oi && labels.part_inst[pix] >= 0) m.on[pix] = 1;
        out.masks.push_back(std::move(m));
    }
    for (int32_t pi : parts_seen) {
        Mask m;
        m.level = MaskLevel::Part;
        m.id = pi;
        m.width = w;
        m.height = h;
        m.on.assign(size_t(w) * size_t(h), 0);
        for (size_t pix = 0; pix < m.on.size(); ++pix)
            if (labels.part_inst[pix] == pi) m.on[pix] = 1;
        out.masks.push_back(std::move(m));
    }
    return out;
}

std::vector<real> compact_feature_map(Autoencoder& ae, const FeatureMap& aggregated) {
    const int w = aggregated.width, h = aggregated.height;
    if (aggregated.dim != kFeatureDim) throw ContractError("compact_feature_map: dim mismatch");
    std::vector<real> out(size_t(w) * size_t(h) * size_t(kCompactDim), 0);

    // Batch the covered pixels through the encoder in one pass.
    std::vector<size_t> covered;
    for (size_t pix = 0; pix < size_t(w) * size_t(h); ++pix) {
        const real* f = aggregated.v.data() + pix * size_t(kFeatureDim);
        real norm2 = 0;
        for (int k = 0; k < kFeatureDim; ++k) norm2 += f[k] * f[k];
        if (norm2 > real(1e-24)) covered.push_back(pix);
    }
    if (covered.empty()) return out;

    nn::Tensor batch({int64_t(covered.size()), kFeatureDim});
    for (size_t i = 0; i < covered.size(); ++i)
        std::copy_n(aggregated.v.data() + covered[i] * size_t(kFeatureDim), kFeatureDim,
                    batch.data() + int64_t(i) * kFeatureDim);
    nn::Tensor compact = ae.encode(batch);
    for (size_t i = 0; i < covered.size(); ++i)
        std::copy_n(compact.data() + int64_t(i) * kCompactDim, kCompactDim,
                    out.data() + covered[i] * size_t(kCompactDim));
    return out;
}

void save_feature_view(const std::string& path, const FeatureMap& feat, const MaskStack& masks) {
    json meta = json::array();
    for (const auto& m : masks)
        meta.push_back({{"id", m.id}, {"level", m.level == MaskLevel::Object ? "object" : "part"}});
    std::string meta_s = meta.dump();

    io::BinaryWriter bw(path);
    bw.bytes("QGFSFP01", 8);
    bw.u32(uint32_t(feat.width));
    bw.u32(uint32_t(feat.height));
    bw.u32(uint32_t(feat.dim));
    bw.u32(uint32_t(masks.size()));
    bw.str(meta_s);
    std::vector<float> plane(feat.v.size());
    for (size_t i = 0; i < feat.v.size(); ++i) plane[i] = float(feat.v[i]);
    bw.vec(plane);
    const size_t row_bytes = (size_t(feat.width) + 7) / 8;
    std::vector<uint8_t> packed(row_bytes * size_t(feat.height));
    for (const auto& m : masks) {
        if (m.width != feat.width || m.height != feat.height)
            throw ContractError("save_feature_view: mask shape mismatch");
        std::fill(packed.begin(), packed.end(), 0);
        for (int r = 0; r < m.height; ++r)
            for (int c = 0; c < m.width; ++c)
                if (m.at(r, c)) packed[size_t(r) * row_bytes + size_t(c) / 8] |= uint8_t(1u << (c % 8));
        bw.vec(packed);
    }
    bw.finish();
}

void load_feature_view(const std::string& path, FeatureMap& feat, MaskStack& masks) {
    io::BinaryReader br(path);
    br.verify_checksum();
    char magic[8];
    br.bytes(magic, 8);
    if (std::string(magic, 8) != "QGFSFP01") throw IoError("feature view: bad magic in " + path);
    int w = int(br.u32()), h = int(br.u32()), d = int(br.u32());
    uint32_t n_masks = br.u32();
    std::string meta_s = br.str();
    json meta = json::parse(meta_s);
    if (!meta.is_array() || meta.size() != n_masks)
        throw IoError("feature view: mask metadata mismatch in " + path);

    feat = FeatureMap(w, h, d);
    std::vector<float> plane;
    br.vec(plane, feat.v.size());
    for (size_t i = 0; i < plane.size(); ++i) feat.v[i] = real(plane[i]);

    masks.clear();
    const size_t row_bytes = (size_t(w) + 7) / 8;
    std::vector<uint8_t> packed;
    for (uint32_t i = 0; i < n_masks; ++i) {
        br.vec(packed, row_bytes * size_t(h));
        Mask m;
        m.id = meta[i].at("id").get<int>();
        m.level = meta[i].at("level").get<std::string>() == "object" ? MaskLevel::Object
                                                                     : MaskLevel::Part;
        m.width = w;
        m.height = h;
        m.on.assign(size_t(w) * size_t(h), 0);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (packed[size_t(r) * row_bytes + size_t(c) / 8] & (1u << (c % 8)))
                    m.on[size_t(r) * size_t(w) + size_t(c)] = 1;
        masks.push_back(std::move(m));
    }
}

}  // namespace qgfs::hse
