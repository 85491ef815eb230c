#include "abd/denoiser.hpp"

#include <cmath>

#include "abd/rng.hpp"

namespace abd::unet {

using ad::Tape;
using ad::Var;

void Config::validate() const {
    if (channel_multipliers.empty()) throw DomainError("channel multipliers must be non-empty");
    if (in_bands < 1 || base_width < 1 || h_dim < 1) throw DomainError("invalid denoiser sizes");
    if (time_dim % 2 != 0) throw ShapeError("time embedding dimension must be even");
    for (int level = 0; level < levels(); ++level) {
        const int c = width(level);
        const int g = std::min(groupnorm_groups, c);
        if (c % g != 0) throw DomainError("width not divisible by group count");
    }
}

namespace {

constexpr int kEncW1 = 32;
constexpr int kEncW2 = 64;

int groups_for(const Config& cfg, int channels) { return std::min(cfg.groupnorm_groups, channels); }

Tensor conv_init(int out, int in, Rng& rng) {
    Tensor w = Tensor::zeros({out, in, 3, 3});
    const double std = std::sqrt(2.0 / (in * 9.0));
    for (double& v : w.data) v = rng.normal() * std;
    w.requires_grad = true;
    return w;
}

Tensor fc_init(int in, int out, Rng& rng) {
    Tensor w = Tensor::zeros({in, out});
    const double std = std::sqrt(1.0 / in);
    for (double& v : w.data) v = rng.normal() * std;
    w.requires_grad = true;
    return w;
}

Tensor bias_init(int n) { return Tensor::zeros({n}, true); }

void add_resblock(ParamMap& p, const std::string& prefix, int channels, const Config& cfg, Rng& rng) {
    p[prefix + ".conv1.w"] = conv_init(channels, channels, rng);
    p[prefix + ".conv1.b"] = bias_init(channels);
    p[prefix + ".conv2.w"] = conv_init(channels, channels, rng);
    p[prefix + ".conv2.b"] = bias_init(channels);
    p[prefix + ".temb.w"] = fc_init(cfg.time_dim, channels, rng);
    p[prefix + ".temb.b"] = bias_init(channels);
    if (cfg.use_cam) {
        // zero init: modulation starts as the identity around plain normalization
        p[prefix + ".cam1.w"] = Tensor::zeros({cfg.h_dim, 2 * channels}, true);
        p[prefix + ".cam1.b"] = bias_init(2 * channels);
        p[prefix + ".cam2.w"] = Tensor::zeros({cfg.h_dim, 2 * channels}, true);
        p[prefix + ".cam2.b"] = bias_init(2 * channels);
    }
}

Var dense_row(Tape& t, Var x_1n, Var w, Var b) {
    const int out = t.val(w).dim(1);
    return add(matmul(x_1n, w), reshape(b, {1, out}));
}

// y = x + proj per channel
Var add_channel_bias(Tape& t, Var x, Var proj_c) {
    const int c = t.val(x).dim(0);
    return channel_affine(x, t.constant(Tensor::full({c}, 1.0)), proj_c);
}

struct BlockCtx {
    const Config& cfg;
    const VarMap& p;
    Var temb; // [1, time_dim]
    Var h;    // [1, h_dim]
};

Var at(const VarMap& p, const std::string& key) {
    auto it = p.find(key);
    if (it == p.end()) throw StateError("missing parameter " + key);
    return it->second;
}

Var maybe_cam(BlockCtx& ctx, Var f, const std::string& site) {
    if (!ctx.cfg.use_cam) return f;
    return cam_modulate(f, ctx.h, at(ctx.p, site + ".w"), at(ctx.p, site + ".b"));
}

Var resblock(Tape& t, BlockCtx& ctx, Var x, const std::string& prefix) {
    const int c = t.val(x).dim(0);
    const int g = groups_for(ctx.cfg, c);

    Var f = groupnorm(x, g);
    f = maybe_cam(ctx, f, prefix + ".cam1");
    f = silu(f);
    f = conv3x3(f, at(ctx.p, prefix + ".conv1.w"), at(ctx.p, prefix + ".conv1.b"));

    Var proj = dense_row(t, ctx.temb, at(ctx.p, prefix + ".temb.w"), at(ctx.p, prefix + ".temb.b"));
    f = add_channel_bias(t, f, reshape(proj, {c}));

    f = groupnorm(f, g);
    f = maybe_cam(ctx, f, prefix + ".cam2");
    f = silu(f);
    f = conv3x3(f, at(ctx.p, prefix + ".conv2.w"), at(ctx.p, prefix + ".conv2.b"));
    return add(x, f);
}

} // namespace

ParamMap init_params(const Config& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = Rng::derive(seed, 0xde01);
    ParamMap p;

    p["enc.conv1.w"] = conv_init(kEncW1, 2 * cfg.in_bands, rng);
    p["enc.conv1.b"] = bias_init(kEncW1);
    p["enc.conv2.w"] = conv_init(kEncW2, kEncW1, rng);
    p["enc.conv2.b"] = bias_init(kEncW2);
    p["enc.fc.w"] = fc_init(kEncW2, cfg.h_dim, rng);
    p["enc.fc.b"] = bias_init(cfg.h_dim);

    p["temb.fc1.w"] = fc_init(cfg.time_dim, cfg.time_dim, rng);
    p["temb.fc1.b"] = bias_init(cfg.time_dim);
    p["temb.fc2.w"] = fc_init(cfg.time_dim, cfg.time_dim, rng);
    p["temb.fc2.b"] = bias_init(cfg.time_dim);

    // the state and the sparse observation pair enter together; the pooled
    // condition vector additionally modulates every block
    p["in.w"] = conv_init(cfg.width(0), 3 * cfg.in_bands, rng);
    p["in.b"] = bias_init(cfg.width(0));

    for (int level = 0; level < cfg.levels(); ++level) {
        if (level > 0) {
            p["down" + std::to_string(level) + ".w"] = conv_init(cfg.width(level), cfg.width(level - 1), rng);
            p["down" + std::to_string(level) + ".b"] = bias_init(cfg.width(level));
        }
        for (int r = 0; r < 2; ++r)
            add_resblock(p, "d" + std::to_string(level) + ".r" + std::to_string(r), cfg.width(level), cfg, rng);
    }
    for (int level = cfg.levels() - 2; level >= 0; --level) {
        p["fuse" + std::to_string(level) + ".w"] = conv_init(cfg.width(level), cfg.width(level) + cfg.width(level + 1), rng);
        p["fuse" + std::to_string(level) + ".b"] = bias_init(cfg.width(level));
        for (int r = 0; r < 2; ++r)
            add_resblock(p, "u" + std::to_string(level) + ".r" + std::to_string(r), cfg.width(level), cfg, rng);
    }

    p["out.w"] = Tensor::zeros({cfg.in_bands, cfg.width(0), 3, 3}, true); // zero-init output head
    p["out.b"] = bias_init(cfg.in_bands);
    return p;
}

VarMap lift(Tape& tape, const ParamMap& params, bool requires_grad) {
    VarMap out;
    for (const auto& [name, tensor] : params) {
        Tensor t = tensor;
        t.requires_grad = requires_grad;
        out.emplace(name, tape.leaf(std::move(t)));
    }
    return out;
}

Tensor time_embed(int t, int dim) {
    if (dim % 2 != 0) throw ShapeError("time embedding dimension must be even");
    if (t < 0) throw DomainError("negative timestep");
    Tensor e = Tensor::zeros({1, dim});
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        e.data[static_cast<size_t>(2 * i)] = std::sin(t * freq);
        e.data[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return e;
}

Var encode_condition(Tape& tape, const VarMap& params, const Tensor& c_chw, const Tensor& m_chw,
                     const Config& /*cfg*/) {
    if (!same_shape(c_chw, m_chw) || c_chw.rank() != 3) throw ShapeError("condition pair must be matching [B,H,W]");
    Var cm = concat(tape.constant(c_chw), tape.constant(m_chw));
    Var f = silu(conv3x3(cm, at(params, "enc.conv1.w"), at(params, "enc.conv1.b")));
    f = avgpool2(f);
    f = silu(conv3x3(f, at(params, "enc.conv2.w"), at(params, "enc.conv2.b")));
    const Tensor& fv = tape.val(f);
    const int spatial = fv.dim(1) * fv.dim(2);
    Var pooled = matmul(reshape(f, {kEncW2, spatial}),
                        tape.constant(Tensor::full({spatial, 1}, 1.0 / spatial))); // global average
    return dense_row(tape, reshape(pooled, {1, kEncW2}), at(params, "enc.fc.w"), at(params, "enc.fc.b"));
}

Var cam_modulate(Var features, Var h, Var site_w, Var site_b) {
    Tape& t = *features.tape;
    const int c = t.val(features).dim(0);
    if (t.val(site_w).dim(1) != 2 * c) throw ShapeError("modulation site width does not match channels");
    Var gb = reshape(dense_row(t, h, site_w, site_b), {2 * c});
    Var gamma = scale_shift(slice(gb, 0, c), 1.0, 1.0); // 1 + dgamma
    Var beta = slice(gb, c, c);
    return channel_affine(features, gamma, beta);
}

Var predict_noise(Tape& tape, const VarMap& params, Var x_t, int t, const Tensor& c_chw,
                  const Tensor& m_chw, const Config& cfg) {
    cfg.validate();
    const Tensor& xv = tape.val(x_t);
    if (xv.rank() != 3 || xv.dim(0) != cfg.in_bands) throw ShapeError("x_t must be [B,H,W] with configured bands");

    Var temb = tape.constant(time_embed(t, cfg.time_dim));
    temb = dense_row(tape, temb, at(params, "temb.fc1.w"), at(params, "temb.fc1.b"));
    temb = silu(temb);
    temb = dense_row(tape, temb, at(params, "temb.fc2.w"), at(params, "temb.fc2.b"));

    BlockCtx ctx{cfg, params, temb, {}};
    if (cfg.use_cam) ctx.h = encode_condition(tape, params, c_chw, m_chw, cfg);

    Var stacked = concat(concat(x_t, tape.constant(c_chw)), tape.constant(m_chw));
    Var f = conv3x3(stacked, at(params, "in.w"), at(params, "in.b"));
    std::vector<Var> skips;
    for (int level = 0; level < cfg.levels(); ++level) {
        if (level > 0) {
            f = avgpool2(f);
            f = conv3x3(f, at(params, "down" + std::to_string(level) + ".w"),
                        at(params, "down" + std::to_string(level) + ".b"));
        }
        for (int r = 0; r < 2; ++r)
            f = resblock(tape, ctx, f, "d" + std::to_string(level) + ".r" + std::to_string(r));
        if (level + 1 < cfg.levels()) skips.push_back(f);
    }
    for (int level = cfg.levels() - 2; level >= 0; --level) {
        f = upsample_nearest2(f);
        f = concat(skips[static_cast<size_t>(level)], f);
        f = conv3x3(f, at(params, "fuse" + std::to_string(level) + ".w"),
                    at(params, "fuse" + std::to_string(level) + ".b"));
        for (int r = 0; r < 2; ++r)
            f = resblock(tape, ctx, f, "u" + std::to_string(level) + ".r" + std::to_string(r));
    }
    Var o = groupnorm(f, groups_for(cfg, cfg.width(0)));
    o = silu(o);
    return conv3x3(o, at(params, "out.w"), at(params, "out.b"));
}

Tensor predict_noise_value(const Tensor& x_t, int t, const srf::ConditionPair& pair, const ParamMap& params,
                           const Config& cfg) {
    Tape tape;
    VarMap vars = lift(tape, params, false);
    Var out = predict_noise(tape, vars, tape.constant(x_t), t, condition_c_chw(pair), condition_m_chw(pair), cfg);
    return tape.val(out);
}

namespace {

Tensor pair_field_chw(const std::vector<double>& field, int h, int w, int b) {
    Tensor t = Tensor::zeros({b, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int band = 0; band < b; ++band)
                t.data[(static_cast<size_t>(band) * h + y) * w + x] =
                    field[(static_cast<size_t>(y) * w + x) * b + band];
    return t;
}

} // namespace

Tensor condition_c_chw(const srf::ConditionPair& pair) { return pair_field_chw(pair.c, pair.h, pair.w, pair.b); }
Tensor condition_m_chw(const srf::ConditionPair& pair) { return pair_field_chw(pair.m, pair.h, pair.w, pair.b); }

} // namespace abd::unet
