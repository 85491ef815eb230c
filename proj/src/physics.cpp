#include "abd/physics.hpp"

#include <algorithm>
#include <cmath>

#include "abd/emulator.hpp"

namespace abd::phys {

using ad::Var;

int band_select(const std::vector<double>& wavelengths, double target_nm) {
    return scene::nearest_band(wavelengths, target_nm);
}

IndexBands resolve_index(IndexKind kind, const std::vector<double>& wavelengths) {
    IndexBands b{};
    switch (kind) {
        case IndexKind::kNdvi:
            b.plus = band_select(wavelengths, kNirNm);
            b.minus = band_select(wavelengths, kRedNm);
            break;
        case IndexKind::kNdwi:
            b.plus = band_select(wavelengths, kGreenNm);
            b.minus = band_select(wavelengths, kNirNm);
            break;
    }
    if (b.plus == b.minus) throw DomainError("index bands resolve to the same wavelength slot");
    return b;
}

std::vector<double> spectral_index(const scene::HyperCube& physical, IndexKind kind) {
    if (physical.domain != scene::Domain::kPhysical) throw DomainError("spectral_index expects physical domain");
    const IndexBands ib = resolve_index(kind, physical.wavelengths);
    std::vector<double> map(static_cast<size_t>(physical.h) * physical.w);
    for (int y = 0; y < physical.h; ++y)
        for (int x = 0; x < physical.w; ++x) {
            const double p = physical.at(y, x, ib.plus);
            const double q = physical.at(y, x, ib.minus);
            map[static_cast<size_t>(y) * physical.w + x] = (p - q + kEpsStab) / (p + q + kEpsStab);
        }
    return map;
}

Var spectral_index(Var x, IndexKind kind, const std::vector<double>& wavelengths) {
    if (x.tape->val(x).rank() != 3) throw ShapeError("spectral_index expects [B,H,W]");
    const int h = x.tape->val(x).dim(1);
    const int w = x.tape->val(x).dim(2);
    const IndexBands ib = resolve_index(kind, wavelengths);
    Var p = slice(x, ib.plus, 1);
    Var q = slice(x, ib.minus, 1);
    Var num = scale_shift(sub(p, q), 1.0, kEpsStab);
    Var den = scale_shift(add(p, q), 1.0, kEpsStab);
    return reshape(div(num, den), {h, w});
}

// ---- correlation ------------------------------------------------------------

namespace {

// shared matrix pipeline; returns the raw guarded correlation
Var corr_impl(Var x) {
    const Tensor& tx = x.tape->val(x);
    if (tx.rank() < 2) throw ShapeError("corr_matrix expects at least rank 2");
    const int b = tx.dim(0);
    const int64_t n64 = tx.size() / b;
    if (n64 < 2) throw ShapeError("corr_matrix needs at least 2 spatial samples");
    const int n = static_cast<int>(n64);
    ad::Tape& t = *x.tape;

    Var flat = reshape(x, {b, n});
    Var avg_w = t.constant(Tensor::full({n, 1}, 1.0 / n));
    Var ones_row = t.constant(Tensor::full({1, n}, 1.0));
    Var mean = matmul(flat, avg_w);                       // [B,1]
    Var centered = sub(flat, matmul(mean, ones_row));     // [B,N]
    Var cov = scale_shift(matmul(centered, transpose(centered)), 1.0 / n, 0.0); // [B,B]
    Var sd = vsqrt(scale_shift(diag(cov), 1.0, 1e-8));    // variance guard in the normalizer
    Var denom = matmul(reshape(sd, {b, 1}), reshape(sd, {1, b}));
    return div(cov, denom);
}

} // namespace

Var corr_matrix(Var x) { return corr_impl(x); }

Tensor corr_matrix_report(const Tensor& chw) {
    ad::Tape t;
    Tensor raw = t.val(corr_impl(t.constant(chw)));
    const int b = raw.dim(0);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
            double& v = raw.data[static_cast<size_t>(i) * b + j];
            v = i == j ? 1.0 : std::clamp(v, -1.0, 1.0);
        }
    return raw;
}

void SpectralPrior::validate() const {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("prior must be square");
    const int b = s.dim(0);
    for (int i = 0; i < b; ++i) {
        if (std::abs(s.data[static_cast<size_t>(i) * b + i] - 1.0) > 1e-9)
            throw DomainError("prior diagonal must be 1");
        for (int j = 0; j < b; ++j) {
            const double v = s.data[static_cast<size_t>(i) * b + j];
            if (v < -1.0 || v > 1.0) throw DomainError("prior entries must lie in [-1,1]");
            if (std::abs(v - s.data[static_cast<size_t>(j) * b + i]) > 1e-9)
                throw DomainError("prior must be symmetric");
        }
    }
}

SpectralPrior estimate_prior(const std::vector<scene::HyperCube>& scenes) {
    if (scenes.empty()) throw DomainError("prior estimation needs at least one scene");
    const int b = scenes.front().b;
    Tensor acc = Tensor::zeros({b, b});
    for (const auto& sc : scenes) {
        const Tensor c = corr_matrix_report(scene::cube_to_chw(sc));
        for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += c.data[i];
    }
    for (double& v : acc.data) v /= static_cast<double>(scenes.size());
    // re-symmetrize and pin the diagonal so the prior invariants hold exactly
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < i; ++j) {
            const double m = 0.5 * (acc.data[static_cast<size_t>(i) * b + j] + acc.data[static_cast<size_t>(j) * b + i]);
            acc.data[static_cast<size_t>(i) * b + j] = m;
            acc.data[static_cast<size_t>(j) * b + i] = m;
        }
    for (int i = 0; i < b; ++i) acc.data[static_cast<size_t>(i) * b + i] = 1.0;
    SpectralPrior prior{std::move(acc)};
    prior.validate();
    return prior;
}

Var loss_pixel(Var x, const Tensor& prior_s) {
    Var c = corr_matrix(x);
    const Tensor& cv = x.tape->val(c);
    if (!same_shape(cv, prior_s)) throw ShapeError("prior size does not match band count");
    Var d = sub(c, x.tape->constant(prior_s));
    return vsum(mul(d, d));
}

// ---- kernel density ----------------------------------------------------------

std::vector<double> kde_grid(const KdeConfig& cfg) {
    std::vector<double> g(static_cast<size_t>(cfg.grid_points));
    for (int i = 0; i < cfg.grid_points; ++i)
        g[static_cast<size_t>(i)] = cfg.grid_lo + (cfg.grid_hi - cfg.grid_lo) * i / (cfg.grid_points - 1);
    return g;
}

double silverman_bandwidth(const std::vector<double>& samples, double floor_at) {
    const size_t n = samples.size();
    if (n == 0) throw DomainError("bandwidth of empty sample set");
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    return std::max(floor_at, 1.06 * sd * std::pow(static_cast<double>(n), -0.2));
}

std::vector<double> kde(const std::vector<double>& samples, const std::vector<double>& grid, double bandwidth) {
    if (samples.empty()) throw DomainError("kde needs at least one sample");
    if (bandwidth <= 0.0) throw DomainError("kde bandwidth must be positive");
    std::vector<double> density(grid.size(), 0.0);
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for (size_t j = 0; j < grid.size(); ++j)
        for (double s : samples) {
            const double d = grid[j] - s;
            density[j] += std::exp(-d * d * inv2h2);
        }
    double total = 0.0;
    for (double& v : density) {
        v += 1e-8; // floor before normalization
        total += v;
    }
    for (double& v : density) v /= total;
    return density;
}

Var kde(Var samples, const std::vector<double>& grid, double bandwidth) {
    const Tensor& ts = samples.tape->val(samples);
    const int n = static_cast<int>(ts.size());
    if (n < 1) throw DomainError("kde needs at least one sample");
    if (bandwidth <= 0.0) throw DomainError("kde bandwidth must be positive");
    const int g = static_cast<int>(grid.size());
    ad::Tape& t = *samples.tape;

    Var grid_col = t.constant(Tensor({g, 1}, std::vector<double>(grid.begin(), grid.end())));
    Var ones_row = t.constant(Tensor::full({1, n}, 1.0));
    Var ones_col = t.constant(Tensor::full({g, 1}, 1.0));
    Var gm = matmul(grid_col, ones_row);             // [G,N]
    Var sm = matmul(ones_col, reshape(samples, {1, n}));
    Var d = sub(gm, sm);
    Var e = vexp(scale_shift(mul(d, d), -1.0 / (2.0 * bandwidth * bandwidth), 0.0));
    Var rows = reshape(matmul(e, t.constant(Tensor::full({n, 1}, 1.0))), {g});
    Var floored = scale_shift(rows, 1.0, 1e-8);
    Var inv_total = vpow(vsum(floored), -1.0);
    return smul(floored, inv_total);
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("kl_div length mismatch");
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0 || q[i] <= 0.0) throw DomainError("kl_div inputs must be strictly positive");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
        throw DomainError("kl_div inputs must be normalized");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    return kl;
}

Var kl_div_const_p(const std::vector<double>& p, Var q) {
    const Tensor& tq = q.tape->val(q);
    if (tq.size() != static_cast<int64_t>(p.size())) throw ShapeError("kl_div length mismatch");
    double entropy = 0.0; // sum p log p, the q-independent part
    for (double v : p) {
        if (v <= 0.0) throw DomainError("kl_div reference must be strictly positive");
        entropy += v * std::log(v);
    }
    Var pc = q.tape->constant(Tensor(tq.shape, std::vector<double>(p.begin(), p.end())));
    Var cross = vsum(mul(pc, vlog(q)));
    return scale_shift(cross, -1.0, entropy);
}

// ---- composite losses ------------------------------------------------------------

Var loss_region(const std::vector<scene::HyperCube>& real_patches, const std::vector<Var>& gen_patches_chw,
                const std::vector<IndexKind>& kinds, const KdeConfig& cfg) {
    if (real_patches.size() != gen_patches_chw.size()) throw ShapeError("patch counts differ");
    if (real_patches.empty()) throw DomainError("loss_region needs at least one patch pair");
    if (kinds.empty()) throw DomainError("loss_region needs at least one index kind");
    const std::vector<double> grid = kde_grid(cfg);

    ad::Tape& t = *gen_patches_chw.front().tape;
    Var total = t.constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < real_patches.size(); ++i) {
        const scene::HyperCube& real = real_patches[i];
        const Tensor& gv = t.val(gen_patches_chw[i]);
        if (gv.rank() != 3 || gv.dim(0) != real.b || gv.dim(1) != real.h || gv.dim(2) != real.w)
            throw ShapeError("generated patch shape differs from its reference");
        for (IndexKind kind : kinds) {
            const std::vector<double> real_samples = spectral_index(real, kind);
            // one smoothing scale for both densities, taken from the reference side
            const double h = silverman_bandwidth(real_samples, cfg.bandwidth_floor);
            const std::vector<double> p = kde(real_samples, grid, h);
            Var gen_map = spectral_index(gen_patches_chw[i], kind, real.wavelengths);
            Var q = kde(reshape(gen_map, {real.h * real.w}), grid, h);
            total = add(total, kl_div_const_p(p, q));
        }
    }
    const double count = static_cast<double>(real_patches.size() * kinds.size());
    return scale_shift(total, 1.0 / count, 0.0);
}

Var loss_image(Var xhat_phys_chw, const Tensor& x0_phys_chw, const emu::Emulator& emulator) {
    const Tensor& tx = xhat_phys_chw.tape->val(xhat_phys_chw);
    if (!same_shape(tx, x0_phys_chw)) throw ShapeError("loss_image operand shapes differ");
    if (tx.rank() != 3) throw ShapeError("loss_image expects [B,H,W]");
    const int b = tx.dim(0);
    const int n = static_cast<int>(tx.size() / b);
    ad::Tape& t = *xhat_phys_chw.tape;

    Var spectra = transpose(reshape(xhat_phys_chw, {b, n})); // [N,B] pixel spectra
    Var rt = emu::round_trip(spectra, emulator);

    ad::Tape scratch;
    Tensor x0_pix = scratch.val(transpose(reshape(scratch.constant(x0_phys_chw), {b, n})));
    Tensor target = emu::round_trip_value(x0_pix, emulator);

    Var d = sub(rt, t.constant(target));
    return vmean(mul(d, d));
}

PhysTarget build_phys_target(const srf::ConditionPair& pair, const Tensor& prior_s,
                             const std::vector<IndexKind>& kinds, const std::vector<double>& wavelengths) {
    PhysTarget target;
    target.h = pair.h;
    target.w = pair.w;
    target.b = pair.b;
    target.wavelengths = wavelengths;
    target.prior_s = prior_s;
    for (IndexKind kind : kinds) {
        const IndexBands ib = resolve_index(kind, wavelengths);
        IndexTarget it;
        it.kind = kind;
        it.map.assign(static_cast<size_t>(pair.h) * pair.w, 0.0);
        it.valid.assign(it.map.size(), 0.0);
        for (int y = 0; y < pair.h; ++y)
            for (int x = 0; x < pair.w; ++x) {
                const size_t idx = static_cast<size_t>(y) * pair.w + x;
                if (pair.mv(y, x, ib.plus) > 0.0 && pair.mv(y, x, ib.minus) > 0.0) {
                    const double p = 0.5 * (pair.cv(y, x, ib.plus) + 1.0); // denormalized observation
                    const double q = 0.5 * (pair.cv(y, x, ib.minus) + 1.0);
                    it.map[idx] = (p - q + kEpsStab) / (p + q + kEpsStab);
                    it.valid[idx] = 1.0;
                    ++it.valid_count;
                }
            }
        target.index_targets.push_back(std::move(it));
    }
    return target;
}

Var loss_phy(Var x0hat_norm_chw, const PhysTarget& target) {
    const Tensor& tx = x0hat_norm_chw.tape->val(x0hat_norm_chw);
    if (tx.rank() != 3 || tx.dim(0) != target.b || tx.dim(1) != target.h || tx.dim(2) != target.w)
        throw ShapeError("loss_phy estimate shape differs from target");
    ad::Tape& t = *x0hat_norm_chw.tape;

    Var xphys = scale_shift(x0hat_norm_chw, 0.5, 0.5);
    Var total = t.constant(Tensor::scalar(0.0));

    if (target.weights.index != 0.0) {
        for (const IndexTarget& it : target.index_targets) {
            if (it.valid_count == 0) continue; // that index has no observable pixels
            Var idx = spectral_index(xphys, it.kind, target.wavelengths);
            Var d = sub(idx, t.constant(Tensor({target.h, target.w}, it.map)));
            Var masked = mul(mul(d, d), t.constant(Tensor({target.h, target.w}, it.valid)));
            total = add(total, scale_shift(vsum(masked), target.weights.index / it.valid_count, 0.0));
        }
    }
    if (target.weights.prior != 0.0)
        total = add(total, scale_shift(loss_pixel(x0hat_norm_chw, target.prior_s), target.weights.prior, 0.0));
    if (target.weights.bounds != 0.0) {
        Var over = relu(scale_shift(xphys, 1.0, -target.hi));
        Var under = relu(scale_shift(xphys, -1.0, target.lo));
        Var hinge = vmean(add(mul(over, over), mul(under, under)));
        total = add(total, scale_shift(hinge, target.weights.bounds, 0.0));
    }
    return total;
}

double loss_phy_value(const Tensor& x0hat_norm_chw, const PhysTarget& target) {
    ad::Tape t;
    return t.val(loss_phy(t.constant(x0hat_norm_chw), target)).data[0];
}

} // namespace abd::phys
