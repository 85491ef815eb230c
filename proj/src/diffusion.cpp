#include "abd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace abd::diff {

using ad::Tape;
using ad::Var;

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw DomainError("schedule needs at least 2 steps");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw DomainError("expected 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<size_t>(steps));
    s.alpha.resize(static_cast<size_t>(steps));
    s.alpha_bar.resize(static_cast<size_t>(steps));
    double running = 1.0;
    for (int t = 0; t < steps; ++t) {
        s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * t / (steps - 1);
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        running *= s.alpha[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = running;
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched) {
    if (!same_shape(x0, noise)) throw ShapeError("noise shape differs from signal");
    if (t < 0 || t >= sched.steps) throw DomainError("timestep out of range");
    const double sa = std::sqrt(sched.ab(t));
    const double sn = std::sqrt(1.0 - sched.ab(t));
    Tensor out = Tensor::zeros(x0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = sa * x0.data[i] + sn * noise.data[i];
    return out;
}

Tensor tweedie_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    if (!same_shape(x_t, eps_hat)) throw ShapeError("noise estimate shape differs from state");
    if (t < 0 || t >= sched.steps) throw DomainError("timestep out of range");
    const double sa = std::sqrt(sched.ab(t));
    const double sn = std::sqrt(1.0 - sched.ab(t));
    Tensor out = Tensor::zeros(x_t.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (x_t.data[i] - sn * eps_hat.data[i]) / sa;
    return out;
}

// ---- training ---------------------------------------------------------------

Trainer::Trainer(Model& model, TrainConfig cfg, std::vector<srf::SensorSrf> library)
    : model_(model),
      cfg_(cfg),
      library_(std::move(library)),
      adam_(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay),
      rng_(Rng::derive(cfg.seed, 0x7247)) {
    if (!model_.emulator.trained) throw StateError("train the emulator before the denoiser");
    if (model_.prior_s.size() == 0) throw StateError("prior correlation matrix not set");
    if (library_.empty()) throw DomainError("trainer needs a sensor library");
}

StepStats Trainer::step(const std::vector<scene::HyperCube>& patches) {
    if (patches.empty()) throw DomainError("empty training set");
    const std::vector<phys::IndexKind> kinds{phys::IndexKind::kNdvi, phys::IndexKind::kNdwi};

    Tape tape;
    unet::VarMap params = unet::lift(tape, model_.params, true);

    Var total{};
    Var zero = tape.constant(Tensor::scalar(0.0));
    Var acc_mcd = zero, acc_px = zero, acc_reg = zero, acc_img = zero;

    for (int bi = 0; bi < cfg_.batch; ++bi) {
        const scene::HyperCube& patch = patches[rng_.below(patches.size())];
        if (patch.domain != scene::Domain::kNormalized) throw DomainError("training patches must be normalized");

        const int t = static_cast<int>(rng_.below(static_cast<uint64_t>(model_.schedule.steps)));
        Tensor x0 = scene::cube_to_chw(patch);
        Tensor noise = Tensor::zeros(x0.shape);
        for (double& v : noise.data) v = rng_.normal();
        const double p_drop = rng_.uniform(cfg_.p_drop_lo, cfg_.p_drop_hi);
        const srf::ConditionPair pair = srf::dsm_mask(patch, library_, p_drop, cfg_.mask_mode, rng_.next_u64());

        Var x_t = tape.constant(forward_diffuse(x0, t, noise, model_.schedule));
        Var eps_hat = unet::predict_noise(tape, params, x_t, t, unet::condition_c_chw(pair),
                                          unet::condition_m_chw(pair), model_.cfg);
        Var d = sub(eps_hat, tape.constant(noise));
        acc_mcd = add(acc_mcd, vmean(mul(d, d)));

        const double ab = model_.schedule.ab(t);
        const bool any_mspl = cfg_.lambda_px != 0.0 || cfg_.lambda_reg != 0.0 || cfg_.lambda_img != 0.0;
        // a clean estimate reconstructed from mostly-noise states carries no
        // physical signal; below the signal gate its losses only fight the
        // noise-prediction objective
        if (any_mspl && ab >= cfg_.mspl_alpha_min) {
            // clean estimate with gradients flowing through the noise prediction
            const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
            Var x0hat = scale_shift(sub(x_t, scale_shift(eps_hat, sn, 0.0)), 1.0 / sa, 0.0);
            if (cfg_.lambda_px != 0.0)
                acc_px = add(acc_px, scale_shift(phys::loss_pixel(x0hat, model_.prior_s), ab * cfg_.lambda_px, 0.0));
            if (cfg_.lambda_reg != 0.0 || cfg_.lambda_img != 0.0) {
                Var xphys = scale_shift(x0hat, 0.5, 0.5);
                if (cfg_.lambda_reg != 0.0) {
                    Var lreg = phys::loss_region({scene::denormalize(patch)}, {xphys}, kinds);
                    acc_reg = add(acc_reg, scale_shift(lreg, ab * cfg_.lambda_reg, 0.0));
                }
                if (cfg_.lambda_img != 0.0) {
                    Tensor x0_phys = scene::cube_to_chw(scene::denormalize(patch));
                    Var limg = phys::loss_image(xphys, x0_phys, model_.emulator);
                    acc_img = add(acc_img, scale_shift(limg, ab * cfg_.lambda_img, 0.0));
                }
            }
        }
    }

    const double inv_batch = 1.0 / cfg_.batch;
    acc_mcd = scale_shift(acc_mcd, inv_batch, 0.0);
    acc_px = scale_shift(acc_px, inv_batch, 0.0);
    acc_reg = scale_shift(acc_reg, inv_batch, 0.0);
    acc_img = scale_shift(acc_img, inv_batch, 0.0);
    total = add(add(acc_mcd, acc_px), add(acc_reg, acc_img));

    StepStats stats;
    stats.l_mcd = tape.val(acc_mcd).data[0];
    stats.l_pixel = tape.val(acc_px).data[0];
    stats.l_region = tape.val(acc_reg).data[0];
    stats.l_image = tape.val(acc_img).data[0];
    stats.total = tape.val(total).data[0];
    stats.lr = opt::lr_schedule(cfg_.lr, step_, cfg_.steps, cfg_.warmup_frac);
    if (!std::isfinite(stats.total))
        throw NumericError("training loss diverged at step " + std::to_string(step_));

    auto grads = tape.backward(total);
    std::vector<Tensor*> plist;
    std::vector<Tensor> gstore;
    gstore.reserve(model_.params.size());
    for (auto& [name, tensor] : model_.params) {
        plist.push_back(&tensor);
        gstore.push_back(tape.grad_of(grads, params.at(name)));
    }
    if (cfg_.clip_norm > 0.0) {
        // keeps the occasional huge physical-loss gradient from wrecking the
        // noise-prediction objective
        double sq = 0.0;
        for (const Tensor& g : gstore)
            for (double v : g.data) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) {
            const double scale = cfg_.clip_norm / norm;
            for (Tensor& g : gstore)
                for (double& v : g.data) v *= scale;
        }
    }
    std::vector<const Tensor*> gptrs;
    for (const Tensor& g : gstore) gptrs.push_back(&g);
    adam_.step(plist, gptrs, stats.lr);
    ++step_;
    return stats;
}

// ---- guided sampling ----------------------------------------------------------

Tensor pgs_inject(const Tensor& eps_hat, const Tensor& x_t, int t, const phys::PhysTarget& target,
                  const NoiseSchedule& sched, const GuidanceConfig& guidance) {
    if (guidance.s < 0.0) throw DomainError("guidance scale must be non-negative");
    if (guidance.s == 0.0) return eps_hat;

    const double sa = std::sqrt(sched.ab(t));
    const double sn = std::sqrt(1.0 - sched.ab(t));

    Tape tape;
    Tensor x0hat = tweedie_x0(x_t, eps_hat, t, sched);
    x0hat.requires_grad = true;
    Var x0v = tape.leaf(std::move(x0hat));
    phys::PhysTarget weighted = target;
    weighted.weights = guidance.terms;
    Var loss = phys::loss_phy(x0v, weighted);
    auto grads = tape.backward(loss);
    const Tensor g0 = tape.grad_of(grads, x0v);

    Tensor out = eps_hat;
    const double scale = guidance.s * sn / sa; // chain factor of the clean estimate
    for (size_t i = 0; i < out.data.size(); ++i) {
        // sign makes the corrected clean estimate a descent step on the loss
        out.data[i] += scale * g0.data[i];
        if (!std::isfinite(out.data[i])) throw NumericError("guidance gradient is non-finite");
    }
    return out;
}

namespace {

std::vector<int> ddim_timesteps(int total, int steps) {
    if (steps < 1 || steps > total) throw DomainError("sampler steps must lie in [1, T]");
    std::vector<int> seq;
    if (steps == 1) {
        seq.push_back(total - 1);
        return seq;
    }
    for (int k = 0; k < steps; ++k)
        seq.push_back(static_cast<int>(std::lround(static_cast<double>(total - 1) * k / (steps - 1))));
    seq.erase(std::unique(seq.begin(), seq.end()), seq.end());
    return seq; // ascending, contains 0 and total-1
}

// guidance gradient taken through the network as well (optional route)
Tensor full_backprop_grad(const Model& model, const Tensor& x_t, int t, const srf::ConditionPair& pair,
                          const phys::PhysTarget& target) {
    Tape tape;
    unet::VarMap params = unet::lift(tape, model.params, false);
    Tensor xin = x_t;
    xin.requires_grad = true;
    Var xv = tape.leaf(std::move(xin));
    Var eps = unet::predict_noise(tape, params, xv, t, unet::condition_c_chw(pair),
                                  unet::condition_m_chw(pair), model.cfg);
    const double sa = std::sqrt(model.schedule.ab(t));
    const double sn = std::sqrt(1.0 - model.schedule.ab(t));
    Var x0hat = scale_shift(sub(xv, scale_shift(eps, sn, 0.0)), 1.0 / sa, 0.0);
    Var loss = phys::loss_phy(x0hat, target);
    auto grads = tape.backward(loss);
    return tape.grad_of(grads, xv);
}

} // namespace

namespace {

// shared reverse loop over a given (ascending) timestep subsequence
Tensor reverse_loop(const Model& model, const srf::ConditionPair& pair, Tensor x,
                    const std::vector<int>& seq, const GuidanceConfig& guidance) {
    const std::vector<phys::IndexKind> kinds{phys::IndexKind::kNdvi, phys::IndexKind::kNdwi};
    phys::PhysTarget target = phys::build_phys_target(pair, model.prior_s, kinds, model.wavelengths);
    target.weights = guidance.terms;

    for (size_t i = seq.size(); i-- > 0;) {
        const int t = seq[i];
        Tensor eps = unet::predict_noise_value(x, t, pair, model.params, model.cfg);
        if (guidance.enabled && guidance.s > 0.0) {
            if (guidance.route == GradRoute::kTweedieOnly) {
                eps = pgs_inject(eps, x, t, target, model.schedule, guidance);
            } else {
                const Tensor g = full_backprop_grad(model, x, t, pair, target);
                const double sn = std::sqrt(1.0 - model.schedule.ab(t));
                for (size_t k = 0; k < eps.data.size(); ++k) {
                    eps.data[k] += guidance.s * sn * g.data[k];
                    if (!std::isfinite(eps.data[k])) throw NumericError("guidance gradient is non-finite");
                }
            }
        }
        Tensor x0hat = tweedie_x0(x, eps, t, model.schedule);
        // Clip-denoised with data consistency: the clean estimate stays in the
        // signal range and its observed entries are pinned to the condition.
        // The update then uses the noise consistent with that corrected
        // estimate, otherwise the deterministic trajectory drifts off-manifold.
        for (double& v : x0hat.data) v = std::clamp(v, -1.0, 1.0);
        restore_observed(pair, x0hat);
        const double sa = std::sqrt(model.schedule.ab(t)), sn = std::sqrt(1.0 - model.schedule.ab(t));
        const double ab_prev = i > 0 ? model.schedule.ab(seq[i - 1]) : 1.0;
        const double sa_p = std::sqrt(ab_prev), sn_p = std::sqrt(1.0 - ab_prev);
        for (size_t k = 0; k < x.data.size(); ++k) {
            const double eps_eff = (x.data[k] - sa * x0hat.data[k]) / sn;
            x.data[k] = sa_p * x0hat.data[k] + sn_p * eps_eff;
        }
    }
    for (double& v : x.data) v = std::clamp(v, -1.0, 1.0);
    return x;
}

} // namespace

Tensor ddim_sample(const Model& model, const srf::ConditionPair& pair, int steps,
                   const GuidanceConfig& guidance, uint64_t seed) {
    const std::vector<int> seq = ddim_timesteps(model.schedule.steps, steps);
    Rng rng = Rng::derive(seed, 0xdd1);
    Tensor x = Tensor::zeros({model.cfg.in_bands, pair.h, pair.w});
    for (double& v : x.data) v = rng.normal();
    return reverse_loop(model, pair, std::move(x), seq, guidance);
}

Tensor ddim_refine(const Model& model, const srf::ConditionPair& pair, const Tensor& init_norm_chw,
                   int t_start, int steps, const GuidanceConfig& guidance, uint64_t seed) {
    if (t_start < 1 || t_start >= model.schedule.steps) throw DomainError("refinement depth out of range");
    if (steps < 2) throw DomainError("refinement needs at least 2 steps");
    Rng rng = Rng::derive(seed, 0xdd1);
    Tensor noise = Tensor::zeros(init_norm_chw.shape);
    for (double& v : noise.data) v = rng.normal();
    Tensor x = forward_diffuse(init_norm_chw, t_start, noise, model.schedule);

    std::vector<int> seq;
    for (int k = 0; k < steps; ++k) {
        const int t = static_cast<int>(std::lround(static_cast<double>(t_start) * k / (steps - 1)));
        if (seq.empty() || seq.back() != t) seq.push_back(t);
    }
    return reverse_loop(model, pair, std::move(x), seq, guidance);
}

void restore_observed(const srf::ConditionPair& pair, Tensor& x_norm_chw) {
    if (x_norm_chw.rank() != 3 || x_norm_chw.dim(0) != pair.b || x_norm_chw.dim(1) != pair.h ||
        x_norm_chw.dim(2) != pair.w)
        throw ShapeError("estimate shape differs from the condition pair");
    for (int y = 0; y < pair.h; ++y)
        for (int x = 0; x < pair.w; ++x)
            for (int band = 0; band < pair.b; ++band)
                if (pair.mv(y, x, band) > 0.0)
                    x_norm_chw.data[(static_cast<size_t>(band) * pair.h + y) * pair.w + x] =
                        pair.cv(y, x, band);
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

void put_u16(std::ofstream& out, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ofstream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ofstream& out, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t get_u16(std::ifstream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw FormatError("checkpoint truncated");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

double get_f64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError("checkpoint truncated");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

using TensorMap = std::map<std::string, Tensor>;

void write_abd1(const TensorMap& tensors, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write("ABD1", 4);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw FormatError("tensor name too long");
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(static_cast<char>(t.rank()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (double v : t.data) put_f64(out, v);
    }
    if (!out) throw FormatError("write failed for " + path);
}

TensorMap read_abd1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ABD1", 4) != 0) throw FormatError("bad checkpoint magic");
    const uint32_t count = get_u32(in);
    TensorMap tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t nlen = get_u16(in);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        if (!in) throw FormatError("checkpoint truncated");
        const int rank = in.get();
        if (rank < 0 || rank > 8 || !in) throw FormatError("checkpoint truncated");
        std::vector<int> shape(static_cast<size_t>(rank));
        for (int& d : shape) d = static_cast<int>(get_u32(in));
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.data) v = get_f64(in);
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

const Tensor& need(const TensorMap& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("checkpoint is missing " + key);
    return it->second;
}

double need_scalar(const TensorMap& m, const std::string& key) { return need(m, key).data.at(0); }

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    TensorMap t;
    for (const auto& [name, tensor] : model.params) t.emplace("denoiser." + name, tensor);

    const emu::Mlp* nets[2] = {&model.emulator.forward_net, &model.emulator.inverse_net};
    const char* net_names[2] = {"fwd", "inv"};
    for (int i = 0; i < 2; ++i) {
        t.emplace(std::string("emulator.") + net_names[i] + ".w0", nets[i]->w0);
        t.emplace(std::string("emulator.") + net_names[i] + ".b0", nets[i]->b0);
        t.emplace(std::string("emulator.") + net_names[i] + ".w1", nets[i]->w1);
        t.emplace(std::string("emulator.") + net_names[i] + ".b1", nets[i]->b1);
        t.emplace(std::string("emulator.") + net_names[i] + ".w2", nets[i]->w2);
        t.emplace(std::string("emulator.") + net_names[i] + ".b2", nets[i]->b2);
    }
    t.emplace("emulator.trained", Tensor::scalar(model.emulator.trained ? 1.0 : 0.0));
    t.emplace("prior.s", model.prior_s);
    t.emplace("cfg.in_bands", Tensor::scalar(model.cfg.in_bands));
    t.emplace("cfg.base_width", Tensor::scalar(model.cfg.base_width));
    std::vector<double> mults(model.cfg.channel_multipliers.begin(), model.cfg.channel_multipliers.end());
    t.emplace("cfg.multipliers", Tensor({static_cast<int>(mults.size())}, mults));
    t.emplace("cfg.groups", Tensor::scalar(model.cfg.groupnorm_groups));
    t.emplace("cfg.h_dim", Tensor::scalar(model.cfg.h_dim));
    t.emplace("cfg.time_dim", Tensor::scalar(model.cfg.time_dim));
    t.emplace("cfg.use_cam", Tensor::scalar(model.cfg.use_cam ? 1.0 : 0.0));
    t.emplace("cfg.schedule_T", Tensor::scalar(model.schedule.steps));
    t.emplace("cfg.beta_start", Tensor::scalar(model.schedule.beta.front()));
    t.emplace("cfg.beta_end", Tensor::scalar(model.schedule.beta.back()));
    t.emplace("cfg.wavelengths", Tensor({static_cast<int>(model.wavelengths.size())},
                                        std::vector<double>(model.wavelengths.begin(), model.wavelengths.end())));
    write_abd1(t, path);
}

Model load_checkpoint(const std::string& path) {
    const TensorMap t = read_abd1(path);
    Model model;
    model.cfg.in_bands = static_cast<int>(need_scalar(t, "cfg.in_bands"));
    model.cfg.base_width = static_cast<int>(need_scalar(t, "cfg.base_width"));
    const Tensor& mults = need(t, "cfg.multipliers");
    model.cfg.channel_multipliers.clear();
    for (double v : mults.data) model.cfg.channel_multipliers.push_back(static_cast<int>(v));
    model.cfg.groupnorm_groups = static_cast<int>(need_scalar(t, "cfg.groups"));
    model.cfg.h_dim = static_cast<int>(need_scalar(t, "cfg.h_dim"));
    model.cfg.time_dim = static_cast<int>(need_scalar(t, "cfg.time_dim"));
    model.cfg.use_cam = need_scalar(t, "cfg.use_cam") != 0.0;
    model.schedule = make_schedule(static_cast<int>(need_scalar(t, "cfg.schedule_T")),
                                   need_scalar(t, "cfg.beta_start"), need_scalar(t, "cfg.beta_end"));
    model.prior_s = need(t, "prior.s");
    const Tensor& wl = need(t, "cfg.wavelengths");
    model.wavelengths.assign(wl.data.begin(), wl.data.end());

    for (const auto& [name, tensor] : t)
        if (name.rfind("denoiser.", 0) == 0) {
            Tensor p = tensor;
            p.requires_grad = true;
            model.params.emplace(name.substr(9), std::move(p));
        }

    emu::Mlp* nets[2] = {&model.emulator.forward_net, &model.emulator.inverse_net};
    const char* net_names[2] = {"fwd", "inv"};
    for (int i = 0; i < 2; ++i) {
        const std::string p = std::string("emulator.") + net_names[i] + ".";
        nets[i]->w0 = need(t, p + "w0");
        nets[i]->b0 = need(t, p + "b0");
        nets[i]->w1 = need(t, p + "w1");
        nets[i]->b1 = need(t, p + "b1");
        nets[i]->w2 = need(t, p + "w2");
        nets[i]->b2 = need(t, p + "b2");
    }
    model.emulator.trained = need_scalar(t, "emulator.trained") != 0.0;
    model.emulator.wavelengths = model.wavelengths;
    return model;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    return h;
}

} // namespace abd::diff
