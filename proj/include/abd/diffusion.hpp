#ifndef ABD_DIFFUSION_HPP
#define ABD_DIFFUSION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "abd/denoiser.hpp"
#include "abd/emulator.hpp"
#include "abd/optim.hpp"
#include "abd/physics.hpp"
#include "abd/rng.hpp"
#include "abd/scene.hpp"
#include "abd/sensor.hpp"

namespace abd::diff {

struct NoiseSchedule {
    int steps = 0;                 // T
    std::vector<double> beta;      // linear from beta_start to beta_end inclusive
    std::vector<double> alpha;     // 1 - beta
    std::vector<double> alpha_bar; // running product, strictly decreasing

    double ab(int t) const { return alpha_bar[static_cast<size_t>(t)]; }
};

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched);
Tensor tweedie_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

enum class GradRoute { kTweedieOnly, kFullBackprop };

struct GuidanceConfig {
    double s = 1.0;
    GradRoute route = GradRoute::kTweedieOnly;
    phys::TermWeights terms;
    bool enabled = true; // false skips the injection entirely (reference sampler)
};

struct TrainConfig {
    double lambda_px = 1.0, lambda_reg = 0.5, lambda_img = 0.2;
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, weight_decay = 1e-4, warmup_frac = 0.1;
    double clip_norm = 1.0;      // global gradient-norm clip; <= 0 disables
    double mspl_alpha_min = 0.9; // physical losses only where alpha_bar exceeds this; 0 applies them everywhere
    int batch = 4;
    int steps = 2000;
    double p_drop_lo = 0.1, p_drop_hi = 0.7;
    srf::MaskMode mask_mode = srf::MaskMode::kPerBand;
    uint64_t seed = 0;
};

// Everything a sampler or evaluator needs; exactly the checkpoint payload.
struct Model {
    unet::Config cfg;
    unet::ParamMap params;
    emu::Emulator emulator;
    Tensor prior_s; // B x B
    NoiseSchedule schedule;
    std::vector<double> wavelengths;
};

struct StepStats {
    double l_mcd = 0.0;
    double l_pixel = 0.0;  // reported as the weighted contribution to the total
    double l_region = 0.0;
    double l_image = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

// Owns the optimizer state and per-step randomness of a training run.
class Trainer {
public:
    Trainer(Model& model, TrainConfig cfg, std::vector<srf::SensorSrf> library);

    // one optimizer step on a batch sampled from `patches` (normalized cubes)
    StepStats step(const std::vector<scene::HyperCube>& patches);

    int steps_done() const { return step_; }

private:
    Model& model_;
    TrainConfig cfg_;
    std::vector<srf::SensorSrf> library_;
    opt::AdamW adam_;
    Rng rng_;
    int step_ = 0;
};

// Eq-style guidance: the physical-loss gradient, taken through the clean
// estimate with the predicted noise held constant, nudges the noise estimate
// so that the corrected clean estimate moves downhill on the physical loss.
Tensor pgs_inject(const Tensor& eps_hat, const Tensor& x_t, int t, const phys::PhysTarget& target,
                  const NoiseSchedule& sched, const GuidanceConfig& guidance);

// Deterministic (eta = 0) DDIM over a uniform timestep subsequence containing
// T-1 and 0; returns the final clean estimate clamped to [-1,1], [B,H,W].
Tensor ddim_sample(const Model& model, const srf::ConditionPair& pair, int steps,
                   const GuidanceConfig& guidance, uint64_t seed);

// Same reverse machinery started from a forward-diffused initial estimate at
// t_start, with the step budget spread uniformly over [0, t_start]. Repair
// uses this with the band-interpolation estimate as the initializer: the
// model then only has to fix what interpolation gets wrong.
Tensor ddim_refine(const Model& model, const srf::ConditionPair& pair, const Tensor& init_norm_chw,
                   int t_start, int steps, const GuidanceConfig& guidance, uint64_t seed);

// Copy the condition's observed entries verbatim into a normalized [B,H,W]
// estimate; repair only ever has to invent the masked entries.
void restore_observed(const srf::ConditionPair& pair, Tensor& x_norm_chw);

// "ABD1" tensor container
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

uint64_t file_hash(const std::string& path);

} // namespace abd::diff

#endif
