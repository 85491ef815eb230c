#ifndef ABD_CONFIG_HPP
#define ABD_CONFIG_HPP

#include <cstdint>
#include <string>

#include "abd/diffusion.hpp"

namespace abd::cfg {

// One experiment description: every field has a default and unknown JSON keys
// are rejected so a typo in a hyperparameter name cannot silently no-op.
struct RunConfig {
    uint64_t seed = 1;

    struct Data {
        std::string dir = "data";
        int scenes = 12;
        int h = 16, w = 16, bands = 12;
        int eval_scenes = 10;
    } data;

    struct Emulator {
        int pairs = 20000;
        int epochs = 120;
        double lr = 1e-3;
        uint64_t seed = 7;
    } emulator;

    unet::Config denoiser;

    struct Schedule {
        int steps = 1000;
        double beta_start = 1e-4;
        double beta_end = 0.02;
    } schedule;

    struct Train {
        int steps = 2000;
        int batch = 4;
        double lr = 1e-4;
        double warmup_frac = 0.1;
        double weight_decay = 1e-4;
        double beta1 = 0.9, beta2 = 0.999;
        double lambda_px = 1.0, lambda_reg = 0.5, lambda_img = 0.2;
        double p_drop_lo = 0.1, p_drop_hi = 0.7;
        double clip_norm = 1.0;
        double mspl_alpha_min = 0.9;
        std::string mask_mode = "per_band"; // or per_element
        int prior_scenes = 32;
        int patch = 16;
        int patch_stride = 16;
        uint64_t seed = 3;
    } train;

    struct Guidance {
        double s = 1.0;
        std::string route = "tweedie"; // or full
        double w_index = 1.0, w_prior = 1.0, w_bounds = 1.0;
    } guidance;

    diff::TrainConfig train_config() const;
    diff::GuidanceConfig guidance_config() const;
    srf::MaskMode mask_mode() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string to_json(const RunConfig& cfg);

} // namespace abd::cfg

#endif
