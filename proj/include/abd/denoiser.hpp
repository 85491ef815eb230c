#ifndef ABD_DENOISER_HPP
#define ABD_DENOISER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "abd/sensor.hpp"
#include "abd/tape.hpp"
#include "abd/tensor.hpp"

namespace abd::unet {

struct Config {
    int in_bands = 12;
    int base_width = 32;
    std::vector<int> channel_multipliers = {1, 2};
    int groupnorm_groups = 8; // capped at the channel count per site
    int h_dim = 64;
    int time_dim = 64;
    bool use_cam = true; // false replaces every modulation site with plain normalization

    void validate() const;
    int width(int level) const { return base_width * channel_multipliers[static_cast<size_t>(level)]; }
    int levels() const { return static_cast<int>(channel_multipliers.size()); }
};

using ParamMap = std::map<std::string, Tensor>; // ordered: checkpoints and optimizer slots rely on it
using VarMap = std::map<std::string, ad::Var>;

ParamMap init_params(const Config& cfg, uint64_t seed);
VarMap lift(ad::Tape& tape, const ParamMap& params, bool requires_grad);

// sinusoidal embedding, pairs (sin, cos) of t / 10000^(2i/dim)
Tensor time_embed(int t, int dim);

// condition encoder: concat(c,m) -> conv/pool stack -> pooled vector -> h [1,h_dim]
ad::Var encode_condition(ad::Tape& tape, const VarMap& params, const Tensor& c_chw, const Tensor& m_chw,
                         const Config& cfg);

// (1 + dgamma) * groupnorm-ed features + beta, parameters regressed from h
ad::Var cam_modulate(ad::Var features, ad::Var h, ad::Var site_w, ad::Var site_b);

// full noise-prediction graph on an existing tape
ad::Var predict_noise(ad::Tape& tape, const VarMap& params, ad::Var x_t, int t, const Tensor& c_chw,
                      const Tensor& m_chw, const Config& cfg);

// plain evaluation convenience
Tensor predict_noise_value(const Tensor& x_t, int t, const srf::ConditionPair& pair, const ParamMap& params,
                           const Config& cfg);

Tensor condition_c_chw(const srf::ConditionPair& pair);
Tensor condition_m_chw(const srf::ConditionPair& pair);

} // namespace abd::unet

#endif
