#include "abd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace abd::cfg {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
    if (!obj.is_object()) throw FormatError("config section '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw FormatError("unknown config key '" + where + "." + key + "'");
}

template <typename T>
void fetch(const json& obj, const char* key, T& into) {
    if (obj.contains(key)) into = obj.at(key).get<T>();
}

} // namespace

diff::TrainConfig RunConfig::train_config() const {
    diff::TrainConfig t;
    t.lambda_px = train.lambda_px;
    t.lambda_reg = train.lambda_reg;
    t.lambda_img = train.lambda_img;
    t.lr = train.lr;
    t.beta1 = train.beta1;
    t.beta2 = train.beta2;
    t.weight_decay = train.weight_decay;
    t.warmup_frac = train.warmup_frac;
    t.clip_norm = train.clip_norm;
    t.mspl_alpha_min = train.mspl_alpha_min;
    t.batch = train.batch;
    t.steps = train.steps;
    t.p_drop_lo = train.p_drop_lo;
    t.p_drop_hi = train.p_drop_hi;
    t.mask_mode = mask_mode();
    t.seed = train.seed;
    return t;
}

diff::GuidanceConfig RunConfig::guidance_config() const {
    diff::GuidanceConfig g;
    g.s = guidance.s;
    if (guidance.route == "tweedie")
        g.route = diff::GradRoute::kTweedieOnly;
    else if (guidance.route == "full")
        g.route = diff::GradRoute::kFullBackprop;
    else
        throw FormatError("guidance.route must be 'tweedie' or 'full'");
    g.terms.index = guidance.w_index;
    g.terms.prior = guidance.w_prior;
    g.terms.bounds = guidance.w_bounds;
    return g;
}

srf::MaskMode RunConfig::mask_mode() const {
    if (train.mask_mode == "per_band") return srf::MaskMode::kPerBand;
    if (train.mask_mode == "per_element") return srf::MaskMode::kPerElement;
    throw FormatError("train.mask_mode must be 'per_band' or 'per_element'");
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config JSON: ") + e.what());
    }
    RunConfig c;
    reject_unknown(j, {"seed", "data", "emulator", "denoiser", "schedule", "train", "guidance"}, "");
    fetch(j, "seed", c.seed);

    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"dir", "scenes", "h", "w", "bands", "eval_scenes"}, "data");
        fetch(d, "dir", c.data.dir);
        fetch(d, "scenes", c.data.scenes);
        fetch(d, "h", c.data.h);
        fetch(d, "w", c.data.w);
        fetch(d, "bands", c.data.bands);
        fetch(d, "eval_scenes", c.data.eval_scenes);
    }
    if (j.contains("emulator")) {
        const json& d = j.at("emulator");
        reject_unknown(d, {"pairs", "epochs", "lr", "seed"}, "emulator");
        fetch(d, "pairs", c.emulator.pairs);
        fetch(d, "epochs", c.emulator.epochs);
        fetch(d, "lr", c.emulator.lr);
        fetch(d, "seed", c.emulator.seed);
    }
    if (j.contains("denoiser")) {
        const json& d = j.at("denoiser");
        reject_unknown(d, {"base_width", "channel_multipliers", "groupnorm_groups", "h_dim", "time_dim"}, "denoiser");
        fetch(d, "base_width", c.denoiser.base_width);
        fetch(d, "channel_multipliers", c.denoiser.channel_multipliers);
        fetch(d, "groupnorm_groups", c.denoiser.groupnorm_groups);
        fetch(d, "h_dim", c.denoiser.h_dim);
        fetch(d, "time_dim", c.denoiser.time_dim);
    }
    if (j.contains("schedule")) {
        const json& d = j.at("schedule");
        reject_unknown(d, {"steps", "beta_start", "beta_end"}, "schedule");
        fetch(d, "steps", c.schedule.steps);
        fetch(d, "beta_start", c.schedule.beta_start);
        fetch(d, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("train")) {
        const json& d = j.at("train");
        reject_unknown(d,
                       {"steps", "batch", "lr", "warmup_frac", "weight_decay", "beta1", "beta2", "lambda_px",
                        "lambda_reg", "lambda_img", "p_drop_lo", "p_drop_hi", "clip_norm", "mspl_alpha_min", "mask_mode",
                        "prior_scenes", "patch", "patch_stride", "seed"},
                       "train");
        fetch(d, "steps", c.train.steps);
        fetch(d, "batch", c.train.batch);
        fetch(d, "lr", c.train.lr);
        fetch(d, "warmup_frac", c.train.warmup_frac);
        fetch(d, "weight_decay", c.train.weight_decay);
        fetch(d, "beta1", c.train.beta1);
        fetch(d, "beta2", c.train.beta2);
        fetch(d, "lambda_px", c.train.lambda_px);
        fetch(d, "lambda_reg", c.train.lambda_reg);
        fetch(d, "lambda_img", c.train.lambda_img);
        fetch(d, "p_drop_lo", c.train.p_drop_lo);
        fetch(d, "p_drop_hi", c.train.p_drop_hi);
        fetch(d, "clip_norm", c.train.clip_norm);
        fetch(d, "mspl_alpha_min", c.train.mspl_alpha_min);
        fetch(d, "mask_mode", c.train.mask_mode);
        fetch(d, "prior_scenes", c.train.prior_scenes);
        fetch(d, "patch", c.train.patch);
        fetch(d, "patch_stride", c.train.patch_stride);
        fetch(d, "seed", c.train.seed);
    }
    if (j.contains("guidance")) {
        const json& d = j.at("guidance");
        reject_unknown(d, {"s", "route", "w_index", "w_prior", "w_bounds"}, "guidance");
        fetch(d, "s", c.guidance.s);
        fetch(d, "route", c.guidance.route);
        fetch(d, "w_index", c.guidance.w_index);
        fetch(d, "w_prior", c.guidance.w_prior);
        fetch(d, "w_bounds", c.guidance.w_bounds);
    }
    c.denoiser.in_bands = c.data.bands;
    c.mask_mode();        // validate the enum strings eagerly
    c.guidance_config();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["data"] = {{"dir", c.data.dir},   {"scenes", c.data.scenes},          {"h", c.data.h},
                 {"w", c.data.w},       {"bands", c.data.bands},            {"eval_scenes", c.data.eval_scenes}};
    j["emulator"] = {{"pairs", c.emulator.pairs}, {"epochs", c.emulator.epochs}, {"lr", c.emulator.lr},
                     {"seed", c.emulator.seed}};
    j["denoiser"] = {{"base_width", c.denoiser.base_width},
                     {"channel_multipliers", c.denoiser.channel_multipliers},
                     {"groupnorm_groups", c.denoiser.groupnorm_groups},
                     {"h_dim", c.denoiser.h_dim},
                     {"time_dim", c.denoiser.time_dim}};
    j["schedule"] = {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"lr", c.train.lr},
                  {"warmup_frac", c.train.warmup_frac},
                  {"weight_decay", c.train.weight_decay},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"lambda_px", c.train.lambda_px},
                  {"lambda_reg", c.train.lambda_reg},
                  {"lambda_img", c.train.lambda_img},
                  {"p_drop_lo", c.train.p_drop_lo},
                  {"p_drop_hi", c.train.p_drop_hi},
                  {"clip_norm", c.train.clip_norm},
                  {"mspl_alpha_min", c.train.mspl_alpha_min},
                  {"mask_mode", c.train.mask_mode},
                  {"prior_scenes", c.train.prior_scenes},
                  {"patch", c.train.patch},
                  {"patch_stride", c.train.patch_stride},
                  {"seed", c.train.seed}};
    j["guidance"] = {{"s", c.guidance.s},
                     {"route", c.guidance.route},
                     {"w_index", c.guidance.w_index},
                     {"w_prior", c.guidance.w_prior},
                     {"w_bounds", c.guidance.w_bounds}};
    return j.dump(2);
}

} // namespace abd::cfg
