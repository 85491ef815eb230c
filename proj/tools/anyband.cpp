#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "abd/baseline.hpp"
#include "abd/config.hpp"
#include "abd/diffusion.hpp"
#include "abd/metrics.hpp"
#include "abd/scene.hpp"
#include "abd/sensor.hpp"

namespace fs = std::filesystem;
using namespace abd;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int scenes = 8;
    int h = 16, w = 16, bands = 12;
    uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
    fs::create_directories(a.out);
    nlohmann::json manifest;
    manifest["h"] = a.h;
    manifest["w"] = a.w;
    manifest["bands"] = a.bands;
    manifest["seed"] = a.seed;
    manifest["scenes"] = nlohmann::json::array();

    for (int i = 0; i < a.scenes; ++i) {
        const uint64_t scene_seed = mix64(a.seed) ^ static_cast<uint64_t>(i);
        auto [cube, params] = scene::generate_scene(a.h, a.w, a.bands, scene_seed);
        char name[64];
        std::snprintf(name, sizeof name, "scene_%03d.hsc1", i);
        const fs::path cube_path = fs::path(a.out) / name;
        scene::save_hsc1(cube, cube_path.string());

        nlohmann::json side;
        side["lai"] = params.lai;
        side["cab"] = params.cab;
        side["moisture"] = params.moisture;
        std::vector<int> classes(params.class_map.size());
        for (size_t k = 0; k < classes.size(); ++k) classes[k] = static_cast<int>(params.class_map[k]);
        side["class_map"] = classes;
        char pname[64];
        std::snprintf(pname, sizeof pname, "params_%03d.json", i);
        write_text(fs::path(a.out) / pname, side.dump());

        manifest["scenes"].push_back({{"file", name},
                                      {"params", pname},
                                      {"seed", scene_seed},
                                      {"hash", diff::file_hash(cube_path.string())}});
    }
    srf::save_library(srf::builtin_library(scene::default_wavelengths(a.bands)),
                      (fs::path(a.out) / "srf_library.json").string());
    write_text(fs::path(a.out) / "manifest.json", manifest.dump(2));
    std::cout << "wrote " << a.scenes << " scenes to " << a.out << "\n";
    return 0;
}

// ---- train -------------------------------------------------------------------

std::vector<scene::HyperCube> load_scenes(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw FormatError("no manifest.json in " + dir + " (run synth first)");
    nlohmann::json manifest;
    in >> manifest;
    std::vector<scene::HyperCube> scenes;
    for (const auto& entry : manifest.at("scenes"))
        scenes.push_back(scene::load_hsc1((fs::path(dir) / entry.at("file").get<std::string>()).string()));
    if (scenes.empty()) throw DomainError("manifest lists no scenes");
    return scenes;
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::string data; // optional override of config data.dir
};

int run_train(const TrainArgs& a) {
    cfg::RunConfig rc = cfg::load_run_config(a.config);
    if (!a.data.empty()) rc.data.dir = a.data;
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "effective_config.json", cfg::to_json(rc) + "\n");

    const auto scenes = load_scenes(rc.data.dir);
    const int bands = scenes.front().b;
    rc.denoiser.in_bands = bands;

    diff::Model model;
    model.cfg = rc.denoiser;
    model.cfg.validate();
    model.schedule = diff::make_schedule(rc.schedule.steps, rc.schedule.beta_start, rc.schedule.beta_end);
    model.wavelengths = scenes.front().wavelengths;
    model.params = unet::init_params(model.cfg, rc.seed);

    const fs::path ckpt_path = fs::path(a.out) / "checkpoint.abd1";
    bool emulator_reused = false;
    if (fs::exists(ckpt_path)) {
        diff::Model prev = diff::load_checkpoint(ckpt_path.string());
        if (prev.emulator.trained && prev.cfg.in_bands == bands) {
            model.emulator = prev.emulator;
            emulator_reused = true;
            std::cout << "reusing the emulator from " << ckpt_path.string() << "\n";
        }
    }
    if (!emulator_reused) {
        std::cout << "training emulator (" << rc.emulator.pairs << " pairs, " << rc.emulator.epochs
                  << " epochs)\n";
        const auto pairs = emu::make_pairs(rc.emulator.pairs, bands, rc.emulator.seed);
        model.emulator = emu::train_emulator(pairs, rc.emulator.epochs, rc.emulator.lr, rc.emulator.seed);
        std::cout << "emulator held-out roundtrip rmse " << num(model.emulator.heldout_rmse) << "\n";
    }

    // the spectral prior comes from dedicated clean scenes, never training patches
    std::vector<scene::HyperCube> prior_scenes;
    for (int i = 0; i < rc.train.prior_scenes; ++i)
        prior_scenes.push_back(
            scene::generate_scene(rc.data.h, rc.data.w, bands, mix64(rc.seed ^ 0x5011ull) + i).first);
    model.prior_s = phys::estimate_prior(prior_scenes).s;

    std::vector<scene::HyperCube> patches;
    for (const auto& sc : scenes)
        for (auto& p : scene::patchify(scene::normalize(sc), rc.train.patch, rc.train.patch_stride))
            patches.push_back(std::move(p));
    std::cout << "training on " << patches.size() << " patches\n";

    const auto library = srf::builtin_library(model.wavelengths);
    diff::Trainer trainer(model, rc.train_config(), library);

    std::ofstream csv(fs::path(a.out) / "loss.csv");
    csv << "step,l_mcd,l_pixel,l_region,l_image,total,lr\n";
    try {
        for (int step = 0; step < rc.train.steps; ++step) {
            const diff::StepStats s = trainer.step(patches);
            csv << step << ',' << num(s.l_mcd) << ',' << num(s.l_pixel) << ',' << num(s.l_region) << ','
                << num(s.l_image) << ',' << num(s.total) << ',' << num(s.lr) << "\n";
            if ((step + 1) % 200 == 0) {
                csv.flush();
                std::cout << "step " << (step + 1) << "/" << rc.train.steps << " total " << num(s.total) << "\n";
            }
        }
    } catch (const NumericError& e) {
        csv.flush();
        std::cerr << e.what() << " (last good step " << trainer.steps_done() - 1 << ")\n";
        return kExitNumeric;
    }
    diff::save_checkpoint(model, ckpt_path.string());
    std::cout << "checkpoint written to " << ckpt_path.string() << "\n";
    return 0;
}

// ---- repair ------------------------------------------------------------------

struct RepairArgs {
    std::string checkpoint;
    std::string cube;
    double mask_ratio = 0.5;
    std::string mode = "per_band";
    int steps = 50;
    double s = 1.0;
    int refine_t = 20; // 0 samples from pure noise over the full schedule
    uint64_t seed = 1;
    std::string out;
};

srf::MaskMode parse_mode(const std::string& mode) {
    if (mode == "per_band") return srf::MaskMode::kPerBand;
    if (mode == "per_element") return srf::MaskMode::kPerElement;
    throw DomainError("mode must be per_band or per_element");
}

struct RepairResult {
    scene::HyperCube repaired;
    metrics::Report report;
    double l_phy = 0.0;
};

RepairResult repair_once(const diff::Model& model, const scene::HyperCube& truth, double ratio,
                         srf::MaskMode mode, int steps, int refine_t, const diff::GuidanceConfig& guidance,
                         uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) throw DomainError("mask ratio must lie in [0,1)");
    const auto normalized = scene::normalize(truth);
    const std::vector<srf::SensorSrf> lib{srf::identity_sensor(truth.wavelengths)};
    const srf::ConditionPair pair = srf::dsm_mask(normalized, lib, ratio, mode, seed);

    Tensor out;
    if (refine_t > 0) {
        const Tensor init = scene::cube_to_chw(scene::normalize(baseline::interpolate_bands(pair, truth.wavelengths)));
        out = diff::ddim_refine(model, pair, init, refine_t, steps, guidance, seed);
    } else {
        out = diff::ddim_sample(model, pair, steps, guidance, seed);
    }
    diff::restore_observed(pair, out);

    RepairResult res;
    phys::PhysTarget target = phys::build_phys_target(
        pair, model.prior_s, {phys::IndexKind::kNdvi, phys::IndexKind::kNdwi}, model.wavelengths);
    res.l_phy = phys::loss_phy_value(out, target);
    res.repaired = scene::denormalize(scene::chw_to_cube(out, truth.wavelengths, scene::Domain::kNormalized));
    res.report = metrics::evaluate(res.repaired, truth, "anyband", ratio, seed);
    return res;
}

int run_repair(const RepairArgs& a) {
    const diff::Model model = diff::load_checkpoint(a.checkpoint);
    const scene::HyperCube truth = scene::load_hsc1(a.cube);
    diff::GuidanceConfig guidance;
    guidance.s = a.s;
    const RepairResult res =
        repair_once(model, truth, a.mask_ratio, parse_mode(a.mode), a.steps, a.refine_t, guidance, a.seed);

    fs::create_directories(a.out);
    scene::save_hsc1(res.repaired, (fs::path(a.out) / "repaired.hsc1").string());
    const std::string text =
        metrics::csv_header() + ",l_phy\n" + metrics::csv_row(res.report) + ',' + num(res.l_phy) + "\n";
    write_text(fs::path(a.out) / "metrics.csv", text);
    std::cout << text;
    return 0;
}

// ---- guidance-scale sweep ------------------------------------------------------

struct AblateArgs {
    std::string checkpoint;
    std::string cube;
    std::string values = "0,0.5,1.0,1.5,2.0";
    int seeds = 20;
    uint64_t seed = 1;
    int steps = 50;
    int refine_t = 20;
    std::string out;
};

int run_ablate(const AblateArgs& a) {
    const diff::Model model = diff::load_checkpoint(a.checkpoint);
    const scene::HyperCube truth = scene::load_hsc1(a.cube);

    std::vector<double> values;
    std::stringstream ss(a.values);
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
    if (values.empty() || a.seeds < 1) throw DomainError("need at least one value and one seed");

    struct Run {
        double s = 0.0;
        uint64_t seed = 0;
        metrics::Report report;
        double l_phy = 0.0;
    };
    std::vector<Run> runs(values.size() * static_cast<size_t>(a.seeds));

    // work items are seed-derived and independent; threads only change wall time
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= runs.size()) break;
            const size_t vi = i / static_cast<size_t>(a.seeds);
            const size_t si = i % static_cast<size_t>(a.seeds);
            diff::GuidanceConfig guidance;
            guidance.s = values[vi];
            const uint64_t run_seed = mix64(a.seed) ^ (si + 1);
            const RepairResult res =
                repair_once(model, truth, 0.5, srf::MaskMode::kPerBand, a.steps, a.refine_t, guidance, run_seed);
            runs[i] = Run{values[vi], run_seed, res.report, res.l_phy};
        }
    };
    const unsigned n_threads = std::min(4u, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::future<void>> pool;
    for (unsigned w = 0; w < n_threads; ++w) pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();

    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "ablate_s.csv");
    csv << "s,seed,psnr,ssim,sam,l_phy,psnr_std,ssim_std,sam_std,l_phy_std\n";
    for (const Run& r : runs)
        csv << num(r.s) << ',' << r.seed << ',' << num(r.report.psnr_db) << ',' << num(r.report.ssim_v) << ','
            << num(r.report.sam_rad) << ',' << num(r.l_phy) << ",0,0,0,0\n";
    for (size_t vi = 0; vi < values.size(); ++vi) {
        auto stats = [&](auto get) {
            double mean = 0.0, sq = 0.0;
            for (int si = 0; si < a.seeds; ++si) {
                const double v = get(runs[vi * static_cast<size_t>(a.seeds) + static_cast<size_t>(si)]);
                mean += v;
                sq += v * v;
            }
            mean /= a.seeds;
            const double var = std::max(0.0, sq / a.seeds - mean * mean);
            return std::pair<double, double>{mean, std::sqrt(var)};
        };
        const auto p = stats([](const Run& r) { return r.report.psnr_db; });
        const auto s2 = stats([](const Run& r) { return r.report.ssim_v; });
        const auto sa = stats([](const Run& r) { return r.report.sam_rad; });
        const auto lp = stats([](const Run& r) { return r.l_phy; });
        csv << num(values[vi]) << ",summary," << num(p.first) << ',' << num(s2.first) << ',' << num(sa.first)
            << ',' << num(lp.first) << ',' << num(p.second) << ',' << num(s2.second) << ',' << num(sa.second)
            << ',' << num(lp.second) << "\n";
        std::cout << "s=" << num(values[vi]) << " psnr " << num(p.first) << " +- " << num(p.second)
                  << " l_phy " << num(lp.first) << " +- " << num(lp.second) << "\n";
    }
    return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string pred;
    std::string truth;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    const scene::HyperCube pred = scene::load_hsc1(a.pred);
    const scene::HyperCube truth = scene::load_hsc1(a.truth);
    const metrics::Report r = metrics::evaluate(pred, truth, "eval", 0.0, 0);
    const std::string text = metrics::csv_header() + "\n" + metrics::csv_row(r) + "\n";
    if (!a.out.empty()) {
        const fs::path parent = fs::path(a.out).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        write_text(a.out, text);
    }
    std::cout << text;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-conditional diffusion band repair on synthetic hyperspectral scenes"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* s = app.add_subcommand("synth", "generate ground-truth scenes");
    s->set_help_flag("--help", "print help"); // frees -h for the --h option below
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--scenes", synth.scenes, "number of scenes");
    s->add_option("--h", synth.h, "scene height");
    s->add_option("--w", synth.w, "scene width");
    s->add_option("--bands", synth.bands, "spectral bands");
    s->add_option("--seed", synth.seed, "generator seed");

    TrainArgs train;
    CLI::App* t = app.add_subcommand("train", "train the emulator and denoiser");
    t->add_option("--config", train.config, "run config JSON")->required();
    t->add_option("--out", train.out, "output directory")->required();
    t->add_option("--data", train.data, "override data directory");

    RepairArgs repair;
    CLI::App* r = app.add_subcommand("repair", "mask bands and reconstruct one cube");
    r->add_option("--checkpoint", repair.checkpoint, "checkpoint path")->required();
    r->add_option("--cube", repair.cube, "ground-truth HSC1 cube")->required();
    r->add_option("--mask-ratio", repair.mask_ratio, "band dropout probability");
    r->add_option("--mode", repair.mode, "per_band or per_element");
    r->add_option("--steps", repair.steps, "sampler steps");
    r->add_option("--s", repair.s, "guidance scale");
    r->add_option("--refine-t", repair.refine_t, "refinement depth; 0 samples from pure noise");
    r->add_option("--seed", repair.seed, "mask and sampler seed");
    r->add_option("--out", repair.out, "output directory")->required();

    AblateArgs ablate;
    CLI::App* ab = app.add_subcommand("ablate-s", "sweep the guidance scale at 50% masking");
    ab->add_option("--checkpoint", ablate.checkpoint, "checkpoint path")->required();
    ab->add_option("--cube", ablate.cube, "ground-truth HSC1 cube")->required();
    ab->add_option("--values", ablate.values, "comma-separated guidance scales");
    ab->add_option("--seeds", ablate.seeds, "seeds per value");
    ab->add_option("--seed", ablate.seed, "base seed");
    ab->add_option("--steps", ablate.steps, "sampler steps");
    ab->add_option("--refine-t", ablate.refine_t, "refinement depth; 0 samples from pure noise");
    ab->add_option("--out", ablate.out, "output directory")->required();

    EvalArgs eval;
    CLI::App* e = app.add_subcommand("eval", "metrics between two cubes");
    e->add_option("--pred", eval.pred, "predicted HSC1 cube")->required();
    e->add_option("--truth", eval.truth, "ground-truth HSC1 cube")->required();
    e->add_option("--out", eval.out, "CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (s->parsed()) return run_synth(synth);
        if (t->parsed()) return run_train(train);
        if (r->parsed()) return run_repair(repair);
        if (ab->parsed()) return run_ablate(ablate);
        if (e->parsed()) return run_eval(eval);
    } catch (const NumericError& ex) {
        std::cerr << ex.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& ex) {
        std::cerr << ex.what() << "\n";
        return kExitUsage;
    }
    return 0;
}
