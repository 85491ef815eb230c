#ifndef ABD_PHYSICS_HPP
#define ABD_PHYSICS_HPP

#include <vector>

#include "abd/scene.hpp"
#include "abd/sensor.hpp"
#include "abd/tape.hpp"

namespace abd::emu {
struct Emulator;
}

namespace abd::phys {

// stabilizer added to numerator and denominator of the band-ratio indices
constexpr double kEpsStab = 1e-6;

constexpr double kRedNm = 665.0;
constexpr double kNirNm = 842.0;
constexpr double kGreenNm = 560.0;

enum class IndexKind { kNdvi, kNdwi };

struct IndexBands {
    int plus;  // band whose reflectance raises the index
    int minus; // band whose reflectance lowers it
};

int band_select(const std::vector<double>& wavelengths, double target_nm);
IndexBands resolve_index(IndexKind kind, const std::vector<double>& wavelengths);

// (plus - minus + eps) / (plus + minus + eps) per pixel, physical-domain input
std::vector<double> spectral_index(const scene::HyperCube& physical, IndexKind kind);
ad::Var spectral_index(ad::Var x_phys_chw, IndexKind kind, const std::vector<double>& wavelengths); // -> [H,W]

// Pearson correlation over the spatial dimensions; variance guard 1e-8 in the
// normalizer. The report variant clamps to [-1,1] and pins the diagonal at 1;
// the differentiable variant leaves values raw.
Tensor corr_matrix_report(const Tensor& chw);
ad::Var corr_matrix(ad::Var x_chw);

struct SpectralPrior {
    Tensor s; // B x B
    void validate() const;
};

// prior estimated from clean scenes (mean of per-scene report correlations, re-symmetrized)
SpectralPrior estimate_prior(const std::vector<scene::HyperCube>& scenes);

ad::Var loss_pixel(ad::Var x_chw, const Tensor& prior_s);

struct KdeConfig {
    int grid_points = 64;
    double grid_lo = -1.05;
    double grid_hi = 1.05;
    double bandwidth_floor = 1e-3;
};

std::vector<double> kde_grid(const KdeConfig& cfg);
double silverman_bandwidth(const std::vector<double>& samples, double floor_at);

std::vector<double> kde(const std::vector<double>& samples, const std::vector<double>& grid, double bandwidth);
ad::Var kde(ad::Var samples, const std::vector<double>& grid, double bandwidth); // samples [N] -> density [G]

double kl_div(const std::vector<double>& p, const std::vector<double>& q);
ad::Var kl_div_const_p(const std::vector<double>& p, ad::Var q);

// mean over patch pairs and index kinds of KL(real || generated); gradients
// flow through the generated patches only. Patches are physical-domain.
ad::Var loss_region(const std::vector<scene::HyperCube>& real_patches, const std::vector<ad::Var>& gen_patches_chw,
                    const std::vector<IndexKind>& kinds, const KdeConfig& cfg = {});

// emulator round-trip consistency, physical-domain inputs
ad::Var loss_image(ad::Var xhat_phys_chw, const Tensor& x0_phys_chw, const emu::Emulator& emulator);

struct IndexTarget {
    IndexKind kind;
    std::vector<double> map;   // H*W, zero where invalid
    std::vector<double> valid; // H*W in {0,1}
    int valid_count = 0;
};

struct TermWeights {
    double index = 1.0;
    double prior = 1.0;
    double bounds = 1.0;
};

struct PhysTarget {
    int h = 0, w = 0, b = 0;
    std::vector<double> wavelengths;
    std::vector<IndexTarget> index_targets;
    Tensor prior_s;
    double lo = 0.0, hi = 1.0; // legal reflectance range
    TermWeights weights;
};

PhysTarget build_phys_target(const srf::ConditionPair& pair, const Tensor& prior_s,
                             const std::vector<IndexKind>& kinds, const std::vector<double>& wavelengths);

// masked index MSE + prior-correlation Frobenius + reflectance range hinge,
// evaluated on a normalized-domain estimate
ad::Var loss_phy(ad::Var x0hat_norm_chw, const PhysTarget& target);
double loss_phy_value(const Tensor& x0hat_norm_chw, const PhysTarget& target);

} // namespace abd::phys

#endif
