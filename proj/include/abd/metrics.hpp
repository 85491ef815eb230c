#ifndef ABD_METRICS_HPP
#define ABD_METRICS_HPP

#include <string>

#include "abd/physics.hpp"
#include "abd/scene.hpp"

namespace abd::metrics {

constexpr double kPsnrCap = 99.0;

double psnr(const scene::HyperCube& x, const scene::HyperCube& y);
double ssim(const scene::HyperCube& x, const scene::HyperCube& y);
double rmse(const scene::HyperCube& x, const scene::HyperCube& y);
double sam(const scene::HyperCube& x, const scene::HyperCube& y); // radians

struct IndexConsistency {
    double cc = 0.0;
    double rmse = 0.0;
    bool degenerate = false; // a zero-variance map forced cc to 0
};

IndexConsistency index_consistency(const scene::HyperCube& x, const scene::HyperCube& y, phys::IndexKind kind);

struct Report {
    std::string method;
    double mask_ratio = 0.0;
    uint64_t seed = 0;
    double psnr_db = 0.0;
    double ssim_v = 0.0;
    double rmse_v = 0.0;
    double sam_rad = 0.0;
    IndexConsistency ndvi;
    IndexConsistency ndwi;
};

Report evaluate(const scene::HyperCube& pred, const scene::HyperCube& truth, const std::string& method,
                double mask_ratio, uint64_t seed);

std::string csv_header();
std::string csv_row(const Report& r);

} // namespace abd::metrics

#endif
