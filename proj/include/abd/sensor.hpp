#ifndef ABD_SENSOR_HPP
#define ABD_SENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "abd/scene.hpp"

namespace abd::srf {

struct SrfBand {
    std::vector<double> grid_nm;   // strictly increasing knot wavelengths
    std::vector<double> response;  // non-negative, at least one positive value
};

struct SensorSrf {
    std::string name;
    std::vector<SrfBand> bands;
};

enum class MaskMode { kPerBand, kPerElement };

// Sparse observation c and validity mask m, both H x W x B in cube layout.
// c is exactly x_obs (normalized) zeroed wherever m is 0.
struct ConditionPair {
    int h = 0, w = 0, b = 0;
    std::vector<double> c;
    std::vector<double> m; // 0 or 1
    double p_drop_used = 0.0;

    double cv(int y, int x, int band) const { return c[(static_cast<size_t>(y) * w + x) * b + band]; }
    double mv(int y, int x, int band) const { return m[(static_cast<size_t>(y) * w + x) * b + band]; }
};

struct Observation {
    scene::HyperCube x_obs;      // physical domain, unoccupied slots zero
    std::vector<double> m_sens;  // H*W*B, 1 where a sensor band landed
    std::vector<std::string> warnings;
};

// Natural cubic spline through (xs, ys); evaluates to 0 outside [xs.front, xs.back].
class CubicSpline {
public:
    CubicSpline(const std::vector<double>& xs, const std::vector<double>& ys);
    double eval(double x) const;

private:
    std::vector<double> xs_, ys_, m_; // knot second derivatives
};

// Spline-resampled band weights on the target grid: clamped at 0 and
// renormalized to sum 1 (all-zero when the band has no in-support overlap).
// `raw_total`, when given, receives the pre-clamp sum used for collision ties.
std::vector<double> resample_srf(const SrfBand& band, const std::vector<double>& target_wavelengths,
                                 double* raw_total = nullptr);

// Simulate a sensor observation of a physical cube: each band's weighted
// average lands in the native slot nearest its effective center.
Observation apply_srf(const scene::HyperCube& physical, const SensorSrf& sensor);

// Dual stochastic masking: uniform sensor draw from the library, then Bernoulli
// band dropout at p_drop. Input and output are in the normalized domain.
ConditionPair dsm_mask(const scene::HyperCube& normalized, const std::vector<SensorSrf>& library,
                       double p_drop, MaskMode mode, uint64_t seed);

// training-time dropout rate, uniform on [0.1, 0.7]
double sample_p_drop(uint64_t seed);

// One exact pass-through band per native center (spline hits 1 at the center
// knot and 0 at every other native center).
SensorSrf identity_sensor(const std::vector<double>& wavelengths);

// 15 synthetic Gaussian-band sensors spanning 1..12 bands.
std::vector<SensorSrf> builtin_library(const std::vector<double>& native_wavelengths);

std::string library_to_json(const std::vector<SensorSrf>& library);
std::vector<SensorSrf> library_from_json(const std::string& text);
std::vector<SensorSrf> load_library(const std::string& path);
void save_library(const std::vector<SensorSrf>& library, const std::string& path);

} // namespace abd::srf

#endif
