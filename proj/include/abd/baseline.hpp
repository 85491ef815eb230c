#ifndef ABD_BASELINE_HPP
#define ABD_BASELINE_HPP

#include "abd/scene.hpp"
#include "abd/sensor.hpp"

namespace abd::baseline {

// Linear-in-wavelength interpolation of unobserved values from the nearest
// observed bands at each pixel; flat extrapolation at the spectrum ends and
// 0.5 reflectance when a pixel has no observation at all. Physical output.
scene::HyperCube interpolate_bands(const srf::ConditionPair& pair, const std::vector<double>& wavelengths);

} // namespace abd::baseline

#endif
