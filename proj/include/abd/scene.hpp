#ifndef ABD_SCENE_HPP
#define ABD_SCENE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "abd/errors.hpp"
#include "abd/tensor.hpp"

namespace abd::scene {

enum class Domain { kPhysical, kNormalized }; // reflectance [0,1] vs model range [-1,1]

enum class LandClass : uint8_t { kVegetation = 0, kSoil = 1, kWater = 2 };

// H x W x B reflectance cube, row-major with the band axis innermost.
struct HyperCube {
    int h = 0, w = 0, b = 0;
    std::vector<double> data;        // h*w*b, pixel-major band-minor
    std::vector<double> wavelengths; // b band centers in nm, strictly increasing
    Domain domain = Domain::kPhysical;

    double& at(int y, int x, int band) { return data[(static_cast<size_t>(y) * w + x) * b + band]; }
    double at(int y, int x, int band) const { return data[(static_cast<size_t>(y) * w + x) * b + band]; }
    size_t size() const { return data.size(); }

    void validate() const; // invariant check: domain range, wavelength order, b >= 4
};

struct ParamFields {
    int h = 0, w = 0;
    std::vector<double> lai;      // [0,6]
    std::vector<double> cab;      // [0,1]
    std::vector<double> moisture; // [0,1]
    std::vector<LandClass> class_map;
};

// B band centers uniformly spaced over [450, 950] nm.
std::vector<double> default_wavelengths(int b);

// Closed-form reflectance model: Beer-Lambert soil/leaf canopy mixing for
// vegetation, a linear soil ramp, and an exponentially decaying water curve.
std::vector<double> toy_rtm(double lai, double cab, double moisture, LandClass cls,
                            const std::vector<double>& wavelengths);

// Smooth random parameter fields rendered through toy_rtm per pixel.
std::pair<HyperCube, ParamFields> generate_scene(int h, int w, int b, uint64_t seed);

HyperCube normalize(const HyperCube& physical);    // x -> 2x - 1
HyperCube denormalize(const HyperCube& normalized); // x -> (x + 1) / 2

// Row-major sliding windows; windows that would overrun are dropped.
std::vector<HyperCube> patchify(const HyperCube& cube, int size, int stride);

// index of the band center nearest to target_nm; ties break toward the lower index
int nearest_band(const std::vector<double>& wavelengths, double target_nm);

// "HSC1" cube file: magic, LE u32 H/W/B, B LE f32 wavelengths, H*W*B LE f32 samples.
void save_hsc1(const HyperCube& cube, const std::string& path);
HyperCube load_hsc1(const std::string& path);

// layout converters between the cube order (H,W,B) and the tensor order (B,H,W)
Tensor cube_to_chw(const HyperCube& cube);
HyperCube chw_to_cube(const Tensor& t, const std::vector<double>& wavelengths, Domain domain);

} // namespace abd::scene

#endif
