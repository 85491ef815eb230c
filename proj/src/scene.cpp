#include "abd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "abd/rng.hpp"

namespace abd::scene {

namespace {

constexpr double kDomainSlack = 1e-9;

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double leaf_reflectance(double lambda, double cab) {
    const double nir_amp = 0.3 + 0.2 * cab;
    const double green_peak = 0.12 * (1.0 - 0.5 * cab) * std::exp(-(lambda - 550.0) * (lambda - 550.0) / (2.0 * 30.0 * 30.0));
    return 0.04 + nir_amp * logistic((lambda - 720.0) / 15.0) + green_peak;
}

double soil_reflectance(double lambda) { return 0.15 + 0.0003 * (lambda - 450.0); }

double water_reflectance(double lambda, double moisture) {
    return 0.08 * std::exp(-(lambda - 450.0) / 150.0) * (1.0 - 0.5 * moisture);
}

void blur_box(std::vector<double>& field, int h, int w, int radius) {
    std::vector<double> tmp(field.size());
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    // horizontal then vertical pass, clamp-to-edge
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dx = -radius; dx <= radius; ++dx) s += field[static_cast<size_t>(y) * w + clampi(x + dx, 0, w - 1)];
            tmp[static_cast<size_t>(y) * w + x] = s / (2 * radius + 1);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) s += tmp[static_cast<size_t>(clampi(y + dy, 0, h - 1)) * w + x];
            field[static_cast<size_t>(y) * w + x] = s / (2 * radius + 1);
        }
}

// blurred uniform noise rescaled to [lo, hi]
std::vector<double> smooth_field(int h, int w, double lo, double hi, Rng& rng) {
    std::vector<double> f(static_cast<size_t>(h) * w);
    for (double& v : f) v = rng.uniform();
    blur_box(f, h, w, 3);
    blur_box(f, h, w, 3);
    const auto [mn_it, mx_it] = std::minmax_element(f.begin(), f.end());
    const double mn = *mn_it, span = *mx_it - *mn_it;
    for (double& v : f) {
        v = span > 0.0 ? lo + (hi - lo) * (v - mn) / span : 0.5 * (lo + hi);
        v = std::clamp(v, lo, hi);
    }
    return f;
}

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ofstream& out, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(out, u);
}

uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("cube file truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float read_f32(std::ifstream& in) {
    const uint32_t u = read_u32(in);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

} // namespace

void HyperCube::validate() const {
    if (b < 4) throw DomainError("cube needs at least 4 bands");
    if (static_cast<size_t>(h) * w * b != data.size()) throw ShapeError("cube data length mismatch");
    if (static_cast<int>(wavelengths.size()) != b) throw ShapeError("wavelength count mismatch");
    for (int i = 1; i < b; ++i)
        if (wavelengths[static_cast<size_t>(i)] <= wavelengths[static_cast<size_t>(i - 1)])
            throw DomainError("wavelengths must be strictly increasing");
    const double lo = domain == Domain::kPhysical ? 0.0 : -1.0;
    const double hi = 1.0;
    for (double v : data)
        if (v < lo - kDomainSlack || v > hi + kDomainSlack)
            throw DomainError("cube value outside declared domain");
}

std::vector<double> default_wavelengths(int b) {
    if (b < 2) throw DomainError("need at least 2 bands");
    std::vector<double> w(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) w[static_cast<size_t>(i)] = 450.0 + 500.0 * i / (b - 1);
    return w;
}

std::vector<double> toy_rtm(double lai, double cab, double moisture, LandClass cls,
                            const std::vector<double>& wavelengths) {
    if (lai < 0.0 || lai > 6.0) throw DomainError("lai outside [0,6]");
    if (cab < 0.0 || cab > 1.0) throw DomainError("cab outside [0,1]");
    if (moisture < 0.0 || moisture > 1.0) throw DomainError("moisture outside [0,1]");

    std::vector<double> spec(wavelengths.size());
    constexpr double k_extinction = 0.5;
    const double gap = std::exp(-k_extinction * lai);
    for (size_t i = 0; i < wavelengths.size(); ++i) {
        const double lambda = wavelengths[i];
        switch (cls) {
            case LandClass::kVegetation:
                spec[i] = soil_reflectance(lambda) * gap + leaf_reflectance(lambda, cab) * (1.0 - gap);
                break;
            case LandClass::kSoil:
                spec[i] = soil_reflectance(lambda);
                break;
            case LandClass::kWater:
                spec[i] = water_reflectance(lambda, moisture);
                break;
        }
    }
    return spec;
}

std::pair<HyperCube, ParamFields> generate_scene(int h, int w, int b, uint64_t seed) {
    if (h < 8 || w < 8) throw DomainError("scene must be at least 8x8");
    if (b < 4) throw DomainError("scene needs at least 4 bands");

    Rng rng = Rng::derive(seed, 0x5ce7e);
    ParamFields pf;
    pf.h = h;
    pf.w = w;
    pf.lai = smooth_field(h, w, 0.0, 6.0, rng);
    pf.cab = smooth_field(h, w, 0.0, 1.0, rng);
    pf.moisture = smooth_field(h, w, 0.0, 1.0, rng);

    // empirical tertiles of a fourth smooth field pick the class per pixel
    std::vector<double> cls_field = smooth_field(h, w, 0.0, 1.0, rng);
    std::vector<double> sorted = cls_field;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = sorted[sorted.size() / 3];
    const double q2 = sorted[(2 * sorted.size()) / 3];
    pf.class_map.resize(cls_field.size());
    for (size_t i = 0; i < cls_field.size(); ++i)
        pf.class_map[i] = cls_field[i] < q1 ? LandClass::kWater
                        : cls_field[i] < q2 ? LandClass::kSoil
                                            : LandClass::kVegetation;

    HyperCube cube;
    cube.h = h;
    cube.w = w;
    cube.b = b;
    cube.wavelengths = default_wavelengths(b);
    cube.domain = Domain::kPhysical;
    cube.data.resize(static_cast<size_t>(h) * w * b);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t p = static_cast<size_t>(y) * w + x;
            const auto spec = toy_rtm(pf.lai[p], pf.cab[p], pf.moisture[p], pf.class_map[p], cube.wavelengths);
            std::copy(spec.begin(), spec.end(), cube.data.begin() + p * b);
        }
    return {std::move(cube), std::move(pf)};
}

HyperCube normalize(const HyperCube& physical) {
    if (physical.domain != Domain::kPhysical) throw DomainError("normalize expects a physical-domain cube");
    HyperCube out = physical;
    out.domain = Domain::kNormalized;
    for (double& v : out.data) v = 2.0 * v - 1.0;
    return out;
}

HyperCube denormalize(const HyperCube& normalized) {
    if (normalized.domain != Domain::kNormalized) throw DomainError("denormalize expects a normalized cube");
    HyperCube out = normalized;
    out.domain = Domain::kPhysical;
    for (double& v : out.data) v = 0.5 * (v + 1.0);
    return out;
}

std::vector<HyperCube> patchify(const HyperCube& cube, int size, int stride) {
    if (size > cube.h || size > cube.w) throw ShapeError("patch size exceeds cube extent");
    if (stride < 1) throw DomainError("stride must be positive");
    std::vector<HyperCube> patches;
    for (int y0 = 0; y0 + size <= cube.h; y0 += stride)
        for (int x0 = 0; x0 + size <= cube.w; x0 += stride) {
            HyperCube p;
            p.h = size;
            p.w = size;
            p.b = cube.b;
            p.wavelengths = cube.wavelengths;
            p.domain = cube.domain;
            p.data.resize(static_cast<size_t>(size) * size * cube.b);
            for (int y = 0; y < size; ++y)
                std::copy_n(cube.data.begin() + ((static_cast<size_t>(y0 + y) * cube.w) + x0) * cube.b,
                            static_cast<size_t>(size) * cube.b,
                            p.data.begin() + static_cast<size_t>(y) * size * cube.b);
            patches.push_back(std::move(p));
        }
    return patches;
}

int nearest_band(const std::vector<double>& wavelengths, double target_nm) {
    int best = 0;
    double best_d = std::abs(wavelengths[0] - target_nm);
    for (size_t i = 1; i < wavelengths.size(); ++i) {
        const double d = std::abs(wavelengths[i] - target_nm);
        if (d < best_d) { // strict: ties keep the lower index
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

void save_hsc1(const HyperCube& cube, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write("HSC1", 4);
    write_u32(out, static_cast<uint32_t>(cube.h));
    write_u32(out, static_cast<uint32_t>(cube.w));
    write_u32(out, static_cast<uint32_t>(cube.b));
    for (double wl : cube.wavelengths) write_f32(out, static_cast<float>(wl));
    for (double v : cube.data) write_f32(out, static_cast<float>(v));
    if (!out) throw FormatError("write failed for " + path);
}

HyperCube load_hsc1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HSC1", 4) != 0) throw FormatError("bad cube magic in " + path);
    HyperCube cube;
    cube.h = static_cast<int>(read_u32(in));
    cube.w = static_cast<int>(read_u32(in));
    cube.b = static_cast<int>(read_u32(in));
    if (cube.h <= 0 || cube.w <= 0 || cube.b <= 0 || static_cast<int64_t>(cube.h) * cube.w * cube.b > (1ll << 31))
        throw FormatError("implausible cube header in " + path);
    cube.wavelengths.resize(static_cast<size_t>(cube.b));
    for (double& wl : cube.wavelengths) wl = read_f32(in);
    cube.data.resize(static_cast<size_t>(cube.h) * cube.w * cube.b);
    for (double& v : cube.data) v = read_f32(in);
    cube.domain = Domain::kPhysical;
    return cube;
}

Tensor cube_to_chw(const HyperCube& cube) {
    Tensor t = Tensor::zeros({cube.b, cube.h, cube.w});
    for (int y = 0; y < cube.h; ++y)
        for (int x = 0; x < cube.w; ++x)
            for (int band = 0; band < cube.b; ++band)
                t.data[(static_cast<size_t>(band) * cube.h + y) * cube.w + x] = cube.at(y, x, band);
    return t;
}

HyperCube chw_to_cube(const Tensor& t, const std::vector<double>& wavelengths, Domain domain) {
    if (t.rank() != 3) throw ShapeError("expected a [B,H,W] tensor");
    HyperCube cube;
    cube.b = t.dim(0);
    cube.h = t.dim(1);
    cube.w = t.dim(2);
    cube.wavelengths = wavelengths;
    cube.domain = domain;
    cube.data.resize(t.data.size());
    for (int y = 0; y < cube.h; ++y)
        for (int x = 0; x < cube.w; ++x)
            for (int band = 0; band < cube.b; ++band)
                cube.at(y, x, band) = t.data[(static_cast<size_t>(band) * cube.h + y) * cube.w + x];
    return cube;
}

} // namespace abd::scene
