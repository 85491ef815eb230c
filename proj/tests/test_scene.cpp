#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "abd/physics.hpp"
#include "abd/scene.hpp"

using namespace abd;
using namespace abd::scene;

TEST_CASE("toy rtm at zero lai is the bare soil curve") {
    const auto wl = default_wavelengths(12);
    const auto veg = toy_rtm(0.0, 0.7, 0.2, LandClass::kVegetation, wl);
    const auto soil = toy_rtm(0.0, 0.0, 0.0, LandClass::kSoil, wl);
    for (size_t i = 0; i < wl.size(); ++i) CHECK(veg[i] == doctest::Approx(soil[i]).epsilon(1e-15));
}

TEST_CASE("dense canopy approaches the leaf curve") {
    const auto wl = default_wavelengths(12);
    for (double cab : {0.0, 0.5, 1.0}) {
        const auto dense = toy_rtm(6.0, cab, 0.0, LandClass::kVegetation, wl);
        // leaf curve = the lai->inf limit; recover it by removing the soil term
        const double gap = std::exp(-0.5 * 6.0);
        const auto soil = toy_rtm(0.0, cab, 0.0, LandClass::kVegetation, wl);
        for (size_t i = 0; i < wl.size(); ++i) {
            const double leaf = (dense[i] - soil[i] * gap) / (1.0 - gap);
            CHECK(std::abs(dense[i] - leaf) < 0.06);
        }
    }
}

TEST_CASE("ndvi rises with leaf area") {
    const auto wl = default_wavelengths(12);
    auto ndvi_of = [&](double lai) {
        HyperCube c;
        c.h = 1; c.w = 1; c.b = 12;
        c.wavelengths = wl;
        c.data = toy_rtm(lai, 0.5, 0.0, LandClass::kVegetation, wl);
        return phys::spectral_index(c, phys::IndexKind::kNdvi)[0];
    };
    CHECK(ndvi_of(4.0) > ndvi_of(1.0));
    // strict monotonicity over a 20-point grid
    double prev = ndvi_of(0.0);
    for (int i = 1; i < 20; ++i) {
        const double cur = ndvi_of(6.0 * i / 19.0);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("water stays dark in the near infrared") {
    const auto wl = default_wavelengths(12);
    for (double m : {0.0, 0.5, 1.0}) {
        const auto spec = toy_rtm(0.0, 0.0, m, LandClass::kWater, wl);
        const int nir = nearest_band(wl, 842.0);
        CHECK(spec[static_cast<size_t>(nir)] < 0.05);
    }
}

TEST_CASE("toy rtm rejects out-of-range parameters and stays in [0,1]") {
    const auto wl = default_wavelengths(12);
    CHECK_THROWS_AS(toy_rtm(-0.1, 0.5, 0.5, LandClass::kVegetation, wl), DomainError);
    CHECK_THROWS_AS(toy_rtm(0.0, 1.5, 0.5, LandClass::kVegetation, wl), DomainError);
    for (double lai : {0.0, 2.0, 6.0})
        for (double cab : {0.0, 1.0})
            for (auto cls : {LandClass::kVegetation, LandClass::kSoil, LandClass::kWater})
                for (double v : toy_rtm(lai, cab, 0.3, cls, wl)) {
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                }
}

TEST_CASE("scenes are deterministic and well formed") {
    auto [c1, p1] = generate_scene(16, 16, 12, 1);
    auto [c2, p2] = generate_scene(16, 16, 12, 1);
    CHECK(c1.data == c2.data);
    CHECK(p1.lai == p2.lai);
    c1.validate();

    std::set<LandClass> present(p1.class_map.begin(), p1.class_map.end());
    CHECK(present.size() == 3);

    auto [c3, p3] = generate_scene(16, 16, 12, 2);
    CHECK(c1.data != c3.data);
}

TEST_CASE("water pixels have positive ndwi") {
    auto [cube, pf] = generate_scene(16, 16, 12, 7);
    const auto ndwi = phys::spectral_index(cube, phys::IndexKind::kNdwi);
    for (size_t i = 0; i < pf.class_map.size(); ++i)
        if (pf.class_map[i] == LandClass::kWater) CHECK(ndwi[i] > 0.0);
}

TEST_CASE("normalization endpoints and round trip") {
    HyperCube c;
    c.h = 1; c.w = 3; c.b = 4;
    c.wavelengths = default_wavelengths(4);
    c.data = {0.5, 0.0, 1.0, 0.25, 0.5, 0.0, 1.0, 0.25, 0.5, 0.0, 1.0, 0.25};
    const HyperCube n = normalize(c);
    CHECK(n.data[0] == 0.0);
    CHECK(n.data[1] == -1.0);
    CHECK(n.data[2] == 1.0);
    CHECK_THROWS_AS(normalize(n), DomainError);
    CHECK_THROWS_AS(denormalize(c), DomainError);

    auto [cube, pf] = generate_scene(8, 8, 12, 3);
    const HyperCube rt = denormalize(normalize(cube));
    double max_err = 0.0;
    for (size_t i = 0; i < cube.data.size(); ++i) max_err = std::max(max_err, std::abs(rt.data[i] - cube.data[i]));
    CHECK(max_err < 1e-12);
}

TEST_CASE("patch counts follow the sliding-window formula") {
    auto make = [](int h, int w) {
        HyperCube c;
        c.h = h; c.w = w; c.b = 4;
        c.wavelengths = default_wavelengths(4);
        c.data.assign(static_cast<size_t>(h) * w * 4, 0.5);
        return c;
    };
    CHECK(patchify(make(64, 64), 64, 32).size() == 1);
    CHECK(patchify(make(96, 96), 64, 32).size() == 4);
    // 610x340 with 64/32 windows: (17+1) * (8+1), partial windows dropped
    CHECK(patchify(make(610, 340), 64, 32).size() == 162);
    CHECK_THROWS_AS(patchify(make(32, 32), 64, 32), ShapeError);

    // brute-force window enumeration agrees
    int count = 0;
    for (int y = 0; y + 64 <= 610; y += 32)
        for (int x = 0; x + 64 <= 340; x += 32) ++count;
    CHECK(count == 162);

    const auto patches = patchify(make(96, 96), 64, 32);
    CHECK(patches[0].h == 64);
    CHECK(patches[0].w == 64);
}

TEST_CASE("hsc1 files round trip at float precision") {
    auto [cube, pf] = generate_scene(8, 8, 12, 11);
    const std::string path = "test_cube.hsc1";
    save_hsc1(cube, path);
    const HyperCube back = load_hsc1(path);
    CHECK(back.h == cube.h);
    CHECK(back.w == cube.w);
    CHECK(back.b == cube.b);
    for (size_t i = 0; i < cube.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(cube.data[i]).epsilon(1e-6));
    // truncated file
    {
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f);
        std::fclose(f);
        std::FILE* g = std::fopen("trunc.hsc1", "wb");
        std::fwrite("HSC1\x08\x00\x00\x00", 1, 8, g);
        std::fclose(g);
        CHECK_THROWS_AS(load_hsc1("trunc.hsc1"), FormatError);
    }
    std::remove(path.c_str());
    std::remove("trunc.hsc1");
}

TEST_CASE("layout conversion is invertible") {
    auto [cube, pf] = generate_scene(8, 8, 12, 13);
    const Tensor t = cube_to_chw(cube);
    const HyperCube back = chw_to_cube(t, cube.wavelengths, cube.domain);
    CHECK(back.data == cube.data);
}
