#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "abd/rng.hpp"
#include "abd/scene.hpp"
#include "abd/sensor.hpp"

using namespace abd;
using namespace abd::srf;

namespace {

scene::HyperCube test_cube(int h = 8, int w = 8, int b = 12, uint64_t seed = 5) {
    return scene::generate_scene(h, w, b, seed).first;
}

} // namespace

TEST_CASE("spline interpolates exactly at knots") {
    const std::vector<double> xs{500, 520, 540, 560, 580};
    const std::vector<double> ys{0.1, 0.9, 0.4, 0.7, 0.2};
    const CubicSpline s(xs, ys);
    for (size_t i = 0; i < xs.size(); ++i) CHECK(s.eval(xs[i]) == doctest::Approx(ys[i]).epsilon(1e-12));
    CHECK(s.eval(499.999) == 0.0); // finite support
    CHECK(s.eval(580.001) == 0.0);
}

TEST_CASE("constant response resamples to uniform in-support weights") {
    SrfBand band;
    band.grid_nm = {500, 600, 700, 800};
    band.response = {0.5, 0.5, 0.5, 0.5};
    const auto targets = scene::default_wavelengths(12);
    const auto w = resample_srf(band, targets);
    int support = 0;
    for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] >= 500.0 && targets[i] <= 800.0) ++support;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] >= 500.0 && targets[i] <= 800.0)
            CHECK(w[i] == doctest::Approx(1.0 / support).epsilon(1e-9));
        else
            CHECK(w[i] == 0.0);
    }
}

TEST_CASE("gaussian srf matches the analytic curve after resampling") {
    SrfBand band;
    const double mu = 665.0, sigma = 20.0;
    for (double x = mu - 5.0 * sigma; x <= mu + 5.0 * sigma + 1e-9; x += 5.0) {
        band.grid_nm.push_back(x);
        band.response.push_back(std::exp(-(x - mu) * (x - mu) / (2.0 * sigma * sigma)));
    }
    const auto targets = scene::default_wavelengths(12);
    const auto w = resample_srf(band, targets);
    // analytic oracle: normalized gaussian over the in-support centers
    std::vector<double> expect(targets.size(), 0.0);
    double total = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < band.grid_nm.front() || targets[i] > band.grid_nm.back()) continue;
        expect[i] = std::exp(-(targets[i] - mu) * (targets[i] - mu) / (2.0 * sigma * sigma));
        total += expect[i];
    }
    for (double& v : expect) v /= total;
    for (size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - expect[i]) < 1e-3);
}

TEST_CASE("degenerate band is rejected") {
    SrfBand band;
    band.grid_nm = {650.0};
    band.response = {1.0};
    CHECK_THROWS_AS(resample_srf(band, scene::default_wavelengths(12)), DomainError);
}

TEST_CASE("identity sensor reproduces the cube") {
    const auto cube = test_cube();
    const auto obs = apply_srf(cube, identity_sensor(cube.wavelengths));
    CHECK(obs.warnings.empty());
    for (size_t i = 0; i < cube.data.size(); ++i) {
        CHECK(obs.x_obs.data[i] == doctest::Approx(cube.data[i]).epsilon(1e-12));
        CHECK(obs.m_sens[i] == 1.0);
    }
}

TEST_CASE("single-band sensor occupies exactly one slice") {
    const auto cube = test_cube();
    SensorSrf s;
    s.name = "nir_only";
    SrfBand band;
    for (double x = 842.0 - 30.0; x <= 842.0 + 30.0 + 1e-9; x += 5.0) {
        band.grid_nm.push_back(x);
        band.response.push_back(std::exp(-(x - 842.0) * (x - 842.0) / (2.0 * 10.0 * 10.0)));
    }
    s.bands.push_back(band);
    const auto obs = apply_srf(cube, s);
    std::vector<int> occupied;
    for (int k = 0; k < cube.b; ++k)
        if (obs.m_sens[static_cast<size_t>(k)] > 0.0) occupied.push_back(k);
    CHECK(occupied.size() == 1);
}

TEST_CASE("three-band sensor values equal brute-force weighted means") {
    const auto cube = test_cube();
    SensorSrf s;
    s.name = "rgbish";
    for (double mu : {480.0, 560.0, 665.0}) {
        SrfBand band;
        for (double x = mu - 45.0; x <= mu + 45.0 + 1e-9; x += 5.0) {
            band.grid_nm.push_back(x);
            band.response.push_back(std::exp(-(x - mu) * (x - mu) / (2.0 * 15.0 * 15.0)));
        }
        s.bands.push_back(band);
    }
    const auto obs = apply_srf(cube, s);

    int occupied = 0;
    for (int k = 0; k < cube.b; ++k) occupied += obs.m_sens[static_cast<size_t>(k)] > 0.0 ? 1 : 0;
    CHECK(occupied == 3);

    for (const SrfBand& band : s.bands) {
        const auto w = resample_srf(band, cube.wavelengths);
        double center = 0.0;
        for (size_t i = 0; i < w.size(); ++i) center += w[i] * cube.wavelengths[i];
        const int slot = scene::nearest_band(cube.wavelengths, center);
        for (int y = 0; y < cube.h; ++y)
            for (int x = 0; x < cube.w; ++x) {
                double want = 0.0;
                for (int k = 0; k < cube.b; ++k) want += w[static_cast<size_t>(k)] * cube.at(y, x, k);
                CHECK(obs.x_obs.at(y, x, slot) == doctest::Approx(want).epsilon(1e-12));
            }
    }
}

TEST_CASE("dsm with zero dropout and identity sensor keeps everything") {
    const auto cube = scene::normalize(test_cube());
    const std::vector<SensorSrf> lib{identity_sensor(cube.wavelengths)};
    const ConditionPair pair = dsm_mask(cube, lib, 0.0, MaskMode::kPerBand, 3);
    for (size_t i = 0; i < cube.data.size(); ++i) {
        CHECK(pair.m[i] == 1.0);
        CHECK(pair.c[i] == doctest::Approx(cube.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("dsm kept fraction tracks the dropout rate") {
    const auto cube = scene::normalize(test_cube(8, 8, 12));
    const std::vector<SensorSrf> lib{identity_sensor(cube.wavelengths)};
    const int draws = 10000;
    const double p_drop = 0.3;
    int kept = 0;
    for (int i = 0; i < draws; ++i) {
        const ConditionPair pair = dsm_mask(cube, lib, p_drop, MaskMode::kPerBand, 1000 + i);
        for (int band = 0; band < cube.b; ++band) kept += pair.mv(0, 0, band) > 0.0 ? 1 : 0;
    }
    const double n = static_cast<double>(draws) * cube.b;
    const double mean = kept / n;
    const double sigma = std::sqrt(p_drop * (1.0 - p_drop) / n);
    CHECK(std::abs(mean - (1.0 - p_drop)) < 3.0 * sigma);
}

TEST_CASE("dsm is deterministic in the seed") {
    const auto cube = scene::normalize(test_cube());
    const std::vector<SensorSrf> lib = builtin_library(cube.wavelengths);
    const ConditionPair a = dsm_mask(cube, lib, 0.5, MaskMode::kPerBand, 42);
    const ConditionPair b = dsm_mask(cube, lib, 0.5, MaskMode::kPerBand, 42);
    CHECK(a.m == b.m);
    CHECK(a.c == b.c);
    const ConditionPair c = dsm_mask(cube, lib, 0.5, MaskMode::kPerBand, 43);
    CHECK(a.m != c.m); // different seed, different draw (with near certainty)
}

TEST_CASE("mask consistency invariants hold for both modes") {
    const auto cube = scene::normalize(test_cube());
    const std::vector<SensorSrf> lib = builtin_library(cube.wavelengths);
    for (MaskMode mode : {MaskMode::kPerBand, MaskMode::kPerElement}) {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            const ConditionPair pair = dsm_mask(cube, lib, 0.4, mode, seed);
            const auto obs = apply_srf(scene::denormalize(cube), lib[Rng::derive(seed, 0xd5a).below(lib.size())]);
            for (size_t i = 0; i < pair.m.size(); ++i) {
                CHECK((pair.m[i] == 0.0 || pair.m[i] == 1.0));
                if (pair.m[i] == 0.0) CHECK(pair.c[i] == 0.0);     // C (1-M) = 0
                CHECK(pair.m[i] <= obs.m_sens[i]);                 // M <= M_sens
            }
        }
    }
}

TEST_CASE("srf weights are a partition of unity or all zero") {
    const auto lib = builtin_library(scene::default_wavelengths(12));
    CHECK(lib.size() == 15);
    for (const SensorSrf& s : lib)
        for (const SrfBand& band : s.bands) {
            const auto w = resample_srf(band, scene::default_wavelengths(12));
            double total = 0.0;
            for (double v : w) {
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK((std::abs(total - 1.0) < 1e-9 || total == 0.0));
        }
}

TEST_CASE("p_drop sampling matches its uniform law") {
    const int draws = 10000;
    double mean = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double v = sample_p_drop(static_cast<uint64_t>(i));
        CHECK(v >= 0.1);
        CHECK(v <= 0.7);
        mean += v;
    }
    mean /= draws;
    const double sigma = (0.7 - 0.1) / std::sqrt(12.0) / std::sqrt(static_cast<double>(draws));
    CHECK(std::abs(mean - 0.4) < 3.0 * sigma);
    CHECK(sample_p_drop(99) == sample_p_drop(99));
}

TEST_CASE("library json round trips") {
    const auto lib = builtin_library(scene::default_wavelengths(12));
    const std::string text = library_to_json(lib);
    const auto back = library_from_json(text);
    REQUIRE(back.size() == lib.size());
    for (size_t i = 0; i < lib.size(); ++i) {
        CHECK(back[i].name == lib[i].name);
        REQUIRE(back[i].bands.size() == lib[i].bands.size());
        for (size_t j = 0; j < lib[i].bands.size(); ++j)
            CHECK(back[i].bands[j].response == lib[i].bands[j].response);
    }
    CHECK_THROWS_AS(library_from_json("{\"not\": \"an array\"}"), FormatError);
    CHECK_THROWS_AS(dsm_mask(scene::normalize(test_cube()), {}, 0.5, MaskMode::kPerBand, 1), DomainError);
}
