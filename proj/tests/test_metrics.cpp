#include <doctest.h>

#include <cmath>

#include "abd/metrics.hpp"
#include "abd/rng.hpp"
#include "abd/scene.hpp"

using namespace abd;
using namespace abd::metrics;

namespace {

scene::HyperCube big_scene(uint64_t seed) { return scene::generate_scene(16, 16, 12, seed).first; }

} // namespace

TEST_CASE("psnr values") {
    const auto x = big_scene(1);
    CHECK(psnr(x, x) == kPsnrCap);

    scene::HyperCube y = x;
    for (double& v : y.data) v = std::min(1.0, v + 0.1); // keep the domain legal
    // construct an exact mse 0.01 pair instead: offset both around 0.5
    scene::HyperCube a = x, b = x;
    for (size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = 0.45;
        b.data[i] = 0.55;
    }
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(rmse(a, b) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("psnr and rmse satisfy their logarithmic relation") {
    const auto x = big_scene(2);
    auto y = big_scene(3);
    const double p = psnr(x, y);
    const double r = rmse(x, y);
    CHECK(std::abs(p - (-20.0 * std::log10(r))) < 1e-9);
}

TEST_CASE("ssim identity, symmetry, and contrast inversion") {
    const auto x = big_scene(4);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    scene::HyperCube inv = x;
    for (double& v : inv.data) v = 1.0 - v;
    CHECK(ssim(x, inv) < 0.5);

    const auto y = big_scene(5);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(rmse(x, y) == doctest::Approx(rmse(y, x)).epsilon(1e-15));

    scene::HyperCube tiny;
    tiny.h = 8;
    tiny.w = 8;
    tiny.b = 4;
    tiny.wavelengths = scene::default_wavelengths(4);
    tiny.data.assign(256, 0.5);
    CHECK_THROWS_AS(ssim(tiny, tiny), ShapeError);
}

TEST_CASE("sam geometry") {
    const auto x = big_scene(6);
    CHECK(sam(x, x) == doctest::Approx(0.0).epsilon(1e-12));

    // positive per-pixel scaling is invisible to the spectral angle
    scene::HyperCube scaled = x;
    Rng rng(7);
    for (int y = 0; y < x.h; ++y)
        for (int px = 0; px < x.w; ++px) {
            const double f = rng.uniform(0.5, 1.0);
            for (int b = 0; b < x.b; ++b) scaled.at(y, px, b) = x.at(y, px, b) * f;
        }
    CHECK(sam(x, scaled) < 1e-9);

    // orthogonal spectra: angle pi/2
    scene::HyperCube u, v;
    u.h = v.h = 11;
    u.w = v.w = 11;
    u.b = v.b = 4;
    u.wavelengths = v.wavelengths = scene::default_wavelengths(4);
    u.data.assign(11 * 11 * 4, 0.0);
    v.data.assign(11 * 11 * 4, 0.0);
    for (int p = 0; p < 121; ++p) {
        u.data[static_cast<size_t>(p) * 4 + 0] = 1.0;
        v.data[static_cast<size_t>(p) * 4 + 1] = 1.0;
    }
    CHECK(sam(u, v) == doctest::Approx(3.14159265358979 / 2.0).epsilon(1e-9));
}

TEST_CASE("rmse of a constant offset") {
    scene::HyperCube a = big_scene(8), b = a;
    for (double& v : a.data) v = 0.40;
    for (double& v : b.data) v = 0.45;
    CHECK(rmse(a, b) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("index consistency identity and scaling invariance") {
    const auto x = big_scene(9);
    const IndexConsistency id = index_consistency(x, x, phys::IndexKind::kNdvi);
    CHECK(id.cc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(id.rmse == 0.0);
    CHECK(!id.degenerate);

    scene::HyperCube scaled = x;
    Rng rng(10);
    for (int y = 0; y < x.h; ++y)
        for (int px = 0; px < x.w; ++px) {
            const double f = rng.uniform(0.6, 1.0);
            for (int b = 0; b < x.b; ++b) scaled.at(y, px, b) = x.at(y, px, b) * f;
        }
    const IndexConsistency sc = index_consistency(scaled, x, phys::IndexKind::kNdvi);
    CHECK(sc.cc > 1.0 - 1e-9);
}

TEST_CASE("index consistency matches a brute-force pearson oracle") {
    const auto x = big_scene(11);
    const auto y = big_scene(12);
    const IndexConsistency got = index_consistency(x, y, phys::IndexKind::kNdwi);

    const auto a = phys::spectral_index(x, phys::IndexKind::kNdwi);
    const auto b = phys::spectral_index(y, phys::IndexKind::kNdwi);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    CHECK(std::abs(got.cc - cov / std::sqrt(va * vb)) < 1e-10);
}

TEST_CASE("zero-variance maps are flagged degenerate") {
    scene::HyperCube flat = big_scene(13);
    for (double& v : flat.data) v = 0.3;
    const IndexConsistency d = index_consistency(flat, big_scene(14), phys::IndexKind::kNdvi);
    CHECK(d.cc == 0.0);
    CHECK(d.degenerate);
}

TEST_CASE("report rows carry every metric") {
    const auto x = big_scene(15);
    const Report r = evaluate(x, x, "self", 0.0, 77);
    CHECK(r.psnr_db == kPsnrCap);
    CHECK(r.ssim_v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.sam_rad == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.ndvi.cc == doctest::Approx(1.0).epsilon(1e-12));
    const std::string row = csv_row(r);
    CHECK(row.find("self,") == 0);
    CHECK(csv_header().find("ndwi_rmse") != std::string::npos);
}
