#include "abd/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace abd::metrics {

namespace {

void check_pair(const scene::HyperCube& x, const scene::HyperCube& y) {
    if (x.h != y.h || x.w != y.w || x.b != y.b) throw ShapeError("cube shapes differ");
    if (x.domain != scene::Domain::kPhysical || y.domain != scene::Domain::kPhysical)
        throw DomainError("metrics operate on the physical domain");
}

double mse(const scene::HyperCube& x, const scene::HyperCube& y) {
    double s = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - y.data[i];
        s += d * d;
    }
    return s / static_cast<double>(x.data.size());
}

// 11x11 Gaussian window, sigma 1.5, normalized
const std::array<double, 11>& ssim_window() {
    static const std::array<double, 11> w = [] {
        std::array<double, 11> v{};
        double total = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5.0;
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            total += v[static_cast<size_t>(i)];
        }
        for (double& x : v) x /= total;
        return v;
    }();
    return w;
}

} // namespace

double psnr(const scene::HyperCube& x, const scene::HyperCube& y) {
    check_pair(x, y);
    const double m = mse(x, y);
    if (m == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double rmse(const scene::HyperCube& x, const scene::HyperCube& y) {
    check_pair(x, y);
    return std::sqrt(mse(x, y));
}

double ssim(const scene::HyperCube& x, const scene::HyperCube& y) {
    check_pair(x, y);
    if (x.h < 11 || x.w < 11) throw ShapeError("ssim needs at least 11x11 images");
    constexpr double c1 = 0.01 * 0.01; // (K1 * L)^2 with L = 1
    constexpr double c2 = 0.03 * 0.03;
    const auto& win = ssim_window();

    double band_accum = 0.0;
    for (int band = 0; band < x.b; ++band) {
        double plane_accum = 0.0;
        int count = 0;
        for (int cy = 5; cy < x.h - 5; ++cy)
            for (int cx = 5; cx < x.w - 5; ++cx) {
                double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
                for (int dy = -5; dy <= 5; ++dy)
                    for (int dx = -5; dx <= 5; ++dx) {
                        const double wgt = win[static_cast<size_t>(dy + 5)] * win[static_cast<size_t>(dx + 5)];
                        const double a = x.at(cy + dy, cx + dx, band);
                        const double b = y.at(cy + dy, cx + dx, band);
                        mx += wgt * a;
                        my += wgt * b;
                        sxx += wgt * a * a;
                        syy += wgt * b * b;
                        sxy += wgt * a * b;
                    }
                const double vx = sxx - mx * mx;
                const double vy = syy - my * my;
                const double cov = sxy - mx * my;
                plane_accum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                               ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        band_accum += plane_accum / count;
    }
    return band_accum / x.b;
}

double sam(const scene::HyperCube& x, const scene::HyperCube& y) {
    check_pair(x, y);
    double total = 0.0;
    for (int py = 0; py < x.h; ++py)
        for (int px = 0; px < x.w; ++px) {
            double nx = 0.0, ny = 0.0;
            for (int band = 0; band < x.b; ++band) {
                nx += x.at(py, px, band) * x.at(py, px, band);
                ny += y.at(py, px, band) * y.at(py, px, band);
            }
            const double inx = 1.0 / std::max(1e-8, std::sqrt(nx));
            const double iny = 1.0 / std::max(1e-8, std::sqrt(ny));
            // chord form of the angle: stable where acos(dot) would amplify rounding
            double chord2 = 0.0;
            for (int band = 0; band < x.b; ++band) {
                const double d = x.at(py, px, band) * inx - y.at(py, px, band) * iny;
                chord2 += d * d;
            }
            total += 2.0 * std::asin(std::min(1.0, 0.5 * std::sqrt(chord2)));
        }
    return total / (static_cast<double>(x.h) * x.w);
}

IndexConsistency index_consistency(const scene::HyperCube& x, const scene::HyperCube& y, phys::IndexKind kind) {
    check_pair(x, y);
    const std::vector<double> a = phys::spectral_index(x, kind);
    const std::vector<double> b = phys::spectral_index(y, kind);
    const double n = static_cast<double>(a.size());

    IndexConsistency out;
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0, se = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
        const double d = a[i] - b[i];
        se += d * d;
    }
    out.rmse = std::sqrt(se / n);
    if (saa <= 1e-18 || sbb <= 1e-18) { // constant map up to rounding
        out.cc = 0.0;
        out.degenerate = true;
    } else {
        out.cc = sab / std::sqrt(saa * sbb);
    }
    return out;
}

Report evaluate(const scene::HyperCube& pred, const scene::HyperCube& truth, const std::string& method,
                double mask_ratio, uint64_t seed) {
    Report r;
    r.method = method;
    r.mask_ratio = mask_ratio;
    r.seed = seed;
    r.psnr_db = psnr(pred, truth);
    r.ssim_v = ssim(pred, truth);
    r.rmse_v = rmse(pred, truth);
    r.sam_rad = sam(pred, truth);
    r.ndvi = index_consistency(pred, truth, phys::IndexKind::kNdvi);
    r.ndwi = index_consistency(pred, truth, phys::IndexKind::kNdwi);
    return r;
}

std::string csv_header() {
    return "method,mask_ratio,seed,psnr,ssim,rmse,sam,ndvi_cc,ndvi_rmse,ndwi_cc,ndwi_rmse";
}

std::string csv_row(const Report& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%.6g,%llu,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g",
                  r.method.c_str(), r.mask_ratio, static_cast<unsigned long long>(r.seed), r.psnr_db, r.ssim_v,
                  r.rmse_v, r.sam_rad, r.ndvi.cc, r.ndvi.rmse, r.ndwi.cc, r.ndwi.rmse);
    return buf;
}

} // namespace abd::metrics
