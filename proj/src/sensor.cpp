#include "abd/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "abd/rng.hpp"

namespace abd::srf {

// ---- natural cubic spline ----------------------------------------------------

CubicSpline::CubicSpline(const std::vector<double>& xs, const std::vector<double>& ys) : xs_(xs), ys_(ys) {
    const size_t n = xs.size();
    if (n < 2 || ys.size() != n) throw DomainError("spline needs at least 2 knots");
    for (size_t i = 1; i < n; ++i)
        if (xs[i] <= xs[i - 1]) throw DomainError("spline knots must be strictly increasing");

    // tridiagonal solve for second derivatives, natural boundary (m_0 = m_{n-1} = 0)
    m_.assign(n, 0.0);
    if (n == 2) return;
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (size_t i = 1; i + 1 < n; ++i) {
        const double h0 = xs[i] - xs[i - 1];
        const double h1 = xs[i + 1] - xs[i];
        a[i] = h0;
        b[i] = 2.0 * (h0 + h1);
        c[i] = h1;
        d[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    // forward sweep over the interior rows
    for (size_t i = 2; i + 1 < n; ++i) {
        const double f = a[i] / b[i - 1];
        b[i] -= f * c[i - 1];
        d[i] -= f * d[i - 1];
    }
    for (size_t i = n - 2; i >= 1; --i) {
        m_[i] = (d[i] - c[i] * (i + 2 < n ? m_[i + 1] : 0.0)) / b[i];
        if (i == 1) break;
    }
}

double CubicSpline::eval(double x) const {
    if (x < xs_.front() || x > xs_.back()) return 0.0; // SRFs have finite support
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    const size_t i = it == xs_.begin() ? 0 : static_cast<size_t>(it - xs_.begin()) - 1;
    const size_t j = std::min(i, xs_.size() - 2);
    const double h = xs_[j + 1] - xs_[j];
    const double t0 = xs_[j + 1] - x;
    const double t1 = x - xs_[j];
    return (m_[j] * t0 * t0 * t0 + m_[j + 1] * t1 * t1 * t1) / (6.0 * h) +
           (ys_[j] / h - m_[j] * h / 6.0) * t0 + (ys_[j + 1] / h - m_[j + 1] * h / 6.0) * t1;
}

// ---- resampling --------------------------------------------------------------

std::vector<double> resample_srf(const SrfBand& band, const std::vector<double>& target_wavelengths,
                                 double* raw_total) {
    for (size_t i = 1; i < target_wavelengths.size(); ++i)
        if (target_wavelengths[i] <= target_wavelengths[i - 1])
            throw DomainError("target wavelengths must be strictly increasing");
    const CubicSpline spline(band.grid_nm, band.response);
    std::vector<double> w(target_wavelengths.size());
    double raw = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        w[i] = spline.eval(target_wavelengths[i]);
        raw += w[i];
    }
    if (raw_total) *raw_total = raw;
    double total = 0.0;
    for (double& v : w) {
        if (v < 0.0) v = 0.0;
        total += v;
    }
    if (total <= 0.0) return std::vector<double>(w.size(), 0.0);
    for (double& v : w) v /= total;
    return w;
}

Observation apply_srf(const scene::HyperCube& physical, const SensorSrf& sensor) {
    if (physical.domain != scene::Domain::kPhysical) throw DomainError("apply_srf expects a physical cube");
    Observation obs;
    obs.x_obs = physical;
    std::fill(obs.x_obs.data.begin(), obs.x_obs.data.end(), 0.0);
    obs.m_sens.assign(physical.data.size(), 0.0);

    const int b = physical.b;
    std::vector<char> occupied(static_cast<size_t>(b), 0);
    std::vector<double> slot_score(static_cast<size_t>(b), 0.0); // raw spline total of the winner

    for (const SrfBand& band : sensor.bands) {
        double raw = 0.0;
        const std::vector<double> w = resample_srf(band, physical.wavelengths, &raw);
        double wsum = 0.0, center = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            wsum += w[i];
            center += w[i] * physical.wavelengths[i];
        }
        if (wsum <= 0.0) continue; // no in-support overlap with the native grid
        const int slot = scene::nearest_band(physical.wavelengths, center);
        if (occupied[static_cast<size_t>(slot)]) {
            obs.warnings.push_back("band collision at slot " + std::to_string(slot) + " of sensor " + sensor.name);
            if (raw <= slot_score[static_cast<size_t>(slot)]) continue;
        }
        occupied[static_cast<size_t>(slot)] = 1;
        slot_score[static_cast<size_t>(slot)] = raw;
        for (int y = 0; y < physical.h; ++y)
            for (int x = 0; x < physical.w; ++x) {
                double v = 0.0;
                for (int k = 0; k < b; ++k) v += w[static_cast<size_t>(k)] * physical.at(y, x, k);
                obs.x_obs.at(y, x, slot) = v;
                obs.m_sens[(static_cast<size_t>(y) * physical.w + x) * b + slot] = 1.0;
            }
    }
    return obs;
}

// ---- dual stochastic masking ---------------------------------------------------

ConditionPair dsm_mask(const scene::HyperCube& normalized, const std::vector<SensorSrf>& library,
                       double p_drop, MaskMode mode, uint64_t seed) {
    if (normalized.domain != scene::Domain::kNormalized) throw DomainError("dsm_mask expects a normalized cube");
    if (library.empty()) throw DomainError("sensor library is empty");
    if (p_drop < 0.0 || p_drop >= 1.0) throw DomainError("p_drop must lie in [0,1)");

    Rng rng = Rng::derive(seed, 0xd5a);
    const SensorSrf& sensor = library[rng.below(library.size())];

    const Observation obs = apply_srf(scene::denormalize(normalized), sensor);
    const scene::HyperCube x_obs_norm = scene::normalize(obs.x_obs);

    ConditionPair pair;
    pair.h = normalized.h;
    pair.w = normalized.w;
    pair.b = normalized.b;
    pair.p_drop_used = p_drop;
    pair.m.assign(normalized.data.size(), 0.0);
    pair.c.assign(normalized.data.size(), 0.0);

    const int b = normalized.b;
    std::vector<double> band_keep(static_cast<size_t>(b), 1.0);
    if (mode == MaskMode::kPerBand)
        for (double& keep : band_keep) keep = rng.bernoulli(1.0 - p_drop) ? 1.0 : 0.0;

    for (size_t i = 0; i < pair.m.size(); ++i) {
        double keep = obs.m_sens[i] * band_keep[i % static_cast<size_t>(b)];
        if (mode == MaskMode::kPerElement && keep > 0.0)
            keep = rng.bernoulli(1.0 - p_drop) ? 1.0 : 0.0;
        pair.m[i] = keep;
        pair.c[i] = keep > 0.0 ? x_obs_norm.data[i] : 0.0;
    }
    return pair;
}

double sample_p_drop(uint64_t seed) {
    Rng rng = Rng::derive(seed, 0x9d);
    return rng.uniform(0.1, 0.7);
}

// ---- built-in sensors ----------------------------------------------------------

SensorSrf identity_sensor(const std::vector<double>& wavelengths) {
    SensorSrf s;
    s.name = "identity";
    for (double c : wavelengths) {
        SrfBand band;
        band.grid_nm = {c - 1.0, c, c + 1.0};
        band.response = {0.0, 1.0, 0.0};
        s.bands.push_back(std::move(band));
    }
    return s;
}

std::vector<SensorSrf> builtin_library(const std::vector<double>& native_wavelengths) {
    const double lo = native_wavelengths.front();
    const double hi = native_wavelengths.back();
    std::vector<SensorSrf> lib;
    Rng rng(0xab5e50u);
    for (int k = 0; k < 15; ++k) {
        SensorSrf s;
        s.name = "gauss" + std::to_string(k + 1);
        const int nbands = 1 + static_cast<int>(rng.below(12));
        for (int i = 0; i < nbands; ++i) {
            const double center = nbands == 1 ? 0.5 * (lo + hi)
                                              : lo + (hi - lo) * (i + rng.uniform(0.2, 0.8)) / nbands;
            const double sigma = rng.uniform(10.0, 40.0);
            SrfBand band;
            for (double x = center - 3.0 * sigma; x <= center + 3.0 * sigma + 1e-9; x += 5.0) {
                band.grid_nm.push_back(x);
                band.response.push_back(std::exp(-(x - center) * (x - center) / (2.0 * sigma * sigma)));
            }
            s.bands.push_back(std::move(band));
        }
        lib.push_back(std::move(s));
    }
    return lib;
}

// ---- JSON I/O -------------------------------------------------------------------

std::string library_to_json(const std::vector<SensorSrf>& library) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SensorSrf& s : library) {
        nlohmann::json bands = nlohmann::json::array();
        for (const SrfBand& b : s.bands) bands.push_back({{"grid_nm", b.grid_nm}, {"response", b.response}});
        arr.push_back({{"name", s.name}, {"bands", bands}});
    }
    return arr.dump(2);
}

std::vector<SensorSrf> library_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("SRF JSON: ") + e.what());
    }
    if (!arr.is_array()) throw FormatError("SRF library must be a JSON array");
    std::vector<SensorSrf> lib;
    for (const auto& js : arr) {
        SensorSrf s;
        s.name = js.at("name").get<std::string>();
        for (const auto& jb : js.at("bands")) {
            SrfBand b;
            b.grid_nm = jb.at("grid_nm").get<std::vector<double>>();
            b.response = jb.at("response").get<std::vector<double>>();
            if (b.grid_nm.size() != b.response.size()) throw FormatError("SRF band grid/response length mismatch");
            bool positive = false;
            for (double v : b.response) {
                if (v < 0.0) throw FormatError("SRF responses must be non-negative");
                positive = positive || v > 0.0;
            }
            if (!positive) throw FormatError("SRF band has no positive response");
            s.bands.push_back(std::move(b));
        }
        lib.push_back(std::move(s));
    }
    return lib;
}

std::vector<SensorSrf> load_library(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return library_from_json(ss.str());
}

void save_library(const std::vector<SensorSrf>& library, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << library_to_json(library) << "\n";
}

} // namespace abd::srf
