#include "abd/baseline.hpp"

namespace abd::baseline {

scene::HyperCube interpolate_bands(const srf::ConditionPair& pair, const std::vector<double>& wavelengths) {
    scene::HyperCube out;
    out.h = pair.h;
    out.w = pair.w;
    out.b = pair.b;
    out.wavelengths = wavelengths;
    out.domain = scene::Domain::kPhysical;
    out.data.assign(static_cast<size_t>(pair.h) * pair.w * pair.b, 0.0);

    for (int y = 0; y < pair.h; ++y)
        for (int x = 0; x < pair.w; ++x) {
            for (int band = 0; band < pair.b; ++band) {
                if (pair.mv(y, x, band) > 0.0) {
                    out.at(y, x, band) = 0.5 * (pair.cv(y, x, band) + 1.0);
                    continue;
                }
                int left = -1, right = -1;
                for (int k = band - 1; k >= 0; --k)
                    if (pair.mv(y, x, k) > 0.0) {
                        left = k;
                        break;
                    }
                for (int k = band + 1; k < pair.b; ++k)
                    if (pair.mv(y, x, k) > 0.0) {
                        right = k;
                        break;
                    }
                double v;
                if (left >= 0 && right >= 0) {
                    const double vl = 0.5 * (pair.cv(y, x, left) + 1.0);
                    const double vr = 0.5 * (pair.cv(y, x, right) + 1.0);
                    const double f = (wavelengths[static_cast<size_t>(band)] - wavelengths[static_cast<size_t>(left)]) /
                                     (wavelengths[static_cast<size_t>(right)] - wavelengths[static_cast<size_t>(left)]);
                    v = vl + (vr - vl) * f;
                } else if (left >= 0) {
                    v = 0.5 * (pair.cv(y, x, left) + 1.0);
                } else if (right >= 0) {
                    v = 0.5 * (pair.cv(y, x, right) + 1.0);
                } else {
                    v = 0.5; // nothing observed anywhere in this pixel
                }
                out.at(y, x, band) = v;
            }
        }
    return out;
}

} // namespace abd::baseline
