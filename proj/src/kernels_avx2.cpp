#include "abd/kernels.hpp"

#if defined(ABD_WITH_AVX2)

#include <immintrin.h>

namespace abd::kern {
namespace {

void add_v(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_v(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_v(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void div_v(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}

void scale_shift_v(double a, double b, const double* x, double* out, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(va, _mm256_loadu_pd(x + i)), vb));
    for (; i < n; ++i) out[i] = a * x[i] + b;
}

void axpy_v(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void fmacc_v(const double* x, const double* y, double* acc, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(acc + i);
        const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(acc + i, _mm256_add_pd(va, p));
    }
    for (; i < n; ++i) acc[i] += x[i] * y[i];
}

// Horizontal reduce matching the scalar reference order: (l0+l2) + (l1+l3).
double hreduce(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

double sum_v(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double tail = 0.0;
    for (; i < n; ++i) tail += x[i];
    return hreduce(acc) + tail;
}

double dot_v(const double* x, const double* y, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    double tail = 0.0;
    for (; i < n; ++i) tail += x[i] * y[i];
    return hreduce(acc) + tail;
}

} // namespace

const Kernels* avx2_impl() {
    static const Kernels k = {
        "avx2", add_v, sub_v, mul_v, div_v, scale_shift_v, axpy_v, fmacc_v, sum_v, dot_v,
    };
    return &k;
}

} // namespace abd::kern

#else

namespace abd::kern {
const Kernels* avx2_impl() { return nullptr; }
} // namespace abd::kern

#endif
