#include "abd/kernels.hpp"

namespace abd::kern {
namespace {

void add_s(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_s(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_s(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div_s(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void scale_shift_s(double a, double b, const double* x, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a * x[i] + b;
}

void axpy_s(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void fmacc_s(const double* x, const double* y, double* acc, size_t n) {
    for (size_t i = 0; i < n; ++i) acc[i] += x[i] * y[i];
}

// Reductions use four interleaved accumulators so the scalar reference and the
// 4-lane AVX2 variant share one summation order (lane j picks indices i % 4 == j)
// and agree bit-for-bit on the block part; only the tail handling can differ
// by rounding when n is not a multiple of 4.
double sum_s(const double* x, size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc[0] += x[i + 0];
        acc[1] += x[i + 1];
        acc[2] += x[i + 2];
        acc[3] += x[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += x[i];
    return ((acc[0] + acc[2]) + (acc[1] + acc[3])) + tail;
}

double dot_s(const double* x, const double* y, size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc[0] += x[i + 0] * y[i + 0];
        acc[1] += x[i + 1] * y[i + 1];
        acc[2] += x[i + 2] * y[i + 2];
        acc[3] += x[i + 3] * y[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += x[i] * y[i];
    return ((acc[0] + acc[2]) + (acc[1] + acc[3])) + tail;
}

} // namespace

const Kernels& scalar() {
    static const Kernels k = {
        "scalar", add_s, sub_s, mul_s, div_s, scale_shift_s, axpy_s, fmacc_s, sum_s, dot_s,
    };
    return k;
}

} // namespace abd::kern
