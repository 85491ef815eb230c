#ifndef ABD_KERNELS_HPP
#define ABD_KERNELS_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace abd::kern {

// Dense f64 primitives behind the tensor engine. Each entry has a scalar
// reference implementation and, on x86-64, an AVX2 variant selected once at
// startup from CPUID. Elementwise kernels are bit-identical across variants;
// the reductions (sum/dot) differ only by accumulation order and are
// equivalence-tested against the scalar reference under a tight tolerance.
struct Kernels {
    const char* name;

    void (*add)(const double* a, const double* b, double* out, size_t n);
    void (*sub)(const double* a, const double* b, double* out, size_t n);
    void (*mul)(const double* a, const double* b, double* out, size_t n);
    void (*div)(const double* a, const double* b, double* out, size_t n);

    // out = a*x + b
    void (*scale_shift)(double a, double b, const double* x, double* out, size_t n);
    // y += a*x
    void (*axpy)(double a, const double* x, double* y, size_t n);
    // acc += x*y elementwise
    void (*fmacc)(const double* x, const double* y, double* acc, size_t n);

    double (*sum)(const double* x, size_t n);
    double (*dot)(const double* x, const double* y, size_t n);
};

const Kernels& scalar();

// nullptr when the build or the host CPU lacks AVX2.
const Kernels* avx2();

// Selected at first use: AVX2 when available unless ABD_KERNELS=scalar is set
// in the environment.
const Kernels& active();

// Every variant compiled into this binary, for equivalence tests.
std::vector<const Kernels*> all_variants();

} // namespace abd::kern

#endif
