#include "abd/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace abd::kern {

const Kernels* avx2_impl(); // defined in kernels_avx2.cpp

const Kernels* avx2() {
#if defined(ABD_WITH_AVX2)
    if (__builtin_cpu_supports("avx2")) return avx2_impl();
#endif
    return nullptr;
}

const Kernels& active() {
    static const Kernels* selected = [] {
        const char* forced = std::getenv("ABD_KERNELS");
        if (forced && std::strcmp(forced, "scalar") == 0) return &scalar();
        if (const Kernels* v = avx2()) return v;
        return &scalar();
    }();
    return *selected;
}

std::vector<const Kernels*> all_variants() {
    std::vector<const Kernels*> out{&scalar()};
    if (const Kernels* v = avx2()) out.push_back(v);
    return out;
}

} // namespace abd::kern
