#ifndef ABD_TENSOR_HPP
#define ABD_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <vector>

#include "abd/errors.hpp"

namespace abd {

// Dense row-major f64 tensor. All arithmetic in the repository is 64-bit.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length does not match shape");
    }

    static int64_t numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s, bool rg = false) {
        int64_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0), rg);
    }

    static Tensor full(std::vector<int> s, double v, bool rg = false) {
        int64_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v), rg);
    }

    static Tensor scalar(double v, bool rg = false) { return Tensor({1}, {v}, rg); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

} // namespace abd

#endif
