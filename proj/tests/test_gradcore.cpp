#include <doctest.h>

#include <cmath>

#include "abd/rng.hpp"
#include "abd/tape.hpp"

using namespace abd;
using namespace abd::ad;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double lo = -2.0, double hi = 2.0) {
    Rng rng(seed);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("elementwise forward basics") {
    Tape t;
    Var a = t.constant(Tensor({2}, {1, 2}));
    Var b = t.constant(Tensor({2}, {3, 4}));
    CHECK(t.val(add(a, b)).data == std::vector<double>{4, 6});
    CHECK(t.val(sub(a, b)).data == std::vector<double>{-2, -2});
    CHECK(t.val(mul(a, b)).data == std::vector<double>{3, 8});
    CHECK_THROWS_AS(add(a, t.constant(Tensor({3}, {1, 2, 3}))), ShapeError);
}

TEST_CASE("matmul identity") {
    Tape t;
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data[static_cast<size_t>(i) * 4] = 1.0;
    const Tensor a = random_tensor({3, 3}, 17);
    Var r = matmul(t.constant(eye), t.constant(a));
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(t.val(r).data[i] == doctest::Approx(a.data[i]).epsilon(1e-15));
}

TEST_CASE("delta kernel convolution is identity") {
    Tape t;
    const Tensor x = random_tensor({2, 5, 6}, 23);
    Tensor w = Tensor::zeros({2, 2, 3, 3});
    // kernel o<-i is delta at center only for o == i
    for (int o = 0; o < 2; ++o) w.data[(static_cast<size_t>(o) * 2 + o) * 9 + 4] = 1.0;
    Var y = conv3x3(t.constant(x), t.constant(w), t.constant(Tensor::zeros({2})));
    CHECK(t.val(y).data == x.data);
}

TEST_CASE("backward of x squared") {
    Tape t;
    Var x = t.leaf(Tensor({1}, {3.0}, true));
    Var loss = vsum(mul(x, x));
    auto grads = t.backward(loss);
    CHECK(t.grad_of(grads, x).data[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("silu gradient at zero is one half") {
    Tape t;
    Var x = t.leaf(Tensor::zeros({5}, true));
    auto grads = t.backward(vsum(silu(x)));
    for (double g : t.grad_of(grads, x).data) CHECK(g == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("non-scalar loss is rejected and unused leaves get zeros") {
    Tape t2;
    Tensor xv = random_tensor({3}, 5);
    xv.requires_grad = true;
    Var a = t2.leaf(std::move(xv));
    Tensor other = random_tensor({2}, 6);
    other.requires_grad = true;
    Var unused = t2.leaf(std::move(other));
    CHECK_THROWS_AS(t2.backward(a), ShapeError); // vector-valued "loss"
    Var loss = vsum(mul(a, a));
    auto grads = t2.backward(loss);
    CHECK(t2.grad_of(grads, unused).data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("non-finite forward values raise") {
    Tape t;
    Var x = t.constant(Tensor({2}, {-1.0, 2.0}));
    CHECK_THROWS_AS(vlog(x), NumericError);
}

TEST_CASE("composite graph gradient matches central differences") {
    const Tensor x0 = random_tensor({3, 4}, 99, 0.3, 1.7);
    auto builder = [](Tape& t, Var x) {
        Var a = silu(mul(x, x));
        Var b = vexp(scale_shift(x, 0.3, -0.1));
        Var c = div(a, scale_shift(b, 1.0, 0.5));
        Var m = matmul(c, transpose(c));
        return vsum(mul(m, vsqrt(scale_shift(m, 0.0, 2.0))));
    };
    CHECK(grad_check(builder, x0, 1e-5) < 1e-6);
}

TEST_CASE("grad_check norm squared") {
    const Tensor x0 = random_tensor({10}, 7);
    auto builder = [](Tape&, Var x) { return vsum(mul(x, x)); };
    CHECK(grad_check(builder, x0, 1e-5) < 1e-7);
}

TEST_CASE("grad_check of a constant function is zero") {
    const Tensor x0 = random_tensor({4}, 8);
    auto builder = [](Tape& t, Var x) { return vsum(mul(scale_shift(x, 0.0, 1.0), t.constant(Tensor::full({4}, 2.0)))); };
    CHECK(grad_check(builder, x0, 1e-5) == 0.0);
}

TEST_CASE("every op passes finite-difference checks") {
    // ten randomized instances per op family
    for (uint64_t run = 0; run < 10; ++run) {
        const Tensor x = random_tensor({2, 4, 4}, 100 + run, -1.5, 1.5);
        const Tensor pos = random_tensor({2, 4, 4}, 200 + run, 0.4, 2.0);
        const Tensor vec = random_tensor({6}, 300 + run);
        const Tensor mat = random_tensor({4, 5}, 400 + run);
        const Tensor other = random_tensor({2, 4, 4}, 500 + run, -1.5, 1.5);

        auto chk = [&](const char* label, const Tensor& at, std::function<Var(Tape&, Var)> f, double tol = 1e-5) {
            CAPTURE(label);
            CAPTURE(run);
            CHECK(grad_check(f, at, 1e-5) < tol);
        };

        chk("add", x, [&](Tape& t, Var v) { return vsum(add(v, t.constant(other))); });
        chk("sub", x, [&](Tape& t, Var v) { return vsum(sub(t.constant(other), v)); });
        chk("mul", x, [&](Tape& t, Var v) { return vsum(mul(v, t.constant(other))); });
        chk("div_num", x, [&](Tape& t, Var v) { return vsum(div(v, t.constant(pos))); });
        chk("div_den", pos, [&](Tape& t, Var v) { return vsum(div(t.constant(other), v)); });
        chk("matmul_a", mat, [&](Tape& t, Var v) {
            return vsum(matmul(v, t.constant(random_tensor({5, 3}, 600 + run))));
        });
        chk("matmul_b", mat, [&](Tape& t, Var v) {
            return vsum(matmul(t.constant(random_tensor({6, 4}, 700 + run)), v));
        });
        chk("transpose", mat, [&](Tape& t, Var v) { return vsum(mul(transpose(v), t.constant(random_tensor({5, 4}, 800 + run)))); });
        chk("reshape_slice_concat", x, [&](Tape& t, Var v) {
            Var r = reshape(v, {4, 8});
            Var s = slice(r, 1, 2);
            Var c = concat(s, t.constant(random_tensor({1, 8}, 900 + run)));
            return vsum(mul(c, c));
        });
        chk("diag", random_tensor({4, 4}, 1000 + run), [&](Tape&, Var v) { return vsum(mul(diag(v), diag(v))); });
        chk("conv3x3_x", x, [&](Tape& t, Var v) {
            Var y = conv3x3(v, t.constant(random_tensor({3, 2, 3, 3}, 1100 + run, -0.6, 0.6)),
                            t.constant(random_tensor({3}, 1150 + run)));
            return vsum(mul(y, y));
        });
        chk("conv3x3_w", random_tensor({3, 2, 3, 3}, 1200 + run, -0.6, 0.6), [&](Tape& t, Var v) {
            Var y = conv3x3(t.constant(x), v, t.constant(random_tensor({3}, 1250 + run)));
            return vsum(mul(y, y));
        });
        chk("conv3x3_b", random_tensor({3}, 1260 + run), [&](Tape& t, Var v) {
            Var y = conv3x3(t.constant(x), t.constant(random_tensor({3, 2, 3, 3}, 1270 + run, -0.6, 0.6)), v);
            return vsum(mul(y, y));
        });
        chk("avgpool2", x, [&](Tape&, Var v) { return vsum(mul(avgpool2(v), avgpool2(v))); });
        chk("upsample", x, [&](Tape& t, Var v) {
            Var u = upsample_nearest2(v);
            return vsum(mul(u, t.constant(random_tensor({2, 8, 8}, 1300 + run))));
        });
        chk("silu", x, [&](Tape&, Var v) { return vsum(silu(v)); });
        chk("sigmoid", x, [&](Tape&, Var v) { return vsum(sigmoid(v)); });
        chk("exp", x, [&](Tape&, Var v) { return vsum(vexp(v)); });
        chk("log", pos, [&](Tape&, Var v) { return vsum(vlog(v)); });
        chk("sqrt", pos, [&](Tape&, Var v) { return vsum(vsqrt(v)); });
        chk("pow", pos, [&](Tape&, Var v) { return vsum(vpow(v, 1.7)); });
        chk("scale_shift", x, [&](Tape&, Var v) { return vsum(mul(scale_shift(v, -1.3, 0.2), scale_shift(v, 0.4, 1.0))); });
        chk("smul", vec, [&](Tape& t, Var v) {
            Var s = vmean(mul(v, v));
            return vsum(smul(t.constant(random_tensor({6}, 1400 + run)), s));
        });
        chk("mean", x, [&](Tape&, Var v) { return vmean(mul(v, v)); });
        chk("groupnorm", x, [&](Tape& t, Var v) {
            Var g = groupnorm(v, 2);
            return vsum(mul(g, t.constant(random_tensor({2, 4, 4}, 1500 + run))));
        });
        chk("channel_affine", x, [&](Tape& t, Var v) {
            Var y = channel_affine(v, t.constant(random_tensor({2}, 1600 + run)), t.constant(random_tensor({2}, 1700 + run)));
            return vsum(mul(y, y));
        });
        chk("channel_affine_gamma", random_tensor({2}, 1800 + run), [&](Tape& t, Var v) {
            Var y = channel_affine(t.constant(x), v, t.constant(random_tensor({2}, 1900 + run)));
            return vsum(mul(y, y));
        });
        chk("relu", random_tensor({2, 4, 4}, 2000 + run, 0.2, 1.5), [&](Tape&, Var v) {
            return vsum(mul(relu(scale_shift(v, 1.0, -0.8)), relu(scale_shift(v, 1.0, -0.8))));
        });
    }
}

TEST_CASE("backward linearity") {
    const Tensor x0 = random_tensor({8}, 42);
    auto grad_of_loss = [&](double a, double b) {
        Tape t;
        Tensor xx = x0;
        xx.requires_grad = true;
        Var x = t.leaf(std::move(xx));
        Var f = vsum(mul(x, x));
        Var g = vsum(silu(x));
        Var loss = add(scale_shift(f, a, 0.0), scale_shift(g, b, 0.0));
        auto grads = t.backward(loss);
        return t.grad_of(grads, x).data;
    };
    const auto gf = grad_of_loss(1.0, 0.0);
    const auto gg = grad_of_loss(0.0, 1.0);
    const auto gc = grad_of_loss(2.5, -1.5);
    for (size_t i = 0; i < gf.size(); ++i)
        CHECK(gc[i] == doctest::Approx(2.5 * gf[i] - 1.5 * gg[i]).epsilon(1e-12));
}

TEST_CASE("gradients are deterministic across identical tapes") {
    const Tensor x0 = random_tensor({3, 6, 6}, 77);
    auto run = [&] {
        Tape t;
        Tensor xx = x0;
        xx.requires_grad = true;
        Var x = t.leaf(std::move(xx));
        Var loss = vmean(mul(silu(groupnorm(x, 3)), x));
        auto grads = t.backward(loss);
        return t.grad_of(grads, x).data;
    };
    CHECK(run() == run());
}
