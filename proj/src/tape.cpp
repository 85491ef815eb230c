#include "abd/tape.hpp"

#include <cmath>
#include <cstring>

#include "abd/kernels.hpp"

namespace abd::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kDiv: return "div";
        case Op::kMatmul: return "matmul";
        case Op::kTranspose: return "transpose";
        case Op::kReshape: return "reshape";
        case Op::kDiag: return "diag";
        case Op::kSlice: return "slice";
        case Op::kConcat: return "concat";
        case Op::kConv3x3: return "conv3x3";
        case Op::kAvgPool2: return "avgpool2";
        case Op::kUpsample2: return "upsample_nearest2";
        case Op::kSilu: return "silu";
        case Op::kSigmoid: return "sigmoid";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kSqrt: return "sqrt";
        case Op::kPow: return "pow";
        case Op::kScaleShift: return "scale_shift";
        case Op::kScalarMul: return "smul";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kGroupNorm: return "groupnorm";
        case Op::kChannelAffine: return "channel_affine";
        case Op::kRelu: return "relu";
    }
    return "?";
}

namespace {

void check_finite(const Tensor& t, Op op) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(op_name(op)) + " produced a non-finite value");
}

Tape* common_tape(const std::vector<Var>& vars) {
    Tape* t = vars.front().tape;
    for (const Var& v : vars)
        if (v.tape != t || v.tape == nullptr) throw ShapeError("operands recorded on different tapes");
    return t;
}

int64_t inner_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
}

} // namespace

int Tape::push(Node n, Tensor value) {
    const int id = static_cast<int>(vals_.size());
    n.out = id;
    vals_.push_back(std::move(value));
    nodes_.push_back(std::move(n));
    return id;
}

Var Tape::leaf(Tensor t) {
    check_finite(t, Op::kLeaf);
    Node n{Op::kLeaf, {}, -1, {}, {}, t.requires_grad};
    const int id = push(std::move(n), std::move(t));
    return Var{this, id};
}

Var Tape::constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
}

Var apply_op(Op op, std::vector<Var> inputs, Tensor out, std::vector<double> saved,
             std::vector<Tensor> ctx) {
    Tape* tape = common_tape(inputs);
    check_finite(out, op);
    bool needs = false;
    std::vector<int> in_ids;
    in_ids.reserve(inputs.size());
    for (const Var& v : inputs) {
        in_ids.push_back(v.id);
        needs = needs || tape->backward_needed(v.id);
    }
    Tape::Node n{op, std::move(in_ids), -1, std::move(saved), std::move(ctx), needs};
    const int id = tape->push(std::move(n), std::move(out));
    return Var{tape, id};
}

// ---- elementwise -----------------------------------------------------------

namespace {

Tensor ew_result(const Tensor& a, const Tensor& b, Op op) {
    if (!same_shape(a, b)) throw ShapeError(std::string(op_name(op)) + ": operand shapes differ");
    return Tensor::zeros(a.shape);
}

} // namespace

Var add(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    Tensor out = ew_result(ta, tb, Op::kAdd);
    kern::active().add(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kAdd, {a, b}, std::move(out), {}, {});
}

Var sub(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    Tensor out = ew_result(ta, tb, Op::kSub);
    kern::active().sub(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kSub, {a, b}, std::move(out), {}, {});
}

Var mul(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    Tensor out = ew_result(ta, tb, Op::kMul);
    kern::active().mul(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kMul, {a, b}, std::move(out), {}, {});
}

Var div(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    Tensor out = ew_result(ta, tb, Op::kDiv);
    kern::active().div(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kDiv, {a, b}, std::move(out), {}, {});
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw ShapeError("matmul: incompatible shapes");
    const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const auto& kn = kern::active();
    for (int i = 0; i < m; ++i) {
        double* orow = out.data.data() + static_cast<size_t>(i) * n;
        const double* arow = ta.data.data() + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk)
            kn.axpy(arow[kk], tb.data.data() + static_cast<size_t>(kk) * n, orow, static_cast<size_t>(n));
    }
    return apply_op(Op::kMatmul, {a, b}, std::move(out), {}, {});
}

Var transpose(Var a) {
    const Tensor& ta = a.tape->val(a);
    if (ta.rank() != 2) throw ShapeError("transpose: rank-2 only");
    const int m = ta.dim(0), n = ta.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data[static_cast<size_t>(j) * m + i] = ta.data[static_cast<size_t>(i) * n + j];
    return apply_op(Op::kTranspose, {a}, std::move(out), {}, {});
}

Var reshape(Var a, std::vector<int> s) {
    const Tensor& ta = a.tape->val(a);
    if (Tensor::numel(s) != ta.size()) throw ShapeError("reshape: element count changed");
    Tensor out(std::move(s), ta.data);
    return apply_op(Op::kReshape, {a}, std::move(out), {}, {});
}

Var diag(Var a) {
    const Tensor& ta = a.tape->val(a);
    if (ta.rank() != 2 || ta.dim(0) != ta.dim(1)) throw ShapeError("diag: square matrix required");
    const int n = ta.dim(0);
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] = ta.data[static_cast<size_t>(i) * n + i];
    return apply_op(Op::kDiag, {a}, std::move(out), {}, {});
}

Var slice(Var a, int start, int len) {
    const Tensor& ta = a.tape->val(a);
    if (ta.rank() < 1 || start < 0 || len < 0 || start + len > ta.dim(0))
        throw ShapeError("slice: range out of bounds");
    const int64_t stride = inner_size(ta.shape);
    std::vector<int> s = ta.shape;
    s[0] = len;
    Tensor out = Tensor::zeros(s);
    std::memcpy(out.data.data(), ta.data.data() + start * stride, sizeof(double) * static_cast<size_t>(len * stride));
    return apply_op(Op::kSlice, {a}, std::move(out), {static_cast<double>(start)}, {});
}

Var concat(Var a, Var b) {
    const Tensor &ta = a.tape->val(a), &tb = b.tape->val(b);
    if (ta.rank() != tb.rank() || ta.rank() < 1) throw ShapeError("concat: rank mismatch");
    for (int i = 1; i < ta.rank(); ++i)
        if (ta.dim(i) != tb.dim(i)) throw ShapeError("concat: trailing dims differ");
    std::vector<int> s = ta.shape;
    s[0] += tb.dim(0);
    Tensor out = Tensor::zeros(s);
    std::memcpy(out.data.data(), ta.data.data(), sizeof(double) * ta.data.size());
    std::memcpy(out.data.data() + ta.data.size(), tb.data.data(), sizeof(double) * tb.data.size());
    return apply_op(Op::kConcat, {a, b}, std::move(out), {}, {});
}

// ---- convolution and spatial ops -------------------------------------------

namespace {

struct ConvSpan {
    int xs, xe; // output column range for a given kx under zero padding 1
};

inline ConvSpan conv_span(int kx, int w) {
    ConvSpan s;
    s.xs = kx == 0 ? 1 : 0;
    s.xe = kx == 2 ? w - 1 : w;
    return s;
}

} // namespace

Var conv3x3(Var x, Var w, Var b) {
    const Tensor &tx = x.tape->val(x), &tw = w.tape->val(w), &tb = b.tape->val(b);
    if (tx.rank() != 3 || tw.rank() != 4 || tw.dim(2) != 3 || tw.dim(3) != 3)
        throw ShapeError("conv3x3: expects x [C,H,W], w [O,C,3,3]");
    const int c = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
    const int o = tw.dim(0);
    if (tw.dim(1) != c || tb.rank() != 1 || tb.dim(0) != o)
        throw ShapeError("conv3x3: channel counts disagree");
    Tensor out = Tensor::zeros({o, h, wd});
    const auto& kn = kern::active();
    const int64_t plane = static_cast<int64_t>(h) * wd;
    for (int oc = 0; oc < o; ++oc) {
        double* op = out.data.data() + oc * plane;
        const double bias = tb.data[static_cast<size_t>(oc)];
        for (int64_t i = 0; i < plane; ++i) op[i] = bias;
        for (int ic = 0; ic < c; ++ic) {
            const double* xp = tx.data.data() + ic * plane;
            const double* wp = tw.data.data() + (static_cast<int64_t>(oc) * c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wp[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    const ConvSpan sp = conv_span(kx, wd);
                    const int len = sp.xe - sp.xs;
                    if (len <= 0) continue;
                    const int y0 = ky == 0 ? 1 : 0;
                    const int y1 = ky == 2 ? h - 1 : h;
                    for (int y = y0; y < y1; ++y) {
                        const int iy = y + ky - 1;
                        kn.axpy(wv, xp + static_cast<int64_t>(iy) * wd + sp.xs + kx - 1,
                                op + static_cast<int64_t>(y) * wd + sp.xs, static_cast<size_t>(len));
                    }
                }
            }
        }
    }
    return apply_op(Op::kConv3x3, {x, w, b}, std::move(out), {}, {});
}

Var avgpool2(Var x) {
    const Tensor& tx = x.tape->val(x);
    if (tx.rank() != 3) throw ShapeError("avgpool2: expects [C,H,W]");
    const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avgpool2: odd spatial size");
    Tensor out = Tensor::zeros({c, h / 2, w / 2});
    for (int ic = 0; ic < c; ++ic) {
        const double* xp = tx.data.data() + static_cast<int64_t>(ic) * h * w;
        double* op = out.data.data() + static_cast<int64_t>(ic) * (h / 2) * (w / 2);
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx) {
                const double* p = xp + static_cast<int64_t>(2 * y) * w + 2 * xx;
                op[static_cast<int64_t>(y) * (w / 2) + xx] = 0.25 * ((p[0] + p[1]) + (p[w] + p[w + 1]));
            }
    }
    return apply_op(Op::kAvgPool2, {x}, std::move(out), {}, {});
}

Var upsample_nearest2(Var x) {
    const Tensor& tx = x.tape->val(x);
    if (tx.rank() != 3) throw ShapeError("upsample: expects [C,H,W]");
    const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
    Tensor out = Tensor::zeros({c, 2 * h, 2 * w});
    for (int ic = 0; ic < c; ++ic) {
        const double* xp = tx.data.data() + static_cast<int64_t>(ic) * h * w;
        double* op = out.data.data() + static_cast<int64_t>(ic) * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double v = xp[static_cast<int64_t>(y) * w + xx];
                double* q = op + static_cast<int64_t>(2 * y) * 2 * w + 2 * xx;
                q[0] = v;
                q[1] = v;
                q[2 * w] = v;
                q[2 * w + 1] = v;
            }
    }
    return apply_op(Op::kUpsample2, {x}, std::move(out), {}, {});
}

// ---- pointwise nonlinearities ----------------------------------------------

Var silu(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    Tensor sig = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-tx.data[i]));
        sig.data[i] = s;
        out.data[i] = tx.data[i] * s;
    }
    return apply_op(Op::kSilu, {x}, std::move(out), {}, {std::move(sig)});
}

Var sigmoid(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-tx.data[i]));
    return apply_op(Op::kSigmoid, {x}, std::move(out), {}, {});
}

Var vexp(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = std::exp(tx.data[i]);
    return apply_op(Op::kExp, {x}, std::move(out), {}, {});
}

Var vlog(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = std::log(tx.data[i]);
    return apply_op(Op::kLog, {x}, std::move(out), {}, {});
}

Var vsqrt(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = std::sqrt(tx.data[i]);
    return apply_op(Op::kSqrt, {x}, std::move(out), {}, {});
}

Var vpow(Var x, double p) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = std::pow(tx.data[i], p);
    return apply_op(Op::kPow, {x}, std::move(out), {p}, {});
}

Var scale_shift(Var x, double a, double b) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    kern::active().scale_shift(a, b, tx.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kScaleShift, {x}, std::move(out), {a, b}, {});
}

Var smul(Var x, Var s) {
    const Tensor &tx = x.tape->val(x), &ts = s.tape->val(s);
    if (ts.size() != 1) throw ShapeError("smul: scalar operand must have one element");
    Tensor out = Tensor::zeros(tx.shape);
    kern::active().scale_shift(ts.data[0], 0.0, tx.data.data(), out.data.data(), out.data.size());
    return apply_op(Op::kScalarMul, {x, s}, std::move(out), {}, {});
}

Var relu(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::zeros(tx.shape);
    for (size_t i = 0; i < tx.data.size(); ++i) out.data[i] = tx.data[i] > 0.0 ? tx.data[i] : 0.0;
    return apply_op(Op::kRelu, {x}, std::move(out), {}, {});
}

// ---- reductions and normalization ------------------------------------------

Var vsum(Var x) {
    const Tensor& tx = x.tape->val(x);
    Tensor out = Tensor::scalar(kern::active().sum(tx.data.data(), tx.data.size()));
    return apply_op(Op::kSum, {x}, std::move(out), {}, {});
}

Var vmean(Var x) {
    const Tensor& tx = x.tape->val(x);
    if (tx.size() == 0) throw ShapeError("mean of empty tensor");
    Tensor out = Tensor::scalar(kern::active().sum(tx.data.data(), tx.data.size()) / static_cast<double>(tx.size()));
    return apply_op(Op::kMean, {x}, std::move(out), {}, {});
}

Var groupnorm(Var x, int groups) {
    const Tensor& tx = x.tape->val(x);
    if (tx.rank() != 3) throw ShapeError("groupnorm: expects [C,H,W]");
    const int c = tx.dim(0);
    if (groups < 1 || c % groups != 0) throw ShapeError("groupnorm: groups must divide channels");
    const int64_t plane = static_cast<int64_t>(tx.dim(1)) * tx.dim(2);
    const int64_t gsize = (c / groups) * plane;
    Tensor out = Tensor::zeros(tx.shape);
    Tensor inv_std = Tensor::zeros({groups});
    const auto& kn = kern::active();
    for (int g = 0; g < groups; ++g) {
        const double* xp = tx.data.data() + g * gsize;
        double* op = out.data.data() + g * gsize;
        const double mean = kn.sum(xp, static_cast<size_t>(gsize)) / static_cast<double>(gsize);
        double var = 0.0;
        for (int64_t i = 0; i < gsize; ++i) {
            const double d = xp[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(gsize);
        const double is = 1.0 / std::sqrt(var + 1e-5);
        inv_std.data[static_cast<size_t>(g)] = is;
        kn.scale_shift(is, -mean * is, xp, op, static_cast<size_t>(gsize));
    }
    return apply_op(Op::kGroupNorm, {x}, std::move(out), {static_cast<double>(groups)}, {std::move(inv_std)});
}

Var channel_affine(Var x, Var gamma, Var beta) {
    const Tensor &tx = x.tape->val(x), &tg = gamma.tape->val(gamma), &tb = beta.tape->val(beta);
    if (tx.rank() < 1) throw ShapeError("channel_affine: rank >= 1 required");
    const int c = tx.dim(0);
    if (tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != c || tb.dim(0) != c)
        throw ShapeError("channel_affine: gamma/beta must be [C]");
    const int64_t inner = inner_size(tx.shape);
    Tensor out = Tensor::zeros(tx.shape);
    const auto& kn = kern::active();
    for (int ic = 0; ic < c; ++ic)
        kn.scale_shift(tg.data[static_cast<size_t>(ic)], tb.data[static_cast<size_t>(ic)],
                       tx.data.data() + ic * inner, out.data.data() + ic * inner, static_cast<size_t>(inner));
    return apply_op(Op::kChannelAffine, {x, gamma, beta}, std::move(out), {}, {});
}

// ---- backward --------------------------------------------------------------

std::vector<Tensor> Tape::backward(Var loss) {
    if (loss.tape != this) throw ShapeError("loss recorded on another tape");
    const Tensor& lv = val(loss);
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar");

    std::vector<Tensor> grads(vals_.size());
    auto has = [&](int id) { return !grads[static_cast<size_t>(id)].data.empty(); };
    auto acc = [&](int id) -> Tensor& {
        Tensor& g = grads[static_cast<size_t>(id)];
        if (g.data.empty()) g = Tensor::zeros(vals_[static_cast<size_t>(id)].shape);
        return g;
    };
    grads[static_cast<size_t>(loss.id)] = Tensor::full(lv.shape, 1.0);

    const auto& kn = kern::active();

    for (size_t ni = nodes_.size(); ni-- > 0;) {
        const Node& nd = nodes_[ni];
        if (nd.op == Op::kLeaf || !nd.needs_grad || !has(nd.out)) continue;
        const Tensor& gy = grads[static_cast<size_t>(nd.out)];
        const Tensor& y = vals_[static_cast<size_t>(nd.out)];
        auto in_val = [&](size_t k) -> const Tensor& { return vals_[static_cast<size_t>(nd.in[k])]; };
        auto wants = [&](size_t k) { return nodes_[static_cast<size_t>(nd.in[k])].needs_grad; };

        switch (nd.op) {
            case Op::kAdd: {
                for (size_t k = 0; k < 2; ++k)
                    if (wants(k)) kn.axpy(1.0, gy.data.data(), acc(nd.in[k]).data.data(), gy.data.size());
                break;
            }
            case Op::kSub: {
                if (wants(0)) kn.axpy(1.0, gy.data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                if (wants(1)) kn.axpy(-1.0, gy.data.data(), acc(nd.in[1]).data.data(), gy.data.size());
                break;
            }
            case Op::kMul: {
                if (wants(0)) kn.fmacc(gy.data.data(), in_val(1).data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                if (wants(1)) kn.fmacc(gy.data.data(), in_val(0).data.data(), acc(nd.in[1]).data.data(), gy.data.size());
                break;
            }
            case Op::kDiv: {
                const Tensor& b = in_val(1);
                if (wants(0)) {
                    Tensor& ga = acc(nd.in[0]);
                    for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] / b.data[i];
                }
                if (wants(1)) {
                    Tensor& gb = acc(nd.in[1]);
                    for (size_t i = 0; i < gy.data.size(); ++i)
                        gb.data[i] -= gy.data[i] * y.data[i] / b.data[i];
                }
                break;
            }
            case Op::kMatmul: {
                const Tensor &a = in_val(0), &b = in_val(1);
                const int m = a.dim(0), kdim = a.dim(1), n = b.dim(1);
                if (wants(0)) {
                    Tensor& ga = acc(nd.in[0]);
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < kdim; ++kk)
                            ga.data[static_cast<size_t>(i) * kdim + kk] +=
                                kn.dot(gy.data.data() + static_cast<size_t>(i) * n,
                                       b.data.data() + static_cast<size_t>(kk) * n, static_cast<size_t>(n));
                }
                if (wants(1)) {
                    Tensor& gb = acc(nd.in[1]);
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < kdim; ++kk)
                            kn.axpy(a.data[static_cast<size_t>(i) * kdim + kk],
                                    gy.data.data() + static_cast<size_t>(i) * n,
                                    gb.data.data() + static_cast<size_t>(kk) * n, static_cast<size_t>(n));
                }
                break;
            }
            case Op::kTranspose: {
                if (!wants(0)) break;
                Tensor& ga = acc(nd.in[0]);
                const int m = in_val(0).dim(0), n = in_val(0).dim(1);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ga.data[static_cast<size_t>(i) * n + j] += gy.data[static_cast<size_t>(j) * m + i];
                break;
            }
            case Op::kReshape: {
                if (wants(0)) kn.axpy(1.0, gy.data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                break;
            }
            case Op::kDiag: {
                if (!wants(0)) break;
                Tensor& ga = acc(nd.in[0]);
                const int n = in_val(0).dim(0);
                for (int i = 0; i < n; ++i) ga.data[static_cast<size_t>(i) * n + i] += gy.data[static_cast<size_t>(i)];
                break;
            }
            case Op::kSlice: {
                if (!wants(0)) break;
                Tensor& ga = acc(nd.in[0]);
                const int start = static_cast<int>(nd.saved[0]);
                const int64_t stride = inner_size(in_val(0).shape);
                kn.axpy(1.0, gy.data.data(), ga.data.data() + start * stride, gy.data.size());
                break;
            }
            case Op::kConcat: {
                const size_t na = in_val(0).data.size();
                if (wants(0)) kn.axpy(1.0, gy.data.data(), acc(nd.in[0]).data.data(), na);
                if (wants(1)) kn.axpy(1.0, gy.data.data() + na, acc(nd.in[1]).data.data(), gy.data.size() - na);
                break;
            }
            case Op::kConv3x3: {
                const Tensor &xv = in_val(0), &wv = in_val(1);
                const int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), o = wv.dim(0);
                const int64_t plane = static_cast<int64_t>(h) * wd;
                if (wants(2)) {
                    Tensor& gb = acc(nd.in[2]);
                    for (int oc = 0; oc < o; ++oc)
                        gb.data[static_cast<size_t>(oc)] += kn.sum(gy.data.data() + oc * plane, static_cast<size_t>(plane));
                }
                for (int oc = 0; oc < o; ++oc) {
                    const double* gp = gy.data.data() + oc * plane;
                    for (int ic = 0; ic < c; ++ic) {
                        const int64_t widx = (static_cast<int64_t>(oc) * c + ic) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int y0 = ky == 0 ? 1 : 0;
                            const int y1 = ky == 2 ? h - 1 : h;
                            for (int kx = 0; kx < 3; ++kx) {
                                const ConvSpan sp = conv_span(kx, wd);
                                const int len = sp.xe - sp.xs;
                                if (len <= 0) continue;
                                if (wants(1)) {
                                    double s = 0.0;
                                    const double* xp = xv.data.data() + ic * plane;
                                    for (int yy = y0; yy < y1; ++yy)
                                        s += kn.dot(gp + static_cast<int64_t>(yy) * wd + sp.xs,
                                                    xp + static_cast<int64_t>(yy + ky - 1) * wd + sp.xs + kx - 1,
                                                    static_cast<size_t>(len));
                                    acc(nd.in[1]).data[static_cast<size_t>(widx + ky * 3 + kx)] += s;
                                }
                                if (wants(0)) {
                                    const double wval = wv.data[static_cast<size_t>(widx + ky * 3 + kx)];
                                    if (wval == 0.0) continue;
                                    double* gxp = acc(nd.in[0]).data.data() + ic * plane;
                                    for (int yy = y0; yy < y1; ++yy)
                                        kn.axpy(wval, gp + static_cast<int64_t>(yy) * wd + sp.xs,
                                                gxp + static_cast<int64_t>(yy + ky - 1) * wd + sp.xs + kx - 1,
                                                static_cast<size_t>(len));
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::kAvgPool2: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const int c = in_val(0).dim(0), h = in_val(0).dim(1), w = in_val(0).dim(2);
                for (int ic = 0; ic < c; ++ic) {
                    const double* gp = gy.data.data() + static_cast<int64_t>(ic) * (h / 2) * (w / 2);
                    double* gxp = gx.data.data() + static_cast<int64_t>(ic) * h * w;
                    for (int y = 0; y < h / 2; ++y)
                        for (int xx = 0; xx < w / 2; ++xx) {
                            const double g = 0.25 * gp[static_cast<int64_t>(y) * (w / 2) + xx];
                            double* q = gxp + static_cast<int64_t>(2 * y) * w + 2 * xx;
                            q[0] += g;
                            q[1] += g;
                            q[w] += g;
                            q[w + 1] += g;
                        }
                }
                break;
            }
            case Op::kUpsample2: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const int c = in_val(0).dim(0), h = in_val(0).dim(1), w = in_val(0).dim(2);
                for (int ic = 0; ic < c; ++ic) {
                    const double* gp = gy.data.data() + static_cast<int64_t>(ic) * 4 * h * w;
                    double* gxp = gx.data.data() + static_cast<int64_t>(ic) * h * w;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            const double* q = gp + static_cast<int64_t>(2 * y) * 2 * w + 2 * xx;
                            gxp[static_cast<int64_t>(y) * w + xx] += (q[0] + q[1]) + (q[2 * w] + q[2 * w + 1]);
                        }
                }
                break;
            }
            case Op::kSilu: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const Tensor& xv = in_val(0);
                const Tensor& s = nd.ctx[0];
                for (size_t i = 0; i < gy.data.size(); ++i)
                    gx.data[i] += gy.data[i] * s.data[i] * (1.0 + xv.data[i] * (1.0 - s.data[i]));
                break;
            }
            case Op::kSigmoid: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                for (size_t i = 0; i < gy.data.size(); ++i)
                    gx.data[i] += gy.data[i] * y.data[i] * (1.0 - y.data[i]);
                break;
            }
            case Op::kExp: {
                if (wants(0)) kn.fmacc(gy.data.data(), y.data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                break;
            }
            case Op::kLog: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const Tensor& xv = in_val(0);
                for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] / xv.data[i];
                break;
            }
            case Op::kSqrt: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] * 0.5 / y.data[i];
                break;
            }
            case Op::kPow: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const Tensor& xv = in_val(0);
                const double p = nd.saved[0];
                for (size_t i = 0; i < gy.data.size(); ++i)
                    gx.data[i] += gy.data[i] * p * std::pow(xv.data[i], p - 1.0);
                break;
            }
            case Op::kScaleShift: {
                if (wants(0)) kn.axpy(nd.saved[0], gy.data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                break;
            }
            case Op::kScalarMul: {
                const double s = in_val(1).data[0];
                if (wants(0)) kn.axpy(s, gy.data.data(), acc(nd.in[0]).data.data(), gy.data.size());
                if (wants(1))
                    acc(nd.in[1]).data[0] += kn.dot(gy.data.data(), in_val(0).data.data(), gy.data.size());
                break;
            }
            case Op::kSum: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const double g = gy.data[0];
                for (double& v : gx.data) v += g;
                break;
            }
            case Op::kMean: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const double g = gy.data[0] / static_cast<double>(gx.size());
                for (double& v : gx.data) v += g;
                break;
            }
            case Op::kGroupNorm: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const int groups = static_cast<int>(nd.saved[0]);
                const Tensor& inv_std = nd.ctx[0];
                const int64_t gsize = y.size() / groups;
                for (int g = 0; g < groups; ++g) {
                    const double* yp = y.data.data() + g * gsize;
                    const double* gp = gy.data.data() + g * gsize;
                    double* gxp = gx.data.data() + g * gsize;
                    const double n = static_cast<double>(gsize);
                    const double mean_g = kn.sum(gp, static_cast<size_t>(gsize)) / n;
                    const double mean_gy = kn.dot(gp, yp, static_cast<size_t>(gsize)) / n;
                    const double is = inv_std.data[static_cast<size_t>(g)];
                    for (int64_t i = 0; i < gsize; ++i)
                        gxp[i] += is * (gp[i] - mean_g - yp[i] * mean_gy);
                }
                break;
            }
            case Op::kChannelAffine: {
                const Tensor &xv = in_val(0), &gv = in_val(1);
                const int c = xv.dim(0);
                const int64_t inner = inner_size(xv.shape);
                for (int ic = 0; ic < c; ++ic) {
                    const double* gp = gy.data.data() + ic * inner;
                    if (wants(0))
                        kn.axpy(gv.data[static_cast<size_t>(ic)], gp,
                                acc(nd.in[0]).data.data() + ic * inner, static_cast<size_t>(inner));
                    if (wants(1))
                        acc(nd.in[1]).data[static_cast<size_t>(ic)] +=
                            kn.dot(gp, xv.data.data() + ic * inner, static_cast<size_t>(inner));
                    if (wants(2))
                        acc(nd.in[2]).data[static_cast<size_t>(ic)] += kn.sum(gp, static_cast<size_t>(inner));
                }
                break;
            }
            case Op::kRelu: {
                if (!wants(0)) break;
                Tensor& gx = acc(nd.in[0]);
                const Tensor& xv = in_val(0);
                for (size_t i = 0; i < gy.data.size(); ++i)
                    if (xv.data[i] > 0.0) gx.data[i] += gy.data[i];
                break;
            }
            case Op::kLeaf:
                break;
        }
    }

    // requires_grad leaves the loss never touched still report zeros
    for (size_t ni = 0; ni < nodes_.size(); ++ni) {
        if (nodes_[ni].op == Op::kLeaf && vals_[ni].requires_grad && grads[ni].data.empty())
            grads[ni] = Tensor::zeros(vals_[ni].shape);
    }
    return grads;
}

Tensor Tape::grad_of(const std::vector<Tensor>& grads, Var v) const {
    const Tensor& g = grads[static_cast<size_t>(v.id)];
    if (!g.data.empty()) return g;
    return Tensor::zeros(vals_[static_cast<size_t>(v.id)].shape);
}

bool Tape::backward_needed(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

// ---- finite-difference checking --------------------------------------------

double grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                  std::function<Tensor(const Tensor&)> analytic, double step, double floor) {
    const Tensor g = analytic(x);
    double max_rel = 0.0;
    Tensor probe = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + step;
        const double fp = f(probe);
        probe.data[i] = orig - step;
        const double fm = f(probe);
        probe.data[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite objective");
        const double central = (fp - fm) / (2.0 * step);
        const double rel = std::abs(g.data[i] - central) / std::max(floor, std::abs(central));
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

double grad_check(const std::function<Var(Tape&, Var)>& make_loss, const Tensor& x, double step,
                  double floor) {
    auto eval = [&](const Tensor& probe) {
        Tape t;
        Tensor p = probe;
        p.requires_grad = false;
        Var v = t.leaf(std::move(p));
        return t.val(make_loss(t, v)).data[0];
    };
    auto analytic = [&](const Tensor& at) {
        Tape t;
        Tensor p = at;
        p.requires_grad = true;
        Var v = t.leaf(std::move(p));
        Var loss = make_loss(t, v);
        auto grads = t.backward(loss);
        return t.grad_of(grads, v);
    };
    return grad_check(eval, x, analytic, step, floor);
}

} // namespace abd::ad
