#ifndef ABD_TAPE_HPP
#define ABD_TAPE_HPP

#include <functional>
#include <vector>

#include "abd/tensor.hpp"

namespace abd::ad {

enum class Op {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kMatmul,
    kTranspose,
    kReshape,
    kDiag,
    kSlice,
    kConcat,
    kConv3x3,
    kAvgPool2,
    kUpsample2,
    kSilu,
    kSigmoid,
    kExp,
    kLog,
    kSqrt,
    kPow,
    kScaleShift,
    kScalarMul,
    kSum,
    kMean,
    kGroupNorm,
    kChannelAffine,
    kRelu,
};

const char* op_name(Op op);

class Tape;

// Lightweight handle to a tensor recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

// Reverse-mode tape. Nodes are appended in topological order (inputs always
// precede consumers) and each output id is assigned exactly once. Single
// threaded; independent tapes are fully independent.
class Tape {
public:
    Var leaf(Tensor t);
    Var constant(Tensor t); // leaf with requires_grad forced off

    const Tensor& val(int id) const { return vals_[static_cast<size_t>(id)]; }
    const Tensor& val(Var v) const { return val(v.id); }
    size_t num_nodes() const { return nodes_.size(); }

    // d(loss)/d(tensor) for every recorded tensor; leaves that the loss does
    // not depend on get zero gradients. Throws ShapeError for non-scalar loss.
    std::vector<Tensor> backward(Var loss);

    Tensor grad_of(const std::vector<Tensor>& grads, Var v) const;

    // true when a gradient can flow into this tensor
    bool backward_needed(int id) const;

private:
    friend Var apply_op(Op op, std::vector<Var> inputs, Tensor out, std::vector<double> saved,
                        std::vector<Tensor> ctx);

    struct Node {
        Op op;
        std::vector<int> in;
        int out;
        std::vector<double> saved; // op scalars: exponents, affine constants, group counts...
        std::vector<Tensor> ctx;   // saved activations needed by the backward rule
        bool needs_grad;
    };

    int push(Node n, Tensor value);

    std::vector<Tensor> vals_;
    std::vector<Node> nodes_;
};

// ---- op builders -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var matmul(Var a, Var b);                 // [M,K]x[K,N] -> [M,N]
Var transpose(Var a);                     // rank-2
Var reshape(Var a, std::vector<int> s);   // same element count
Var diag(Var a);                          // [N,N] -> [N]
Var slice(Var a, int start, int len);     // along axis 0
Var concat(Var a, Var b);                 // along axis 0

Var conv3x3(Var x, Var w, Var b);         // x [C,H,W], w [O,C,3,3], b [O]; stride 1, zero pad 1
Var avgpool2(Var x);                      // [C,H,W] -> [C,H/2,W/2], H and W even
Var upsample_nearest2(Var x);             // [C,H,W] -> [C,2H,2W]

Var silu(Var x);
Var sigmoid(Var x);
Var vexp(Var x);
Var vlog(Var x);
Var vsqrt(Var x);
Var vpow(Var x, double p);
Var scale_shift(Var x, double a, double b); // a*x + b with scalar constants
Var smul(Var x, Var s);                     // x * s with s a [1] tensor, differentiable in both

Var vsum(Var x);  // -> [1]
Var vmean(Var x); // -> [1]

Var groupnorm(Var x, int groups);             // [C,H,W], per-group mean/var, eps 1e-5
Var channel_affine(Var x, Var gamma, Var beta); // y[c,...] = gamma[c]*x[c,...] + beta[c]
Var relu(Var x);

// max over elements of |analytic - central difference| / max(floor, |central|).
// The default floor (1e-12) treats any nonzero central difference as signal;
// callers probing losses with near-critical coordinates can raise it so that
// finite-difference rounding noise on negligible gradients is not mistaken
// for a backward-rule error.
double grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                  std::function<Tensor(const Tensor&)> analytic, double step, double floor = 1e-12);

// Convenience: build the graph once per probe via `make_loss`, differentiate
// with the tape, and compare against central differences of the same builder.
double grad_check(const std::function<Var(Tape&, Var)>& make_loss, const Tensor& x, double step,
                  double floor = 1e-12);

} // namespace abd::ad

#endif
