#include "abd/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "abd/optim.hpp"
#include "abd/rng.hpp"
#include "abd/scene.hpp"

namespace abd::emu {

using ad::Tape;
using ad::Var;

namespace {

constexpr int kHidden = 64;

Tensor init_weight(int in, int out, Rng& rng) {
    Tensor w = Tensor::zeros({in, out});
    const double std = std::sqrt(1.0 / in);
    for (double& v : w.data) v = rng.normal() * std;
    w.requires_grad = true;
    return w;
}

Mlp init_mlp(int in, int out, Rng& rng) {
    Mlp m;
    m.w0 = init_weight(in, kHidden, rng);
    m.b0 = Tensor::zeros({kHidden}, true);
    m.w1 = init_weight(kHidden, kHidden, rng);
    m.b1 = Tensor::zeros({kHidden}, true);
    m.w2 = init_weight(kHidden, out, rng);
    m.b2 = Tensor::zeros({out}, true);
    return m;
}

struct MlpVars {
    Var w0, b0, w1, b1, w2, b2;
};

MlpVars lift(Tape& t, const Mlp& m, bool requires_grad) {
    auto up = [&](const Tensor& w) {
        Tensor c = w;
        c.requires_grad = requires_grad;
        return t.leaf(std::move(c));
    };
    return {up(m.w0), up(m.b0), up(m.w1), up(m.b1), up(m.w2), up(m.b2)};
}

Var dense(Tape& t, Var x, Var w, Var b) {
    const int n = t.val(x).dim(0);
    const int out = t.val(w).dim(1);
    Var ones = t.constant(Tensor::full({n, 1}, 1.0));
    return add(matmul(x, w), matmul(ones, reshape(b, {1, out})));
}

Var mlp_hidden(Tape& t, Var x, const MlpVars& m) {
    Var h = silu(dense(t, x, m.w0, m.b0));
    h = silu(dense(t, h, m.w1, m.b1));
    return dense(t, h, m.w2, m.b2);
}

Var forward_apply(Tape& t, Var params_n3, const MlpVars& m) { return mlp_hidden(t, params_n3, m); }

// Inverse head squashes into the parameter box (lai [0,6], cab/moisture [0,1])
// widened by a 10% margin: endpoint targets then sit at moderate logits instead
// of driving the sigmoid into exact saturation and killing its gradient.
Var inverse_apply(Tape& t, Var spectra_nb, const MlpVars& m) {
    constexpr double kMargin = 0.1;
    Var z = sigmoid(mlp_hidden(t, spectra_nb, m));
    Tensor span = Tensor::zeros({3, 3});
    span.data[0] = kLaiMax * (1.0 + 2.0 * kMargin);
    span.data[4] = 1.0 + 2.0 * kMargin;
    span.data[8] = 1.0 + 2.0 * kMargin;
    Var scaled = matmul(z, t.constant(std::move(span)));
    const int n = t.val(spectra_nb).dim(0);
    Tensor lo({1, 3}, {-kLaiMax * kMargin, -kMargin, -kMargin});
    return add(scaled, matmul(t.constant(Tensor::full({n, 1}, 1.0)), t.constant(std::move(lo))));
}

std::vector<Tensor*> mlp_params(Mlp& m) { return {&m.w0, &m.b0, &m.w1, &m.b1, &m.w2, &m.b2}; }

std::vector<const Tensor*> grads_for(Tape& t, const std::vector<Tensor>& grads, const MlpVars& v,
                                     std::vector<Tensor>& storage) {
    storage.clear();
    for (Var var : {v.w0, v.b0, v.w1, v.b1, v.w2, v.b2}) storage.push_back(t.grad_of(grads, var));
    std::vector<const Tensor*> out;
    for (const Tensor& g : storage) out.push_back(&g);
    return out;
}

Tensor rows_subset(const std::vector<TrainPair>& pairs, const std::vector<int>& idx, bool spectra) {
    const int n = static_cast<int>(idx.size());
    const int cols = spectra ? static_cast<int>(pairs.front().spectrum.size()) : 3;
    Tensor t = Tensor::zeros({n, cols});
    for (int r = 0; r < n; ++r) {
        const TrainPair& p = pairs[static_cast<size_t>(idx[static_cast<size_t>(r)])];
        if (spectra)
            std::copy(p.spectrum.begin(), p.spectrum.end(), t.data.begin() + static_cast<size_t>(r) * cols);
        else
            std::copy(p.params.begin(), p.params.end(), t.data.begin() + static_cast<size_t>(r) * cols);
    }
    return t;
}

} // namespace

std::vector<TrainPair> make_pairs(int n, int bands, uint64_t seed) {
    if (n < 100) throw DomainError("need at least 100 training pairs");
    const std::vector<double> wl = scene::default_wavelengths(bands);
    Rng rng = Rng::derive(seed, 0xe8);
    std::vector<TrainPair> pairs;
    pairs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        TrainPair p;
        p.params = {rng.uniform(0.0, kLaiMax), rng.uniform(), rng.uniform()};
        p.spectrum = scene::toy_rtm(p.params[0], p.params[1], p.params[2], scene::LandClass::kVegetation, wl);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

Emulator train_emulator(const std::vector<TrainPair>& pairs, int epochs, double lr, uint64_t seed) {
    if (pairs.empty()) throw DomainError("no training pairs");
    const int bands = static_cast<int>(pairs.front().spectrum.size());

    Emulator em;
    em.wavelengths = scene::default_wavelengths(bands);
    Rng rng = Rng::derive(seed, 0x31a);
    em.forward_net = init_mlp(3, bands, rng);
    em.inverse_net = init_mlp(bands, 3, rng);

    // deterministic shuffle, last 10% held out
    std::vector<int> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const int held = std::max(1, static_cast<int>(order.size()) / 10);
    std::vector<int> train_idx(order.begin(), order.end() - held);
    std::vector<int> held_idx(order.end() - held, order.end());

    const int batch = 128;
    auto run_phase = [&](bool train_forward, bool roundtrip_phase, int phase_epochs, double phase_lr) {
        opt::AdamW adam(0.9, 0.999, 1e-8, 0.0);
        for (int epoch = 0; epoch < phase_epochs; ++epoch) {
            for (size_t i = train_idx.size(); i > 1; --i) std::swap(train_idx[i - 1], train_idx[rng.below(i)]);
            double epoch_loss = 0.0;
            int steps = 0;
            for (size_t off = 0; off < train_idx.size(); off += batch) {
                const size_t end = std::min(off + batch, train_idx.size());
                std::vector<int> idx(train_idx.begin() + static_cast<long>(off), train_idx.begin() + static_cast<long>(end));
                Tape t;
                Var loss{};
                MlpVars net{};
                if (train_forward) {
                    net = lift(t, em.forward_net, true);
                    Var pred = forward_apply(t, t.constant(rows_subset(pairs, idx, false)), net);
                    Var d = sub(pred, t.constant(rows_subset(pairs, idx, true)));
                    loss = vmean(mul(d, d));
                } else {
                    net = lift(t, em.inverse_net, true);
                    Var spectra = t.constant(rows_subset(pairs, idx, true));
                    Var est = inverse_apply(t, spectra, net);
                    if (roundtrip_phase) {
                        MlpVars frozen = lift(t, em.forward_net, false);
                        Var rec = forward_apply(t, est, frozen);
                        Var d = sub(rec, spectra);
                        loss = vmean(mul(d, d));
                    } else {
                        Var d = sub(est, t.constant(rows_subset(pairs, idx, false)));
                        loss = vmean(mul(d, d));
                    }
                }
                auto grads = t.backward(loss);
                std::vector<Tensor> storage;
                auto gptrs = grads_for(t, grads, net, storage);
                Mlp& target = train_forward ? em.forward_net : em.inverse_net;
                adam.step(mlp_params(target), gptrs, phase_lr);
                const double lv = t.val(loss).data[0];
                if (!std::isfinite(lv)) throw NumericError("emulator training diverged");
                epoch_loss += lv;
                ++steps;
            }
            em.loss_history.push_back(epoch_loss / std::max(1, steps));
        }
    };

    run_phase(true, false, epochs, lr);
    run_phase(false, false, epochs, lr);
    // short fine-tune of the inverse through the frozen forward net; this is what
    // keeps the round trip tight where spectrum -> lai is ill-conditioned
    run_phase(false, true, std::max(1, epochs / 2), lr * 0.5);

    em.trained = true;
    Tensor held_spectra = rows_subset(pairs, held_idx, true);
    em.heldout_rmse = roundtrip_rmse(held_spectra, em);
    return em;
}

Var round_trip(Var spectra_nb, const Emulator& emulator) {
    if (!emulator.trained) throw StateError("emulator round trip requested before training");
    Tape& t = *spectra_nb.tape;
    MlpVars inv = lift(t, emulator.inverse_net, false);
    MlpVars fwd = lift(t, emulator.forward_net, false);
    return forward_apply(t, inverse_apply(t, spectra_nb, inv), fwd);
}

Tensor round_trip_value(const Tensor& spectra_nb, const Emulator& emulator) {
    Tape t;
    return t.val(round_trip(t.constant(spectra_nb), emulator));
}

double roundtrip_rmse(const Tensor& spectra_nb, const Emulator& emulator) {
    const Tensor rec = round_trip_value(spectra_nb, emulator);
    double se = 0.0;
    for (size_t i = 0; i < rec.data.size(); ++i) {
        const double d = rec.data[i] - spectra_nb.data[i];
        se += d * d;
    }
    return std::sqrt(se / static_cast<double>(rec.data.size()));
}

uint64_t weights_hash(const Emulator& emulator) {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&](const Tensor& t) {
        for (double v : t.data) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        }
    };
    for (const Mlp* m : {&emulator.forward_net, &emulator.inverse_net})
        for (const Tensor* t : {&m->w0, &m->b0, &m->w1, &m->b1, &m->w2, &m->b2}) feed(*t);
    return h;
}

} // namespace abd::emu
