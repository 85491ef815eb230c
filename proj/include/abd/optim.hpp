#ifndef ABD_OPTIM_HPP
#define ABD_OPTIM_HPP

#include <cmath>
#include <vector>

#include "abd/tensor.hpp"

namespace abd::opt {

// Adam with decoupled weight decay. State slots are positional: callers must
// pass the same parameter list in the same order every step.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, double lr) {
        if (params.size() != grads.size()) throw ShapeError("optimizer param/grad count mismatch");
        if (m_.empty()) {
            for (Tensor* p : params) {
                m_.push_back(Tensor::zeros(p->shape));
                v_.push_back(Tensor::zeros(p->shape));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = *grads[k];
            if (!same_shape(p, m_[k]) || !same_shape(p, g)) throw ShapeError("optimizer slot shape changed");
            for (size_t i = 0; i < p.data.size(); ++i) {
                m_[k].data[i] = beta1_ * m_[k].data[i] + (1.0 - beta1_) * g.data[i];
                v_[k].data[i] = beta2_ * v_[k].data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
                const double mhat = m_[k].data[i] / bc1;
                const double vhat = v_[k].data[i] / bc2;
                p.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.data[i]);
            }
        }
    }

private:
    double beta1_, beta2_, eps_, wd_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

// cosine decay with a linear warmup fraction at the start
inline double lr_schedule(double base_lr, int step, int total_steps, double warmup_frac) {
    const int warm = std::max(1, static_cast<int>(warmup_frac * total_steps));
    if (step < warm) return base_lr * static_cast<double>(step + 1) / warm;
    const double progress = static_cast<double>(step - warm) / std::max(1, total_steps - warm);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

} // namespace abd::opt

#endif
