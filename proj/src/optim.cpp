#include "bevpred/optim.hpp"

#include <cmath>

namespace bevpred {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); i++) {
        m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
        v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    t_++;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); i++) {
        Tensor& p = params_[i];
        const scalar* g = p.has_grad() ? p.ptr()->grad.data() : nullptr;
        scalar* w = p.data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (int64_t j = 0; j < p.numel(); j++) {
            const double gj = g ? static_cast<double>(g[j]) : 0.0;
            m[static_cast<size_t>(j)] = cfg_.beta1 * m[static_cast<size_t>(j)] +
                                        (1.0 - cfg_.beta1) * gj;
            v[static_cast<size_t>(j)] = cfg_.beta2 * v[static_cast<size_t>(j)] +
                                        (1.0 - cfg_.beta2) * gj * gj;
            const double mhat = m[static_cast<size_t>(j)] / bc1;
            const double vhat = v[static_cast<size_t>(j)] / bc2;
            double wj = static_cast<double>(w[j]);
            wj -= lr * cfg_.weight_decay * wj;  // decoupled decay
            wj -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            w[j] = static_cast<scalar>(wj);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr, double warmup_frac) {
    if (total_steps <= 0) return max_lr;
    if (step < 0) step = 0;
    if (step >= total_steps) step = total_steps - 1;
    const double warm_steps = warmup_frac * static_cast<double>(total_steps);
    const double start_lr = max_lr / 25.0;
    const double final_lr = max_lr / 1000.0;
    if (static_cast<double>(step) < warm_steps) {
        const double u = static_cast<double>(step) / warm_steps;
        return start_lr + (max_lr - start_lr) * u;
    }
    const double span = static_cast<double>(total_steps - 1) - warm_steps;
    const double u = span <= 0 ? 1.0 : (static_cast<double>(step) - warm_steps) / span;
    return final_lr + 0.5 * (max_lr - final_lr) * (1.0 + std::cos(M_PI * u));
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        const scalar* g = p.ptr()->grad.data();
        for (int64_t j = 0; j < p.numel(); j++) sq += static_cast<double>(g[j]) * g[j];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const scalar s = static_cast<scalar>(max_norm / norm);
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            scalar* g = p.ptr()->grad.data();
            for (int64_t j = 0; j < p.numel(); j++) g[j] *= s;
        }
    }
    return norm;
}

}  // namespace bevpred
