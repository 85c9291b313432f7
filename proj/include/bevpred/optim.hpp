#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bevpred/tensor.hpp"

namespace bevpred {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // decoupled
};

// AdamW over an explicit parameter list; only listed tensors are touched, so
// frozen parts of a model cost nothing and are never decayed.
class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    // applies one update from the accumulated gradients (missing grads = 0)
    void step(double lr);
    void zero_grad();
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

// One-cycle schedule: linear warmup from max_lr/25 over the first warmup_frac of
// the run, then cosine decay to max_lr/1000 at the final step.
double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr,
                    double warmup_frac = 0.3);

// Global L2-norm gradient clip over a parameter list; returns the pre-clip norm.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace bevpred
