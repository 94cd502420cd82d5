#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adaptorx/autodiff.hpp"

namespace adaptorx {

template <typename T>
struct AdamHyper {
    T lr = T(5e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.98);
    T eps = T(1e-9);
};

// Adam with bias correction. Per-parameter moments are keyed by parameter
// name; the shared step count increases by one per update. Gradients are
// left untouched — zeroing is the caller's job.
template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamHyper<T> hyper) : hyper_(hyper) {}

    // lr_scale multiplies the base learning rate (warmup support).
    void step(const std::vector<ParamPtr<T>>& params, T lr_scale = T(1));

    // Drops moments and the step count (used at schedule phase boundaries).
    void reset();

    long step_count() const { return step_; }
    const AdamHyper<T>& hyper() const { return hyper_; }

private:
    struct Moments {
        std::vector<T> m, v;
    };

    AdamHyper<T> hyper_;
    long step_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace adaptorx
