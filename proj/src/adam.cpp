#include "adaptorx/adam.hpp"

#include <cmath>

namespace adaptorx {

template <typename T>
void Adam<T>::step(const std::vector<ParamPtr<T>>& params, T lr_scale) {
    ++step_;
    const T bc1 = T(1) - std::pow(hyper_.beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(hyper_.beta2, static_cast<T>(step_));
    const T lr = hyper_.lr * lr_scale;

    for (const auto& p : params) {
        Tensor<T>& t = p->tensor;
        if (!t.has_grad()) {
            throw GradientError("adam_step: parameter " + p->name + " has no gradient");
        }
        Moments& mo = moments_[p->name];
        if (mo.m.empty()) {
            mo.m.assign(static_cast<size_t>(t.size()), T(0));
            mo.v.assign(static_cast<size_t>(t.size()), T(0));
        }
        const std::vector<T>& g = t.grad();
        std::vector<T>& val = t.data();
        for (size_t i = 0; i < val.size(); ++i) {
            mo.m[i] = hyper_.beta1 * mo.m[i] + (T(1) - hyper_.beta1) * g[i];
            mo.v[i] = hyper_.beta2 * mo.v[i] + (T(1) - hyper_.beta2) * g[i] * g[i];
            const T mhat = mo.m[i] / bc1;
            const T vhat = mo.v[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.eps);
        }
    }
}

template <typename T>
void Adam<T>::reset() {
    step_ = 0;
    moments_.clear();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace adaptorx
