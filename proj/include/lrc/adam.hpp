#pragma once

#include <cmath>
#include <vector>

#include "lrc/autodiff.hpp"
#include "lrc/tensor.hpp"
#include "lrc/util.hpp"

namespace lrc {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are kept in the same scalar type
// as the parameters so checkpoints can restore optimizer state bit-exactly.
template <typename T>
class AdamT {
public:
    AdamT(ParamSetT<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
        for (const auto& p : params) {
            m_.emplace_back(p.value.shape);
            v_.emplace_back(p.value.shape);
        }
    }

    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    std::vector<TensorT<T>>& moment1() { return m_; }
    std::vector<TensorT<T>>& moment2() { return v_; }
    const std::vector<TensorT<T>>& moment1() const { return m_; }
    const std::vector<TensorT<T>>& moment2() const { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

    // One update from a fully populated gradient set. Gradients are consumed:
    // the buffers are zeroed and their populated flags cleared.
    void step_update(GradientsT<T>& grads) {
        if (grads.grad.size() != params_->size()) {
            throw ValidationError("adam: gradient set size does not match parameter set");
        }
        for (size_t i = 0; i < params_->size(); ++i) {
            if (!grads.populated[i]) {
                throw ValidationError("adam: no gradient for parameter " + (*params_)[i].name);
            }
            if (!grads.grad[i].all_finite()) {
                throw NumericError("adam: non-finite gradient for parameter " +
                                   (*params_)[i].name);
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (size_t i = 0; i < params_->size(); ++i) {
            auto& w = (*params_)[i].value.data;
            const auto& g = grads.grad[i].data;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            for (size_t j = 0; j < w.size(); ++j) {
                const double gj = g[j];
                const double mj = cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                w[j] = static_cast<T>(double(w[j]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
        grads.reset();
    }

private:
    ParamSetT<T>* params_;
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::vector<TensorT<T>> m_;
    std::vector<TensorT<T>> v_;
};

using Adam = AdamT<float>;

}  // namespace lrc
