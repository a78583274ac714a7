#ifndef LPGFLOW_OPTIM_HPP
#define LPGFLOW_OPTIM_HPP

#include <cmath>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace lpgflow {

struct AdamWConfig {
    float lr           = 1e-4f;
    float beta1        = 0.9f;
    float beta2        = 0.999f;
    float eps          = 1e-8f;
    float weight_decay = 0.01f;
};

// AdamW with bias correction and decoupled weight decay:
//   m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
//   w <- w - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * w )
// A non-finite gradient anywhere rejects the whole update and raises
// NumericFault; moments and weights stay untouched in that case.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        LPG_REQUIRE(cfg_.lr > 0.0f, "adamw: lr must be positive");
        LPG_REQUIRE(cfg_.beta1 >= 0.0f && cfg_.beta1 < 1.0f, "adamw: beta1 out of range");
        LPG_REQUIRE(cfg_.beta2 >= 0.0f && cfg_.beta2 < 1.0f, "adamw: beta2 out of range");
        LPG_REQUIRE(cfg_.eps > 0.0f, "adamw: eps must be positive");
        LPG_REQUIRE(cfg_.weight_decay >= 0.0f, "adamw: negative weight_decay");
        for (auto& p : params_) {
            LPG_REQUIRE(p.requires_grad(), "adamw: param does not require grad");
            m_.emplace_back(p.numel(), 0.0f);
            v_.emplace_back(p.numel(), 0.0f);
        }
    }

    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(float lr) {
        LPG_REQUIRE(lr > 0.0f, "adamw: lr must be positive");
        cfg_.lr = lr;
    }

    void step() {
        for (auto& p : params_) {
            for (float g : p.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericFault("adamw: non-finite gradient in " + p.name(), step_);
                }
            }
        }
        step_++;
        const float bc1 = 1.0f - std::pow(cfg_.beta1, float(step_));
        const float bc2 = 1.0f - std::pow(cfg_.beta2, float(step_));
        for (size_t pi = 0; pi < params_.size(); pi++) {
            std::vector<float>& w = params_[pi].data();
            std::vector<float>& g = params_[pi].grad();
            std::vector<float>& m = m_[pi];
            std::vector<float>& v = v_[pi];
            for (size_t i = 0; i < w.size(); i++) {
                m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
                const float m_hat = m[i] / bc1;
                const float v_hat = v[i] / bc2;
                w[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                                   cfg_.weight_decay * w[i]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.node()->zero_grad();
    }

    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    int64_t step_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

}  // namespace lpgflow

#endif  // LPGFLOW_OPTIM_HPP
