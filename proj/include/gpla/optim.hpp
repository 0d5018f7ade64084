#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gpla/nn.hpp"

namespace gpla::optim {

using tc::Tensor;

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;   // decoupled, applied as lr * wd * theta
    float clip_norm = 1.0f;      // global norm cap; <= 0 disables clipping
};

// Adam over a ParamRegistry; with weight_decay > 0 this is AdamW.
class Adam {
public:
    Adam(const nn::ParamRegistry& reg, AdamConfig cfg) : reg_(&reg), cfg_(cfg) {
        m_.reserve(reg.count());
        v_.reserve(reg.count());
        for (const auto& [name, t] : reg.items()) {
            m_.emplace_back(t.size(), 0.0f);
            v_.emplace_back(t.size(), 0.0f);
        }
    }

    float lr() const { return cfg_.lr; }
    void set_lr(float lr) { cfg_.lr = lr; }
    std::int64_t step_count() const { return step_; }
    double last_grad_norm() const { return last_norm_; }

    // Validates grads, clips by global norm, applies the update, then
    // clears grads so the next accumulation window starts clean.
    void step() {
        const auto& items = reg_->items();
        double sq = 0.0;
        for (std::size_t p = 0; p < items.size(); ++p) {
            const Tensor& t = items[p].second;
            const float* g = t.raw()->grad.data();
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (!std::isfinite(g[i]))
                    throw NumericError("non-finite gradient in parameter '" + items[p].first + "'");
                sq += static_cast<double>(g[i]) * g[i];
            }
        }
        last_norm_ = std::sqrt(sq);
        const float scale = (cfg_.clip_norm > 0.0f && last_norm_ > cfg_.clip_norm)
                                ? static_cast<float>(cfg_.clip_norm / last_norm_)
                                : 1.0f;
        ++step_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
        for (std::size_t p = 0; p < items.size(); ++p) {
            const Tensor& t = items[p].second;
            float* theta = t.data();
            float* g = t.raw()->grad.data();
            float* m = m_[p].data();
            float* v = v_[p].data();
            for (std::size_t i = 0; i < t.size(); ++i) {
                const float gi = g[i] * scale;
                m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
                const float mh = static_cast<float>(m[i] / bc1);
                const float vh = static_cast<float>(v[i] / bc2);
                theta[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * theta[i]);
                g[i] = 0.0f;
            }
        }
    }

    // Moment buffers plus step counter, in registry order.
    std::vector<float> state_blob() const {
        std::vector<float> blob;
        blob.reserve(2 * reg_->total_scalars());
        for (const auto& m : m_) blob.insert(blob.end(), m.begin(), m.end());
        for (const auto& v : v_) blob.insert(blob.end(), v.begin(), v.end());
        return blob;
    }
    void load_state_blob(const std::vector<float>& blob, std::int64_t step) {
        if (blob.size() != 2 * reg_->total_scalars())
            throw IoError("optimizer state size mismatch: expected " + std::to_string(2 * reg_->total_scalars()) +
                          " floats, got " + std::to_string(blob.size()));
        std::size_t off = 0;
        for (auto& m : m_) {
            std::copy(blob.begin() + off, blob.begin() + off + m.size(), m.begin());
            off += m.size();
        }
        for (auto& v : v_) {
            std::copy(blob.begin() + off, blob.begin() + off + v.size(), v.begin());
            off += v.size();
        }
        step_ = step;
    }

private:
    const nn::ParamRegistry* reg_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t step_ = 0;
    double last_norm_ = 0.0;
};

// Flat copies of all parameter values, in registry order; used for last-good
// rollback when training hits a non-finite loss.
inline std::vector<float> snapshot_params(const nn::ParamRegistry& reg) {
    std::vector<float> blob;
    blob.reserve(reg.total_scalars());
    for (const auto& [name, t] : reg.items()) blob.insert(blob.end(), t.data(), t.data() + t.size());
    return blob;
}

inline void restore_params(const nn::ParamRegistry& reg, const std::vector<float>& blob) {
    if (blob.size() != reg.total_scalars()) throw ContractError("parameter snapshot size mismatch");
    std::size_t off = 0;
    for (const auto& [name, t] : reg.items()) {
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
                  blob.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.data());
        off += t.size();
    }
}

}  // namespace gpla::optim
