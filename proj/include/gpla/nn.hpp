#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gpla/ops.hpp"
#include "gpla/rng.hpp"

namespace gpla::nn {

using tc::Shape;
using tc::Tensor;

// Owns every trainable leaf in registration order (the order is the
// checkpoint and optimizer-state layout, so it must be deterministic).
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_[name] = items_.size();
        items_.emplace_back(name, t);
        return t;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return items_[it->second].second;
    }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }
    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }
    void zero_grad() const {
        for (const auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

// Per-parameter derived streams keep initialization independent of the
// order modules are constructed in.
inline Tensor xavier_uniform(ParamRegistry& reg, Rng& rng, const std::string& name, int fan_in, int fan_out) {
    Rng r = rng.stream(name);
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    Tensor t = Tensor::param({fan_in, fan_out});
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(r.uniform(-limit, limit));
    return reg.add(name, t);
}

inline Tensor normal(ParamRegistry& reg, Rng& rng, const std::string& name, Shape shape, float sd) {
    Rng r = rng.stream(name);
    Tensor t = Tensor::param(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(r.normal(0.0, sd));
    return reg.add(name, t);
}

inline Tensor constant(ParamRegistry& reg, const std::string& name, Shape shape, float value) {
    Tensor t = Tensor::param(std::move(shape));
    std::fill(t.data(), t.data() + t.size(), value);
    return reg.add(name, t);
}

}  // namespace init

struct Linear {
    Tensor w, b;
    bool has_bias = true;

    Linear() = default;
    Linear(ParamRegistry& reg, Rng& rng, const std::string& name, int in, int out, bool bias = true)
        : w(init::xavier_uniform(reg, rng, name + ".w", in, out)), has_bias(bias) {
        if (bias) b = init::constant(reg, name + ".b", {out}, 0.0f);
    }

    Tensor operator()(const Tensor& x) const {
        Tensor y = tc::matmul(x, w);
        return has_bias ? tc::add(y, b) : y;
    }
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamRegistry& reg, const std::string& name, int d)
        : gamma(init::constant(reg, name + ".g", {d}, 1.0f)), beta(init::constant(reg, name + ".b", {d}, 0.0f)) {}

    Tensor operator()(const Tensor& x) const { return tc::layer_norm(x, gamma, beta); }
};

struct Embedding {
    Tensor table;

    Embedding() = default;
    Embedding(ParamRegistry& reg, Rng& rng, const std::string& name, int vocab, int d)
        : table(init::normal(reg, rng, name + ".table", {vocab, d}, 0.02f)) {}

    Tensor operator()(const std::vector<int>& ids, Shape lead_shape) const {
        return tc::embedding_lookup(table, ids, std::move(lead_shape));
    }
};

struct SelfAttention {
    int heads = 1;
    Linear wq, wk, wv, wo;

    SelfAttention() = default;
    SelfAttention(ParamRegistry& reg, Rng& rng, const std::string& name, int d, int n_heads)
        : heads(n_heads),
          wq(reg, rng, name + ".wq", d, d),
          wk(reg, rng, name + ".wk", d, d),
          wv(reg, rng, name + ".wv", d, d),
          wo(reg, rng, name + ".wo", d, d) {}

    Tensor operator()(const Tensor& x, const std::vector<int>& lengths, bool causal) const {
        return wo(tc::masked_attention(wq(x), wk(x), wv(x), heads, lengths, causal));
    }
};

// Pre-LN block: x + attn(ln1(x)), then x + mlp(ln2(x)). The MLP hidden
// width is 2x the model dim.
struct TransformerBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Linear fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamRegistry& reg, Rng& rng, const std::string& name, int d, int n_heads)
        : ln1(reg, name + ".ln1", d),
          ln2(reg, name + ".ln2", d),
          attn(reg, rng, name + ".attn", d, n_heads),
          fc1(reg, rng, name + ".fc1", d, 2 * d),
          fc2(reg, rng, name + ".fc2", 2 * d, d) {}

    Tensor operator()(const Tensor& x, const std::vector<int>& lengths, bool causal) const {
        Tensor h = tc::add(x, attn(ln1(x), lengths, causal));
        return tc::add(h, fc2(tc::gelu(fc1(ln2(h)))));
    }
};

}  // namespace gpla::nn
