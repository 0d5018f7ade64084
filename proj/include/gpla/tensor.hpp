#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gpla/common.hpp"

namespace gpla::tc {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

class Tensor;

// Backward-graph record. `fn` receives the output gradient and one flow
// buffer per input (nullptr when that input does not require grad) and
// accumulates (+=) into them.
struct Node {
    std::vector<Tensor> inputs;
    std::function<void(const float* gout, const std::vector<float*>& gin)> fn;
};

struct TensorData {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // persistent accumulator, leaf parameters only
    bool requires_grad = false;
    std::shared_ptr<Node> node;  // non-null iff produced by a differentiable op
};

// Define-by-run autodiff tensor: contiguous row-major f32 buffer plus an
// optional backward record. Copies share the underlying storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = std::move(shape);
        t.d_->value.assign(numel(t.d_->shape), 0.0f);
        return t;
    }

    static Tensor full(Shape shape, float v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.d_->value) x = v;
        return t;
    }

    static Tensor scalar(float v) { return full({1}, v); }

    static Tensor from(std::vector<float> data, Shape shape) {
        if (data.size() != numel(shape))
            throw DimensionError("tensor: data size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = std::move(shape);
        t.d_->value = std::move(data);
        return t;
    }

    // Leaf parameter: takes part in backward(), owns a persistent grad buffer.
    static Tensor param(Shape shape) {
        Tensor t = zeros(std::move(shape));
        t.d_->requires_grad = true;
        t.d_->grad.assign(t.size(), 0.0f);
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->value.size(); }

    // Handle semantics: a const Tensor still exposes mutable storage, the
    // same way a const shared_ptr does.
    float* data() const { return d_->value.data(); }
    std::vector<float>& values() const { return d_->value; }

    float item() const {
        if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
        return d_->value[0];
    }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    bool is_leaf() const { return d_ && d_->requires_grad && !d_->node; }

    std::vector<float>& grad() const {
        if (!is_leaf()) throw ContractError("grad(): only leaf parameters hold persistent gradients");
        if (d_->grad.size() != size()) d_->grad.assign(size(), 0.0f);
        return d_->grad;
    }

    void zero_grad() const {
        if (is_leaf()) d_->grad.assign(size(), 0.0f);
    }

    // Same storage, detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = d_->shape;
        t.d_->value = d_->value;
        return t;
    }

    TensorData* raw() const { return d_.get(); }

    // Internal: wrap an op result.
    static Tensor make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                              std::function<void(const float*, const std::vector<float*>&)> backward_fn);

private:
    std::shared_ptr<TensorData> d_;
};

// Grad-recording switch (thread local); inference paths wrap themselves in
// NoGradGuard to skip graph construction.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

inline Tensor Tensor::make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                                  std::function<void(const float*, const std::vector<float*>&)> backward_fn) {
    Tensor t = Tensor::from(std::move(value), std::move(shape));
    bool needs = false;
    if (grad_mode())
        for (const Tensor& in : inputs)
            if (in.requires_grad()) needs = true;
    if (needs) {
        t.d_->requires_grad = true;
        t.d_->node = std::make_shared<Node>();
        t.d_->node->inputs = std::move(inputs);
        t.d_->node->fn = std::move(backward_fn);
    }
    return t;
}

// Reverse-mode sweep from a scalar loss. Gradient flow through interior
// tensors lives in scratch buffers; only leaf parameters accumulate into
// their persistent .grad, so repeated calls without zeroing add up exactly.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward(): loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Post-order DFS over the graph.
    std::vector<TensorData*> topo;
    std::unordered_map<TensorData*, Tensor> holder;  // keeps TensorData alive during the sweep
    std::unordered_set<TensorData*> visited;
    std::vector<std::pair<Tensor, bool>> stack{{loss, false}};
    while (!stack.empty()) {
        auto [t, expanded] = stack.back();
        stack.pop_back();
        TensorData* td = t.raw();
        if (expanded) {
            topo.push_back(td);
            continue;
        }
        if (visited.count(td)) continue;
        visited.insert(td);
        holder.emplace(td, t);
        stack.push_back({t, true});
        if (td->node)
            for (const Tensor& in : td->node->inputs)
                if (in.requires_grad() && !visited.count(in.raw())) stack.push_back({in, false});
    }

    std::unordered_map<TensorData*, std::vector<float>> flow;
    flow[loss.raw()] = {1.0f};

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorData* td = *it;
        if (!td->node) continue;
        auto fit = flow.find(td);
        if (fit == flow.end()) continue;  // unreachable from the loss
        const std::vector<float>& gout = fit->second;
        std::vector<float*> gin(td->node->inputs.size(), nullptr);
        for (std::size_t i = 0; i < td->node->inputs.size(); ++i) {
            const Tensor& in = td->node->inputs[i];
            if (!in.requires_grad()) continue;
            auto& buf = flow[in.raw()];
            if (buf.size() != in.size()) buf.assign(in.size(), 0.0f);
            gin[i] = buf.data();
        }
        td->node->fn(gout.data(), gin);
        flow.erase(td);  // consumed; interior grads are not retained
    }

    // Deposit what reached the leaves.
    for (TensorData* td : topo) {
        if (td->node || !td->requires_grad) continue;
        auto fit = flow.find(td);
        if (fit == flow.end()) continue;
        if (td->grad.size() != td->value.size()) td->grad.assign(td->value.size(), 0.0f);
        for (std::size_t i = 0; i < td->grad.size(); ++i) td->grad[i] += fit->second[i];
    }
}

}  // namespace gpla::tc
