#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace promptir {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Graph node behind a Tensor handle. Holds the value buffer, the gradient
// buffer (allocated lazily), and for non-leaf nodes the parents plus a
// closure that pushes this node's gradient into theirs.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle to a shared graph node. Buffers are immutable
// after construction except through data_mut(), which only the owning
// code (initialization, the optimizer, checkpoint loading) calls.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->data; }
    std::span<double> data_mut() { return node_->data; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { node_->ensure_grad(); return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    double item() const;
    void zero_grad();

    // True when every value is finite (no NaN / Inf).
    bool all_finite() const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    // Internal: wrap an op result.
    static Tensor wrap(std::shared_ptr<TensorNode> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Gradients of leaf tensors
// (parameters, inputs) accumulate across calls; intermediate nodes are
// reset at the start of each sweep.
void backward(const Tensor& loss);

// Thread-local switch for graph recording; ops run value-only while a
// guard is alive (inference, evaluation).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Ordered name -> parameter map. Insertion order is the canonical order
// for checkpoints and optimizer state. Names are unique and a node may
// appear only once (no aliasing).
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor param);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::int64_t total_elements() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
    std::unordered_set<const TensorNode*> nodes_;
};

} // namespace promptir
