#include "promptir/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace promptir {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
    }
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)), 0.0);
    return wrap(make_node(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)), value);
    return wrap(make_node(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return wrap(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : node_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("backward() needs a scalar loss, got " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    TensorNode* root = loss.node().get();
    if (!root->requires_grad) return;

    // Post-order DFS; reversed it yields a valid topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh gradients for this sweep on non-leaf nodes; leaf gradients
    // keep accumulating until zero_grad.
    for (TensorNode* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
        else n->ensure_grad();
    }
    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Tensor ParamStore::add(const std::string& name, Tensor param) {
    if (!param.defined() || !param.requires_grad()) {
        throw std::invalid_argument("parameter '" + name + "' must be a grad-tracked tensor");
    }
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    if (!nodes_.insert(param.node().get()).second) {
        throw std::invalid_argument("parameter '" + name + "' aliases an existing parameter");
    }
    index_[name] = items_.size();
    items_.emplace_back(name, param);
    return param;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

} // namespace promptir
