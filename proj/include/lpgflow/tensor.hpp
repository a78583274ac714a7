#ifndef LPGFLOW_TENSOR_HPP
#define LPGFLOW_TENSOR_HPP

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

// Minimal reverse-mode autodiff over dense row-major 2-D float tensors.
// A forward pass builds a fresh graph of TensorNodes; backward() walks it in
// reverse topological order and accumulates into .grad. Parameters live as
// leaf nodes that survive across steps, everything else is rebuilt per step
// and freed when the loss handle goes out of scope.

namespace lpgflow {

struct TensorNode {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
    std::vector<float> grad;  // sized lazily, only for requires_grad nodes
    bool requires_grad = false;
    std::string name;  // non-empty for parameters
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates this node's grad into its parents' grads. Captures parent
    // shared_ptrs and a raw pointer to this node (no ownership cycle).
    std::function<void()> backward_fn;

    int64_t numel() const { return int64_t(rows) * cols; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(int rows, int cols, bool requires_grad = false) {
        auto n           = std::make_shared<TensorNode>();
        n->rows          = rows;
        n->cols          = cols;
        n->data.assign(size_t(rows) * cols, 0.0f);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor full(int rows, int cols, float v, bool requires_grad = false) {
        Tensor t = zeros(rows, cols, requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from_vec(std::vector<float> v, int rows, int cols,
                           bool requires_grad = false) {
        LPG_REQUIRE(int64_t(v.size()) == int64_t(rows) * cols,
                    "from_vec: size does not match shape");
        auto n           = std::make_shared<TensorNode>();
        n->rows          = rows;
        n->cols          = cols;
        n->data          = std::move(v);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return from_vec({v}, 1, 1, requires_grad);
    }

    static Tensor randn(int rows, int cols, RngStream& rng, float stddev = 1.0f,
                        bool requires_grad = false) {
        Tensor t = zeros(rows, cols, requires_grad);
        for (auto& x : t.data()) x = stddev * rng.next_normal();
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& ptr() const { return node_; }

    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    int64_t numel() const { return node_->numel(); }
    std::vector<float>& data() { return node_->data; }
    const std::vector<float>& data() const { return node_->data; }
    std::vector<float>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_name(const std::string& s) { node_->name = s; }
    const std::string& name() const { return node_->name; }

    float item() const {
        LPG_REQUIRE(numel() == 1, "item: tensor is not scalar");
        return node_->data[0];
    }

    float at(int r, int c) const { return node_->data[size_t(r) * cols() + c]; }
    float& at(int r, int c) { return node_->data[size_t(r) * cols() + c]; }

    // Reverse pass from a scalar. Grads accumulate: calling backward twice
    // without zero_grad in between doubles leaf grads.
    void backward() const;

private:
    std::shared_ptr<TensorNode> node_;
};

inline void Tensor::backward() const {
    LPG_REQUIRE(defined(), "backward: undefined tensor");
    LPG_REQUIRE(numel() == 1, "backward: loss must be scalar");
    LPG_REQUIRE(node_->requires_grad, "backward: loss does not require grad");

    // iterative DFS; in_progress detects cycles (a malformed graph)
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::unordered_set<TensorNode*> in_progress;
    struct Frame {
        TensorNode* n;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    in_progress.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.next_parent++].get();
            if (!p->requires_grad || visited.count(p)) continue;
            LPG_REQUIRE(!in_progress.count(p), "backward: cycle in graph");
            in_progress.insert(p);
            stack.push_back({p, 0});
        } else {
            visited.insert(f.n);
            in_progress.erase(f.n);
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

}  // namespace lpgflow

#endif  // LPGFLOW_TENSOR_HPP
