#include "ito/autodiff.hpp"

#include <string>
#include <unordered_set>
#include <utility>

#include "ito/errors.hpp"

namespace ito {

Tensor& Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor(value.dims());
        grad_ready = true;
    }
    return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

const Tensor& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
    node_->ensure_grad().fill(0.0);
}

Var make_result(Tensor value, const char* op, std::vector<Var> parents, BackwardFn fn) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite output in op '") + op + "'");
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.shared());
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

Tensor* parent_grad(Node& self, std::size_t k) {
    Node* p = self.parents[k].get();
    return p->requires_grad ? &p->ensure_grad() : nullptr;
}

void backward(const Var& root) {
    if (root.value().size() != 1) {
        throw UsageError("backward() requires a scalar root, got dims " + dims_str(root.dims()));
    }
    Node* r = root.node();
    if (!r->requires_grad) return;

    // Post-order DFS: every node appears after all of its parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited{r};
    std::vector<std::pair<Node*, std::size_t>> stack{{r, 0}};
    while (!stack.empty()) {
        Node* n = stack.back().first;
        std::size_t& next = stack.back().second;
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->is_leaf()) {
            n->ensure_grad();
        } else {
            n->grad_ready = false;
        }
    }
    r->ensure_grad()[0] += 1.0;
    // Interior gradients are allocated on first contribution and released once
    // propagated, so only one frontier of them is alive at a time.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf() || !n->grad_ready) continue;
        if (n->backward_fn) n->backward_fn(*n);
        n->grad = Tensor();
        n->grad_ready = false;
    }
}

}  // namespace ito
