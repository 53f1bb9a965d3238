#pragma once

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "metacritic/ops.hpp"
#include "metacritic/params.hpp"

namespace metacritic {

/// Gradients keyed by parameter identity (the parameter's graph node).
/// Parameters the loss never touched are simply absent; querying them
/// yields zeros of the right shape.
class GradMap {
 public:
  void set(const GraphNode* key, Tensor grad) {
    grads_[key] = std::move(grad);
  }

  bool contains(const Tensor& param) const {
    return param.has_node() && grads_.count(param.node().get()) != 0;
  }

  Tensor get(const Tensor& param) const {
    if (param.has_node()) {
      auto it = grads_.find(param.node().get());
      if (it != grads_.end()) return it->second;
    }
    return Tensor::zeros(param.shape());
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const GraphNode*, Tensor> grads_;
};

namespace detail {

inline std::vector<GraphNode*> topo_order(GraphNode* root) {
  std::vector<GraphNode*> order;
  std::unordered_set<const GraphNode*> done;
  struct Frame {
    GraphNode* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack{{root}};
  done.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    bool descended = false;
    while (top.next < top.node->inputs().size()) {
      const Tensor& in = top.node->input(top.next++);
      if (!in.has_node()) continue;
      GraphNode* child = in.node().get();
      if (done.insert(child).second) {
        stack.push_back({child});
        descended = true;
        break;
      }
    }
    if (!descended && top.next >= top.node->inputs().size()) {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

}  // namespace detail

/// Reverse-mode gradients of a scalar root with respect to `wrt` tensors.
/// With `retain` set, the backward pass records its own operations, so the
/// returned gradients can be differentiated again (the second-order path
/// through inner-loop updates). Tensors in `wrt` are matched by node
/// identity; unreachable ones get exact zeros.
inline GradMap backward(const Tensor& root, const std::vector<Tensor>& wrt,
                        bool retain = false) {
  if (root.numel() != 1) {
    throw OpError("backward: root must be scalar, got shape " +
                  shape_str(root.shape()));
  }
  GradMap result;
  if (!root.has_node()) return result;

  const std::vector<GraphNode*> order = detail::topo_order(root.node().get());

  // Restrict the sweep to ancestors of the requested tensors: a node's
  // adjoint is only worth computing if some wrt leaf sits below it.
  std::unordered_set<const GraphNode*> targets;
  for (const Tensor& p : wrt) {
    if (p.has_node()) targets.insert(p.node().get());
  }
  std::unordered_map<const GraphNode*, bool> needed;
  needed.reserve(order.size());
  for (GraphNode* node : order) {  // children before parents
    bool need = targets.count(node) != 0;
    for (const Tensor& in : node->inputs()) {
      if (need) break;
      if (in.has_node()) need = needed[in.node().get()];
    }
    needed[node] = need;
  }
  if (!needed[root.node().get()]) return result;

  std::unordered_map<const GraphNode*, Tensor> adjoint;
  adjoint.emplace(root.node().get(), Tensor::full(root.shape(), 1.0));

  GradMode guard(retain);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GraphNode* node = *it;
    if (!needed[node] || node->op() == Op::Leaf) continue;
    auto found = adjoint.find(node);
    if (found == adjoint.end()) continue;
    const Tensor g = found->second;
    std::vector<char> need_mask(node->inputs().size(), 0);
    for (std::size_t i = 0; i < node->inputs().size(); ++i) {
      const Tensor& in = node->input(i);
      need_mask[i] = in.has_node() && needed[in.node().get()];
    }
    const std::vector<Tensor> grads = ops::backward_rule(*node, g, need_mask);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const Tensor& in = node->input(i);
      if (!need_mask[i] || !grads[i].defined()) continue;
      if (grads[i].shape() != in.shape()) {
        throw OpError(std::string("backward: rule for ") + op_name(node->op()) +
                      " produced gradient " + shape_str(grads[i].shape()) +
                      " for input " + shape_str(in.shape()));
      }
      auto slot = adjoint.find(in.node().get());
      if (slot == adjoint.end()) {
        adjoint.emplace(in.node().get(), grads[i]);
      } else {
        slot->second = ops::add(slot->second, grads[i]);
      }
    }
  }

  for (const Tensor& p : wrt) {
    if (!p.has_node()) continue;
    auto it = adjoint.find(p.node().get());
    if (it != adjoint.end()) result.set(p.node().get(), it->second);
  }
  return result;
}

inline GradMap backward(const Tensor& root, const ParamSet& wrt,
                        bool retain = false) {
  return backward(root, wrt.tensors(), retain);
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_diff = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> per_param;
};

inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
  return std::fabs(analytic - numeric) / denom;
}

/// Compare the engine's gradient of f against central differences,
/// coordinate by coordinate. `f` maps a ParamSet (fresh leaves) to a
/// scalar Tensor and must be deterministic.
template <typename F>
GradCheckReport finite_difference_check(F&& f, const ParamSet& at,
                                        double step = 1e-5) {
  if (!(step > 0.0)) throw OpError("finite_difference_check: step must be > 0");

  const Tensor loss = f(at);
  if (loss.numel() != 1) {
    throw OpError("finite_difference_check: f must return a scalar");
  }
  const GradMap analytic = backward(loss, at, /*retain=*/false);

  GradCheckReport report;
  for (const ParamSet::Entry& entry : at.entries()) {
    const Tensor grad = analytic.get(entry.tensor);
    GradCheckEntry row{entry.name, 0.0, 0.0};
    std::vector<double> base(entry.tensor.values());
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double saved = base[i];
      base[i] = saved + step;
      ParamSet plus = at.with(entry.name,
                              Tensor::leaf(entry.tensor.shape(), base));
      const double f_plus = f(plus).item();
      base[i] = saved - step;
      ParamSet minus = at.with(entry.name,
                               Tensor::leaf(entry.tensor.shape(), base));
      const double f_minus = f(minus).item();
      base[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw OpError("finite_difference_check: non-finite value at '" +
                      entry.name + "'[" + std::to_string(i) + "]");
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double err = rel_err(grad[i], numeric);
      row.max_rel_err = std::max(row.max_rel_err, err);
      row.max_abs_diff =
          std::max(row.max_abs_diff, std::fabs(grad[i] - numeric));
    }
    report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
    report.per_param.push_back(std::move(row));
  }
  return report;
}

}  // namespace metacritic
