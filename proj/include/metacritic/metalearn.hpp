#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metacritic/autodiff.hpp"
#include "metacritic/critic.hpp"
#include "metacritic/ops.hpp"
#include "metacritic/params.hpp"
#include "metacritic/tasks.hpp"

namespace metacritic {

enum class MetaVariant { MamlPP, ScaPred, ScaPredParams };

inline const char* to_string(MetaVariant v) {
  switch (v) {
    case MetaVariant::MamlPP: return "maml_pp";
    case MetaVariant::ScaPred: return "sca_pred";
    case MetaVariant::ScaPredParams: return "sca_pred_params";
  }
  return "?";
}

inline MetaVariant parse_variant(const std::string& s) {
  if (s == "maml_pp") return MetaVariant::MamlPP;
  if (s == "sca_pred") return MetaVariant::ScaPred;
  if (s == "sca_pred_params") return MetaVariant::ScaPredParams;
  throw OpError("unknown variant '" + s + "'");
}

inline CriticFeatureVariant feature_variant(MetaVariant v) {
  return v == MetaVariant::ScaPredParams ? CriticFeatureVariant::PredParams
                                         : CriticFeatureVariant::Pred;
}

/// Linear ramp from uniform weights to one-hot on the final step.
struct AnnealSchedule {
  std::size_t end_epoch = 15;
};

enum class OuterOptimizer { Adam, Sgd };

/// Loop and schedule hyperparameters for meta-training.
struct MetaConfig {
  std::size_t support_steps = 5;  // N, inner steps on the support set
  std::size_t target_steps = 1;   // I, critic-driven steps on the target set
  std::size_t meta_batch = 2;     // B, tasks per outer update
  double outer_step = 1e-3;       // step size for the base model and step sizes
  OuterOptimizer outer_optimizer = OuterOptimizer::Adam;
  double critic_outer_step = 1e-6;  // plain SGD step for the critic
  bool learned_critic_step = true;  // critic-driven updates use learned sizes
  double fixed_critic_step = 0.01;  // used when not learned
  double lslr_init = 0.01;
  std::vector<double> support_weights;  // v, length N
  std::vector<double> target_weights;   // w, length I
  AnnealSchedule anneal;
  std::size_t first_order_epochs = 0;
  bool multi_step_critic_loss = false;
  MetaVariant variant = MetaVariant::MamlPP;

  static std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0);
  }

  /// Fill v/w with uniform simplexes if left empty.
  void finalize() {
    if (support_weights.empty()) support_weights = uniform_weights(support_steps);
    if (target_weights.empty()) target_weights = uniform_weights(target_steps);
  }

  void validate() const {
    if (support_steps < 1) throw OpError("config: need at least one support step");
    if (meta_batch < 1) throw OpError("config: meta batch must be positive");
    check_simplex(support_weights, support_steps, "support");
    if (target_steps > 0) check_simplex(target_weights, target_steps, "target");
  }

 private:
  static void check_simplex(const std::vector<double>& w, std::size_t n,
                            const char* which) {
    if (w.size() != n) {
      throw OpError(std::string("config: ") + which + " weights have " +
                    std::to_string(w.size()) + " entries for " +
                    std::to_string(n) + " steps");
    }
    double total = 0.0;
    for (const double v : w) {
      if (!(v > 0.0)) {
        throw OpError(std::string("config: ") + which +
                      " weights must be strictly positive");
      }
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
      throw OpError(std::string("config: ") + which + " weights sum to " +
                    std::to_string(total) + ", expected 1");
    }
  }
};

/// Importance weights for the given epoch: linear interpolation from the
/// uniform simplex to one-hot on the last step, reaching the endpoint at
/// the schedule's end epoch.
inline std::vector<double> anneal_importance_weights(
    const std::vector<double>& v, std::size_t epoch,
    const AnnealSchedule& schedule) {
  const std::size_t n = v.size();
  if (n == 0) return {};
  const double t =
      schedule.end_epoch == 0
          ? 1.0
          : std::min(1.0, static_cast<double>(epoch) /
                              static_cast<double>(schedule.end_epoch));
  std::vector<double> out(n, (1.0 - t) / static_cast<double>(n));
  out[n - 1] += t;
  return out;
}

inline bool first_order_mode(const MetaConfig& cfg, std::size_t epoch) {
  return epoch < cfg.first_order_epochs;
}

// ---------------------------------------------------------------------------
// Learned per-layer, per-step inner step sizes, covering the N support
// steps followed by the I critic-driven steps.
// ---------------------------------------------------------------------------

class LslrTable {
 public:
  LslrTable() = default;

  static LslrTable init(const std::vector<std::string>& adapted_names,
                        std::size_t total_steps, double value) {
    LslrTable t;
    t.steps_ = total_steps;
    t.names_ = adapted_names;
    for (std::size_t r = 0; r < adapted_names.size(); ++r) {
      t.row_index_[adapted_names[r]] = r;
      for (std::size_t s = 0; s < total_steps; ++s) {
        t.entries_.push_back(Tensor::leaf({1}, {value}));
      }
    }
    return t;
  }

  std::size_t steps() const { return steps_; }
  const std::vector<std::string>& names() const { return names_; }

  const Tensor& at(const std::string& name, std::size_t step) const {
    auto it = row_index_.find(name);
    if (it == row_index_.end()) {
      throw OpError("step sizes: no row for '" + name + "'");
    }
    if (step >= steps_) {
      throw OpError("step sizes: step " + std::to_string(step) +
                    " outside 0.." + std::to_string(steps_ ? steps_ - 1 : 0));
    }
    return entries_[it->second * steps_ + step];
  }

  void set(const std::string& name, std::size_t step, Tensor value) {
    auto it = row_index_.find(name);
    if (it == row_index_.end() || step >= steps_) {
      throw OpError("step sizes: no entry for '" + name + "' step " +
                    std::to_string(step));
    }
    entries_[it->second * steps_ + step] = std::move(value);
  }

  const std::vector<Tensor>& tensors() const { return entries_; }

  void replace_all(std::vector<Tensor> tensors) {
    if (tensors.size() != entries_.size()) {
      throw OpError("step sizes: replacement has wrong entry count");
    }
    entries_ = std::move(tensors);
  }

  bool all_finite() const {
    for (const Tensor& t : entries_) {
      if (!std::isfinite(t.item())) return false;
    }
    return true;
  }

 private:
  std::size_t steps_ = 0;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> row_index_;
  std::vector<Tensor> entries_;
};

// ---------------------------------------------------------------------------
// Inner loops
// ---------------------------------------------------------------------------

/// Fast-weight sequence for one task plus per-step diagnostics.
struct InnerTrajectory {
  std::vector<ParamSet> params;        // theta_0 .. theta_{N+I}
  std::vector<double> support_losses;  // N values
  std::vector<double> critic_values;   // I values
  std::size_t support_steps = 0;
  std::size_t target_steps = 0;

  const ParamSet& final_params() const { return params.back(); }
};

namespace detail {

/// One gradient step on the adapted partition. `step_sizes[name]` must be
/// a scalar tensor; entries absent from the gradient map pass through
/// untouched.
inline ParamSet descend(const ParamSet& params, const GradMap& grads,
                        const std::map<std::string, Tensor>& step_sizes) {
  ParamSet next = params;
  for (const ParamSet::Entry& e : params.entries()) {
    if (e.partition != Partition::Adapted) continue;
    if (!grads.contains(e.tensor)) continue;
    const Tensor& alpha = step_sizes.at(e.name);
    next = next.with(e.name,
                     ops::sub(e.tensor, ops::mul(alpha, grads.get(e.tensor))));
  }
  return next;
}

}  // namespace detail

/// N gradient steps on the support loss (`support_loss(params) -> scalar`).
/// With `create_graph` the steps are recorded so the outer loss can
/// differentiate through the whole trajectory; without it the inner
/// gradients are treated as constants.
template <typename SupportLoss>
InnerTrajectory inner_adapt(const SupportLoss& support_loss,
                            const ParamSet& theta, const LslrTable& lslr,
                            std::size_t steps, bool create_graph) {
  if (steps < 1) throw OpError("inner_adapt: need at least one step");
  InnerTrajectory traj;
  traj.support_steps = steps;
  traj.params.push_back(theta);
  for (std::size_t i = 0; i < steps; ++i) {
    const ParamSet& current = traj.params.back();
    Tensor loss = support_loss(current);
    if (!std::isfinite(loss.item())) {
      throw OpError("inner_adapt: non-finite support loss at step " +
                    std::to_string(i));
    }
    traj.support_losses.push_back(loss.item());
    GradMap grads = backward(loss, current.tensors_in(Partition::Adapted),
                             create_graph);
    std::map<std::string, Tensor> alphas;
    for (const std::string& name : current.names_in(Partition::Adapted)) {
      alphas.emplace(name, lslr.at(name, i));
    }
    traj.params.push_back(detail::descend(current, grads, alphas));
  }
  return traj;
}

/// Critic features at the current fast weights: flattened softmax
/// predictions on the target inputs, optionally followed by the flattened
/// parameters themselves. Prediction entries keep their graph history so
/// critic-driven updates can differentiate through them.
template <typename Fwd>
CriticFeatureSet collect_features(const Fwd& fwd, const ParamSet& theta,
                                  const Tensor& x_target,
                                  CriticFeatureVariant variant) {
  if (x_target.numel() == 0 || x_target.shape()[0] == 0) {
    throw OpError("collect_features: empty target set");
  }
  Tensor preds = ops::softmax(fwd(theta, x_target));
  Tensor flat = ops::reshape(preds, {1, preds.numel()});
  if (variant == CriticFeatureVariant::PredParams) {
    std::vector<Tensor> parts{flat};
    for (const ParamSet::Entry& e : theta.entries()) {
      parts.push_back(ops::reshape(e.tensor, {1, e.tensor.numel()}));
    }
    flat = ops::concat(parts, 1);
  }
  return CriticFeatureSet{flat, variant};
}

/// I label-free steps on the target set, driven by the critic. Never sees
/// target labels. I = 0 leaves the trajectory unchanged.
template <typename Fwd>
void critic_adapt(const Fwd& fwd, InnerTrajectory& traj, const Tensor& x_target,
                  const CriticSpec& cspec, const ParamSet& critic_params,
                  const LslrTable& lslr, std::size_t steps,
                  CriticFeatureVariant variant, bool create_graph,
                  bool learned_step, double fixed_step) {
  traj.target_steps = steps;
  const std::size_t offset = traj.support_steps;
  for (std::size_t j = 0; j < steps; ++j) {
    const ParamSet& current = traj.params.back();
    CriticFeatureSet f = collect_features(fwd, current, x_target, variant);
    Tensor value = critic_forward(cspec, critic_params, f);
    if (!std::isfinite(value.item())) {
      throw OpError("critic_adapt: non-finite critic value at step " +
                    std::to_string(j));
    }
    traj.critic_values.push_back(value.item());
    GradMap grads = backward(value, current.tensors_in(Partition::Adapted),
                             create_graph);
    std::map<std::string, Tensor> gammas;
    for (const std::string& name : current.names_in(Partition::Adapted)) {
      gammas.emplace(name, learned_step ? lslr.at(name, offset + j)
                                        : Tensor::scalar(fixed_step));
    }
    traj.params.push_back(detail::descend(current, grads, gammas));
  }
}

// ---------------------------------------------------------------------------
// Outer losses
// ---------------------------------------------------------------------------

/// Importance-weighted sum of target losses across the support trajectory.
template <typename Fwd>
Tensor outer_loss_maml_pp(const Fwd& fwd, const InnerTrajectory& traj,
                          const Tensor& x_target,
                          const std::vector<std::int64_t>& y_target,
                          const std::vector<double>& v) {
  if (v.size() != traj.support_steps) {
    throw OpError("outer loss: " + std::to_string(v.size()) +
                  " weights for " + std::to_string(traj.support_steps) +
                  " support steps");
  }
  Tensor total;
  for (std::size_t i = 1; i <= traj.support_steps; ++i) {
    Tensor term = ops::scale(
        ops::nll_loss(fwd(traj.params[i], x_target), y_target), v[i - 1]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

/// The composed outer loss: the support-trajectory term plus the labeled
/// target loss after the critic-driven steps. Target labels are used here
/// and only here. With no critic steps this is exactly the plain
/// multi-step loss; with one critic step the multi-step form coincides
/// with the single-term form.
template <typename Fwd>
Tensor outer_loss_sca(const Fwd& fwd, const InnerTrajectory& traj,
                      const Tensor& x_target,
                      const std::vector<std::int64_t>& y_target,
                      const std::vector<double>& v,
                      const std::vector<double>& w,
                      const ParamSet& /*critic_params*/, bool multi_step) {
  if (traj.params.size() != traj.support_steps + traj.target_steps + 1) {
    throw OpError("outer loss: trajectory length " +
                  std::to_string(traj.params.size()) + " does not match " +
                  std::to_string(traj.support_steps) + "+" +
                  std::to_string(traj.target_steps) + "+1");
  }
  Tensor total = outer_loss_maml_pp(fwd, traj, x_target, y_target, v);
  if (traj.target_steps == 0) return total;
  if (multi_step) {
    if (w.size() != traj.target_steps) {
      throw OpError("outer loss: " + std::to_string(w.size()) +
                    " weights for " + std::to_string(traj.target_steps) +
                    " critic steps");
    }
    for (std::size_t j = 1; j <= traj.target_steps; ++j) {
      Tensor term = ops::scale(
          ops::nll_loss(fwd(traj.params[traj.support_steps + j], x_target),
                        y_target),
          w[j - 1]);
      total = ops::add(total, term);
    }
    return total;
  }
  return ops::add(total,
                  ops::nll_loss(fwd(traj.final_params(), x_target), y_target));
}

// ---------------------------------------------------------------------------
// Outer optimizers
// ---------------------------------------------------------------------------

/// Adaptive-moment estimation over a fixed, ordered list of tensors.
class AdamState {
 public:
  AdamState() = default;
  AdamState(double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void register_sizes(const std::vector<std::size_t>& sizes) {
    m_.clear();
    v_.clear();
    for (const std::size_t n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
    t_ = 0;
  }

  void begin_step() { ++t_; }

  std::vector<double> apply(std::size_t index, const std::vector<double>& value,
                            const std::vector<double>& grad) {
    auto& m = m_.at(index);
    auto& v = v_.at(index);
    if (m.size() != value.size() || grad.size() != value.size()) {
      throw OpError("adam: size mismatch for slot " + std::to_string(index));
    }
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::vector<double> out(value.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      out[i] = value[i] - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    return out;
  }

  double lr() const { return lr_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// The outer update
// ---------------------------------------------------------------------------

/// Mutable training state: the meta initialization, the critic, the
/// learned step sizes and the optimizer moments.
struct MetaState {
  ParamSet theta;
  ParamSet critic;  // empty unless a critic variant is used
  LslrTable lslr;
  AdamState outer_opt;
  std::size_t epoch = 0;

  std::vector<std::size_t> optimizer_sizes() const {
    std::vector<std::size_t> sizes;
    for (const auto& e : theta.entries()) sizes.push_back(e.tensor.numel());
    for (const auto& t : lslr.tensors()) sizes.push_back(t.numel());
    return sizes;
  }
};

/// Assemble a fresh training state: step-size table sized N+I over the
/// adapted partition, optimizer moments registered, critic initialized
/// when the variant calls for one.
inline MetaState make_meta_state(ParamSet theta, const MetaConfig& cfg,
                                 const CriticSpec* cspec,
                                 std::uint64_t critic_seed) {
  MetaState state;
  state.theta = std::move(theta);
  state.lslr = LslrTable::init(state.theta.names_in(Partition::Adapted),
                               cfg.support_steps + cfg.target_steps,
                               cfg.lslr_init);
  if (cfg.variant != MetaVariant::MamlPP) {
    if (cspec == nullptr) {
      throw OpError("make_meta_state: critic variant needs a critic spec");
    }
    state.critic = init_critic(*cspec, critic_seed);
  }
  state.outer_opt = AdamState(cfg.outer_step);
  state.outer_opt.register_sizes(state.optimizer_sizes());
  return state;
}

struct EpisodeMetrics {
  double target_accuracy = 0.0;
  double outer_loss = 0.0;
};

struct MetaStepResult {
  std::vector<EpisodeMetrics> per_episode;
  double outer_loss = 0.0;
  double theta_grad_norm = 0.0;
  double critic_grad_norm = 0.0;
};

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.shape()[1];
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (logits[row * c + j] > logits[row * c + best]) best = j;  // ties: lowest
  }
  return best;
}

template <typename Fwd>
double target_accuracy(const Fwd& fwd, const ParamSet& theta,
                       const Tensor& x_target,
                       const std::vector<std::int64_t>& y_target) {
  GradMode no_graph(false);
  const Tensor logits = fwd(theta, x_target);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < y_target.size(); ++r) {
    if (static_cast<std::int64_t>(argmax_row(logits, r)) == y_target[r]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(y_target.size());
}

namespace detail {

template <typename Fwd>
InnerTrajectory run_inner_loops(const Fwd& fwd, const MetaState& state,
                                const MetaConfig& cfg, const CriticSpec* cspec,
                                const Episode& ep, bool create_graph) {
  const auto support_loss = [&](const ParamSet& p) {
    return ops::nll_loss(fwd(p, ep.x_support), ep.y_support);
  };
  InnerTrajectory traj = inner_adapt(support_loss, state.theta, state.lslr,
                                     cfg.support_steps, create_graph);
  if (cfg.variant != MetaVariant::MamlPP && cfg.target_steps > 0) {
    if (cspec == nullptr) {
      throw OpError("meta_step: critic variant needs a critic spec");
    }
    critic_adapt(fwd, traj, ep.x_target, *cspec, state.critic, state.lslr,
                 cfg.target_steps, feature_variant(cfg.variant), create_graph,
                 cfg.learned_critic_step, cfg.fixed_critic_step);
  }
  return traj;
}

inline double grad_norm(const GradMap& grads, const std::vector<Tensor>& of) {
  double sq = 0.0;
  for (const Tensor& t : of) {
    if (!grads.contains(t)) continue;
    for (const double v : grads.get(t).values()) sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace detail

/// One outer update over a meta-batch of episodes: per-episode inner
/// loops, the summed outer loss, then a joint update of the meta
/// initialization and the learned step sizes (adaptive-moment or plain
/// SGD) and of the critic (plain SGD with its own small step).
template <typename Fwd>
MetaStepResult meta_step(const Fwd& fwd, MetaState& state,
                         const CriticSpec* cspec,
                         const std::vector<Episode>& batch,
                         const MetaConfig& cfg) {
  cfg.validate();
  if (batch.size() != cfg.meta_batch) {
    throw OpError("meta_step: batch has " + std::to_string(batch.size()) +
                  " episodes, config expects " + std::to_string(cfg.meta_batch));
  }
  const bool create_graph = !first_order_mode(cfg, state.epoch);
  const std::vector<double> v = anneal_importance_weights(
      cfg.support_weights, state.epoch, cfg.anneal);

  MetaStepResult result;
  Tensor outer;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Episode& ep = batch[b];
    InnerTrajectory traj =
        detail::run_inner_loops(fwd, state, cfg, cspec, ep, create_graph);
    Tensor ep_loss =
        cfg.variant == MetaVariant::MamlPP
            ? outer_loss_maml_pp(fwd, traj, ep.x_target, ep.y_target, v)
            : outer_loss_sca(fwd, traj, ep.x_target, ep.y_target, v,
                             cfg.target_weights, state.critic,
                             cfg.multi_step_critic_loss);
    if (!std::isfinite(ep_loss.item())) {
      throw OpError("meta_step: non-finite outer loss at episode " +
                    std::to_string(b));
    }
    EpisodeMetrics metrics;
    metrics.outer_loss = ep_loss.item();
    metrics.target_accuracy =
        target_accuracy(fwd, traj.final_params(), ep.x_target, ep.y_target);
    result.per_episode.push_back(metrics);
    outer = outer.defined() ? ops::add(outer, ep_loss) : ep_loss;
  }
  result.outer_loss = outer.item();

  std::vector<Tensor> wrt = state.theta.tensors();
  for (const Tensor& t : state.lslr.tensors()) wrt.push_back(t);
  for (const Tensor& t : state.critic.tensors()) wrt.push_back(t);
  const GradMap grads = backward(outer, wrt, /*retain=*/false);

  result.theta_grad_norm = detail::grad_norm(grads, state.theta.tensors());
  result.critic_grad_norm = detail::grad_norm(grads, state.critic.tensors());

  // Joint update of theta and the step-size table.
  state.outer_opt.begin_step();
  std::size_t slot = 0;
  ParamSet new_theta = state.theta;
  for (const ParamSet::Entry& e : state.theta.entries()) {
    const std::vector<double>& grad = grads.get(e.tensor).values();
    std::vector<double> next =
        cfg.outer_optimizer == OuterOptimizer::Adam
            ? state.outer_opt.apply(slot, e.tensor.values(), grad)
            : [&] {
                std::vector<double> out(e.tensor.values());
                for (std::size_t i = 0; i < out.size(); ++i)
                  out[i] -= cfg.outer_step * grad[i];
                return out;
              }();
    new_theta = new_theta.with(e.name, Tensor::leaf(e.tensor.shape(),
                                                    std::move(next)));
    ++slot;
  }
  state.theta = new_theta;

  std::vector<Tensor> new_lslr;
  for (const Tensor& t : state.lslr.tensors()) {
    const std::vector<double>& grad = grads.get(t).values();
    std::vector<double> next =
        cfg.outer_optimizer == OuterOptimizer::Adam
            ? state.outer_opt.apply(slot, t.values(), grad)
            : [&] {
                std::vector<double> out(t.values());
                for (std::size_t i = 0; i < out.size(); ++i)
                  out[i] -= cfg.outer_step * grad[i];
                return out;
              }();
    new_lslr.push_back(Tensor::leaf(t.shape(), std::move(next)));
    ++slot;
  }
  state.lslr.replace_all(std::move(new_lslr));

  // Critic update: plain SGD, deliberately slow. Untouched for maml_pp.
  if (cfg.variant != MetaVariant::MamlPP && !state.critic.empty()) {
    ParamSet new_critic = state.critic;
    for (const ParamSet::Entry& e : state.critic.entries()) {
      if (!grads.contains(e.tensor)) continue;
      const std::vector<double>& grad = grads.get(e.tensor).values();
      std::vector<double> next(e.tensor.values());
      for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] -= cfg.critic_outer_step * grad[i];
      }
      new_critic = new_critic.with(e.name, Tensor::leaf(e.tensor.shape(),
                                                        std::move(next)));
    }
    state.critic = new_critic;
  }
  return result;
}

/// Adapt on one episode and score the target set; used for validation and
/// test evaluation. Target labels are consumed only by the final scoring.
template <typename Fwd>
double evaluate_episode(const Fwd& fwd, const MetaState& state,
                        const MetaConfig& cfg, const CriticSpec* cspec,
                        const Episode& ep) {
  InnerTrajectory traj =
      detail::run_inner_loops(fwd, state, cfg, cspec, ep, /*create_graph=*/false);
  return target_accuracy(fwd, traj.final_params(), ep.x_target, ep.y_target);
}

}  // namespace metacritic
