#pragma once

// Training objectives for the amortized sampler: the local log-ratio matching
// loss and its single-child stochastic gradient, plus the GFlowNet baselines
// (trajectory, detailed and sub-trajectory balance) with raw or
// forward-looking flows.
//
// Every loss takes an optional gradient sink and a weight; when given, the
// sink receives weight * d(loss)/d(params).

#include <deltaai/sampler.hpp>

namespace deltaai {

struct LogZEstimate {
  double value = 0.0;
};

struct FlowConfig {
  bool forward_looking = false;
  PartialRewardMode mode = PartialRewardMode::ZeroMasked;
};

namespace detail {

inline void require_blanket(const Imap& imap, const Assignment& x, int u) {
  if (!imap.contains(u)) throw MissingBlanket("perturbed variable is not in the I-map");
  if (!x.is_set(u)) throw MissingBlanket("perturbed variable is not instantiated");
  for (int b : imap.blanket(u))
    if (!x.is_set(b)) throw MissingBlanket("Markov blanket of the perturbed variable is not instantiated");
}

// log q(x_v | pa) - log q(x'_v | pa') for one variable of {u} + Ch(u), with
// the evaluations kept for backprop.
template <class Net>
struct RatioTerm {
  typename AmortizedSampler<Net>::LogitEval before, after;
  bool shared = false;   // u itself: both sides read the same logit
  double value = 0.0;
  double d_before = 0.0, d_after = 0.0;  // d value / d logit on each side

  void backprop(const AmortizedSampler<Net>& s, double coeff, SamplerGradient& g) const {
    s.backprop_logit(before, coeff * d_before, g);
    if (!shared) s.backprop_logit(after, coeff * d_after, g);
  }
};

template <class Net>
RatioTerm<Net> ratio_term(const AmortizedSampler<Net>& s, const Imap& imap, int v, const Assignment& x,
                          const Assignment& xp, bool shared) {
  RatioTerm<Net> t;
  t.shared = shared;
  t.before = s.eval_logit(imap, v, x);
  const auto lp = log_prob_of(x[v], t.before.logit);
  if (shared) {
    const auto lq = log_prob_of(xp[v], t.before.logit);
    t.value = lp.value - lq.value;
    t.d_before = lp.d_logit - lq.d_logit;
  } else {
    t.after = s.eval_logit(imap, v, xp);
    const auto lq = log_prob_of(xp[v], t.after.logit);
    t.value = lp.value - lq.value;
    t.d_before = lp.d_logit;
    t.d_after = -lq.d_logit;
  }
  return t;
}

}  // namespace detail

/// Residual sum_{k: u in S_k} log phi_k(x)/phi_k(x') minus
/// sum_{v in {u} + Ch(u)} log q(x_v|pa)/q(x'_v|pa'), with x' = x[u := xu_new].
template <class Net>
double delta_residual(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m, const Assignment& x,
                      int u, int xu_new) {
  if (xu_new == x[u]) throw SameValue("replacement value equals the current value");
  detail::require_blanket(imap, x, u);
  Assignment xp = x;
  xp.set(u, xu_new);
  double r = m.delta_log_reward(x, u, xu_new);
  r -= detail::ratio_term(s, imap, u, x, xp, true).value;
  for (int c : imap.children(u)) r -= detail::ratio_term(s, imap, c, x, xp, false).value;
  return r;
}

template <class Net>
double delta_loss(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m, const Assignment& x, int u,
                  int xu_new, SamplerGradient* grad = nullptr, double weight = 1.0) {
  if (xu_new == x[u]) throw SameValue("replacement value equals the current value");
  detail::require_blanket(imap, x, u);
  Assignment xp = x;
  xp.set(u, xu_new);
  std::vector<detail::RatioTerm<Net>> terms;
  terms.reserve(1 + imap.children(u).size());
  terms.push_back(detail::ratio_term(s, imap, u, x, xp, true));
  for (int c : imap.children(u)) terms.push_back(detail::ratio_term(s, imap, c, x, xp, false));
  double r = m.delta_log_reward(x, u, xu_new);
  for (const auto& t : terms) r -= t.value;
  const double loss = r * r;
  if (!std::isfinite(loss)) throw NonFiniteLoss("delta loss is not finite");
  if (grad)
    for (const auto& t : terms) t.backprop(s, -2.0 * r * weight, *grad);
  return loss;
}

/// Single-child unbiased gradient of delta_loss for |Ch(u)| = n > 1.
///
/// Writing the residual as g + sum_i f_i with g = lhs - ratio(u) and
/// f_i = -ratio(child_i), the contribution for indices (i, j), i != j, is
/// 2 [ (g + n f_i) dg + n (g + (n-1) f_i + f_j) df_j ], which averaged over
/// uniform i and uniform ordered pairs i != j equals the full gradient. Only
/// children i and j are evaluated. Returns the surrogate loss (g + n f_i)^2.
template <class Net>
double delta_loss_stochastic_grad(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m,
                                  const Assignment& x, int u, int xu_new, std::size_t i, std::size_t j,
                                  SamplerGradient& grad, double weight = 1.0) {
  if (xu_new == x[u]) throw SameValue("replacement value equals the current value");
  detail::require_blanket(imap, x, u);
  const auto& ch = imap.children(u);
  const std::size_t n = ch.size();
  if (n <= 1) throw TooFewChildren("stochastic estimator needs at least two children");
  if (i >= n || j >= n || i == j) throw std::invalid_argument("child indices must be distinct and in range");
  Assignment xp = x;
  xp.set(u, xu_new);
  const auto tu = detail::ratio_term(s, imap, u, x, xp, true);
  const auto ti = detail::ratio_term(s, imap, ch[i], x, xp, false);
  const auto tj = detail::ratio_term(s, imap, ch[j], x, xp, false);
  const double g = m.delta_log_reward(x, u, xu_new) - tu.value;
  const double fi = -ti.value, fj = -tj.value;
  const double nn = static_cast<double>(n);
  // dg = -d ratio(u); df_j = -d ratio(child_j).
  tu.backprop(s, -2.0 * weight * (g + nn * fi), grad);
  tj.backprop(s, -2.0 * weight * nn * (g + (nn - 1.0) * fi + fj), grad);
  return (g + nn * fi) * (g + nn * fi);
}

template <class Net>
double delta_loss_stochastic_grad(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m,
                                  const Assignment& x, int u, int xu_new, Rng& rng, SamplerGradient& grad,
                                  double weight = 1.0) {
  const std::size_t n = imap.children(u).size();
  if (n <= 1) throw TooFewChildren("stochastic estimator needs at least two children");
  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::size_t j = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
  if (j >= i) ++j;
  return delta_loss_stochastic_grad(s, imap, m, x, u, xu_new, i, j, grad, weight);
}

// ---------------------------------------------------------------------------
// GFlowNet baselines.

template <class Net>
double tb_loss(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m, const Assignment& x,
               const LogZEstimate& log_z, SamplerGradient* grad = nullptr, double weight = 1.0) {
  if (!x.full()) throw PartialAssignment("trajectory balance needs a full sample");
  std::vector<typename AmortizedSampler<Net>::LogitEval> evals;
  std::vector<double> dl;
  double lq = 0.0;
  for (int v : imap.topo_order()) {
    evals.push_back(s.eval_logit(imap, v, x));
    const auto lp = log_prob_of(x[v], evals.back().logit);
    lq += lp.value;
    dl.push_back(lp.d_logit);
  }
  const double r = log_z.value + lq - m.log_reward(x);
  const double loss = r * r;
  if (!std::isfinite(loss)) throw NonFiniteLoss("trajectory balance loss is not finite");
  if (grad) {
    const double c = 2.0 * r * weight;
    grad->log_z += c;
    for (std::size_t k = 0; k < evals.size(); ++k) s.backprop_logit(evals[k], c * dl[k], *grad);
  }
  return loss;
}

/// log F of a partial sample: the network's flow head (plus the partial
/// reward in forward-looking mode); pinned to log R(x) at full samples.
template <class Net>
struct FlowEval {
  bool pinned = false;
  double value = 0.0;
  typename Net::Trace trace;
};

template <class Net>
FlowEval<Net> eval_flow(const AmortizedSampler<Net>& s, const EnergyModel& m, const Assignment& x,
                        const FlowConfig& cfg) {
  FlowEval<Net> f;
  if (x.full()) {
    f.pinned = true;
    f.value = m.log_reward(x);
    return f;
  }
  const int out = s.net().flow_output();
  if (out < 0) throw ConfigError("flow-based loss needs a network with a flow head");
  std::vector<double> in;
  s.prefix_input(x, in);
  f.value = s.net().forward(in, out, f.trace);
  if (cfg.forward_looking) f.value += m.partial_reward(x, cfg.mode);
  return f;
}

template <class Net>
void backprop_flow(const AmortizedSampler<Net>& s, const FlowEval<Net>& f, double coeff, SamplerGradient& g) {
  if (f.pinned || coeff == 0.0) return;
  s.net().backward(f.trace, coeff, g.net);
}

/// Forward-looking log-flow: correction head + log partial reward, pinned at terminals.
template <class Net>
double fl_flow(const AmortizedSampler<Net>& s, const EnergyModel& m, const Assignment& x, PartialRewardMode mode) {
  return eval_flow(s, m, x, FlowConfig{true, mode}).value;
}

/// One detailed-balance step. x must instantiate exactly a topological prefix
/// of the I-map ending at next_var; the step goes from that prefix without
/// next_var to the prefix with it.
template <class Net>
double db_loss(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m, const Assignment& x,
               int next_var, const FlowConfig& cfg, SamplerGradient* grad = nullptr, double weight = 1.0) {
  const int pos = imap.contains(next_var) ? imap.position(next_var) : -1;
  if (pos < 0) throw OrderViolation("next variable is not in the I-map");
  const auto topo = imap.topo_order();
  for (int k = 0; k < imap.num_active(); ++k)
    if (x.is_set(topo[static_cast<std::size_t>(k)]) != (k <= pos))
      throw OrderViolation("sample is not the topological prefix ending at the next variable");
  if (x.count() != pos + 1) throw OrderViolation("sample holds variables outside the topological prefix");
  Assignment before = x;
  before.clear(next_var);
  const auto f0 = eval_flow(s, m, before, cfg);
  const auto f1 = eval_flow(s, m, x, cfg);
  const auto e = s.eval_logit(imap, next_var, x);
  const auto lp = log_prob_of(x[next_var], e.logit);
  const double r = f0.value + lp.value - f1.value;
  const double loss = r * r;
  if (!std::isfinite(loss)) throw NonFiniteLoss("detailed balance loss is not finite");
  if (grad) {
    const double c = 2.0 * r * weight;
    backprop_flow(s, f0, c, *grad);
    backprop_flow(s, f1, -c, *grad);
    s.backprop_logit(e, c * lp.d_logit, *grad);
  }
  return loss;
}

namespace detail {

// Flows F_0..F_n along the trajectory and per-step log q, for DB/SubTB.
template <class Net>
struct Trajectory {
  std::vector<FlowEval<Net>> flows;
  std::vector<typename AmortizedSampler<Net>::LogitEval> steps;
  std::vector<LogProb> logq;
};

template <class Net>
Trajectory<Net> trajectory(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m,
                           const Assignment& x, const FlowConfig& cfg) {
  if (!x.full() || imap.num_active() != x.num_vars()) throw PartialAssignment("trajectory losses need a full sample");
  Trajectory<Net> t;
  Assignment prefix(x.num_vars());
  t.flows.push_back(eval_flow(s, m, prefix, cfg));
  for (int v : imap.topo_order()) {
    prefix.set(v, x[v]);
    t.steps.push_back(s.eval_logit(imap, v, prefix));
    t.logq.push_back(log_prob_of(x[v], t.steps.back().logit));
    t.flows.push_back(eval_flow(s, m, prefix, cfg));
  }
  return t;
}

}  // namespace detail

/// Mean detailed-balance loss over every step of a full trajectory.
template <class Net>
double db_trajectory_loss(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m,
                          const Assignment& x, const FlowConfig& cfg, SamplerGradient* grad = nullptr,
                          double weight = 1.0) {
  const auto t = detail::trajectory(s, imap, m, x, cfg);
  const std::size_t n = t.steps.size();
  double total = 0.0;
  const double w = weight / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = t.flows[i].value + t.logq[i].value - t.flows[i + 1].value;
    total += r * r;
    if (grad) {
      const double c = 2.0 * r * w;
      backprop_flow(s, t.flows[i], c, *grad);
      backprop_flow(s, t.flows[i + 1], -c, *grad);
      s.backprop_logit(t.steps[i], c * t.logq[i].d_logit, *grad);
    }
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NonFiniteLoss("detailed balance loss is not finite");
  return loss;
}

/// lambda-weighted average of squared sub-range residuals over 0 <= i < j <= n.
template <class Net>
double subtb_loss(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& m, const Assignment& x,
                  const FlowConfig& cfg, double lambda, SamplerGradient* grad = nullptr, double weight = 1.0) {
  if (!(lambda > 0)) throw ConfigError("lambda must be positive");
  const auto t = detail::trajectory(s, imap, m, x, cfg);
  const std::size_t n = t.steps.size();
  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) cum[k + 1] = cum[k] + t.logq[k].value;
  // Weights normalized in log space so tiny lambda does not underflow.
  double norm = 0.0;
  for (std::size_t len = 1; len <= n; ++len)
    norm += static_cast<double>(n + 1 - len) * std::pow(lambda, static_cast<double>(len) - 1.0);
  std::vector<double> d_flow(n + 1, 0.0), d_logq(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j <= n; ++j) {
      const double w = std::pow(lambda, static_cast<double>(j - i) - 1.0) / norm;
      const double r = t.flows[i].value + (cum[j] - cum[i]) - t.flows[j].value;
      total += w * r * r;
      const double c = 2.0 * w * r;
      d_flow[i] += c;
      d_flow[j] -= c;
      for (std::size_t k = i; k < j; ++k) d_logq[k] += c;
    }
  if (!std::isfinite(total)) throw NonFiniteLoss("sub-trajectory balance loss is not finite");
  if (grad) {
    for (std::size_t i = 0; i <= n; ++i) backprop_flow(s, t.flows[i], weight * d_flow[i], *grad);
    for (std::size_t k = 0; k < n; ++k) s.backprop_logit(t.steps[k], weight * d_logq[k] * t.logq[k].d_logit, *grad);
  }
  return total;
}

/// Loads true flows log F(prefix) = log Z + log P(prefix) into a tabular
/// flow table (as corrections over the partial reward in forward-looking mode).
inline void set_exact_flows(TabularSampler& s, const Imap& imap, const ExactTable& t, const EnergyModel& m,
                            const FlowConfig& cfg) {
  auto& net = s.net();
  if (net.flow_output() < 0) throw ConfigError("tabular network has no flow table");
  const auto topo = imap.topo_order();
  for (std::size_t len = 0; len < topo.size(); ++len) {
    std::vector<int> vars(topo.begin(), topo.begin() + static_cast<std::ptrdiff_t>(len));
    const auto table = t.marginal_table(vars);
    for (std::size_t c = 0; c < table.size(); ++c) {
      Assignment x(s.num_vars());
      for (std::size_t i = 0; i < len; ++i) x.set(vars[i], ((c >> i) & 1U) ? 1 : -1);
      double value = t.log_z() + std::log(table[c]);
      if (cfg.forward_looking) value -= m.partial_reward(x, cfg.mode);
      net.params()[net.flow_index(len, x)] = value;
    }
  }
}

}  // namespace deltaai
