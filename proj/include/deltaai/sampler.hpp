#pragma once

// The amortized Bayesian-network sampler q: conditionals read through a
// shared network with parent-masked inputs, ancestral and partial sampling
// under any I-map, exploration policies, and the Gibbs baseline.

#include <deltaai/energy.hpp>
#include <deltaai/graph.hpp>
#include <deltaai/nn.hpp>

namespace deltaai {

/// One free logit per (variable, parent configuration) of a fixed I-map, plus
/// an optional flow table over topological prefixes. Used where the exact
/// conditionals must be representable (oracle checks, Prop.-1 round trips).
class TabularNet {
 public:
  struct Trace {
    int output = -1;
    std::size_t index = 0;
    double value = 0.0;
  };

  TabularNet() = default;
  TabularNet(const Imap& imap, bool flow_head) : n_(imap.num_vars()), flow_(flow_head) {
    parents_.resize(static_cast<std::size_t>(n_));
    offset_.assign(static_cast<std::size_t>(n_), 0);
    std::size_t off = 0;
    for (int v = 0; v < n_; ++v) {
      parents_[static_cast<std::size_t>(v)] = imap.parents(v);
      offset_[static_cast<std::size_t>(v)] = off;
      if (parents_[static_cast<std::size_t>(v)].size() > 20) throw TooLarge("tabular conditional has too many parents");
      off += std::size_t{1} << parents_[static_cast<std::size_t>(v)].size();
    }
    if (flow_) {
      topo_.assign(imap.topo_order().begin(), imap.topo_order().end());
      if (topo_.size() > 20) throw TooLarge("tabular flow table is limited to 20 variables");
      flow_offset_ = off;
      off += (std::size_t{1} << (topo_.size() + 1)) - 1;  // sum_i 2^i for i = 0..|topo|
    }
    params_.assign(off, 0.0);
  }

  int num_vars() const { return n_; }
  int input_width() const { return n_; }
  int flow_output() const { return flow_ ? n_ : -1; }
  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::size_t conditional_index(int v, const Assignment& x) const {
    const auto& pa = parents_[static_cast<std::size_t>(v)];
    std::size_t idx = 0;
    for (std::size_t i = 0; i < pa.size(); ++i)
      if (x[pa[i]] > 0) idx |= (std::size_t{1} << i);
    return offset_[static_cast<std::size_t>(v)] + idx;
  }

  /// Flow-table slot of the prefix made of the first `len` topological variables.
  std::size_t flow_index(std::size_t len, const Assignment& x) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < len; ++i)
      if (x[topo_[i]] > 0) idx |= (std::size_t{1} << i);
    return flow_offset_ + ((std::size_t{1} << len) - 1) + idx;
  }

  double forward(std::span<const double> input, int output, Trace& t) const {
    if (static_cast<int>(input.size()) != n_) throw ShapeMismatch("tabular input has the wrong width");
    t.output = output;
    if (output == flow_output()) {
      std::size_t len = 0;
      while (len < topo_.size() && input[static_cast<std::size_t>(topo_[len])] != 0.0) ++len;
      std::size_t nonzero = 0;
      for (double v : input) nonzero += v != 0.0;
      if (nonzero != len) throw OrderViolation("tabular flow input is not a topological prefix");
      std::size_t idx = 0;
      for (std::size_t i = 0; i < len; ++i)
        if (input[static_cast<std::size_t>(topo_[i])] > 0) idx |= (std::size_t{1} << i);
      t.index = flow_offset_ + ((std::size_t{1} << len) - 1) + idx;
    } else {
      const auto& pa = parents_[static_cast<std::size_t>(output)];
      std::size_t idx = 0;
      for (std::size_t i = 0; i < pa.size(); ++i)
        if (input[static_cast<std::size_t>(pa[i])] > 0) idx |= (std::size_t{1} << i);
      t.index = offset_[static_cast<std::size_t>(output)] + idx;
    }
    t.value = params_[t.index];
    return t.value;
  }

  void backward(const Trace& t, double d_out, std::span<double> grad) const { grad[t.index] += d_out; }

 private:
  int n_ = 0;
  bool flow_ = false;
  std::vector<std::vector<int>> parents_;
  std::vector<std::size_t> offset_;
  std::vector<int> topo_;
  std::size_t flow_offset_ = 0;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------

enum class PolicyKind { OnPolicy, Tempered, EpsUniform };

struct Policy {
  PolicyKind kind = PolicyKind::OnPolicy;
  double temperature = 1.0;
  double epsilon = 0.0;

  static Policy on_policy() { return {}; }
  static Policy tempered(double t) {
    if (!(t > 0)) throw ConfigError("temperature must be positive");
    return {PolicyKind::Tempered, t, 0.0};
  }
  static Policy eps_uniform(double e) {
    if (!(e >= 0 && e <= 1)) throw ConfigError("epsilon must lie in [0, 1]");
    return {PolicyKind::EpsUniform, 1.0, e};
  }

  double prob_plus(double logit) const {
    switch (kind) {
      case PolicyKind::OnPolicy: return sigmoid(logit);
      case PolicyKind::Tempered: return sigmoid(logit / temperature);
      case PolicyKind::EpsUniform: return (1.0 - epsilon) * sigmoid(logit) + 0.5 * epsilon;
    }
    return 0.5;
  }
};

/// Conditional log-probabilities are floored here; the gradient is zero below it.
inline constexpr double kLogProbFloor = -30.0;

struct LogProb {
  double value;
  double d_logit;  // d value / d logit
};

inline LogProb log_prob_of(int sign, double logit) {
  const double z = sign * logit;
  const double lp = log_sigmoid(z);
  if (lp < kLogProbFloor) return {kLogProbFloor, 0.0};
  return {lp, sign * sigmoid(-z)};
}

struct SamplerGradient {
  std::vector<double> net, root;
  double log_z = 0.0;

  void zero() {
    std::fill(net.begin(), net.end(), 0.0);
    std::fill(root.begin(), root.end(), 0.0);
    log_z = 0.0;
  }
  void scale(double s) {
    for (auto& g : net) g *= s;
    for (auto& g : root) g *= s;
    log_z *= s;
  }
  void add(const SamplerGradient& o, double s = 1.0) {
    for (std::size_t i = 0; i < net.size(); ++i) net[i] += s * o.net[i];
    for (std::size_t i = 0; i < root.size(); ++i) root[i] += s * o.root[i];
    log_z += s * o.log_z;
  }
  bool finite() const {
    auto ok = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
    return ok(net) && ok(root) && std::isfinite(log_z);
  }
};

struct SampleBatch {
  std::vector<Assignment> samples;
  std::vector<double> log_q;  // under the unmodified model
};

template <class Net>
class AmortizedSampler {
 public:
  using Trace = typename Net::Trace;

  struct LogitEval {
    int v = -1;
    bool root = false;
    double logit = 0.0;
    Trace trace;
  };

  AmortizedSampler() = default;
  explicit AmortizedSampler(Net net) : net_(std::move(net)), root_(static_cast<std::size_t>(net_.num_vars()), 0.0) {}

  int num_vars() const { return net_.num_vars(); }
  Net& net() { return net_; }
  const Net& net() const { return net_; }
  std::span<double> root_logits() { return root_; }
  std::span<const double> root_logits() const { return root_; }

  /// Observed variables whose values fill the conditioning block of the input.
  void set_conditioning(std::vector<int> observed) {
    if (net_.input_width() != num_vars() + static_cast<int>(observed.size()))
      throw ShapeMismatch("conditioning block width does not match the network");
    cond_ = std::move(observed);
  }
  const std::vector<int>& conditioning() const { return cond_; }

  SamplerGradient make_gradient() const {
    return SamplerGradient{std::vector<double>(net_.num_params(), 0.0), std::vector<double>(root_.size(), 0.0), 0.0};
  }

  /// |V| block holds x on parents(v) only; the conditioning block follows.
  void masked_input(const Imap& imap, int v, const Assignment& x, std::vector<double>& in) const {
    in.assign(static_cast<std::size_t>(net_.input_width()), 0.0);
    for (int p : imap.parents(v)) {
      if (!x.is_set(p)) throw MissingParent("parent of the queried variable is not instantiated");
      in[static_cast<std::size_t>(p)] = x[p];
    }
    append_conditioning(x, in);
  }

  /// Every instantiated variable of x (a sampling prefix) plus the conditioning block.
  void prefix_input(const Assignment& x, std::vector<double>& in) const {
    in.assign(static_cast<std::size_t>(net_.input_width()), 0.0);
    for (int v = 0; v < num_vars(); ++v) in[static_cast<std::size_t>(v)] = x[v];
    for (int o : cond_) in[static_cast<std::size_t>(o)] = 0.0;
    append_conditioning(x, in);
  }

  LogitEval eval_logit(const Imap& imap, int v, const Assignment& x) const {
    LogitEval e;
    e.v = v;
    if (imap.parents(v).empty()) {
      e.root = true;
      e.logit = root_[static_cast<std::size_t>(v)];
      return e;
    }
    std::vector<double> in;
    masked_input(imap, v, x, in);
    e.logit = net_.forward(in, v, e.trace);
    return e;
  }

  void backprop_logit(const LogitEval& e, double d_logit, SamplerGradient& g) const {
    if (d_logit == 0.0) return;
    if (e.root) {
      g.root[static_cast<std::size_t>(e.v)] += d_logit;
      return;
    }
    net_.backward(e.trace, d_logit, g.net);
  }

  double logit(const Imap& imap, int v, const Assignment& x) const { return eval_logit(imap, v, x).logit; }

  /// log q(x_v | x_Pa(v)) for the value currently held by x_v.
  double conditional_logprob(const Imap& imap, int v, const Assignment& x) const {
    if (!x.is_set(v)) throw PartialAssignment("queried variable is not instantiated");
    return log_prob_of(x[v], logit(imap, v, x)).value;
  }

  /// Samples every variable of the I-map's topological order into x (which
  /// may already hold conditioning values) and returns the on-policy log q.
  double sample_into(const Imap& imap, const Policy& policy, Rng& rng, Assignment& x) const {
    double lq = 0.0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int v : imap.topo_order()) {
      const double l = logit(imap, v, x);
      const int s = unif(rng) < policy.prob_plus(l) ? 1 : -1;
      x.set(v, s);
      lq += log_prob_of(s, l).value;
    }
    return lq;
  }

  SampleBatch ancestral_sample(const Imap& imap, const Policy& policy, std::size_t n, Rng& rng) const {
    if (imap.num_active() != num_vars()) throw PartialAssignment("ancestral sampling needs an I-map over all variables");
    SampleBatch b;
    b.samples.reserve(n);
    b.log_q.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Assignment x(num_vars());
      b.log_q.push_back(sample_into(imap, policy, rng, x));
      b.samples.push_back(std::move(x));
    }
    return b;
  }

  /// Instantiates exactly the variables of a sub I-map.
  Assignment partial_sample(const Imap& sub, const Policy& policy, Rng& rng) const {
    Assignment x(num_vars());
    sample_into(sub, policy, rng, x);
    return x;
  }

  /// Sum of conditional log-probabilities over the I-map's variables.
  double log_prob(const Imap& imap, const Assignment& x) const {
    double lq = 0.0;
    for (int v : imap.topo_order()) {
      if (!x.is_set(v)) throw PartialAssignment("log_prob needs every I-map variable instantiated");
      lq += conditional_logprob(imap, v, x);
    }
    return lq;
  }

 private:
  void append_conditioning(const Assignment& x, std::vector<double>& in) const {
    for (std::size_t i = 0; i < cond_.size(); ++i) {
      const int o = cond_[i];
      if (!x.is_set(o)) throw MissingParent("conditioning variable is not instantiated");
      in[static_cast<std::size_t>(num_vars()) + i] = x[o];
    }
  }

  Net net_;
  std::vector<double> root_;
  std::vector<int> cond_;
};

using MaeSampler = AmortizedSampler<Mae>;
using TabularSampler = AmortizedSampler<TabularNet>;

inline MaeSampler make_mae_sampler(const MaeConfig& cfg, std::uint64_t seed) {
  Mae net(cfg);
  Rng rng(seed);
  net.init_random(rng);
  return MaeSampler(std::move(net));
}

inline double logit_of(double p) { return std::log(p) - std::log1p(-p); }

/// Loads the exact conditionals p(x_v | x_Pa(v)) of the oracle into a tabular sampler.
inline void set_exact_conditionals(TabularSampler& s, const Imap& imap, const ExactTable& t) {
  auto& net = s.net();
  for (int v : imap.topo_order()) {
    const auto& pa = imap.parents(v);
    if (pa.empty()) {
      s.root_logits()[static_cast<std::size_t>(v)] = logit_of(t.marginal(v));
      continue;
    }
    std::vector<int> vars(pa.begin(), pa.end());
    vars.push_back(v);
    const auto table = t.marginal_table(vars);
    const std::size_t top = std::size_t{1} << pa.size();
    for (std::size_t c = 0; c < top; ++c) {
      Assignment x(s.num_vars());
      for (std::size_t i = 0; i < pa.size(); ++i) x.set(pa[i], ((c >> i) & 1U) ? 1 : -1);
      const double plus = table[c | top], minus = table[c];
      net.params()[net.conditional_index(v, x)] = std::log(plus) - std::log(minus);
    }
  }
}

// ---------------------------------------------------------------------------
// Gibbs baseline.

struct AnnealSchedule {
  double start_beta = 1.0;  // inverse temperature at sweep 0
  long steps = 0;           // sweeps over which beta ramps linearly to 1

  double beta_at(long sweep) const {
    if (steps <= 0 || sweep >= steps) return 1.0;
    const double f = static_cast<double>(sweep) / static_cast<double>(steps);
    return start_beta + (1.0 - start_beta) * f;
  }
};

/// Systematic-scan Gibbs; one step is one sweep over all variables. Chains
/// start uniform and use independent random streams derived from seed.
inline std::vector<Assignment> gibbs_chain(const EnergyModel& m, std::size_t n_chains, long n_steps,
                                           const AnnealSchedule& anneal, std::uint64_t seed) {
  std::vector<Assignment> out;
  out.reserve(n_chains);
  const int n = m.num_vars();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t c = 0; c < n_chains; ++c) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(c)};
    Rng rng(seq);
    Assignment x(n);
    for (int v = 0; v < n; ++v) x.set(v, random_sign(rng));
    for (long t = 0; t < n_steps; ++t) {
      const double beta = anneal.beta_at(t);
      for (int v = 0; v < n; ++v) {
        if (x[v] < 0) x.flip(v);
        const double l = beta * m.delta_log_reward(x, v, -1);
        x.set(v, unif(rng) < sigmoid(l) ? 1 : -1);
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace deltaai
