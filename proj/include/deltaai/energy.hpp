#pragma once

// Factorized unnormalized densities over +/-1 variables, the exact
// enumeration oracle, and the parameter gradients used for model learning.

#include <deltaai/common.hpp>
#include <deltaai/graph.hpp>

#include <array>
#include <variant>

namespace deltaai {

enum class ModelKind { Ising, FactorGraph, BayesNet };

enum class FactorKind {
  IsingPair,    // log phi = 2 sigma J x_i x_j   (J is one parameter)
  IsingUnary,   // log phi = sigma b x_i
  Mlp,          // log phi = w2 . tanh(W1 x + b1) + c
  LogisticCpt,  // scope = {v, parents...}; log phi = log sigmoid(x_v * theta[parent config])
};

struct Factor {
  FactorKind kind;
  std::vector<int> scope;
  std::size_t offset = 0;  // into the flat parameter vector
  std::size_t count = 0;
};

inline constexpr int kMlpHidden = 10;

inline std::size_t mlp_param_count(std::size_t arity) { return kMlpHidden * arity + 2 * kMlpHidden + 1; }

enum class PartialRewardMode { CompletedFactors, ZeroMasked };

class EnergyModel {
 public:
  EnergyModel() = default;
  EnergyModel(ModelKind kind, int num_vars, double sigma) : kind_(kind), n_(num_vars), sigma_(sigma) {
    if (!(sigma > 0)) throw ConfigError("sigma must be positive");
    touching_.assign(static_cast<std::size_t>(num_vars), {});
  }

  ModelKind kind() const { return kind_; }
  int num_vars() const { return n_; }
  double sigma() const { return sigma_; }
  std::size_t num_factors() const { return factors_.size(); }
  const Factor& factor(std::size_t k) const { return factors_[k]; }
  const UndirectedGraph& graph() const { return graph_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  std::size_t add_factor(FactorKind kind, std::vector<int> scope, std::span<const double> init) {
    for (int v : scope)
      if (v < 0 || v >= n_) throw std::out_of_range("factor scope vertex out of range");
    Factor f{kind, std::move(scope), params_.size(), init.size()};
    const std::size_t expected = expected_count(f);
    if (init.size() != expected) throw ShapeMismatch("factor parameter count mismatch");
    params_.insert(params_.end(), init.begin(), init.end());
    const std::size_t k = factors_.size();
    for (int v : f.scope) touching_[static_cast<std::size_t>(v)].push_back(k);
    factors_.push_back(std::move(f));
    rebuild_graph();
    return k;
  }

  /// Factor indices whose scope contains u.
  const std::vector<std::size_t>& factors_touching(int u) const { return touching_[static_cast<std::size_t>(u)]; }

  /// log phi_k at real-valued scope inputs (0 stands for a masked variable).
  double log_factor(std::size_t k, std::span<const double> in) const {
    const Factor& f = factors_[k];
    const double* p = params_.data() + f.offset;
    switch (f.kind) {
      case FactorKind::IsingPair: return 2.0 * sigma_ * p[0] * in[0] * in[1];
      case FactorKind::IsingUnary: return sigma_ * p[0] * in[0];
      case FactorKind::Mlp: {
        const std::size_t a = f.scope.size();
        const double* w1 = p;
        const double* b1 = p + kMlpHidden * a;
        const double* w2 = b1 + kMlpHidden;
        double out = w2[kMlpHidden];
        for (int h = 0; h < kMlpHidden; ++h) {
          double z = b1[h];
          for (std::size_t i = 0; i < a; ++i) z += w1[static_cast<std::size_t>(h) * a + i] * in[i];
          out += w2[h] * std::tanh(z);
        }
        return out;
      }
      case FactorKind::LogisticCpt: return cpt_eval(f, p, in, nullptr, 0.0);
    }
    return 0.0;
  }

  /// grad[offset + i] += coeff * d log phi_k / d psi_i.
  void log_factor_grad(std::size_t k, std::span<const double> in, double coeff, std::span<double> grad) const {
    const Factor& f = factors_[k];
    const double* p = params_.data() + f.offset;
    double* g = grad.data() + f.offset;
    switch (f.kind) {
      case FactorKind::IsingPair: g[0] += coeff * 2.0 * sigma_ * in[0] * in[1]; return;
      case FactorKind::IsingUnary: g[0] += coeff * sigma_ * in[0]; return;
      case FactorKind::Mlp: {
        const std::size_t a = f.scope.size();
        const double* w1 = p;
        const double* b1 = p + kMlpHidden * a;
        const double* w2 = b1 + kMlpHidden;
        double* gw1 = g;
        double* gb1 = g + kMlpHidden * a;
        double* gw2 = gb1 + kMlpHidden;
        gw2[kMlpHidden] += coeff;
        for (int h = 0; h < kMlpHidden; ++h) {
          double z = b1[h];
          for (std::size_t i = 0; i < a; ++i) z += w1[static_cast<std::size_t>(h) * a + i] * in[i];
          const double t = std::tanh(z);
          gw2[h] += coeff * t;
          const double dz = coeff * w2[h] * (1.0 - t * t);
          gb1[h] += dz;
          for (std::size_t i = 0; i < a; ++i) gw1[static_cast<std::size_t>(h) * a + i] += dz * in[i];
        }
        return;
      }
      case FactorKind::LogisticCpt: cpt_eval(f, p, in, g, coeff); return;
    }
  }

  /// Gathers scope values of x (0 for masked variables).
  void gather(std::size_t k, const Assignment& x, std::vector<double>& out) const {
    const auto& s = factors_[k].scope;
    out.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = x[s[i]];
  }

  bool scope_set(std::size_t k, const Assignment& x) const {
    for (int v : factors_[k].scope)
      if (!x.is_set(v)) return false;
    return true;
  }

  /// Unnormalized log density sum_k log phi_k(x).
  double log_reward(const Assignment& x) const {
    if (!x.full() || x.num_vars() != n_) throw PartialAssignment("log reward needs a full assignment");
    std::vector<double> buf;
    double acc = 0.0;
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      gather(k, x, buf);
      acc += log_factor(k, buf);
    }
    return acc;
  }

  double energy(const Assignment& x) const { return -log_reward(x); }

  /// log p(x) - log p(x') where x' is x with u set to xu_new; touches only
  /// the factors containing u.
  double delta_log_reward(const Assignment& x, int u, int xu_new) const {
    if (xu_new == x[u]) throw SameValue("replacement value equals the current value");
    if (!x.is_set(u)) throw PartialAssignment("perturbed variable is not instantiated");
    std::vector<double> buf;
    double acc = 0.0;
    for (std::size_t k : touching_[static_cast<std::size_t>(u)]) {
      if (!scope_set(k, x)) throw PartialAssignment("factor touching the perturbed variable is not instantiated");
      gather(k, x, buf);
      const double before = log_factor(k, buf);
      const auto& s = factors_[k].scope;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] == u) buf[i] = xu_new;
      acc += before - log_factor(k, buf);
    }
    return acc;
  }

  /// Log of the partially accumulated reward of a partial assignment.
  double partial_reward(const Assignment& x, PartialRewardMode mode) const {
    std::vector<double> buf;
    double acc = 0.0;
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      if (mode == PartialRewardMode::CompletedFactors && !scope_set(k, x)) continue;
      gather(k, x, buf);
      acc += log_factor(k, buf);
    }
    return acc;
  }

  /// d/dpsi of sum_k log phi_k(x), accumulated with weight coeff.
  void log_reward_grad(const Assignment& x, double coeff, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw ShapeMismatch("gradient buffer has the wrong size");
    std::vector<double> buf;
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      gather(k, x, buf);
      log_factor_grad(k, buf, coeff, grad);
    }
  }

 private:
  std::size_t expected_count(const Factor& f) const {
    switch (f.kind) {
      case FactorKind::IsingPair:
        if (f.scope.size() != 2) throw ShapeMismatch("pair factor needs two variables");
        return 1;
      case FactorKind::IsingUnary:
        if (f.scope.size() != 1) throw ShapeMismatch("unary factor needs one variable");
        return 1;
      case FactorKind::Mlp:
        if (f.scope.empty() || f.scope.size() > 4) throw ShapeMismatch("MLP factor arity must be 1..4");
        return mlp_param_count(f.scope.size());
      case FactorKind::LogisticCpt:
        if (f.scope.empty() || f.scope.size() > 12) throw ShapeMismatch("CPT factor arity must be 1..12");
        return std::size_t{1} << (f.scope.size() - 1);
    }
    return 0;
  }

  // Multilinear extension of the CPT over its scope: exact at +/-1 corners and
  // the average over a variable's values wherever that input is 0.
  static double cpt_eval(const Factor& f, const double* theta, std::span<const double> in, double* grad, double coeff) {
    const std::size_t a = f.scope.size();
    bool corner = true;
    for (std::size_t i = 0; i < a; ++i)
      if (in[i] != 1.0 && in[i] != -1.0) corner = false;
    auto corner_value = [&](std::span<const double> c, double w) {
      std::size_t idx = 0;
      for (std::size_t i = 1; i < a; ++i)
        if (c[i] > 0) idx |= (std::size_t{1} << (i - 1));
      const double z = c[0] * theta[idx];
      if (grad) grad[idx] += w * c[0] * sigmoid(-z);
      return log_sigmoid(z);
    };
    if (corner) return corner_value(in, coeff);
    double acc = 0.0;
    std::vector<double> c(a);
    for (std::size_t m = 0; m < (std::size_t{1} << a); ++m) {
      double w = 1.0;
      for (std::size_t i = 0; i < a; ++i) {
        c[i] = ((m >> i) & 1U) ? 1.0 : -1.0;
        w *= 0.5 * (1.0 + in[i] * c[i]);
      }
      if (w == 0.0) continue;
      acc += w * corner_value(c, coeff * w);
    }
    return acc;
  }

  void rebuild_graph() {
    std::vector<Edge> e;
    for (const auto& f : factors_)
      for (std::size_t i = 0; i < f.scope.size(); ++i)
        for (std::size_t j = i + 1; j < f.scope.size(); ++j)
          if (f.scope[i] != f.scope[j]) e.emplace_back(f.scope[i], f.scope[j]);
    graph_ = UndirectedGraph(n_, e);
  }

  ModelKind kind_ = ModelKind::Ising;
  int n_ = 0;
  double sigma_ = 1.0;
  std::vector<Factor> factors_;
  std::vector<double> params_;
  std::vector<std::vector<std::size_t>> touching_;
  UndirectedGraph graph_;
};

// ---------------------------------------------------------------------------
// Ising models: E(x) = sigma * (-x^T J x - x^T b), J symmetric with zero
// diagonal. Each graph edge carries one coupling J_ij = J_ji.

struct IsingModel {
  int num_vars = 0;
  std::vector<std::pair<Edge, double>> couplings;  // (i, j) with i < j and J_ij
  std::vector<double> bias;
  double sigma = 0.2;

  EnergyModel to_energy_model() const {
    EnergyModel m(ModelKind::Ising, num_vars, sigma);
    for (const auto& [e, j] : couplings) {
      if (e.first == e.second) throw ConfigError("Ising couplings must be off-diagonal");
      const double p[1] = {j};
      m.add_factor(FactorKind::IsingPair, {e.first, e.second}, p);
    }
    for (int v = 0; v < num_vars; ++v) {
      const double p[1] = {bias.empty() ? 0.0 : bias[static_cast<std::size_t>(v)]};
      m.add_factor(FactorKind::IsingUnary, {v}, p);
    }
    return m;
  }
};

/// Couplings and biases drawn uniformly from {-1, +1} on the graph's edges.
inline IsingModel random_ising(const UndirectedGraph& g, double sigma, Rng& rng) {
  IsingModel m;
  m.num_vars = g.num_vars();
  m.sigma = sigma;
  for (auto e : g.edges()) m.couplings.emplace_back(e, random_sign(rng));
  for (int v = 0; v < g.num_vars(); ++v) m.bias.push_back(random_sign(rng));
  return m;
}

/// The parameter index of the pair factor (i, j) in an Ising energy model, or -1.
inline long coupling_index(const EnergyModel& m, int i, int j) {
  for (std::size_t k : m.factors_touching(i)) {
    const auto& f = m.factor(k);
    if (f.kind == FactorKind::IsingPair && ((f.scope[0] == i && f.scope[1] == j) || (f.scope[0] == j && f.scope[1] == i)))
      return static_cast<long>(f.offset);
  }
  return -1;
}

/// Tiny-MLP factors on a checkerboard of 2x2 plaquettes of a rows x cols grid;
/// weights drawn from N(0, init_sigma^2).
inline EnergyModel random_factor_lattice(int rows, int cols, double init_sigma, Rng& rng) {
  EnergyModel m(ModelKind::FactorGraph, rows * cols, 1.0);
  std::normal_distribution<double> w(0.0, init_sigma);
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      if ((r + c) % 2 != 0) continue;
      const int v = r * cols + c;
      std::vector<double> p(mlp_param_count(4));
      for (auto& x : p) x = w(rng);
      m.add_factor(FactorKind::Mlp, {v, v + 1, v + cols, v + cols + 1}, p);
    }
  return m;
}

/// Bayesian network of logistic CPTs, one per variable with scope {v, parents...}.
/// Its log-reward is the normalized log-density, so log Z = 0.
inline EnergyModel make_bayes_net(const std::vector<std::vector<int>>& parents, Rng* init_rng = nullptr,
                                  double init_scale = 1.0) {
  const int n = static_cast<int>(parents.size());
  EnergyModel m(ModelKind::BayesNet, n, 1.0);
  std::normal_distribution<double> w(0.0, init_scale);
  for (int v = 0; v < n; ++v) {
    std::vector<int> scope{v};
    for (int p : parents[static_cast<std::size_t>(v)]) {
      if (p == v) throw ConfigError("a variable cannot be its own parent");
      scope.push_back(p);
    }
    std::vector<double> theta(std::size_t{1} << parents[static_cast<std::size_t>(v)].size(), 0.0);
    if (init_rng)
      for (auto& t : theta) t = w(*init_rng);
    m.add_factor(FactorKind::LogisticCpt, std::move(scope), theta);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Exact enumeration oracle.

class ExactTable {
 public:
  static constexpr int kMaxVars = 20;

  ExactTable() = default;

  explicit ExactTable(const EnergyModel& m) : n_(m.num_vars()) {
    if (n_ > kMaxVars) throw TooLarge("exact enumeration is limited to 20 variables");
    const std::size_t states = std::size_t{1} << n_;
    std::vector<double> logw(states);
    for (std::size_t s = 0; s < states; ++s) logw[s] = m.log_reward(assignment_from_state(s, n_));
    log_z_ = log_sum_exp(logw);
    probs_.resize(states);
    marginals_.assign(static_cast<std::size_t>(n_), 0.0);
    for (std::size_t s = 0; s < states; ++s) {
      probs_[s] = std::exp(logw[s] - log_z_);
      for (int v = 0; v < n_; ++v)
        if ((s >> v) & 1U) marginals_[static_cast<std::size_t>(v)] += probs_[s];
    }
  }

  int num_vars() const { return n_; }
  double log_z() const { return log_z_; }
  std::span<const double> full_probs() const { return probs_; }
  double prob(const Assignment& x) const { return probs_[state_from_assignment(x)]; }
  double marginal(int v) const { return marginals_[static_cast<std::size_t>(v)]; }
  std::span<const double> marginals() const { return marginals_; }

  double entropy() const {
    double h = 0.0;
    for (double p : probs_)
      if (p > 0) h -= p * std::log(p);
    return h;
  }

  /// P(x_v = +1 | all other variables as in x); depends only on the blanket.
  /// Unset entries of x other than v are read as -1.
  double conditional(int v, const Assignment& x) const {
    std::uint64_t base = 0;
    for (int w = 0; w < n_; ++w)
      if (w != v && x[w] > 0) base |= (std::uint64_t{1} << w);
    const double plus = probs_[base | (std::uint64_t{1} << v)];
    const double minus = probs_[base];
    return plus / (plus + minus);
  }

  /// Joint marginal table of `vars`: entry bit i is set iff vars[i] = +1.
  std::vector<double> marginal_table(std::span<const int> vars) const {
    std::vector<double> out(std::size_t{1} << vars.size(), 0.0);
    for (std::size_t s = 0; s < probs_.size(); ++s) {
      std::size_t idx = 0;
      for (std::size_t i = 0; i < vars.size(); ++i)
        if ((s >> vars[i]) & 1U) idx |= (std::size_t{1} << i);
      out[idx] += probs_[s];
    }
    return out;
  }

  /// P(x_v = +1 | x_given) marginalizing everything else.
  double conditional_given(int v, std::span<const int> given, const Assignment& x) const {
    std::vector<int> vars(given.begin(), given.end());
    vars.push_back(v);
    const auto table = marginal_table(vars);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < given.size(); ++i)
      if (x[given[i]] > 0) idx |= (std::size_t{1} << i);
    const double plus = table[idx | (std::size_t{1} << given.size())];
    return plus / (plus + table[idx]);
  }

 private:
  int n_ = 0;
  double log_z_ = 0.0;
  std::vector<double> probs_;
  std::vector<double> marginals_;
};

inline ExactTable enumerate_exact(const EnergyModel& m) { return ExactTable(m); }

inline std::vector<Assignment> exact_sample(const ExactTable& t, std::size_t n, Rng& rng) {
  std::vector<Assignment> out;
  if (n == 0) return out;
  const auto probs = t.full_probs();
  std::discrete_distribution<std::uint64_t> dist(probs.begin(), probs.end());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(assignment_from_state(dist(rng), t.num_vars()));
  return out;
}

inline std::vector<Assignment> exact_sample(const ExactTable& t, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return exact_sample(t, n, rng);
}

/// Positive phase minus negative phase of the log-likelihood gradient:
/// mean_data grad sum_k log phi_k - mean_model grad sum_k log phi_k.
inline std::vector<double> ebm_param_grad(const EnergyModel& m, std::span<const Assignment> data,
                                          std::span<const Assignment> model_samples) {
  if (data.empty() || model_samples.empty()) throw EmptyBatch("both phases need at least one sample");
  std::vector<double> g(m.params().size(), 0.0);
  const double wp = 1.0 / static_cast<double>(data.size());
  const double wn = -1.0 / static_cast<double>(model_samples.size());
  for (const auto& x : data) m.log_reward_grad(x, wp, g);
  for (const auto& x : model_samples) m.log_reward_grad(x, wn, g);
  return g;
}

}  // namespace deltaai
