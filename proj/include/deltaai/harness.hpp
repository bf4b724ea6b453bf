#pragma once

// Training loops for the sampler (local log-ratio matching and the GFlowNet
// baselines), energy-model learning with sampler negatives, a small
// variational EM, and the evaluation metrics written to CSV.

#include <deltaai/losses.hpp>

#include <chrono>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string_view>

namespace deltaai {

enum class Objective { Delta, Tb, Db, FlDb, SubTb, FlSubTb };

inline Objective parse_objective(std::string_view s) {
  if (s == "delta") return Objective::Delta;
  if (s == "tb") return Objective::Tb;
  if (s == "db") return Objective::Db;
  if (s == "fl-db") return Objective::FlDb;
  if (s == "subtb") return Objective::SubTb;
  if (s == "fl-subtb") return Objective::FlSubTb;
  throw ConfigError("unknown objective: " + std::string(s));
}

inline std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::Delta: return "delta";
    case Objective::Tb: return "tb";
    case Objective::Db: return "db";
    case Objective::FlDb: return "fl-db";
    case Objective::SubTb: return "subtb";
    case Objective::FlSubTb: return "fl-subtb";
  }
  return "?";
}

inline bool needs_flow_head(Objective o) { return o != Objective::Delta && o != Objective::Tb; }

struct TrainConfig {
  Objective objective = Objective::Delta;
  long total_steps = 1000;
  int batch_size = 64;
  double lr = 1e-3;
  double lr_multiplier = 100.0;  // log Z and root-marginal logits
  bool lr_decay = true;
  Policy policy;
  int imap_refresh_period = 50;
  bool sub_dags = true;  // local objective only: partial samples over sub I-maps
  int sub_dags_per_var = 16;
  int stochastic_children_threshold = 0;  // 0 keeps the exact loss for every u
  double subtb_lambda = 0.9;
  PartialRewardMode partial_reward = PartialRewardMode::ZeroMasked;
  std::uint64_t seed = 0;
  long eval_period = 0;  // 0 evaluates only after the last step
  int eval_samples = 1000;
  // Sampler capacity, used by front ends that build the network.
  int width = 64;
  int depth = 3;
  Activation activation = Activation::Relu;

  void validate() const {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0) || !(lr_multiplier > 0)) throw ConfigError("learning rates must be positive");
    if (imap_refresh_period <= 0) throw ConfigError("imap_refresh_period must be positive");
    if (sub_dags_per_var <= 0) throw ConfigError("sub_dags_per_var must be positive");
    if (stochastic_children_threshold < 0) throw ConfigError("stochastic_children_threshold must be >= 0");
    if (!(subtb_lambda > 0)) throw ConfigError("subtb_lambda must be positive");
    if (eval_period < 0 || eval_samples < 2) throw ConfigError("eval_period must be >= 0 and eval_samples >= 2");
    if (width <= 0 || depth <= 0) throw ConfigError("width and depth must be positive");
  }
};

inline AdamConfig adam_config(const TrainConfig& cfg) {
  AdamConfig a;
  a.lr = cfg.lr;
  a.total_steps = cfg.lr_decay ? cfg.total_steps : 0;
  return a;
}

struct MetricsRow {
  long step = 0;
  double seconds = 0.0;
  double nll = std::numeric_limits<double>::quiet_NaN();
  double mmd = std::numeric_limits<double>::quiet_NaN();
  double loss = 0.0;
  int instantiated = 0;  // most variables instantiated by one sample of the update
};

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << "step,seconds,nll,mmd,loss,instantiated_per_update\n";
  os << std::setprecision(10);
  for (const auto& r : rows)
    os << r.step << ',' << r.seconds << ',' << r.nll << ',' << r.mmd << ',' << r.loss << ',' << r.instantiated << '\n';
}

// ---------------------------------------------------------------------------
// Metrics.

/// Mean negative log-likelihood of full samples under q with the given I-map.
template <class Net>
double metric_nll(const AmortizedSampler<Net>& s, const Imap& imap, std::span<const Assignment> samples) {
  if (samples.empty()) throw EmptyBatch("NLL needs at least one sample");
  double acc = 0.0;
  for (const auto& x : samples) {
    if (!x.full()) throw PartialAssignment("NLL needs full samples");
    acc -= s.log_prob(imap, x);
  }
  return acc / static_cast<double>(samples.size());
}

/// Unbiased MMD^2 with the linear kernel k(x, y) = x . y.
inline double metric_mmd_linear(std::span<const Assignment> a, std::span<const Assignment> b) {
  if (a.size() < 2 || b.size() < 2) throw EmptyBatch("unbiased MMD needs two samples per batch");
  const int d = a.front().num_vars();
  std::vector<double> sa(static_cast<std::size_t>(d), 0.0), sb(static_cast<std::size_t>(d), 0.0);
  double na2 = 0.0, nb2 = 0.0;
  auto accumulate = [d](std::span<const Assignment> batch, std::vector<double>& sum, double& sq) {
    for (const auto& x : batch) {
      if (x.num_vars() != d) throw ShapeMismatch("MMD batches differ in dimension");
      for (int v = 0; v < d; ++v) {
        sum[static_cast<std::size_t>(v)] += x[v];
        sq += static_cast<double>(x[v]) * x[v];
      }
    }
  };
  accumulate(a, sa, na2);
  accumulate(b, sb, nb2);
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (std::size_t v = 0; v < sa.size(); ++v) {
    aa += sa[v] * sa[v];
    bb += sb[v] * sb[v];
    ab += sa[v] * sb[v];
  }
  return (aa - na2) / (n * (n - 1.0)) + (bb - nb2) / (m * (m - 1.0)) - 2.0 * ab / (n * m);
}

/// ||mean(a) - mean(b)||^2.
inline double metric_mmd_linear_biased(std::span<const Assignment> a, std::span<const Assignment> b) {
  if (a.empty() || b.empty()) throw EmptyBatch("MMD needs non-empty batches");
  const int d = a.front().num_vars();
  std::vector<double> diff(static_cast<std::size_t>(d), 0.0);
  for (const auto& x : a)
    for (int v = 0; v < d; ++v) diff[static_cast<std::size_t>(v)] += x[v] / static_cast<double>(a.size());
  for (const auto& x : b) {
    if (x.num_vars() != d) throw ShapeMismatch("MMD batches differ in dimension");
    for (int v = 0; v < d; ++v) diff[static_cast<std::size_t>(v)] -= x[v] / static_cast<double>(b.size());
  }
  double acc = 0.0;
  for (double t : diff) acc += t * t;
  return acc;
}

/// Total variation between q (under a full I-map) and an enumerated p.
template <class Net>
double total_variation(const AmortizedSampler<Net>& s, const Imap& imap, const ExactTable& t) {
  const int n = t.num_vars();
  double tv = 0.0;
  for (std::uint64_t st = 0; st < (std::uint64_t{1} << n); ++st) {
    const Assignment x = assignment_from_state(st, n);
    tv += std::abs(std::exp(s.log_prob(imap, x)) - t.full_probs()[st]);
  }
  return 0.5 * tv;
}

// ---------------------------------------------------------------------------
// Trainers. Each owns its optimizer and I-map schedule; one step is one
// optimizer update.

/// Pre-fills values that are given rather than sampled (observed variables).
using Seeder = std::function<void(Assignment&, Rng&)>;

template <class Net>
class DeltaTrainer {
 public:
  /// `active` limits training to a union of components of g (empty: all).
  DeltaTrainer(const TrainConfig& cfg, AmortizedSampler<Net>& s, const UndirectedGraph& g,
               std::vector<int> active = {})
      : cfg_(cfg), s_(s), imaps_(g, cfg.seed, active), rng_(cfg.seed + 1), adam_(adam_config(cfg)),
        grad_(s.make_gradient()) {
    cfg_.validate();
    if (cfg_.objective != Objective::Delta) throw ConfigError("local trainer needs the delta objective");
    adam_.add_group(s.net().num_params(), 1.0);
    adam_.add_group(s.root_logits().size(), cfg_.lr_multiplier);
    for (int v = 0; v < g.num_vars(); ++v)
      if (imaps_.active(v)) vars_.push_back(v);
    if (vars_.empty()) throw ConfigError("no variables to train");
  }

  const ImapSampler& imaps() const { return imaps_; }
  Adam& optimizer() { return adam_; }
  long steps() const { return step_; }
  int last_instantiated() const { return instantiated_; }
  Imap sample_full() { return imaps_.full(rng_); }

  double step(const EnergyModel& m, const Seeder& seeder = {}) {
    if (step_ % cfg_.imap_refresh_period == 0) refresh();
    grad_.zero();
    instantiated_ = 0;
    double loss = 0.0;
    const int n = s_.num_vars();
    auto draw = [&](const Imap& imap) {
      Assignment x(n);
      if (seeder) seeder(x, rng_);
      s_.sample_into(imap, cfg_.policy, rng_, x);
      instantiated_ = std::max(instantiated_, x.count());
      return x;
    };
    if (cfg_.sub_dags) {
      const double w = 1.0 / static_cast<double>(vars_.size() * static_cast<std::size_t>(cfg_.sub_dags_per_var));
      for (std::size_t i = 0; i < vars_.size(); ++i)
        for (int k = 0; k < cfg_.sub_dags_per_var; ++k) {
          const Assignment x = draw(subs_[i]);
          loss += accumulate(m, subs_[i], x, vars_[i], w);
        }
    } else {
      const double w = 1.0 / static_cast<double>(cfg_.batch_size);
      std::uniform_int_distribution<std::size_t> pick(0, vars_.size() - 1);
      for (int b = 0; b < cfg_.batch_size; ++b) {
        const Assignment x = draw(full_);
        loss += accumulate(m, full_, x, vars_[pick(rng_)], w);
      }
    }
    if (!std::isfinite(loss) || !grad_.finite()) throw NonFiniteLoss("non-finite loss or gradient");
    const ParamBlock blocks[] = {{s_.net().params(), grad_.net}, {s_.root_logits(), grad_.root}};
    adam_.step(blocks);
    ++step_;
    return loss;
  }

 private:
  void refresh() {
    if (cfg_.sub_dags) {
      subs_.clear();
      for (int u : vars_) subs_.push_back(imaps_.sub(u, rng_));
    } else {
      full_ = imaps_.full(rng_);
    }
  }

  double accumulate(const EnergyModel& m, const Imap& imap, const Assignment& x, int u, double w) {
    const std::size_t nch = imap.children(u).size();
    const int th = cfg_.stochastic_children_threshold;
    if (th > 0 && nch > static_cast<std::size_t>(th) && nch > 1)
      return w * delta_loss_stochastic_grad(s_, imap, m, x, u, -x[u], rng_, grad_, w);
    return w * delta_loss(s_, imap, m, x, u, -x[u], &grad_, w);
  }

  TrainConfig cfg_;
  AmortizedSampler<Net>& s_;
  ImapSampler imaps_;
  Rng rng_;
  Adam adam_;
  SamplerGradient grad_;
  std::vector<int> vars_;
  std::vector<Imap> subs_;  // aligned with vars_
  Imap full_;
  long step_ = 0;
  int instantiated_ = 0;
};

template <class Net>
class GfnTrainer {
 public:
  GfnTrainer(const TrainConfig& cfg, AmortizedSampler<Net>& s, const UndirectedGraph& g, double log_z = 0.0)
      : cfg_(cfg), s_(s), imaps_(g, cfg.seed), rng_(cfg.seed + 1), adam_(adam_config(cfg)),
        grad_(s.make_gradient()), log_z_(log_z) {
    cfg_.validate();
    if (cfg_.objective == Objective::Delta) throw ConfigError("GFlowNet trainer needs a trajectory objective");
    if (needs_flow_head(cfg_.objective) && s.net().flow_output() < 0)
      throw ConfigError("flow-based objective needs a network with a flow head");
    adam_.add_group(s.net().num_params(), 1.0);
    adam_.add_group(s.root_logits().size(), cfg_.lr_multiplier);
    adam_.add_group(1, cfg_.lr_multiplier);
  }

  double log_z() const { return log_z_; }
  Adam& optimizer() { return adam_; }
  long steps() const { return step_; }
  int last_instantiated() const { return instantiated_; }
  Imap sample_full() { return imaps_.full(rng_); }

  double step(const EnergyModel& m) {
    if (step_ % cfg_.imap_refresh_period == 0) full_ = imaps_.full(rng_);
    grad_.zero();
    instantiated_ = 0;
    double loss = 0.0;
    const double w = 1.0 / static_cast<double>(cfg_.batch_size);
    const FlowConfig flow{cfg_.objective == Objective::FlDb || cfg_.objective == Objective::FlSubTb,
                          cfg_.partial_reward};
    for (int b = 0; b < cfg_.batch_size; ++b) {
      Assignment x(s_.num_vars());
      s_.sample_into(full_, cfg_.policy, rng_, x);
      instantiated_ = std::max(instantiated_, x.count());
      switch (cfg_.objective) {
        case Objective::Tb: loss += w * tb_loss(s_, full_, m, x, LogZEstimate{log_z_}, &grad_, w); break;
        case Objective::Db:
        case Objective::FlDb: loss += w * db_trajectory_loss(s_, full_, m, x, flow, &grad_, w); break;
        case Objective::SubTb:
        case Objective::FlSubTb: loss += w * subtb_loss(s_, full_, m, x, flow, cfg_.subtb_lambda, &grad_, w); break;
        case Objective::Delta: break;
      }
    }
    if (!std::isfinite(loss) || !grad_.finite()) throw NonFiniteLoss("non-finite loss or gradient");
    const ParamBlock blocks[] = {{s_.net().params(), grad_.net},
                                 {s_.root_logits(), grad_.root},
                                 {std::span<double>(&log_z_, 1), std::span<const double>(&grad_.log_z, 1)}};
    adam_.step(blocks);
    ++step_;
    return loss;
  }

 private:
  TrainConfig cfg_;
  AmortizedSampler<Net>& s_;
  ImapSampler imaps_;
  Rng rng_;
  Adam adam_;
  SamplerGradient grad_;
  double log_z_;
  Imap full_;
  long step_ = 0;
  int instantiated_ = 0;
};

// ---------------------------------------------------------------------------
// Driver loops with periodic evaluation.

/// Reference samples from the target; empty disables NLL and MMD.
struct EvalSet {
  std::vector<Assignment> reference;
};

template <class Net>
class Evaluator {
 public:
  Evaluator(const TrainConfig& cfg, const AmortizedSampler<Net>& s, const UndirectedGraph& g, const EvalSet& eval)
      : cfg_(cfg), s_(s), eval_(eval) {
    // Same chordal completion as the trainers; only the P-map draw differs.
    ImapSampler imaps(g, cfg.seed);
    Rng rng(cfg.seed + 7);
    imap_ = imaps.full(rng);
  }

  const Imap& imap() const { return imap_; }

  void fill(MetricsRow& row) const {
    if (eval_.reference.empty()) return;
    row.nll = metric_nll(s_, imap_, eval_.reference);
    Rng rng(cfg_.seed ^ (static_cast<std::uint64_t>(row.step) * 0x9E3779B97F4A7C15ULL));
    const auto q = s_.ancestral_sample(imap_, Policy::on_policy(), static_cast<std::size_t>(cfg_.eval_samples), rng);
    row.mmd = metric_mmd_linear(q.samples, eval_.reference);
  }

 private:
  TrainConfig cfg_;
  const AmortizedSampler<Net>& s_;
  const EvalSet& eval_;
  Imap imap_;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  int max_instantiated = 0;
  double log_z = 0.0;  // trajectory balance only
};

namespace detail {

template <class StepFn, class Net>
TrainResult run_loop(const TrainConfig& cfg, const Evaluator<Net>& ev, StepFn&& step) {
  TrainResult out;
  const auto t0 = std::chrono::steady_clock::now();
  for (long t = 1; t <= cfg.total_steps; ++t) {
    const auto [loss, inst] = step();
    out.max_instantiated = std::max(out.max_instantiated, inst);
    const bool due = (cfg.eval_period > 0 && t % cfg.eval_period == 0) || t == cfg.total_steps;
    if (!due) continue;
    MetricsRow row;
    row.step = t;
    row.loss = loss;
    row.instantiated = inst;
    ev.fill(row);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace detail

template <class Net>
TrainResult train_delta(const TrainConfig& cfg, const EnergyModel& m, AmortizedSampler<Net>& s,
                        const EvalSet& eval = {}) {
  DeltaTrainer<Net> tr(cfg, s, m.graph());
  Evaluator<Net> ev(cfg, s, m.graph(), eval);
  return detail::run_loop(cfg, ev, [&] {
    const double l = tr.step(m);
    return std::pair{l, tr.last_instantiated()};
  });
}

template <class Net>
TrainResult train_gfn(const TrainConfig& cfg, const EnergyModel& m, AmortizedSampler<Net>& s,
                      const EvalSet& eval = {}, double log_z_init = 0.0) {
  GfnTrainer<Net> tr(cfg, s, m.graph(), log_z_init);
  Evaluator<Net> ev(cfg, s, m.graph(), eval);
  auto out = detail::run_loop(cfg, ev, [&] {
    const double l = tr.step(m);
    return std::pair{l, tr.last_instantiated()};
  });
  out.log_z = tr.log_z();
  return out;
}

// ---------------------------------------------------------------------------
// Energy-model learning with sampler negatives.

enum class Negatives { Sampler, Exact };

struct EbmConfig {
  int rounds = 20;
  int q_steps = 100;  // sampler updates per round
  int p_steps = 100;  // model updates per round
  int batch_size = 256;
  double lr = 1e-2;
  bool lr_decay = true;  // model schedule; the sampler follows TrainConfig::lr_decay
  Negatives negatives = Negatives::Sampler;
};

struct EbmResult {
  std::vector<double> q_loss;  // last sampler loss of each round
};

template <class Net>
EbmResult train_ebm(const TrainConfig& cfg, EnergyModel& m, AmortizedSampler<Net>& s,
                    std::span<const Assignment> data, const EbmConfig& ecfg) {
  if (data.empty()) throw EmptyDataset("EBM training needs data");
  if (ecfg.rounds <= 0 || ecfg.q_steps < 0 || ecfg.p_steps <= 0 || ecfg.batch_size <= 0)
    throw ConfigError("EBM schedule counts must be positive");
  for (const auto& x : data)
    if (!x.full() || x.num_vars() != m.num_vars()) throw PartialAssignment("EBM data must be full assignments");
  // The sampler's decay schedule spans all of its updates across rounds.
  TrainConfig qcfg = cfg;
  qcfg.total_steps = std::max<long>(1, static_cast<long>(ecfg.rounds) * ecfg.q_steps);
  DeltaTrainer<Net> tr(qcfg, s, m.graph());
  AdamConfig ac;
  ac.lr = ecfg.lr;
  ac.total_steps = ecfg.lr_decay ? static_cast<long>(ecfg.rounds) * ecfg.p_steps : 0;
  Adam adam(ac);
  adam.add_group(m.params().size());
  Rng rng(cfg.seed + 3);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<Assignment> pos;
  EbmResult out;
  for (int r = 0; r < ecfg.rounds; ++r) {
    double last = 0.0;
    for (int k = 0; k < ecfg.q_steps; ++k) last = tr.step(m);
    out.q_loss.push_back(last);
    for (int k = 0; k < ecfg.p_steps; ++k) {
      pos.clear();
      for (int b = 0; b < ecfg.batch_size; ++b) pos.push_back(data[pick(rng)]);
      std::vector<Assignment> neg;
      if (ecfg.negatives == Negatives::Exact) {
        neg = exact_sample(enumerate_exact(m), static_cast<std::size_t>(ecfg.batch_size), rng);
      } else {
        const Imap imap = tr.sample_full();
        neg = s.ancestral_sample(imap, Policy::on_policy(), static_cast<std::size_t>(ecfg.batch_size), rng).samples;
      }
      auto g = ebm_param_grad(m, pos, neg);
      for (auto& v : g) v = -v;  // ascend the log-likelihood
      if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); }))
        throw NonFiniteLoss("non-finite model gradient");
      const ParamBlock blocks[] = {{m.params(), g}};
      adam.step(blocks);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variational EM for a Bayesian network with latent variables.

struct EmConfig {
  int rounds = 30;
  int e_steps = 100;   // sampler updates per round
  int m_steps = 20;    // model updates per round
  int completions = 16;  // posterior samples per data row in the M-step
  double lr = 5e-2;
};

struct EmResult {
  std::vector<double> log_likelihood;  // mean enumerated data log-likelihood after each round
};

namespace detail {

inline std::vector<int> observed_of(int n, std::span<const int> latent) {
  std::vector<char> is_latent(static_cast<std::size_t>(n), 0);
  for (int h : latent) {
    if (h < 0 || h >= n) throw std::out_of_range("latent variable out of range");
    is_latent[static_cast<std::size_t>(h)] = 1;
  }
  std::vector<int> obs;
  for (int v = 0; v < n; ++v)
    if (!is_latent[static_cast<std::size_t>(v)]) obs.push_back(v);
  return obs;
}

inline void check_em_inputs(const EnergyModel& p, std::span<const int> latent, std::span<const Assignment> data) {
  if (p.kind() != ModelKind::BayesNet) throw ConfigError("EM needs a Bayesian-network model");
  if (p.num_vars() > 12) throw TooLarge("EM enumerates the latent space; keep it to 12 variables");
  if (observed_of(p.num_vars(), latent).empty()) throw LatentCoversAll("every variable is latent");
  if (data.empty()) throw EmptyDataset("EM needs data");
  const auto obs = observed_of(p.num_vars(), latent);
  for (const auto& x : data) {
    if (x.num_vars() != p.num_vars()) throw ShapeMismatch("data row has the wrong width");
    for (int o : obs)
      if (!x.is_set(o)) throw PartialAssignment("data row misses an observed variable");
  }
}

// Calls f(completed x, log p(x)) for every completion of the latent variables.
template <class F>
void for_each_completion(const EnergyModel& p, std::span<const int> latent, const Assignment& row, F&& f) {
  Assignment x = row;
  for (std::uint64_t c = 0; c < (std::uint64_t{1} << latent.size()); ++c) {
    for (std::size_t i = 0; i < latent.size(); ++i) x.set(latent[i], ((c >> i) & 1U) ? 1 : -1);
    f(x, p.log_reward(x));
  }
}

inline std::vector<double> exact_posterior(const EnergyModel& p, std::span<const int> latent, const Assignment& row) {
  std::vector<double> lp;
  for_each_completion(p, latent, row, [&](const Assignment&, double l) { lp.push_back(l); });
  const double lz = log_sum_exp(lp);
  for (auto& v : lp) v = std::exp(v - lz);
  return lp;
}

}  // namespace detail

/// Mean over rows of log sum_{x_H} p(x_obs, x_H).
inline double data_log_likelihood(const EnergyModel& p, std::span<const int> latent, std::span<const Assignment> data) {
  if (data.empty()) throw EmptyDataset("log-likelihood needs data");
  double acc = 0.0;
  std::vector<double> lp;
  for (const auto& row : data) {
    lp.clear();
    detail::for_each_completion(p, latent, row, [&](const Assignment&, double l) { lp.push_back(l); });
    acc += log_sum_exp(lp);
  }
  return acc / static_cast<double>(data.size());
}

/// TV between q(x_H | x_obs) and the enumerated posterior p(x_H | x_obs).
template <class Net>
double posterior_tv(const AmortizedSampler<Net>& s, const Imap& imap, const EnergyModel& p,
                    std::span<const int> latent, const Assignment& row) {
  const auto post = detail::exact_posterior(p, latent, row);
  double tv = 0.0;
  std::size_t c = 0;
  detail::for_each_completion(p, latent, row, [&](const Assignment& x, double) {
    tv += std::abs(std::exp(s.log_prob(imap, x)) - post[c++]);
  });
  return 0.5 * tv;
}

namespace detail {

// One M-step update from weighted completions; returns nothing, moves p.
inline void m_step(EnergyModel& p, Adam& adam, std::span<const std::pair<Assignment, double>> completed) {
  std::vector<double> g(p.params().size(), 0.0);
  for (const auto& [x, w] : completed) p.log_reward_grad(x, -w, g);
  if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); }))
    throw NonFiniteLoss("non-finite model gradient");
  const ParamBlock blocks[] = {{p.params(), g}};
  adam.step(blocks);
}

inline Adam em_optimizer(const EnergyModel& p, const EmConfig& ecfg) {
  AdamConfig ac;
  ac.lr = ecfg.lr;
  Adam adam(ac);
  adam.add_group(p.params().size());
  return adam;
}

}  // namespace detail

/// E-step: the sampler, conditioned on the observed variables, learns the
/// posterior over `latent` by local matching against p. M-step: ascent on
/// the complete-data log-likelihood with sampler completions. With no latent
/// variables this is plain maximum likelihood.
template <class Net>
EmResult train_em(const TrainConfig& cfg, EnergyModel& p, std::span<const int> latent, AmortizedSampler<Net>& s,
                  std::span<const Assignment> data, const EmConfig& ecfg) {
  detail::check_em_inputs(p, latent, data);
  if (ecfg.rounds <= 0 || ecfg.m_steps <= 0 || ecfg.completions <= 0 || ecfg.e_steps < 0)
    throw ConfigError("EM schedule counts must be positive");
  const auto obs = detail::observed_of(p.num_vars(), latent);
  Adam adam = detail::em_optimizer(p, ecfg);
  EmResult out;
  const double w_row = 1.0 / static_cast<double>(data.size());
  std::vector<std::pair<Assignment, double>> completed;

  if (latent.empty()) {
    for (int r = 0; r < ecfg.rounds; ++r) {
      completed.clear();
      for (const auto& x : data) completed.emplace_back(x, w_row);
      for (int k = 0; k < ecfg.m_steps; ++k) detail::m_step(p, adam, completed);
      out.log_likelihood.push_back(data_log_likelihood(p, latent, data));
    }
    return out;
  }

  if (s.conditioning() != obs) throw ConfigError("sampler must be conditioned on exactly the observed variables");
  std::vector<int> hidden(latent.begin(), latent.end());
  TrainConfig qcfg = cfg;
  qcfg.total_steps = std::max<long>(1, static_cast<long>(ecfg.rounds) * ecfg.e_steps);
  DeltaTrainer<Net> tr(qcfg, s, p.graph().induced(hidden), hidden);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const Seeder seeder = [&](Assignment& x, Rng& rng) {
    const Assignment& row = data[pick(rng)];
    for (int o : obs) x.set(o, row[o]);
  };
  Rng rng(cfg.seed + 5);
  const double w = w_row / static_cast<double>(ecfg.completions);
  for (int r = 0; r < ecfg.rounds; ++r) {
    for (int k = 0; k < ecfg.e_steps; ++k) tr.step(p, seeder);
    for (int k = 0; k < ecfg.m_steps; ++k) {
      const Imap imap = tr.sample_full();
      completed.clear();
      for (const auto& row : data)
        for (int c = 0; c < ecfg.completions; ++c) {
          Assignment x(p.num_vars());
          for (int o : obs) x.set(o, row[o]);
          s.sample_into(imap, Policy::on_policy(), rng, x);
          completed.emplace_back(std::move(x), w);
        }
      detail::m_step(p, adam, completed);
    }
    out.log_likelihood.push_back(data_log_likelihood(p, latent, data));
  }
  return out;
}

/// The same EM schedule with the enumerated posterior in place of the sampler.
inline EmResult train_em_exact(EnergyModel& p, std::span<const int> latent, std::span<const Assignment> data,
                               const EmConfig& ecfg) {
  detail::check_em_inputs(p, latent, data);
  Adam adam = detail::em_optimizer(p, ecfg);
  EmResult out;
  const double w_row = 1.0 / static_cast<double>(data.size());
  std::vector<std::pair<Assignment, double>> completed;
  for (int r = 0; r < ecfg.rounds; ++r) {
    for (int k = 0; k < ecfg.m_steps; ++k) {
      completed.clear();
      for (const auto& row : data) {
        const auto post = detail::exact_posterior(p, latent, row);
        std::size_t c = 0;
        detail::for_each_completion(p, latent, row,
                                    [&](const Assignment& x, double) { completed.emplace_back(x, w_row * post[c++]); });
      }
      detail::m_step(p, adam, completed);
    }
    out.log_likelihood.push_back(data_log_likelihood(p, latent, data));
  }
  return out;
}

}  // namespace deltaai
