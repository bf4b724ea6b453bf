#include <deltaai/sampler.hpp>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace deltaai;

namespace {

MaeSampler random_mae_sampler(int n, std::uint64_t seed, int cond = 0) {
  auto s = make_mae_sampler(MaeConfig{n, cond, 16, 2}, seed);
  Rng rng(seed + 1);
  std::normal_distribution<double> z(0.0, 1.0);
  for (auto& r : s.root_logits()) r = z(rng);
  // Larger output weights so the conditionals are far from uniform.
  for (auto& p : s.net().params()) p *= 3.0;
  return s;
}

}  // namespace

TEST(Policy, ProbabilityOfPlus) {
  EXPECT_NEAR(Policy::on_policy().prob_plus(0.7), sigmoid(0.7), 1e-15);
  EXPECT_NEAR(Policy::tempered(2.0).prob_plus(0.7), sigmoid(0.35), 1e-15);
  EXPECT_NEAR(Policy::eps_uniform(0.2).prob_plus(3.0), 0.8 * sigmoid(3.0) + 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(Policy::eps_uniform(1.0).prob_plus(-50.0), 0.5);
  EXPECT_THROW(Policy::tempered(0.0), ConfigError);
  EXPECT_THROW(Policy::eps_uniform(1.5), ConfigError);
  EXPECT_THROW(Policy::eps_uniform(-0.1), ConfigError);
}

TEST(LogProb, ValueDerivativeAndFloor) {
  for (double l : {-3.0, -0.2, 0.0, 1.5, 8.0})
    for (int s : {-1, 1}) {
      const auto lp = log_prob_of(s, l);
      EXPECT_NEAR(lp.value, std::log(s > 0 ? sigmoid(l) : 1.0 - sigmoid(l)), 1e-12);
      const double fd = (log_prob_of(s, l + 1e-6).value - log_prob_of(s, l - 1e-6).value) / 2e-6;
      EXPECT_NEAR(lp.d_logit, fd, 1e-6);
    }
  const auto floored = log_prob_of(1, -100.0);
  EXPECT_EQ(floored.value, kLogProbFloor);
  EXPECT_EQ(floored.d_logit, 0.0);
  EXPECT_NEAR(log_prob_of(-1, -100.0).value, 0.0, 1e-15);
}

TEST(AmortizedSampler, LogProbIsNormalizedUnderAnyImap) {
  Rng rng(1);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 3 + trial % 4;
    const auto g = oracle::random_graph(n, 0.5, rng);
    const auto s = random_mae_sampler(n, 10 + trial);
    const auto imap = sample_imap(g, rng());
    std::vector<double> lps;
    for (std::uint64_t st = 0; st < (std::uint64_t{1} << n); ++st) lps.push_back(s.log_prob(imap, assignment_from_state(st, n)));
    EXPECT_NEAR(log_sum_exp(lps), 0.0, 1e-10);
  }
}

TEST(AmortizedSampler, AncestralFrequenciesMatchLogProb) {
  Rng rng(2);
  const int n = 4;
  const auto g = make_cycle(n);
  const auto s = random_mae_sampler(n, 3);
  const auto imap = sample_imap(g, 5);
  const std::size_t draws = 200000;
  const auto batch = s.ancestral_sample(imap, Policy::on_policy(), draws, rng);
  std::vector<double> counts(16, 0.0);
  for (std::size_t i = 0; i < draws; ++i) {
    ++counts[state_from_assignment(batch.samples[i])];
    EXPECT_NEAR(batch.log_q[i], s.log_prob(imap, batch.samples[i]), 1e-12);
  }
  for (std::uint64_t st = 0; st < 16; ++st) {
    const double p = std::exp(s.log_prob(imap, assignment_from_state(st, n)));
    EXPECT_NEAR(counts[st] / draws, p, 5 * std::sqrt(p * (1 - p) / draws) + 1e-4);
  }
}

TEST(AmortizedSampler, OffPolicyReportsOnPolicyLogQ) {
  Rng rng(3);
  const auto s = random_mae_sampler(5, 4);
  const auto imap = sample_imap(make_chain(5), 6);
  const auto b = s.ancestral_sample(imap, Policy::eps_uniform(1.0), 2000, rng);
  std::array<int, 5> plus{};
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    EXPECT_NEAR(b.log_q[i], s.log_prob(imap, b.samples[i]), 1e-12);
    for (int v = 0; v < 5; ++v) plus[static_cast<std::size_t>(v)] += b.samples[i][v] > 0;
  }
  for (int c : plus) EXPECT_NEAR(c / 2000.0, 0.5, 0.05);
}

TEST(AmortizedSampler, TemperedRootMarginal) {
  Rng rng(4);
  auto s = random_mae_sampler(1, 7);
  s.root_logits()[0] = 2.0;
  const auto imap = sample_imap(UndirectedGraph(1, {}), 0);
  const auto b = s.ancestral_sample(imap, Policy::tempered(4.0), 100000, rng);
  int plus = 0;
  for (const auto& x : b.samples) plus += x[0] > 0;
  const double p = sigmoid(0.5);
  EXPECT_NEAR(plus / 1e5, p, 5 * std::sqrt(p * (1 - p) / 1e5));
}

TEST(AmortizedSampler, PartialSampleCoversExactlyTheSubImap) {
  Rng rng(5);
  const auto g = make_lattice(4, 4);
  const auto s = random_mae_sampler(16, 8);
  for (int u = 0; u < 16; ++u) {
    const auto sub = sub_imap(g, u, rng());
    const auto x = s.partial_sample(sub, Policy::on_policy(), rng);
    for (int v = 0; v < 16; ++v) EXPECT_EQ(x.is_set(v), sub.contains(v));
    EXPECT_TRUE(x.is_set(u));
    EXPECT_NO_THROW(s.log_prob(sub, x));
  }
  const auto full = sample_imap(g, 1);
  EXPECT_THROW(s.ancestral_sample(sub_imap(g, 0, 2), Policy::on_policy(), 1, rng), PartialAssignment);
  EXPECT_THROW(s.log_prob(full, Assignment(16)), PartialAssignment);
}

TEST(AmortizedSampler, MaskedInputHoldsParentsOnly) {
  const auto s = random_mae_sampler(4, 9);
  const auto imap = sample_imap(make_complete(4), 3);
  const int last = imap.topo_order().back();
  Assignment x(4);
  for (int v = 0; v < 4; ++v) x.set(v, v % 2 ? 1 : -1);
  std::vector<double> in;
  s.masked_input(imap, last, x, in);
  for (int v = 0; v < 4; ++v) EXPECT_EQ(in[static_cast<std::size_t>(v)], v == last ? 0.0 : x[v]);
  Assignment partial(4);
  EXPECT_THROW(s.masked_input(imap, last, partial, in), MissingParent);
  EXPECT_THROW(s.conditional_logprob(imap, last, partial), PartialAssignment);
}

TEST(AmortizedSampler, ConditioningBlock) {
  auto s = random_mae_sampler(3, 11, 2);
  EXPECT_THROW(s.set_conditioning({0}), ShapeMismatch);
  s.set_conditioning({0, 2});
  const auto imap = sample_imap(make_complete(3), 4);
  Assignment x(3);
  x.set(0, 1);
  x.set(1, -1);
  x.set(2, -1);
  std::vector<double> in;
  s.prefix_input(x, in);
  EXPECT_EQ(in, (std::vector<double>{0, -1, 0, 1, -1}));
  Assignment y(3);
  y.set(1, 1);
  EXPECT_THROW(s.prefix_input(y, in), MissingParent);
}

TEST(AmortizedSampler, BackpropLogitMatchesFiniteDifferences) {
  auto s = random_mae_sampler(4, 12);
  const auto imap = sample_imap(make_complete(4), 5);
  Assignment x(4);
  for (int v = 0; v < 4; ++v) x.set(v, v == 2 ? -1 : 1);
  for (int v = 0; v < 4; ++v) {
    auto g = s.make_gradient();
    const auto e = s.eval_logit(imap, v, x);
    s.backprop_logit(e, 1.0, g);
    if (e.root) {
      EXPECT_EQ(g.root[static_cast<std::size_t>(v)], 1.0);
      continue;
    }
    for (std::size_t i = 0; i < g.net.size(); i += 7) {
      const double fd = oracle::central_difference(s.net().params(), i, [&] { return s.logit(imap, v, x); }, 1e-6);
      EXPECT_LT(oracle::relative_error(g.net[i], fd), 1e-4);
    }
  }
}

TEST(SetExactConditionals, ReproducesTheJoint) {
  Rng rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 3 + trial % 5;
    const auto g = oracle::random_graph(n, 0.5, rng);
    const auto m = random_ising(g, 0.6, rng).to_energy_model();
    const auto t = enumerate_exact(m);
    const auto imap = sample_imap(g, rng());
    TabularSampler s{TabularNet(imap, false)};
    set_exact_conditionals(s, imap, t);
    for (std::uint64_t st = 0; st < (std::uint64_t{1} << n); ++st) {
      const auto x = assignment_from_state(st, n);
      EXPECT_NEAR(s.log_prob(imap, x), std::log(t.prob(x)), 1e-9);
    }
  }
}

TEST(TabularNet, FlowTableRequiresTopologicalPrefix) {
  const auto imap = sample_imap(make_chain(3), 0);
  TabularNet net(imap, true);
  EXPECT_EQ(net.num_params(), std::size_t(1 + 2 + 2) + 15);
  std::vector<double> in(3, 0.0);
  TabularNet::Trace t;
  EXPECT_NO_THROW(net.forward(in, net.flow_output(), t));
  in[static_cast<std::size_t>(imap.topo_order()[1])] = 1.0;
  EXPECT_THROW(net.forward(in, net.flow_output(), t), OrderViolation);
}

TEST(AnnealSchedule, LinearRampToOne) {
  const AnnealSchedule a{0.2, 10};
  EXPECT_DOUBLE_EQ(a.beta_at(0), 0.2);
  EXPECT_NEAR(a.beta_at(5), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(a.beta_at(10), 1.0);
  EXPECT_DOUBLE_EQ(AnnealSchedule{}.beta_at(0), 1.0);
}

TEST(Gibbs, ZeroStepsGiveUniformStarts) {
  IsingModel im;
  im.num_vars = 3;
  im.couplings = {{{0, 1}, 5.0}};
  const auto xs = gibbs_chain(im.to_energy_model(), 4000, 0, {}, 1);
  int agree = 0;
  for (const auto& x : xs) agree += x[0] == x[1];
  EXPECT_NEAR(agree / 4000.0, 0.5, 0.04);
}

TEST(Gibbs, ChainsReachTheExactDistribution) {
  Rng rng(7);
  const auto m = random_ising(make_cycle(4), 0.4, rng).to_energy_model();
  const auto t = enumerate_exact(m);
  const std::size_t chains = 40000;
  const auto xs = gibbs_chain(m, chains, 30, {}, 2);
  std::vector<double> counts(16, 0.0);
  for (const auto& x : xs) ++counts[state_from_assignment(x)];
  for (std::size_t st = 0; st < 16; ++st) {
    const double p = t.full_probs()[st];
    EXPECT_NEAR(counts[st] / chains, p, 5 * std::sqrt(p * (1 - p) / chains) + 1e-4);
  }
  // Same seed, same chains.
  const auto again = gibbs_chain(m, 10, 30, {}, 2);
  for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(state_from_assignment(again[c]), state_from_assignment(xs[c]));
}
