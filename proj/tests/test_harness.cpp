#include <deltaai/harness.hpp>

#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace deltaai;

namespace {

TrainConfig small_config(long steps) {
  TrainConfig c;
  c.total_steps = steps;
  c.batch_size = 32;
  c.sub_dags_per_var = 8;
  c.lr = 3e-3;
  c.imap_refresh_period = 10;
  c.eval_samples = 200;
  c.seed = 11;
  return c;
}

MaeSampler small_mae(int n, bool flow = false, int cond = 0) {
  return make_mae_sampler(MaeConfig{n, cond, 16, 2, flow}, 3);
}

double pairwise_mmd_oracle(std::span<const Assignment> a, std::span<const Assignment> b) {
  auto k = [](const Assignment& x, const Assignment& y) {
    double s = 0.0;
    for (int v = 0; v < x.num_vars(); ++v) s += x[v] * y[v];
    return s;
  };
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) aa += k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) bb += k(b[i], b[j]);
  for (const auto& x : a)
    for (const auto& y : b) ab += k(x, y);
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  return aa / (n * (n - 1)) + bb / (m * (m - 1)) - 2 * ab / (n * m);
}

int max_degree(const UndirectedGraph& g) {
  int d = 0;
  for (int v = 0; v < g.num_vars(); ++v) d = std::max(d, static_cast<int>(g.neighbors(v).size()));
  return d;
}

}  // namespace

TEST(Objective, ParseAndName) {
  for (auto o : {Objective::Delta, Objective::Tb, Objective::Db, Objective::FlDb, Objective::SubTb, Objective::FlSubTb})
    EXPECT_EQ(parse_objective(objective_name(o)), o);
  EXPECT_THROW(parse_objective("vi"), ConfigError);
  EXPECT_FALSE(needs_flow_head(Objective::Tb));
  EXPECT_TRUE(needs_flow_head(Objective::FlSubTb));
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.total_steps = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = -1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.imap_refresh_period = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.stochastic_children_threshold = -1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.eval_samples = 1; }).validate(), ConfigError);
  EXPECT_EQ(adam_config(bad([](TrainConfig& c) { c.lr_decay = false; })).total_steps, 0);
  EXPECT_EQ(adam_config(TrainConfig{}).total_steps, 1000);
}

TEST(MetricsCsv, HeaderAndRows) {
  std::vector<MetricsRow> rows(2);
  rows[0].step = 10;
  rows[0].loss = 0.5;
  rows[0].instantiated = 3;
  rows[1].step = 20;
  rows[1].nll = 1.25;
  rows[1].mmd = 0.0;
  std::ostringstream os;
  write_metrics_csv(os, rows);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,seconds,nll,mmd,loss,instantiated_per_update");
  std::getline(is, line);
  EXPECT_EQ(line, "10,0,nan,nan,0.5,3");
  std::getline(is, line);
  EXPECT_EQ(line, "20,0,1.25,0,0,0");
}

TEST(Metrics, MmdMatchesPairwiseKernelOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Assignment> a, b;
    for (int i = 0; i < 5 + trial; ++i) a.push_back(assignment_from_state(rng() % 64, 6));
    for (int i = 0; i < 3 + 2 * trial; ++i) b.push_back(assignment_from_state(rng() % 64, 6));
    EXPECT_NEAR(metric_mmd_linear(a, b), pairwise_mmd_oracle(a, b), 1e-12);
  }
  const std::vector<Assignment> one{assignment_from_state(0, 2)};
  EXPECT_THROW(metric_mmd_linear(one, one), EmptyBatch);
  EXPECT_THROW(metric_mmd_linear_biased({}, one), EmptyBatch);
}

TEST(Metrics, MmdExamples) {
  const std::vector<Assignment> plus(4, assignment_from_state(7, 3)), minus(4, assignment_from_state(0, 3));
  EXPECT_NEAR(metric_mmd_linear_biased(plus, minus), 12.0, 1e-12);
  EXPECT_NEAR(metric_mmd_linear(plus, minus), 12.0, 1e-12);
  EXPECT_NEAR(metric_mmd_linear(plus, plus), 0.0, 1e-12);
  // Two independent uniform batches: unbiased estimate centred on zero.
  IsingModel im;
  im.num_vars = 8;
  const auto t = enumerate_exact(im.to_energy_model());
  const auto a = exact_sample(t, 5000, 1), b = exact_sample(t, 5000, 2);
  EXPECT_NEAR(metric_mmd_linear(a, b), 0.0, 0.01);
}

TEST(Metrics, NllAndTotalVariation) {
  Rng rng(2);
  const auto g = make_cycle(5);
  const auto m = random_ising(g, 0.5, rng).to_energy_model();
  const auto t = enumerate_exact(m);
  const auto imap = sample_imap(g, 3);
  TabularSampler exact{TabularNet(imap, false)};
  set_exact_conditionals(exact, imap, t);
  const auto xs = exact_sample(t, 50, 4);
  double nll = 0.0;
  for (const auto& x : xs) nll -= std::log(t.prob(x));
  EXPECT_NEAR(metric_nll(exact, imap, xs), nll / 50, 1e-9);
  EXPECT_NEAR(total_variation(exact, imap, t), 0.0, 1e-9);
  TabularSampler uniform{TabularNet(imap, false)};
  double tv = 0.0;
  for (double p : t.full_probs()) tv += std::abs(p - 1.0 / 32);
  EXPECT_NEAR(total_variation(uniform, imap, t), tv / 2, 1e-12);
  EXPECT_THROW(metric_nll(exact, imap, std::vector<Assignment>{}), EmptyBatch);
  EXPECT_THROW(metric_nll(exact, imap, std::vector<Assignment>{Assignment(5)}), PartialAssignment);
}

TEST(TrainDelta, TwoVariableIsingConverges) {
  IsingModel im;
  im.num_vars = 2;
  im.sigma = 1.0;
  im.couplings = {{{0, 1}, 0.5}};
  im.bias = {0.3, -0.2};
  const auto m = im.to_energy_model();
  const auto t = enumerate_exact(m);
  for (bool sub : {true, false}) {
    auto s = small_mae(2);
    auto cfg = small_config(1000);
    cfg.sub_dags = sub;
    const auto res = train_delta(cfg, m, s);
    ASSERT_EQ(res.rows.size(), 1u);
    EXPECT_LT(res.rows.back().loss, 1e-3);
    EXPECT_LT(total_variation(s, sample_imap(m.graph(), 5), t), 0.02) << (sub ? "sub" : "full");
  }
}

TEST(TrainDelta, EvaluationRowsAndMetrics) {
  Rng rng(3);
  const auto m = random_ising(make_chain(4), 0.3, rng).to_energy_model();
  const auto t = enumerate_exact(m);
  auto s = small_mae(4);
  auto cfg = small_config(30);
  cfg.eval_period = 10;
  const EvalSet ev{exact_sample(t, 300, 5)};
  const auto res = train_delta(cfg, m, s, ev);
  ASSERT_EQ(res.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(res.rows[i].step, static_cast<long>(10 * (i + 1)));
    EXPECT_TRUE(std::isfinite(res.rows[i].nll));
    EXPECT_TRUE(std::isfinite(res.rows[i].mmd));
  }
  EXPECT_LE(res.rows[0].seconds, res.rows[2].seconds);
}

TEST(Evaluator, UsesTheTrainersChordalCompletion) {
  // Non-chordal lattices admit several completions; the evaluation I-map must
  // come from the one the sampler was trained on.
  const auto g = make_lattice(4, 4);
  auto s = small_mae(16);
  const EvalSet none;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = small_config(1);
    cfg.seed = seed;
    DeltaTrainer<Mae> tr(cfg, s, g);
    const Evaluator<Mae> ev(cfg, s, g, none);
    EXPECT_EQ(underlying_graph(ev.imap().dag()), tr.imaps().chordal()) << "seed " << seed;
  }
}

TEST(TrainDelta, SubModeInstantiatesOnlyTheLocalPiece) {
  Rng rng(4);
  const auto g = make_lattice(4, 4);
  const auto m = random_ising(g, 0.2, rng).to_energy_model();
  auto cfg = small_config(3);
  cfg.sub_dags_per_var = 1;
  auto s = small_mae(16);
  const auto sub = train_delta(cfg, m, s);
  EXPECT_LE(sub.max_instantiated, 1 + max_degree(min_fill_chordalize(g, cfg.seed)));
  EXPECT_LT(sub.max_instantiated, 16);
  cfg.sub_dags = false;
  const auto full = train_delta(cfg, m, s);
  EXPECT_EQ(full.max_instantiated, 16);
}

TEST(TrainDelta, StochasticChildrenPathRuns) {
  Rng rng(5);
  const auto g = make_complete(5);
  const auto m = random_ising(g, 0.3, rng).to_energy_model();
  auto cfg = small_config(200);
  cfg.sub_dags = false;
  cfg.stochastic_children_threshold = 1;
  auto s = small_mae(5);
  const auto t = enumerate_exact(m);
  const double before = total_variation(s, sample_imap(g, 1), t);
  train_delta(cfg, m, s);
  EXPECT_LT(total_variation(s, sample_imap(g, 1), t), before);
}

TEST(TrainDelta, ErrorsSurface) {
  Rng rng(6);
  auto m = random_ising(make_chain(3), 0.3, rng).to_energy_model();
  auto s = small_mae(3);
  auto cfg = small_config(2);
  cfg.objective = Objective::Tb;
  EXPECT_THROW(train_delta(cfg, m, s), ConfigError);
  cfg.objective = Objective::Delta;
  m.params()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_delta(cfg, m, s), NonFiniteLoss);
}

TEST(TrainGfn, TrajectoryBalanceLearnsLogZ) {
  Rng rng(7);
  const auto m = random_ising(make_cycle(4), 0.4, rng).to_energy_model();
  const auto t = enumerate_exact(m);
  auto s = small_mae(4);
  auto cfg = small_config(1500);
  cfg.objective = Objective::Tb;
  cfg.lr = 1e-2;
  cfg.lr_multiplier = 10;
  const auto res = train_gfn(cfg, m, s);
  EXPECT_NEAR(res.log_z, t.log_z(), 0.05);
  EXPECT_EQ(res.max_instantiated, 4);
}

TEST(TrainGfn, FlowObjectivesReduceTheLoss) {
  Rng rng(8);
  const auto m = random_ising(make_chain(4), 0.4, rng).to_energy_model();
  for (auto o : {Objective::Db, Objective::FlDb, Objective::SubTb, Objective::FlSubTb}) {
    auto s = small_mae(4, true);
    auto cfg = small_config(300);
    cfg.objective = o;
    cfg.partial_reward = PartialRewardMode::CompletedFactors;
    GfnTrainer<Mae> tr(cfg, s, m.graph());
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 20; ++k) first += tr.step(m) / 20;
    for (int k = 20; k < 280; ++k) tr.step(m);
    for (int k = 280; k < 300; ++k) last += tr.step(m) / 20;
    EXPECT_LT(last, first) << objective_name(o);
  }
  auto no_head = small_mae(4);
  auto cfg = small_config(2);
  cfg.objective = Objective::Db;
  EXPECT_THROW(GfnTrainer<Mae>(cfg, no_head, m.graph()), ConfigError);
  cfg.objective = Objective::Delta;
  EXPECT_THROW(GfnTrainer<Mae>(cfg, no_head, m.graph()), ConfigError);
}

TEST(TrainEbm, ExactNegativesRecoverCouplings) {
  Rng rng(9);
  const auto g = make_cycle(4);
  const auto truth = random_ising(g, 0.5, rng).to_energy_model();
  const auto data = exact_sample(enumerate_exact(truth), 20000, 10);
  IsingModel zero;
  zero.num_vars = 4;
  for (auto e : g.edges()) zero.couplings.emplace_back(e, 0.0);
  auto m = zero.to_energy_model();
  m = EnergyModel(m);
  // sigma is folded into the learned parameters, so match the target's scale.
  IsingModel scaled = zero;
  scaled.sigma = 0.5;
  m = scaled.to_energy_model();
  auto s = small_mae(4);
  auto cfg = small_config(1);
  const EbmConfig ecfg{.rounds = 10, .q_steps = 0, .p_steps = 50, .batch_size = 2000, .lr = 5e-2,
                       .negatives = Negatives::Exact};
  train_ebm(cfg, m, s, data, ecfg);
  for (std::size_t i = 0; i < m.params().size(); ++i) EXPECT_NEAR(m.params()[i], truth.params()[i], 0.1) << i;
}

TEST(TrainEbm, SamplerNegativesMoveTowardTheData) {
  Rng rng(10);
  const auto g = make_chain(3);
  const auto truth = random_ising(g, 0.5, rng).to_energy_model();
  const auto data = exact_sample(enumerate_exact(truth), 5000, 11);
  IsingModel zero;
  zero.num_vars = 3;
  zero.sigma = 0.5;
  for (auto e : g.edges()) zero.couplings.emplace_back(e, 0.0);
  auto m = zero.to_energy_model();
  auto s = small_mae(3);
  auto cfg = small_config(1);
  const EbmConfig ecfg{.rounds = 20, .q_steps = 50, .p_steps = 5, .batch_size = 500, .lr = 5e-2};
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < m.params().size(); ++i) before += std::abs(m.params()[i] - truth.params()[i]);
  train_ebm(cfg, m, s, data, ecfg);
  for (std::size_t i = 0; i < m.params().size(); ++i) after += std::abs(m.params()[i] - truth.params()[i]);
  EXPECT_LT(after, 0.5 * before);
  EXPECT_THROW(train_ebm(cfg, m, s, std::vector<Assignment>{}, ecfg), EmptyDataset);
}

TEST(Em, DataLogLikelihoodMatchesMarginalOracle) {
  Rng rng(11);
  const auto p = make_bayes_net({{}, {0}, {0}, {1, 2}}, &rng);
  const auto t = enumerate_exact(p);
  const std::vector<int> latent{0};
  const std::vector<int> obs{1, 2, 3};
  const auto table = t.marginal_table(obs);
  std::vector<Assignment> data;
  double expect = 0.0;
  for (std::uint64_t c = 0; c < 8; ++c) {
    Assignment x(4);
    for (std::size_t i = 0; i < 3; ++i) x.set(obs[i], (c >> i & 1U) ? 1 : -1);
    data.push_back(x);
    expect += std::log(table[c]) / 8;
  }
  EXPECT_NEAR(data_log_likelihood(p, latent, data), expect, 1e-12);
}

TEST(Em, ExactEmIncreasesLikelihood) {
  Rng rng(12);
  const std::vector<std::vector<int>> parents{{}, {0}, {0}, {0, 1}};
  const auto truth = make_bayes_net(parents, &rng, 2.0);
  std::vector<int> latent{0};
  auto data = exact_sample(enumerate_exact(truth), 300, 13);
  for (auto& x : data) x.clear(0);
  Rng init(14);
  auto p = make_bayes_net(parents, &init, 0.1);
  const auto res = train_em_exact(p, latent, data, EmConfig{.rounds = 15, .m_steps = 20});
  ASSERT_EQ(res.log_likelihood.size(), 15u);
  EXPECT_GT(res.log_likelihood.back(), res.log_likelihood.front());
  for (std::size_t r = 1; r < res.log_likelihood.size(); ++r)
    EXPECT_GE(res.log_likelihood[r], res.log_likelihood[r - 1] - 1e-3);
}

TEST(Em, SamplerEmTracksExactPosterior) {
  Rng rng(15);
  const std::vector<std::vector<int>> parents{{}, {}, {0, 1}, {0}, {1}};
  const auto truth = make_bayes_net(parents, &rng, 1.5);
  const std::vector<int> latent{0, 1};
  const std::vector<int> obs{2, 3, 4};
  auto data = exact_sample(enumerate_exact(truth), 200, 16);
  for (auto& x : data)
    for (int h : latent) x.clear(h);
  Rng init(17);
  auto p = make_bayes_net(parents, &init, 0.1);
  auto q = make_mae_sampler(MaeConfig{5, 3, 16, 2}, 18);
  q.set_conditioning(obs);
  auto cfg = small_config(1);
  const EmConfig ecfg{.rounds = 8, .e_steps = 60, .m_steps = 10, .completions = 8, .lr = 5e-2};
  const auto res = train_em(cfg, p, latent, q, data, ecfg);
  EXPECT_GT(res.log_likelihood.back(), res.log_likelihood.front());
  DeltaTrainer<Mae> probe(cfg, q, p.graph().induced(latent), latent);
  const Imap imap = probe.sample_full();
  double tv = 0.0;
  for (std::size_t i = 0; i < 20; ++i) tv += posterior_tv(q, imap, p, latent, data[i]) / 20;
  EXPECT_LT(tv, 0.15);
}

TEST(Em, InputChecks) {
  Rng rng(19);
  auto p = make_bayes_net({{}, {0}}, &rng);
  auto q = small_mae(2);
  const auto cfg = small_config(1);
  std::vector<Assignment> data{assignment_from_state(1, 2)};
  const std::vector<int> all{0, 1}, one{0};
  EXPECT_THROW(train_em(cfg, p, all, q, data, {}), LatentCoversAll);
  EXPECT_THROW(train_em(cfg, p, one, q, std::vector<Assignment>{}, {}), EmptyDataset);
  EXPECT_THROW(train_em(cfg, p, one, q, data, {}), ConfigError);  // sampler is not conditioned
  auto ising = random_ising(make_chain(2), 0.3, rng).to_energy_model();
  EXPECT_THROW(train_em(cfg, ising, one, q, data, {}), ConfigError);
  // No latent variables: plain maximum likelihood.
  const auto ml = train_em(cfg, p, std::vector<int>{}, q, data, EmConfig{.rounds = 3});
  EXPECT_GT(ml.log_likelihood.back(), ml.log_likelihood.front());
}
