#include <deltaai/io.hpp>

#include <gtest/gtest.h>

using namespace deltaai;

namespace {

std::filesystem::path scratch_dir() {
  auto d = std::filesystem::temp_directory_path() / ("deltaai_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                     ::testing::UnitTest::GetInstance()->current_test_info()->name());
  std::filesystem::create_directories(d);
  return d;
}

UndirectedGraph parse(const std::string& text) {
  std::istringstream is(text);
  return read_edge_list(is);
}

}  // namespace

TEST(EdgeList, ParsesCommentsAndBlankLines) {
  const auto g = parse("# a triangle\nn 4\n0 1\n\n1 2 # inline\n2 0\n");
  EXPECT_EQ(g.num_vars(), 4);
  EXPECT_EQ(g.edges().size(), 3u);
  EXPECT_TRUE(g.adjacent(0, 2));
  EXPECT_TRUE(g.neighbors(3).empty());
}

TEST(EdgeList, RoundTrip) {
  const auto g = make_lattice(3, 4);
  std::ostringstream os;
  write_edge_list(os, g);
  EXPECT_EQ(parse(os.str()), g);
}

TEST(EdgeList, FormatErrors) {
  EXPECT_THROW(parse(""), FormatError);
  EXPECT_THROW(parse("0 1\n"), FormatError);
  EXPECT_THROW(parse("n 3\n0\n"), FormatError);
  EXPECT_THROW(parse("n 3\n0 3\n"), FormatError);
  EXPECT_THROW(parse("n 3\n1 1\n"), FormatError);
  EXPECT_THROW(parse("n 3\n0 1 2\n"), FormatError);
  EXPECT_THROW(parse("n 3\nx 1\n"), FormatError);
  EXPECT_THROW(read_edge_list(std::filesystem::path("/nonexistent/graph.txt")), FormatError);
}

TEST(Sidecar, HeaderLayoutAndRoundTrip) {
  std::ostringstream os;
  const std::vector<double> p{0.5, -1.25, 3.0};
  write_param_sidecar(os, p);
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 16u + 3 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "DPGM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3u);  // count, little-endian
  std::istringstream is(bytes);
  EXPECT_EQ(read_param_sidecar(is), p);
  std::istringstream bad("XXXX");
  EXPECT_THROW(read_param_sidecar(bad), FormatError);
  std::istringstream cut(bytes.substr(0, 20));
  EXPECT_THROW(read_param_sidecar(cut), FormatError);
}

TEST(ModelFile, IsingRoundTrip) {
  Rng rng(1);
  const auto m = random_ising(make_ladder(8), 0.2, rng).to_energy_model();
  const auto path = scratch_dir() / "ising.json";
  save_model(path, m, 7);
  const auto back = load_model(path);
  EXPECT_EQ(back.kind(), ModelKind::Ising);
  EXPECT_EQ(back.sigma(), 0.2);
  ASSERT_EQ(back.params().size(), m.params().size());
  for (std::uint64_t s = 0; s < 256; s += 17) {
    const auto x = assignment_from_state(s, 8);
    EXPECT_DOUBLE_EQ(back.energy(x), m.energy(x));
  }
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".bin"));
}

TEST(ModelFile, FactorGraphAndBayesNetUseSidecar) {
  Rng rng(2);
  const auto dir = scratch_dir();
  for (const auto& m : {random_factor_lattice(3, 3, 0.5, rng), make_bayes_net({{}, {0}, {0, 1}}, &rng)}) {
    const auto path = dir / (std::string(model_kind_name(m.kind())) + ".json");
    save_model(path, m);
    EXPECT_TRUE(std::filesystem::exists(path.string() + ".bin"));
    const auto back = load_model(path);
    EXPECT_EQ(back.kind(), m.kind());
    ASSERT_EQ(back.num_factors(), m.num_factors());
    // Parameters pass through float32.
    for (std::size_t i = 0; i < m.params().size(); ++i)
      EXPECT_EQ(back.params()[i], static_cast<double>(static_cast<float>(m.params()[i])));
  }
}

TEST(ModelFile, MalformedInputs) {
  const auto dir = scratch_dir();
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  };
  EXPECT_THROW(load_model(write("a.json", "{")), FormatError);
  EXPECT_THROW(load_model(write("b.json", R"({"kind":"potts","num_vars":2})")), FormatError);
  EXPECT_THROW(load_model(write("c.json", R"({"kind":"ising","num_vars":2,"edges":[[0,1,1]],"bias":[0]})")),
               FormatError);
  EXPECT_THROW(load_model(write("d.json", R"({"kind":"factor_graph","num_vars":2,"scopes":[[0,1]],"params":"none.bin"})")),
               FormatError);
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  auto s = make_mae_sampler(MaeConfig{5, 2, 8, 2, true, Activation::Elu, 1e-4}, 3);
  s.root_logits()[2] = 0.75;
  Adam adam(AdamConfig{.lr = 0.01});
  adam.add_group(s.net().num_params());
  adam.add_group(5, 100.0);
  auto g = s.make_gradient();
  g.net.assign(g.net.size(), 0.1);
  g.root.assign(5, -0.2);
  const ParamBlock blocks[] = {{s.net().params(), g.net}, {s.root_logits(), g.root}};
  adam.step(blocks);
  adam.step(blocks);

  std::stringstream buf;
  save_checkpoint(buf, s, &adam);
  EXPECT_EQ(buf.str().substr(0, 4), "DMAE");
  Adam restored;
  const auto back = load_checkpoint(buf, &restored, AdamConfig{.lr = 0.01});
  const auto& c = back.net().config();
  EXPECT_EQ(c.num_vars, 5);
  EXPECT_EQ(c.cond_width, 2);
  EXPECT_TRUE(c.flow_head);
  EXPECT_EQ(c.activation, Activation::Elu);
  EXPECT_EQ(c.ln_eps, 1e-4);
  EXPECT_TRUE(std::equal(back.net().params().begin(), back.net().params().end(), s.net().params().begin()));
  EXPECT_TRUE(std::equal(back.root_logits().begin(), back.root_logits().end(), s.root_logits().begin()));
  EXPECT_EQ(restored.steps(), 2);
  ASSERT_EQ(restored.groups().size(), 2u);
  EXPECT_EQ(restored.groups()[1].lr_scale, 100.0);
  EXPECT_EQ(restored.groups()[0].v, adam.groups()[0].v);

  // Continuing from the restored state matches continuing from the original.
  auto s2 = back;
  const ParamBlock b2[] = {{s2.net().params(), g.net}, {s2.root_logits(), g.root}};
  adam.step(blocks);
  restored.step(b2);
  EXPECT_TRUE(std::equal(s2.net().params().begin(), s2.net().params().end(), s.net().params().begin()));
}

TEST(Checkpoint, WithoutOptimizerAndCorrupt) {
  const auto s = make_mae_sampler(MaeConfig{3, 0, 4, 1}, 1);
  std::stringstream buf;
  save_checkpoint(buf, s);
  Adam adam;
  const auto back = load_checkpoint(buf, &adam);
  EXPECT_EQ(adam.groups().size(), 0u);
  EXPECT_EQ(back.net().num_params(), s.net().num_params());
  std::string bytes;
  {
    std::stringstream b;
    save_checkpoint(b, s);
    bytes = b.str();
  }
  std::istringstream bad_magic("DMAX" + bytes.substr(4));
  EXPECT_THROW(load_checkpoint(bad_magic), FormatError);
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), FormatError);
}

TEST(Samples, RoundTripAndErrors) {
  std::vector<Assignment> xs{assignment_from_state(5, 4), assignment_from_state(10, 4)};
  std::stringstream buf;
  write_samples(buf, xs);
  EXPECT_EQ(buf.str(), "1 -1 1 -1\n-1 1 -1 1\n");
  const auto back = read_samples(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(state_from_assignment(back[1]), 10u);
  std::istringstream zero("1 0 1\n");
  EXPECT_THROW(read_samples(zero), FormatError);
  std::istringstream ragged("1 1\n1 1 1\n");
  EXPECT_THROW(read_samples(ragged), FormatError);
  std::istringstream junk("1 a\n");
  EXPECT_THROW(read_samples(junk), FormatError);
}

TEST(TrainConfigJson, DefaultsOverridesAndErrors) {
  using nlohmann::json;
  const auto d = parse_train_config(json::object());
  EXPECT_EQ(d.objective, Objective::Delta);
  EXPECT_EQ(d.policy.kind, PolicyKind::OnPolicy);
  const auto tb = parse_train_config(json{{"objective", "tb"}});
  EXPECT_EQ(tb.policy.kind, PolicyKind::EpsUniform);
  EXPECT_DOUBLE_EQ(tb.policy.epsilon, 0.1);
  const auto c = parse_train_config(json::parse(R"({
    "objective": "fl-subtb", "total_steps": 50, "policy": {"kind": "tempered", "temperature": 2.0},
    "partial_reward": "completed_factors", "activation": "elu", "seed": 9, "sub_dags": false})"));
  EXPECT_EQ(c.objective, Objective::FlSubTb);
  EXPECT_EQ(c.total_steps, 50);
  EXPECT_EQ(c.policy.kind, PolicyKind::Tempered);
  EXPECT_EQ(c.policy.temperature, 2.0);
  EXPECT_EQ(c.partial_reward, PartialRewardMode::CompletedFactors);
  EXPECT_EQ(c.activation, Activation::Elu);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.sub_dags);
  EXPECT_THROW(parse_train_config(json{{"learning_rate", 1}}), ConfigError);
  EXPECT_THROW(parse_train_config(json{{"total_steps", "many"}}), ConfigError);
  EXPECT_THROW(parse_train_config(json{{"total_steps", 0}}), ConfigError);
  EXPECT_THROW(parse_train_config(json{{"policy", {{"kind", "greedy"}}}}), ConfigError);
  EXPECT_THROW(parse_train_config(json::array()), ConfigError);
  EXPECT_THROW(load_train_config("/nonexistent/cfg.json"), ConfigError);
}
