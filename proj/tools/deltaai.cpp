// Command-line front end. Exit codes: 0 success, 2 configuration or input
// error, 3 non-finite loss, 1 anything else.

#include <deltaai/io.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace deltaai;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  return os;
}

// Writes to `path`, or stdout when it is empty.
template <class F>
void with_output(const std::string& path, F&& f) {
  if (path.empty()) {
    f(std::cout);
  } else {
    auto os = open_out(path);
    f(os);
  }
}

std::vector<Assignment> load_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  return read_samples(is);
}

MaeSampler load_sampler(const std::string& path, Adam* adam = nullptr, const AdamConfig& ac = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  return load_checkpoint(is, adam, ac);
}

// Reference samples: exact when the state space can be enumerated, Gibbs otherwise.
std::vector<Assignment> reference_samples(const EnergyModel& m, std::size_t n, long gibbs_steps, std::uint64_t seed) {
  if (m.num_vars() <= ExactTable::kMaxVars) return exact_sample(enumerate_exact(m), n, seed);
  return gibbs_chain(m, n, gibbs_steps, {}, seed);
}

Imap imap_for(const EnergyModel& m, std::uint64_t completion_seed, std::uint64_t imap_seed) {
  ImapSampler imaps(m.graph(), completion_seed);
  Rng rng(imap_seed);
  return imaps.full(rng);
}

// ---------------------------------------------------------------------------

struct ChordalizeArgs {
  std::string graph;
  std::uint64_t seed = 0;
};

void run_chordalize(const ChordalizeArgs& a) {
  const auto g = read_edge_list(std::filesystem::path(a.graph));
  ImapSampler imaps(g, a.seed);
  Rng rng(a.seed);
  const Imap imap = imaps.full(rng);
  std::cout << "# fill edges\n";
  for (auto [u, v] : imaps.fill_edges()) std::cout << "fill " << u << ' ' << v << '\n';
  std::cout << "# p-map arcs (parent child)\n";
  for (auto [u, v] : imap.dag().arcs) std::cout << "arc " << u << ' ' << v << '\n';
}

struct TrainArgs {
  std::string model, config, checkpoint, metrics, resume;
  std::optional<std::uint64_t> seed;
  std::size_t reference = 10000;
  long gibbs_steps = 1000;
};

void run_train(const TrainArgs& a) {
  auto cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const auto m = load_model(a.model);
  Adam resumed;
  const bool flow = needs_flow_head(cfg.objective);
  auto s = a.resume.empty()
               ? make_mae_sampler(MaeConfig{m.num_vars(), 0, cfg.width, cfg.depth, flow, cfg.activation}, cfg.seed)
               : load_sampler(a.resume, &resumed, adam_config(cfg));
  if (s.num_vars() != m.num_vars()) throw ConfigError("checkpoint and model disagree on the number of variables");
  if (flow && s.net().flow_output() < 0) throw ConfigError("checkpoint has no flow head for this objective");
  EvalSet ev;
  if (a.reference > 0) ev.reference = reference_samples(m, a.reference, a.gibbs_steps, cfg.seed + 99);
  const auto res = cfg.objective == Objective::Delta ? train_delta(cfg, m, s, ev) : train_gfn(cfg, m, s, ev);
  with_output(a.metrics, [&](std::ostream& os) { write_metrics_csv(os, res.rows); });
  if (cfg.objective == Objective::Tb) std::cerr << "log Z estimate " << res.log_z << '\n';
  if (!a.checkpoint.empty()) {
    std::ofstream os(a.checkpoint, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + a.checkpoint);
    save_checkpoint(os, s);
  }
}

struct SampleArgs {
  std::string checkpoint, model, out;
  std::uint64_t imap_seed = 0, seed = 0;
  std::optional<std::uint64_t> completion_seed;
  std::size_t n = 1;
};

void run_sample(const SampleArgs& a) {
  const auto s = load_sampler(a.checkpoint);
  const auto m = load_model(a.model);
  if (s.num_vars() != m.num_vars()) throw ConfigError("checkpoint and model disagree on the number of variables");
  const Imap imap = imap_for(m, a.completion_seed.value_or(a.imap_seed), a.imap_seed);
  Rng rng(a.seed);
  const auto batch = s.ancestral_sample(imap, Policy::on_policy(), a.n, rng);
  with_output(a.out, [&](std::ostream& os) { write_samples(os, batch.samples); });
}

struct EvalArgs {
  std::string checkpoint, model, samples;
  std::uint64_t completion_seed = 0, imap_seed = 7, seed = 0;
  std::size_t n = 10000;
  long gibbs_steps = 1000;
};

void run_eval(const EvalArgs& a) {
  const auto s = load_sampler(a.checkpoint);
  const auto m = load_model(a.model);
  if (s.num_vars() != m.num_vars()) throw ConfigError("checkpoint and model disagree on the number of variables");
  const auto ref = a.samples.empty() ? reference_samples(m, a.n, a.gibbs_steps, a.seed) : load_samples(a.samples);
  const Imap imap = imap_for(m, a.completion_seed, a.imap_seed);
  Rng rng(a.seed + 1);
  const auto q = s.ancestral_sample(imap, Policy::on_policy(), ref.size(), rng);
  std::cout << "nll " << metric_nll(s, imap, ref) << '\n' << "mmd " << metric_mmd_linear(q.samples, ref) << '\n';
  if (m.num_vars() <= ExactTable::kMaxVars) {
    const auto t = enumerate_exact(m);
    std::cout << "entropy " << t.entropy() << '\n' << "tv " << total_variation(s, imap, t) << '\n';
  }
}

struct GibbsArgs {
  std::string model, out;
  std::size_t chains = 1000;
  long steps = 100, anneal_steps = 0;
  double start_beta = 1.0;
  std::uint64_t seed = 0;
};

void run_gibbs(const GibbsArgs& a) {
  const auto m = load_model(a.model);
  const auto xs = gibbs_chain(m, a.chains, a.steps, AnnealSchedule{a.start_beta, a.anneal_steps}, a.seed);
  with_output(a.out, [&](std::ostream& os) { write_samples(os, xs); });
}

struct OracleArgs {
  std::string model, out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

void run_oracle(const OracleArgs& a) {
  const auto m = load_model(a.model);
  const auto t = enumerate_exact(m);
  std::cout << "log_z " << t.log_z() << '\n' << "entropy " << t.entropy() << '\n';
  if (a.n > 0) {
    const auto xs = exact_sample(t, a.n, a.seed);
    with_output(a.out, [&](std::ostream& os) { write_samples(os, xs); });
  }
}

struct EmArgs {
  std::string model, data, config, out;
  std::vector<int> latent;
  std::optional<std::uint64_t> seed;
  EmConfig ecfg;
  bool exact = false;
};

void run_em(const EmArgs& a) {
  auto cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  auto p = load_model(a.model);
  auto data = load_samples(a.data);
  for (auto& x : data) {
    if (x.num_vars() != p.num_vars()) throw ConfigError("data rows and model disagree on the number of variables");
    for (int h : a.latent) {
      if (h < 0 || h >= p.num_vars()) throw ConfigError("latent index out of range");
      x.clear(h);
    }
  }
  EmResult res;
  if (a.exact) {
    res = train_em_exact(p, a.latent, data, a.ecfg);
  } else {
    const auto obs = detail::observed_of(p.num_vars(), a.latent);
    auto q = make_mae_sampler(MaeConfig{p.num_vars(), static_cast<int>(obs.size()), cfg.width, cfg.depth, false,
                                        cfg.activation},
                              cfg.seed);
    if (!a.latent.empty()) q.set_conditioning(obs);
    res = train_em(cfg, p, a.latent, q, data, a.ecfg);
  }
  std::cout << "round,log_likelihood\n";
  for (std::size_t r = 0; r < res.log_likelihood.size(); ++r) std::cout << r + 1 << ',' << res.log_likelihood[r] << '\n';
  if (!a.out.empty()) save_model(a.out, p, cfg.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local log-ratio training of amortized samplers for discrete graphical models"};
  app.require_subcommand(1);

  ChordalizeArgs ca;
  auto* chord = app.add_subcommand("chordalize", "Print min-fill edges and a sampled P-map");
  chord->add_option("--graph", ca.graph, "Edge-list file")->required();
  chord->add_option("--seed", ca.seed, "Completion and P-map seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a sampler and write per-evaluation metrics as CSV");
  train->add_option("--model", ta.model, "Model JSON")->required();
  train->add_option("--config", ta.config, "Training config JSON");
  train->add_option("--seed", ta.seed, "Overrides the config seed");
  train->add_option("--checkpoint", ta.checkpoint, "Where to write the trained sampler");
  train->add_option("--resume", ta.resume, "Start from this checkpoint");
  train->add_option("--metrics", ta.metrics, "Metrics CSV (default stdout)");
  train->add_option("--reference", ta.reference, "Reference samples for NLL and MMD (0 disables)");
  train->add_option("--gibbs-steps", ta.gibbs_steps, "Sweeps per reference chain when enumeration is too large");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Draw samples from a trained sampler");
  sample->add_option("--checkpoint", sa.checkpoint, "Sampler checkpoint")->required();
  sample->add_option("--model", sa.model, "Model JSON (supplies the graph)")->required();
  sample->add_option("--imap-seed", sa.imap_seed, "P-map seed");
  sample->add_option("--completion-seed", sa.completion_seed, "Chordal completion seed (default: --imap-seed)");
  sample->add_option("--n", sa.n, "Number of samples");
  sample->add_option("--seed", sa.seed, "Sampling seed");
  sample->add_option("--out", sa.out, "Output file (default stdout)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Report NLL and MMD of a sampler against reference samples");
  eval->add_option("--checkpoint", ea.checkpoint, "Sampler checkpoint")->required();
  eval->add_option("--model", ea.model, "Model JSON")->required();
  eval->add_option("--samples", ea.samples, "Reference samples (default: exact or Gibbs)");
  eval->add_option("--n", ea.n, "Reference sample count when generated");
  eval->add_option("--completion-seed", ea.completion_seed, "Chordal completion seed (the training seed)");
  eval->add_option("--imap-seed", ea.imap_seed, "P-map seed");
  eval->add_option("--seed", ea.seed, "Sampling seed");
  eval->add_option("--gibbs-steps", ea.gibbs_steps, "Sweeps per reference chain when enumeration is too large");

  GibbsArgs ga;
  auto* gibbs = app.add_subcommand("gibbs", "Run independent Gibbs chains and dump their final states");
  gibbs->add_option("--model", ga.model, "Model JSON")->required();
  gibbs->add_option("--chains", ga.chains, "Number of chains");
  gibbs->add_option("--steps", ga.steps, "Sweeps per chain");
  gibbs->add_option("--start-beta", ga.start_beta, "Initial inverse temperature");
  gibbs->add_option("--anneal-steps", ga.anneal_steps, "Sweeps over which beta ramps to 1");
  gibbs->add_option("--seed", ga.seed, "Seed");
  gibbs->add_option("--out", ga.out, "Output file (default stdout)");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "Enumerate log Z and entropy; optionally draw exact samples");
  oracle->add_option("--model", oa.model, "Model JSON")->required();
  oracle->add_option("--n", oa.n, "Exact samples to draw");
  oracle->add_option("--seed", oa.seed, "Sampling seed");
  oracle->add_option("--out", oa.out, "Sample file (default stdout)");

  EmArgs ma;
  auto* em = app.add_subcommand("em", "Fit a Bayesian network with latent variables by variational EM");
  em->add_option("--model", ma.model, "Initial Bayesian-network model JSON")->required();
  em->add_option("--data", ma.data, "Sample file; latent columns are ignored")->required();
  em->add_option("--latent", ma.latent, "Latent variable indices")->delimiter(',');
  em->add_option("--config", ma.config, "Sampler training config JSON");
  em->add_option("--seed", ma.seed, "Overrides the config seed");
  em->add_option("--rounds", ma.ecfg.rounds, "EM rounds");
  em->add_option("--e-steps", ma.ecfg.e_steps, "Sampler updates per round");
  em->add_option("--m-steps", ma.ecfg.m_steps, "Model updates per round");
  em->add_option("--completions", ma.ecfg.completions, "Posterior samples per row in the M-step");
  em->add_option("--lr", ma.ecfg.lr, "Model learning rate");
  em->add_flag("--exact", ma.exact, "Use the enumerated posterior instead of the sampler");
  em->add_option("--out", ma.out, "Where to write the fitted model");

  try {
    app.parse(argc, argv);
    if (*chord) run_chordalize(ca);
    if (*train) run_train(ta);
    if (*sample) run_sample(sa);
    if (*eval) run_eval(ea);
    if (*gibbs) run_gibbs(ga);
    if (*oracle) run_oracle(oa);
    if (*em) run_em(ma);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
