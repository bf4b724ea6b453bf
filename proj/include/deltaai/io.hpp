#pragma once

// File formats: edge lists, model descriptions with a binary parameter
// sidecar, sampler checkpoints, sample dumps and training configs.

#include <deltaai/harness.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>

namespace deltaai {

// ---------------------------------------------------------------------------
// Edge lists: "n <num_vars>" then one "u v" pair per line; '#' starts a comment.

inline UndirectedGraph read_edge_list(std::istream& is) {
  std::string line;
  int n = -1;
  std::vector<Edge> edges;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (n < 0) {
      if (first != "n" || !(ls >> n) || n < 0) throw FormatError("edge list must start with 'n <num_vars>'");
      continue;
    }
    int u = 0, v = 0;
    try {
      u = std::stoi(first);
    } catch (const std::exception&) {
      throw FormatError("bad vertex on line " + std::to_string(lineno));
    }
    if (!(ls >> v)) throw FormatError("edge on line " + std::to_string(lineno) + " needs two endpoints");
    std::string extra;
    if (ls >> extra) throw FormatError("trailing tokens on line " + std::to_string(lineno));
    if (u < 0 || v < 0 || u >= n || v >= n || u == v)
      throw FormatError("invalid edge on line " + std::to_string(lineno));
    edges.emplace_back(u, v);
  }
  if (n < 0) throw FormatError("empty edge list");
  return UndirectedGraph(n, edges);
}

inline UndirectedGraph read_edge_list(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_edge_list(is);
}

inline void write_edge_list(std::ostream& os, const UndirectedGraph& g) {
  os << "n " << g.num_vars() << '\n';
  for (auto [u, v] : g.edges()) os << u << ' ' << v << '\n';
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers.

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  static_assert(sizeof(T) == sizeof(U));
  const U bits = std::bit_cast<U>(value);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFFU);
  os.write(buf, sizeof(U));
}

template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("unexpected end of binary file");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::string_view(buf, 4) != std::string_view(magic, 4))
    throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameter sidecar: "DPGM", u32 version, u64 count, then count float32 values.

inline constexpr std::uint32_t kSidecarVersion = 1;

inline void write_param_sidecar(std::ostream& os, std::span<const double> params) {
  detail::put_magic(os, "DPGM");
  detail::put_le<std::uint32_t>(os, kSidecarVersion);
  detail::put_le<std::uint64_t>(os, params.size());
  for (double p : params) detail::put_le<float>(os, static_cast<float>(p));
}

inline std::vector<double> read_param_sidecar(std::istream& is) {
  detail::expect_magic(is, "DPGM");
  if (detail::get_le<std::uint32_t>(is) != kSidecarVersion) throw FormatError("unsupported sidecar version");
  const auto count = detail::get_le<std::uint64_t>(is);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(detail::get_le<float>(is));
  return out;
}

// ---------------------------------------------------------------------------
// Model files. Ising models keep couplings and biases inline; the other kinds
// list factor scopes and keep parameters in the sidecar.

inline std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Ising: return "ising";
    case ModelKind::FactorGraph: return "factor_graph";
    case ModelKind::BayesNet: return "bayes_net";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "ising") return ModelKind::Ising;
  if (s == "factor_graph") return ModelKind::FactorGraph;
  if (s == "bayes_net") return ModelKind::BayesNet;
  throw FormatError("unknown model kind: " + std::string(s));
}

inline void save_model(const std::filesystem::path& path, const EnergyModel& m, std::uint64_t seed = 0) {
  nlohmann::json j;
  j["kind"] = model_kind_name(m.kind());
  j["num_vars"] = m.num_vars();
  j["sigma"] = m.sigma();
  j["seed"] = seed;
  if (m.kind() == ModelKind::Ising) {
    auto edges = nlohmann::json::array();
    std::vector<double> bias(static_cast<std::size_t>(m.num_vars()), 0.0);
    for (std::size_t k = 0; k < m.num_factors(); ++k) {
      const auto& f = m.factor(k);
      const double p = m.params()[f.offset];
      if (f.kind == FactorKind::IsingPair)
        edges.push_back({f.scope[0], f.scope[1], p});
      else
        bias[static_cast<std::size_t>(f.scope[0])] = p;
    }
    j["edges"] = edges;
    j["bias"] = bias;
  } else {
    auto scopes = nlohmann::json::array();
    for (std::size_t k = 0; k < m.num_factors(); ++k) scopes.push_back(m.factor(k).scope);
    j["scopes"] = scopes;
    const auto sidecar = path.filename().string() + ".bin";
    j["params"] = sidecar;
    std::ofstream bin(path.parent_path() / sidecar, std::ios::binary);
    if (!bin) throw FormatError("cannot write parameter sidecar");
    write_param_sidecar(bin, m.params());
  }
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline EnergyModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    const auto kind = parse_model_kind(j.at("kind").get<std::string>());
    const int n = j.at("num_vars").get<int>();
    const double sigma = j.value("sigma", 1.0);
    if (kind == ModelKind::Ising) {
      IsingModel im;
      im.num_vars = n;
      im.sigma = sigma;
      for (const auto& e : j.at("edges")) im.couplings.push_back({{e.at(0).get<int>(), e.at(1).get<int>()}, e.at(2).get<double>()});
      im.bias = j.value("bias", std::vector<double>(static_cast<std::size_t>(n), 0.0));
      if (im.bias.size() != static_cast<std::size_t>(n)) throw FormatError("bias length differs from num_vars");
      return im.to_energy_model();
    }
    std::ifstream bin(path.parent_path() / j.at("params").get<std::string>(), std::ios::binary);
    if (!bin) throw FormatError("cannot open parameter sidecar");
    const auto params = read_param_sidecar(bin);
    EnergyModel m(kind, n, sigma);
    std::size_t off = 0;
    const FactorKind fk = kind == ModelKind::BayesNet ? FactorKind::LogisticCpt : FactorKind::Mlp;
    for (const auto& s : j.at("scopes")) {
      auto scope = s.get<std::vector<int>>();
      const std::size_t count = fk == FactorKind::Mlp ? mlp_param_count(scope.size()) : std::size_t{1} << (scope.size() - 1);
      if (off + count > params.size()) throw FormatError("sidecar holds too few parameters");
      m.add_factor(fk, std::move(scope), std::span<const double>(params).subspan(off, count));
      off += count;
    }
    if (off != params.size()) throw FormatError("sidecar holds too many parameters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "DMAE", u32 version, u32 |V|, u32 width, u32 layers,
// u32 float width (bytes), u32 cond width, u32 flags, f64 layer-norm eps,
// u64 parameter count,
// then network parameters and root logits, then the optimizer state.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& os, const MaeSampler& s, const Adam* adam = nullptr) {
  const auto& c = s.net().config();
  detail::put_magic(os, "DMAE");
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_vars));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.width));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.depth));
  detail::put_le<std::uint32_t>(os, 8);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.cond_width));
  const std::uint32_t flags = (c.flow_head ? 1U : 0U) | (c.activation == Activation::Elu ? 2U : 0U);
  detail::put_le<std::uint32_t>(os, flags);
  detail::put_le<double>(os, c.ln_eps);
  detail::put_le<std::uint64_t>(os, s.net().num_params() + s.root_logits().size());
  for (double p : s.net().params()) detail::put_le<double>(os, p);
  for (double p : s.root_logits()) detail::put_le<double>(os, p);
  if (!adam) {
    detail::put_le<std::uint32_t>(os, 0);
    return;
  }
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(adam->groups().size()));
  detail::put_le<std::int64_t>(os, adam->steps());
  for (const auto& g : adam->groups()) {
    detail::put_le<double>(os, g.lr_scale);
    detail::put_le<std::uint64_t>(os, g.m.size());
    for (double v : g.m) detail::put_le<double>(os, v);
    for (double v : g.v) detail::put_le<double>(os, v);
  }
}

/// Restores the network, root logits and (if present) optimizer moments. The
/// optimizer's schedule settings are not stored and come from `adam_cfg`.
inline MaeSampler load_checkpoint(std::istream& is, Adam* adam = nullptr, const AdamConfig& adam_cfg = {}) {
  detail::expect_magic(is, "DMAE");
  if (detail::get_le<std::uint32_t>(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  MaeConfig c;
  c.num_vars = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.width = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.depth = static_cast<int>(detail::get_le<std::uint32_t>(is));
  if (detail::get_le<std::uint32_t>(is) != 8) throw FormatError("only 64-bit checkpoints are supported");
  c.cond_width = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const auto flags = detail::get_le<std::uint32_t>(is);
  c.flow_head = (flags & 1U) != 0;
  c.activation = (flags & 2U) ? Activation::Elu : Activation::Relu;
  c.ln_eps = detail::get_le<double>(is);
  const auto count = detail::get_le<std::uint64_t>(is);
  MaeSampler s{Mae(c)};
  if (count != s.net().num_params() + s.root_logits().size()) throw FormatError("checkpoint parameter count mismatch");
  for (auto& p : s.net().params()) p = detail::get_le<double>(is);
  for (auto& p : s.root_logits()) p = detail::get_le<double>(is);
  const auto groups = detail::get_le<std::uint32_t>(is);
  if (groups == 0 || !adam) return s;
  *adam = Adam(adam_cfg);
  adam->set_steps(detail::get_le<std::int64_t>(is));
  for (std::uint32_t g = 0; g < groups; ++g) {
    const double scale = detail::get_le<double>(is);
    const auto size = detail::get_le<std::uint64_t>(is);
    adam->add_group(static_cast<std::size_t>(size), scale);
    auto& grp = adam->groups().back();
    for (auto& v : grp.m) v = detail::get_le<double>(is);
    for (auto& v : grp.v) v = detail::get_le<double>(is);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sample dumps: one assignment per line, +/-1 integers separated by spaces.

inline void write_samples(std::ostream& os, std::span<const Assignment> xs) {
  for (const auto& x : xs) {
    for (int v = 0; v < x.num_vars(); ++v) os << (v ? " " : "") << x[v];
    os << '\n';
  }
}

inline std::vector<Assignment> read_samples(std::istream& is) {
  std::vector<Assignment> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<std::int8_t> vals;
    int v = 0;
    while (ls >> v) {
      if (v != 1 && v != -1) throw FormatError("samples must be +/-1");
      vals.push_back(static_cast<std::int8_t>(v));
    }
    if (!ls.eof()) throw FormatError("non-integer token in sample dump");
    if (vals.empty()) continue;
    if (!out.empty() && vals.size() != static_cast<std::size_t>(out.front().num_vars()))
      throw FormatError("sample rows differ in length");
    out.emplace_back(std::move(vals));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training configs: JSON objects whose keys mirror TrainConfig; absent keys
// keep their defaults.

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"objective", "total_steps", "batch_size", "lr", "lr_multiplier",
                                             "lr_decay", "policy", "imap_refresh_period", "sub_dags",
                                             "sub_dags_per_var", "stochastic_children_threshold", "subtb_lambda",
                                             "partial_reward", "seed", "eval_period", "eval_samples", "width",
                                             "depth", "activation"};
    for (const auto& [k, _] : j.items())
      if (!known.contains(k)) throw ConfigError("unknown config key: " + k);
    if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
    if (c.objective != Objective::Delta) c.policy = Policy::eps_uniform(0.1);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lr_multiplier = j.value("lr_multiplier", c.lr_multiplier);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      const auto kind = p.value("kind", std::string("on_policy"));
      if (kind == "on_policy")
        c.policy = Policy::on_policy();
      else if (kind == "tempered")
        c.policy = Policy::tempered(p.value("temperature", 1.0));
      else if (kind == "eps_uniform")
        c.policy = Policy::eps_uniform(p.value("epsilon", 0.1));
      else
        throw ConfigError("unknown policy kind: " + kind);
    }
    c.imap_refresh_period = j.value("imap_refresh_period", c.imap_refresh_period);
    c.sub_dags = j.value("sub_dags", c.sub_dags);
    c.sub_dags_per_var = j.value("sub_dags_per_var", c.sub_dags_per_var);
    c.stochastic_children_threshold = j.value("stochastic_children_threshold", c.stochastic_children_threshold);
    c.subtb_lambda = j.value("subtb_lambda", c.subtb_lambda);
    if (j.contains("partial_reward")) {
      const auto m = j["partial_reward"].get<std::string>();
      if (m == "zero_masked")
        c.partial_reward = PartialRewardMode::ZeroMasked;
      else if (m == "completed_factors")
        c.partial_reward = PartialRewardMode::CompletedFactors;
      else
        throw ConfigError("unknown partial_reward mode: " + m);
    }
    c.seed = j.value("seed", c.seed);
    c.eval_period = j.value("eval_period", c.eval_period);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.width = j.value("width", c.width);
    c.depth = j.value("depth", c.depth);
    if (j.contains("activation")) {
      const auto a = j["activation"].get<std::string>();
      if (a == "relu")
        c.activation = Activation::Relu;
      else if (a == "elu")
        c.activation = Activation::Elu;
      else
        throw ConfigError("unknown activation: " + a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_train_config(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

}  // namespace deltaai
