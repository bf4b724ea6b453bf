#pragma once

// Fits tabular conditionals to the local log-ratio constraints over every
// (x, u, flip) of a small model by Levenberg-Marquardt. The residuals are the
// same ones delta_loss squares, so a zero-loss fit is exactly a sampler that
// satisfies all single-flip constraints.

#include <deltaai/losses.hpp>

#include <Eigen/Dense>

namespace deltaai {

struct TabularFitOptions {
  int max_iterations = 200;
  double target_max_loss = 1e-26;
  double initial_damping = 1e-3;
};

struct TabularFitResult {
  int iterations = 0;
  double max_loss = 0.0;
  double total_loss = 0.0;
};

inline TabularFitResult fit_tabular_delta(TabularSampler& s, const Imap& imap, const EnergyModel& m,
                                          const TabularFitOptions& opt = {}) {
  const int n = m.num_vars();
  if (n > 16) throw TooLarge("tabular fit enumerates all states; keep it to 16 variables");
  const std::size_t np = s.net().num_params();
  const std::size_t nr = static_cast<std::size_t>(n);
  const std::size_t dim = np + nr;
  const std::uint64_t states = std::uint64_t{1} << n;

  // Collects residuals and their Jacobian rows (sparse, as index/value pairs).
  auto evaluate = [&](std::vector<double>& res, std::vector<std::vector<std::pair<std::size_t, double>>>* rows) {
    res.clear();
    if (rows) rows->clear();
    for (std::uint64_t st = 0; st < states; ++st) {
      const Assignment x = assignment_from_state(st, n);
      for (int u = 0; u < n; ++u) {
        const int xu_new = -x[u];
        Assignment xp = x;
        xp.set(u, xu_new);
        std::vector<detail::RatioTerm<TabularNet>> terms;
        terms.push_back(detail::ratio_term(s, imap, u, x, xp, true));
        for (int c : imap.children(u)) terms.push_back(detail::ratio_term(s, imap, c, x, xp, false));
        double r = m.delta_log_reward(x, u, xu_new);
        for (const auto& t : terms) r -= t.value;
        res.push_back(r);
        if (!rows) continue;
        std::vector<std::pair<std::size_t, double>> row;
        auto put = [&](const typename TabularSampler::LogitEval& e, double d) {
          const std::size_t idx = e.root ? np + static_cast<std::size_t>(e.v) : e.trace.index;
          row.emplace_back(idx, -d);
        };
        for (const auto& t : terms) {
          put(t.before, t.d_before);
          if (!t.shared) put(t.after, t.d_after);
        }
        rows->push_back(std::move(row));
      }
    }
  };

  auto cost_of = [](const std::vector<double>& r) {
    double c = 0.0;
    for (double v : r) c += v * v;
    return c;
  };
  auto max_of = [](const std::vector<double>& r) {
    double c = 0.0;
    for (double v : r) c = std::max(c, v * v);
    return c;
  };
  auto get_params = [&]() {
    Eigen::VectorXd p(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < np; ++i) p[static_cast<Eigen::Index>(i)] = s.net().params()[i];
    for (std::size_t i = 0; i < nr; ++i) p[static_cast<Eigen::Index>(np + i)] = s.root_logits()[i];
    return p;
  };
  auto set_params = [&](const Eigen::VectorXd& p) {
    for (std::size_t i = 0; i < np; ++i) s.net().params()[i] = p[static_cast<Eigen::Index>(i)];
    for (std::size_t i = 0; i < nr; ++i) s.root_logits()[i] = p[static_cast<Eigen::Index>(np + i)];
  };

  std::vector<double> res;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  double damping = opt.initial_damping;
  TabularFitResult out;
  evaluate(res, &rows);
  double cost = cost_of(res);
  for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
    if (max_of(res) <= opt.target_max_loss) break;
    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    Eigen::VectorXd jtr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (const auto& [a, va] : rows[k]) {
        jtr[static_cast<Eigen::Index>(a)] += va * res[k];
        for (const auto& [b, vb] : rows[k]) jtj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += va * vb;
      }
    }
    const Eigen::VectorXd base = get_params();
    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
      Eigen::MatrixXd lhs = jtj;
      for (Eigen::Index i = 0; i < lhs.rows(); ++i) lhs(i, i) += damping * (1.0 + jtj(i, i));
      const Eigen::VectorXd step = lhs.ldlt().solve(-jtr);
      set_params(base + step);
      std::vector<double> trial;
      evaluate(trial, nullptr);
      const double c = cost_of(trial);
      if (std::isfinite(c) && c < cost) {
        improved = true;
        damping = std::max(damping / 5.0, 1e-15);
      } else {
        damping *= 4.0;
      }
    }
    if (!improved) {
      set_params(base);
      break;
    }
    evaluate(res, &rows);
    cost = cost_of(res);
  }
  out.max_loss = max_of(res);
  out.total_loss = cost;
  return out;
}

}  // namespace deltaai
