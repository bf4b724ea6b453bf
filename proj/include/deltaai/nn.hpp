#pragma once

// Masked-autoencoder conditional network and the Adam optimizer.
//
// The network maps a masked input (instantiated variables as +/-1, everything
// else 0, optionally followed by a conditioning block) to one logit per
// variable plus an optional scalar flow head. A forward pass evaluates a
// single output unit: every conditional q(x_v | x_Pa(v)) uses its own masked
// input, so computing the other outputs would be wasted work.

#include <deltaai/common.hpp>

#include <Eigen/Dense>

namespace deltaai {

enum class Activation { Relu, Elu };

struct MaeConfig {
  int num_vars = 0;
  int cond_width = 0;  // extra conditioning inputs appended after the |V| block
  int width = 512;
  int depth = 3;
  bool flow_head = false;
  Activation activation = Activation::Relu;
  double ln_eps = 1e-5;
};

class Mae {
 public:
  using Vec = Eigen::VectorXd;

  struct Block {
    Vec h_in;   // block input
    Vec xhat;   // normalized pre-activation
    Vec y;      // scaled/shifted, pre-nonlinearity
    Vec h_out;  // block output (after the residual add)
    double inv_std = 0.0;
  };
  struct Trace {
    std::vector<Block> blocks;
    int output = -1;
    double value = 0.0;
  };

  Mae() = default;

  explicit Mae(MaeConfig cfg) : cfg_(cfg) {
    if (cfg.num_vars <= 0 || cfg.width <= 0 || cfg.depth <= 0) throw ConfigError("invalid MAE shape");
    std::size_t off = 0;
    int in = input_width();
    for (int k = 0; k < cfg.depth; ++k) {
      Layout l;
      l.in = in;
      l.w = off;
      off += static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(in);
      l.b = off;
      off += static_cast<std::size_t>(cfg.width);
      l.gamma = off;
      off += static_cast<std::size_t>(cfg.width);
      l.beta = off;
      off += static_cast<std::size_t>(cfg.width);
      layout_.push_back(l);
      in = cfg.width;
    }
    out_w_ = off;
    off += static_cast<std::size_t>(output_width()) * static_cast<std::size_t>(cfg.width);
    out_b_ = off;
    off += static_cast<std::size_t>(output_width());
    params_.assign(off, 0.0);
  }

  /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; unit LN scale.
  void init_random(Rng& rng) {
    for (const auto& l : layout_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      std::uniform_real_distribution<double> u(-bound, bound);
      const std::size_t nw = static_cast<std::size_t>(cfg_.width) * static_cast<std::size_t>(l.in);
      for (std::size_t i = 0; i < nw; ++i) params_[l.w + i] = u(rng);
      for (int i = 0; i < cfg_.width; ++i) {
        params_[l.b + static_cast<std::size_t>(i)] = u(rng);
        params_[l.gamma + static_cast<std::size_t>(i)] = 1.0;
        params_[l.beta + static_cast<std::size_t>(i)] = 0.0;
      }
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = out_w_; i < params_.size(); ++i) params_[i] = u(rng);
  }

  const MaeConfig& config() const { return cfg_; }
  int num_vars() const { return cfg_.num_vars; }
  int input_width() const { return cfg_.num_vars + cfg_.cond_width; }
  int output_width() const { return cfg_.num_vars + (cfg_.flow_head ? 1 : 0); }
  int flow_output() const { return cfg_.flow_head ? cfg_.num_vars : -1; }
  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double forward(std::span<const double> input, int output, Trace& t) const {
    if (static_cast<int>(input.size()) != input_width()) throw ShapeMismatch("MAE input has the wrong width");
    if (output < 0 || output >= output_width()) throw std::out_of_range("MAE output index");
    const Eigen::Index width = cfg_.width;
    t.blocks.resize(layout_.size());
    t.output = output;
    Vec a(width);
    for (std::size_t k = 0; k < layout_.size(); ++k) {
      const Layout& l = layout_[k];
      Block& blk = t.blocks[k];
      a = vec(l.b, width);
      if (k == 0) {
        blk.h_in = Eigen::Map<const Vec>(input.data(), static_cast<Eigen::Index>(input.size()));
        // First-layer W is stored [in][out]: each nonzero input adds one contiguous column.
        for (Eigen::Index i = 0; i < blk.h_in.size(); ++i)
          if (blk.h_in[i] != 0.0) a += blk.h_in[i] * vec(l.w + static_cast<std::size_t>(i * width), width);
      } else {
        blk.h_in = t.blocks[k - 1].h_out;
        a.noalias() += mat(l.w, width, l.in) * blk.h_in;
      }
      const double mean = a.mean();
      blk.inv_std = 1.0 / std::sqrt((a.array() - mean).square().mean() + cfg_.ln_eps);
      blk.xhat = (a.array() - mean) * blk.inv_std;
      blk.y = vec(l.gamma, width).cwiseProduct(blk.xhat) + vec(l.beta, width);
      blk.h_out = blk.y.unaryExpr([this](double y) { return activate(y); });
      if (k > 0) blk.h_out += blk.h_in;
    }
    const std::size_t o = static_cast<std::size_t>(output);
    t.value = params_[out_b_ + o] + vec(out_w_ + o * static_cast<std::size_t>(width), width).dot(t.blocks.back().h_out);
    return t.value;
  }

  double forward(std::span<const double> input, int output) const {
    Trace t;
    return forward(input, output, t);
  }

  /// grad += d_out * d(output)/d(params) for the pass recorded in t.
  void backward(const Trace& t, double d_out, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw ShapeMismatch("MAE gradient buffer has the wrong size");
    if (d_out == 0.0) return;
    const Eigen::Index width = cfg_.width;
    const std::size_t o = static_cast<std::size_t>(t.output);
    const std::size_t wo = out_w_ + o * static_cast<std::size_t>(width);
    grad[out_b_ + o] += d_out;
    gvec(grad, wo, width) += d_out * t.blocks.back().h_out;
    Vec dh = d_out * vec(wo, width);
    Vec dy(width), dxhat(width), da(width);
    for (std::size_t kk = layout_.size(); kk-- > 0;) {
      const Layout& l = layout_[kk];
      const Block& blk = t.blocks[kk];
      dy = dh.cwiseProduct(blk.y.unaryExpr([this](double y) { return activate_grad(y); }));
      gvec(grad, l.gamma, width) += dy.cwiseProduct(blk.xhat);
      gvec(grad, l.beta, width) += dy;
      dxhat = dy.cwiseProduct(vec(l.gamma, width));
      const double n = static_cast<double>(width);
      const double sum_dx = dxhat.sum(), sum_dx_xhat = dxhat.dot(blk.xhat);
      da = (blk.inv_std / n) * (n * dxhat.array() - sum_dx - blk.xhat.array() * sum_dx_xhat).matrix();
      gvec(grad, l.b, width) += da;
      if (kk == 0) {
        // Input gradient is not needed; masked (zero) inputs contribute nothing.
        for (Eigen::Index i = 0; i < blk.h_in.size(); ++i)
          if (blk.h_in[i] != 0.0) gvec(grad, l.w + static_cast<std::size_t>(i * width), width) += blk.h_in[i] * da;
        break;
      }
      gmat(grad, l.w, width, l.in).noalias() += da * blk.h_in.transpose();
      dh += mat(l.w, width, l.in).transpose() * da;  // residual path keeps dh
    }
  }

 private:
  struct Layout {
    int in = 0;
    std::size_t w = 0, b = 0, gamma = 0, beta = 0;
  };
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Eigen::Map<const Vec> vec(std::size_t off, Eigen::Index n) const { return {params_.data() + off, n}; }
  Eigen::Map<const RowMat> mat(std::size_t off, Eigen::Index rows, Eigen::Index cols) const {
    return {params_.data() + off, rows, cols};
  }
  static Eigen::Map<Vec> gvec(std::span<double> g, std::size_t off, Eigen::Index n) { return {g.data() + off, n}; }
  static Eigen::Map<RowMat> gmat(std::span<double> g, std::size_t off, Eigen::Index rows, Eigen::Index cols) {
    return {g.data() + off, rows, cols};
  }

  double activate(double y) const {
    if (cfg_.activation == Activation::Relu) return y > 0 ? y : 0.0;
    return y > 0 ? y : std::expm1(y);
  }
  double activate_grad(double y) const {
    if (cfg_.activation == Activation::Relu) return y > 0 ? 1.0 : 0.0;
    return y > 0 ? 1.0 : std::exp(y);
  }

  MaeConfig cfg_;
  std::vector<Layout> layout_;
  std::size_t out_w_ = 0, out_b_ = 0;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long total_steps = 0;  // 0 disables the decay schedule
  std::vector<double> milestones{0.2, 0.4, 0.6, 0.8, 0.9};
  double decay = 0.1;
};

struct ParamBlock {
  std::span<double> values;
  std::span<const double> grad;
};

/// Adam with bias correction over several parameter groups, each with its own
/// learning-rate multiplier, and a step-wise decay at fractions of the run.
class Adam {
 public:
  struct Group {
    double lr_scale = 1.0;
    std::vector<double> m, v;
  };

  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(std::move(cfg)) {}

  std::size_t add_group(std::size_t size, double lr_scale = 1.0) {
    groups_.push_back(Group{lr_scale, std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)});
    return groups_.size() - 1;
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return step_; }
  void set_steps(long s) { step_ = s; }
  std::vector<Group>& groups() { return groups_; }
  const std::vector<Group>& groups() const { return groups_; }

  /// Scheduled base learning rate for the next update.
  double learning_rate() const {
    double lr = cfg_.lr;
    if (cfg_.total_steps > 0)
      for (double f : cfg_.milestones)
        if (step_ >= static_cast<long>(std::llround(f * static_cast<double>(cfg_.total_steps)))) lr *= cfg_.decay;
    return lr;
  }

  void step(std::span<const ParamBlock> blocks) {
    if (blocks.size() != groups_.size()) throw ShapeMismatch("Adam block count differs from group count");
    for (std::size_t g = 0; g < blocks.size(); ++g)
      if (blocks[g].values.size() != groups_[g].m.size() || blocks[g].grad.size() != groups_[g].m.size())
        throw ShapeMismatch("Adam block size differs from its group");
    const double lr = learning_rate();
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t g = 0; g < blocks.size(); ++g) {
      Group& grp = groups_[g];
      const double a = lr * grp.lr_scale;
      auto p = blocks[g].values;
      auto gr = blocks[g].grad;
      for (std::size_t i = 0; i < p.size(); ++i) {
        grp.m[i] = cfg_.beta1 * grp.m[i] + (1.0 - cfg_.beta1) * gr[i];
        grp.v[i] = cfg_.beta2 * grp.v[i] + (1.0 - cfg_.beta2) * gr[i] * gr[i];
        p[i] -= a * (grp.m[i] / c1) / (std::sqrt(grp.v[i] / c2) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Group> groups_;
  long step_ = 0;
};

}  // namespace deltaai
