#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "modest/errors.hpp"
#include "modest/matrix.hpp"

// Learnable heads mapping frozen unimodal latents into the shared space:
// pre-normalization inverted-bottleneck residual blocks followed by a linear
// projection, with explicit reverse-mode gradients. Templated on the scalar
// so the finite-difference checks can run the identical network in double.

namespace modest {

struct AdapterConfig {
  Index in_dim = 0;
  Index depth = 4;
  Index expansion = 4;
  Index out_dim = 512;
  std::uint64_t init_seed = 0;
};

inline void validate(const AdapterConfig& c) {
  if (c.in_dim < 1 || c.out_dim < 1)
    fail(Errc::invalid_argument, "adapter dims must be >= 1");
  if (c.depth < 1) fail(Errc::invalid_argument, "adapter depth must be >= 1");
  if (c.expansion < 1) fail(Errc::invalid_argument, "adapter expansion must be >= 1");
}

// One residual block: x + W_down gelu(W_up LN(x) + b_up) + b_down.
// The same struct doubles as the per-block gradient holder.
template <typename Scalar>
struct AdapterBlock {
  Vector<Scalar> ln_gain, ln_bias;  // in_dim
  RowMatrix<Scalar> w_up;           // hidden x in_dim
  Vector<Scalar> b_up;              // hidden
  RowMatrix<Scalar> w_down;         // in_dim x hidden
  Vector<Scalar> b_down;            // in_dim
};

template <typename Scalar>
struct AdapterNetwork {
  AdapterConfig config;
  std::vector<AdapterBlock<Scalar>> blocks;
  RowMatrix<Scalar> w_proj;  // out_dim x in_dim
  Vector<Scalar> b_proj;     // out_dim
};

template <typename Scalar>
struct AdapterGradients {
  std::vector<AdapterBlock<Scalar>> blocks;
  RowMatrix<Scalar> w_proj;
  Vector<Scalar> b_proj;
  RowMatrix<Scalar> grad_in;  // N x in_dim
};

inline Index parameter_count(const AdapterConfig& c) {
  const Index hidden = c.expansion * c.in_dim;
  const Index per_block = 2 * c.in_dim                     // layernorm gain + bias
                          + c.in_dim * hidden + hidden     // widening
                          + hidden * c.in_dim + c.in_dim;  // narrowing
  return c.depth * per_block + c.in_dim * c.out_dim + c.out_dim;
}

// Applies fn to every parameter tensor in the fixed layout order (blocks
// first, projection last). Optimizer, checkpoints and gradient checks all
// walk parameters through this.
template <typename Net, typename Fn>
void for_each_tensor(Net& net, Fn&& fn) {
  for (auto& b : net.blocks) {
    fn(b.ln_gain);
    fn(b.ln_bias);
    fn(b.w_up);
    fn(b.b_up);
    fn(b.w_down);
    fn(b.b_down);
  }
  fn(net.w_proj);
  fn(net.b_proj);
}

template <typename NetA, typename NetB, typename Fn>
void for_each_tensor_pair(NetA& a, NetB& b, Fn&& fn) {
  if (a.blocks.size() != b.blocks.size())
    fail(Errc::shape_mismatch, "networks have different depths");
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    fn(a.blocks[i].ln_gain, b.blocks[i].ln_gain);
    fn(a.blocks[i].ln_bias, b.blocks[i].ln_bias);
    fn(a.blocks[i].w_up, b.blocks[i].w_up);
    fn(a.blocks[i].b_up, b.blocks[i].b_up);
    fn(a.blocks[i].w_down, b.blocks[i].w_down);
    fn(a.blocks[i].b_down, b.blocks[i].b_down);
  }
  fn(a.w_proj, b.w_proj);
  fn(a.b_proj, b.b_proj);
}

/// Xavier-uniform weights, zero biases, unit layernorm gains. Deterministic
/// per init_seed: tensors are filled in layout order, row-major.
template <typename Scalar>
AdapterNetwork<Scalar> init_adapter(const AdapterConfig& config) {
  validate(config);
  AdapterNetwork<Scalar> net;
  net.config = config;
  const Index hidden = config.expansion * config.in_dim;

  std::mt19937_64 rng(config.init_seed);
  auto fill_xavier = [&rng](RowMatrix<Scalar>& w, Index fan_in, Index fan_out) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = Scalar(unif(rng));
  };

  net.blocks.resize(std::size_t(config.depth));
  for (auto& b : net.blocks) {
    b.ln_gain = Vector<Scalar>::Ones(config.in_dim);
    b.ln_bias = Vector<Scalar>::Zero(config.in_dim);
    b.w_up.resize(hidden, config.in_dim);
    fill_xavier(b.w_up, config.in_dim, hidden);
    b.b_up = Vector<Scalar>::Zero(hidden);
    b.w_down.resize(config.in_dim, hidden);
    fill_xavier(b.w_down, hidden, config.in_dim);
    b.b_down = Vector<Scalar>::Zero(config.in_dim);
  }
  net.w_proj.resize(config.out_dim, config.in_dim);
  fill_xavier(net.w_proj, config.in_dim, config.out_dim);
  net.b_proj = Vector<Scalar>::Zero(config.out_dim);
  return net;
}

template <typename Scalar>
AdapterGradients<Scalar> zero_gradients(const AdapterNetwork<Scalar>& net, Index batch) {
  AdapterGradients<Scalar> g;
  g.blocks.resize(net.blocks.size());
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const auto& b = net.blocks[i];
    g.blocks[i].ln_gain = Vector<Scalar>::Zero(b.ln_gain.size());
    g.blocks[i].ln_bias = Vector<Scalar>::Zero(b.ln_bias.size());
    g.blocks[i].w_up = RowMatrix<Scalar>::Zero(b.w_up.rows(), b.w_up.cols());
    g.blocks[i].b_up = Vector<Scalar>::Zero(b.b_up.size());
    g.blocks[i].w_down = RowMatrix<Scalar>::Zero(b.w_down.rows(), b.w_down.cols());
    g.blocks[i].b_down = Vector<Scalar>::Zero(b.b_down.size());
  }
  g.w_proj = RowMatrix<Scalar>::Zero(net.w_proj.rows(), net.w_proj.cols());
  g.b_proj = Vector<Scalar>::Zero(net.b_proj.size());
  g.grad_in = RowMatrix<Scalar>::Zero(batch, net.config.in_dim);
  return g;
}

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5 * double(x) * (1.0 + std::erf(double(x) * kInvSqrt2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const double xd = double(x);
  const double phi = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
  const double Phi = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
  return Scalar(Phi + xd * phi);
}

}  // namespace detail

template <typename Scalar>
struct ForwardCache {
  struct BlockCache {
    RowMatrix<Scalar> xhat;     // normalized rows before gain/bias
    Vector<Scalar> inv_std;     // per-row 1/sqrt(var + eps)
    RowMatrix<Scalar> post_ln;  // xhat * gain + bias
    RowMatrix<Scalar> pre_act;  // N x hidden
    RowMatrix<Scalar> act;      // gelu(pre_act)
  };
  std::vector<BlockCache> blocks;
  RowMatrix<Scalar> proj_input;  // N x in
  Index batch = 0;
  Index in_dim = 0;
};

/// Runs the network on a batch (rows are items) and returns the outputs
/// together with every intermediate backward needs.
template <typename Scalar>
std::pair<RowMatrix<Scalar>, ForwardCache<Scalar>> forward(const AdapterNetwork<Scalar>& net,
                                                           const RowMatrix<Scalar>& batch) {
  if (batch.cols() != net.config.in_dim)
    fail(Errc::dim_mismatch, "batch width " + std::to_string(batch.cols()) +
                                 " does not match adapter in_dim " +
                                 std::to_string(net.config.in_dim));
  const Index n = batch.rows();
  const Index d = net.config.in_dim;

  ForwardCache<Scalar> cache;
  cache.batch = n;
  cache.in_dim = d;
  cache.blocks.resize(net.blocks.size());

  RowMatrix<Scalar> x = batch;
  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    const auto& blk = net.blocks[bi];
    auto& c = cache.blocks[bi];

    // Row layernorm with 64-bit statistics.
    c.xhat.resize(n, d);
    c.inv_std.resize(n);
    for (Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd row = x.row(i).template cast<double>();
      const double mean = row.mean();
      const double var = (row.array() - mean).square().sum() / double(d);
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      c.inv_std(i) = Scalar(inv);
      c.xhat.row(i) = (((row.array() - mean) * inv).matrix()).template cast<Scalar>();
    }
    c.post_ln = c.xhat;
    c.post_ln.array().rowwise() *= blk.ln_gain.transpose().array();
    c.post_ln.rowwise() += blk.ln_bias.transpose();

    c.pre_act = c.post_ln * blk.w_up.transpose();
    c.pre_act.rowwise() += blk.b_up.transpose();
    c.act = c.pre_act.unaryExpr([](Scalar v) { return detail::gelu(v); });

    RowMatrix<Scalar> delta = c.act * blk.w_down.transpose();
    delta.rowwise() += blk.b_down.transpose();
    x += delta;
  }

  cache.proj_input = x;
  RowMatrix<Scalar> out = x * net.w_proj.transpose();
  out.rowwise() += net.b_proj.transpose();
  return {std::move(out), std::move(cache)};
}

/// Exact reverse-mode gradients of forward. `grad_out` is dLoss/dOutput.
template <typename Scalar>
AdapterGradients<Scalar> backward(const AdapterNetwork<Scalar>& net,
                                  const ForwardCache<Scalar>& cache,
                                  const RowMatrix<Scalar>& grad_out) {
  if (cache.blocks.size() != net.blocks.size() || cache.in_dim != net.config.in_dim)
    fail(Errc::cache_mismatch, "cache does not belong to this network");
  if (grad_out.rows() != cache.batch || grad_out.cols() != net.config.out_dim)
    fail(Errc::shape_mismatch, "grad_out shape does not match forward output");

  AdapterGradients<Scalar> g = zero_gradients(net, cache.batch);
  const Index d = net.config.in_dim;

  g.w_proj = grad_out.transpose() * cache.proj_input;
  g.b_proj = grad_out.colwise().sum().transpose();
  RowMatrix<Scalar> gx = grad_out * net.w_proj;  // gradient flowing into the block stack

  for (std::size_t bi = net.blocks.size(); bi-- > 0;) {
    const auto& blk = net.blocks[bi];
    const auto& c = cache.blocks[bi];
    auto& gb = g.blocks[bi];

    // x_out = x_in + act * w_down^T + b_down
    gb.w_down = gx.transpose() * c.act;
    gb.b_down = gx.colwise().sum().transpose();
    RowMatrix<Scalar> d_act = gx * blk.w_down;
    RowMatrix<Scalar> d_pre =
        d_act.cwiseProduct(c.pre_act.unaryExpr([](Scalar v) { return detail::gelu_grad(v); }));

    // pre_act = post_ln * w_up^T + b_up
    gb.w_up = d_pre.transpose() * c.post_ln;
    gb.b_up = d_pre.colwise().sum().transpose();
    RowMatrix<Scalar> d_post = d_pre * blk.w_up;

    // post_ln = xhat * gain + bias
    gb.ln_gain = d_post.cwiseProduct(c.xhat).colwise().sum().transpose();
    gb.ln_bias = d_post.colwise().sum().transpose();
    RowMatrix<Scalar> d_xhat = d_post;
    d_xhat.array().rowwise() *= blk.ln_gain.transpose().array();

    // layernorm backward, 64-bit row reductions
    RowMatrix<Scalar> d_ln(cache.batch, d);
    for (Index i = 0; i < cache.batch; ++i) {
      Eigen::RowVectorXd dxh = d_xhat.row(i).template cast<double>();
      Eigen::RowVectorXd xh = c.xhat.row(i).template cast<double>();
      const double m1 = dxh.mean();
      const double m2 = (dxh.array() * xh.array()).mean();
      d_ln.row(i) = (((dxh.array() - m1 - xh.array() * m2) * double(c.inv_std(i))).matrix())
                        .template cast<Scalar>();
    }

    gx += d_ln;  // residual path adds straight through
  }

  g.grad_in = gx;
  return g;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay, flat moment storage in layout order.

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
};

template <typename Scalar>
struct OptimizerState {
  std::int64_t step = 0;
  Vector<Scalar> first_moment;
  Vector<Scalar> second_moment;
  AdamWConfig config;
};

template <typename Scalar>
OptimizerState<Scalar> init_optimizer(const AdapterConfig& c, AdamWConfig a = {}) {
  OptimizerState<Scalar> s;
  s.step = 0;
  s.first_moment = Vector<Scalar>::Zero(parameter_count(c));
  s.second_moment = Vector<Scalar>::Zero(parameter_count(c));
  s.config = a;
  return s;
}

/// One decoupled-weight-decay Adam update:
///   p <- p - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p)
template <typename Scalar>
void adamw_step(OptimizerState<Scalar>& state, AdapterNetwork<Scalar>& net,
                const AdapterGradients<Scalar>& grads, double lr) {
  if (state.first_moment.size() != parameter_count(net.config))
    fail(Errc::shape_mismatch, "optimizer state does not match network");
  state.step += 1;
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(state.step));
  const double bc2 = 1.0 - std::pow(b2, double(state.step));
  const double eps = state.config.epsilon;
  const double wd = state.config.weight_decay;

  Index offset = 0;
  for_each_tensor_pair(net, grads, [&](auto& param, const auto& grad) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
      fail(Errc::shape_mismatch, "gradient shape does not match parameter");
    Scalar* p = param.data();
    const Scalar* gp = grad.data();
    Scalar* m = state.first_moment.data() + offset;
    Scalar* v = state.second_moment.data() + offset;
    const Index size = param.size();
    for (Index k = 0; k < size; ++k) {
      const double gk = double(gp[k]);
      const double mk = b1 * double(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * double(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = Scalar(mk);
      v[k] = Scalar(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      const double update = mhat / (std::sqrt(vhat) + eps) + wd * double(p[k]);
      p[k] = Scalar(double(p[k]) - lr * update);
    }
    offset += size;
  });
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup then cosine decay to zero.

struct LrSchedule {
  double lr_start = 1e-6;
  double lr_peak = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;
};

inline void validate(const LrSchedule& s) {
  if (!(s.warmup_steps > 0 && s.warmup_steps <= s.total_steps))
    fail(Errc::invalid_argument, "need 0 < warmup_steps <= total_steps");
  if (s.lr_start > s.lr_peak) fail(Errc::invalid_argument, "lr_start must be <= lr_peak");
}

inline double lr_at(std::int64_t step, const LrSchedule& sched) {
  validate(sched);
  if (step < 0 || step >= sched.total_steps)
    fail(Errc::step_out_of_range,
         "step " + std::to_string(step) + " of " + std::to_string(sched.total_steps));
  if (step < sched.warmup_steps)
    return sched.lr_start +
           (sched.lr_peak - sched.lr_start) * double(step) / double(sched.warmup_steps);
  if (step == sched.warmup_steps) return sched.lr_peak;
  const double span = double(sched.total_steps - 1 - sched.warmup_steps);
  const double progress = double(step - sched.warmup_steps) / span;
  return sched.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace modest
