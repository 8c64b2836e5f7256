#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "modest/errors.hpp"
#include "modest/matrix.hpp"
#include "modest/rng.hpp"

// Alignment mathematics: temperature-scaled similarity scores, row-softmax
// matching distributions, InfoNCE, smoothed targets, KL loss, Gaussian input
// perturbation, FuseMix mixing, and the combined confidence-calibrated
// objective with analytic gradients.
//
// Scores and embeddings are templated on the scalar so training can run in
// float while verification runs the identical code in double. Probability
// matrices are always double: that is where the tight numerical contracts
// (row sums, entropy identities) live.

namespace modest {

enum class Similarity { cosine, dot };

template <typename Scalar>
struct ScoreMatrix {
  Index n = 0;
  RowMatrix<Scalar> values;  // n x n, already divided by tau
};

/// Row-stochastic matching probabilities p_ij.
struct AlignmentDistribution {
  Index n = 0;
  RowMatrixXd probs;
};

/// Smoothed supervision q: diagonal 1-alpha+alpha/n, off-diagonal alpha/n.
/// alpha = 0 degenerates to the hard one-hot target.
struct TargetDistribution {
  Index n = 0;
  double alpha = 0.0;
  RowMatrixXd probs;
};

struct PerturbationSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct LossBundle {
  double loss = 0.0;
  RowMatrix<Scalar> grad_zx;
  RowMatrix<Scalar> grad_zy;
  double mean_entropy = 0.0;   // mean row entropy of p (forward direction)
  double mean_grad_l1 = 0.0;   // mean per-sample ||p_i - q_i||_1, before the 1/n scaling
};

struct ScoreGradient {
  RowMatrixXd grad;    // (p - q) / n, matching the row-mean in kl_loss
  VectorXd row_l1;     // per-sample ||p_i - q_i||_1 (pre-scaling diagnostic)
};

namespace detail {

inline RowMatrixXd softmax_rows_d(const RowMatrixXd& s) {
  RowMatrixXd p = s;
  VectorXd rowmax = p.rowwise().maxCoeff();
  p.colwise() -= rowmax;
  p = p.array().exp().matrix();
  VectorXd sums = p.rowwise().sum();
  p.array().colwise() /= sums.array();
  return p;
}

// Row norms with 64-bit accumulation; throws on effectively-zero rows.
template <typename Scalar>
VectorXd checked_row_norms(const RowMatrix<Scalar>& m, const char* side) {
  VectorXd norms(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    norms(i) = m.row(i).template cast<double>().norm();
    if (norms(i) < 1e-12)
      fail(Errc::zero_row, std::string(side) + " row " + std::to_string(i) +
                               " has norm below 1e-12");
  }
  return norms;
}

inline double kl_rows_mean(const RowMatrixXd& q, const RowMatrixXd& p) {
  const auto Q = q.array();
  const auto P = p.array();
  double total = (Q > 0.0).select(Q * (Q.log() - P.log()), 0.0).sum();
  return total / double(q.rows());
}

}  // namespace detail

/// Scaled similarity s_ij between row i of zx and row j of zy. Cosine by
/// default; raw inner product behind the switch. Rows need not be
/// pre-normalized. Accumulations run in 64-bit.
template <typename Scalar>
ScoreMatrix<Scalar> score_matrix(const RowMatrix<Scalar>& zx, const RowMatrix<Scalar>& zy,
                                 double tau, Similarity sim = Similarity::cosine) {
  if (tau <= 0.0) fail(Errc::non_positive_temperature, "tau must be positive");
  if (zx.cols() != zy.cols())
    fail(Errc::dim_mismatch, "embedding dims differ: " + std::to_string(zx.cols()) + " vs " +
                                 std::to_string(zy.cols()));
  if (zx.rows() != zy.rows())
    fail(Errc::dim_mismatch, "batch sizes differ: " + std::to_string(zx.rows()) + " vs " +
                                 std::to_string(zy.rows()));
  RowMatrixXd x = zx.template cast<double>();
  RowMatrixXd y = zy.template cast<double>();
  RowMatrixXd s = x * y.transpose();
  if (sim == Similarity::cosine) {
    VectorXd nx = detail::checked_row_norms(zx, "zx");
    VectorXd ny = detail::checked_row_norms(zy, "zy");
    s.array().colwise() /= nx.array();
    s.array().rowwise() /= ny.transpose().array();
  }
  s /= tau;
  ScoreMatrix<Scalar> out;
  out.n = zx.rows();
  out.values = s.cast<Scalar>();
  return out;
}

/// Max-shifted row softmax of the scores.
template <typename Scalar>
AlignmentDistribution softmax_rows(const ScoreMatrix<Scalar>& s) {
  return {s.n, detail::softmax_rows_d(s.values.template cast<double>())};
}

/// InfoNCE: mean over rows of -log softmax diagonal, computed in
/// log-sum-exp form. `symmetric` averages the transpose direction in.
template <typename Scalar>
double infonce_loss(const ScoreMatrix<Scalar>& s, bool symmetric = true) {
  if (s.values.rows() != s.values.cols())
    fail(Errc::size_mismatch, "score matrix must be square");
  auto one_direction = [](const RowMatrixXd& v) {
    double acc = 0.0;
    for (Index i = 0; i < v.rows(); ++i) {
      double m = v.row(i).maxCoeff();
      double lse = std::log((v.row(i).array() - m).exp().sum()) + m;
      acc += lse - v(i, i);
    }
    return v.rows() > 0 ? acc / double(v.rows()) : 0.0;
  };
  RowMatrixXd v = s.values.template cast<double>();
  double loss = one_direction(v);
  if (symmetric) loss = 0.5 * (loss + one_direction(v.transpose()));
  return loss;
}

/// The convex relaxation of the one-hot target.
inline TargetDistribution smoothed_targets(Index n, double alpha) {
  if (n < 1) fail(Errc::invalid_argument, "batch size must be >= 1");
  if (!(alpha >= 0.0 && alpha < 1.0))
    fail(Errc::alpha_out_of_range, "alpha must lie in [0, 1), got " + std::to_string(alpha));
  TargetDistribution q;
  q.n = n;
  q.alpha = alpha;
  q.probs = RowMatrixXd::Constant(n, n, alpha / double(n));
  q.probs.diagonal().setConstant(1.0 - alpha + alpha / double(n));
  return q;
}

/// One row of the smoothed target, annotated-match entry at `slot`. Lets
/// large-n entropy identities be checked without materializing n x n.
inline VectorXd smoothed_target_row(Index n, double alpha, Index slot = 0) {
  if (n < 1) fail(Errc::invalid_argument, "batch size must be >= 1");
  if (!(alpha >= 0.0 && alpha < 1.0))
    fail(Errc::alpha_out_of_range, "alpha must lie in [0, 1)");
  if (slot < 0 || slot >= n) fail(Errc::index_out_of_range, "slot out of range");
  VectorXd row = VectorXd::Constant(n, alpha / double(n));
  row(slot) = 1.0 - alpha + alpha / double(n);
  return row;
}

/// Linear decay of the smoothing coefficient across epochs.
inline double dynamic_alpha(Index epoch, Index total_epochs, double alpha_start,
                            double alpha_end) {
  if (!(alpha_start >= 0.0 && alpha_start < 1.0) || !(alpha_end >= 0.0 && alpha_end < 1.0))
    fail(Errc::alpha_out_of_range, "alpha endpoints must lie in [0, 1)");
  if (epoch < 0 || epoch >= total_epochs)
    fail(Errc::epoch_out_of_range, "epoch " + std::to_string(epoch) + " of " +
                                       std::to_string(total_epochs));
  if (total_epochs == 1) return alpha_start;
  return alpha_start + (alpha_end - alpha_start) * double(epoch) / double(total_epochs - 1);
}

/// Mean over rows of KL(q_i || p_i); terms with q_ij = 0 contribute zero.
inline double kl_loss(const TargetDistribution& q, const AlignmentDistribution& p) {
  if (q.n != p.n) fail(Errc::size_mismatch, "target and distribution sizes differ");
  return detail::kl_rows_mean(q.probs, p.probs);
}

/// Gradient of kl_loss with respect to the scores: (p - q)/n, plus the
/// per-sample l1 norms before the 1/n scaling (the Eq.-4-scale diagnostic).
inline ScoreGradient score_gradient(const AlignmentDistribution& p,
                                    const TargetDistribution& q) {
  if (q.n != p.n) fail(Errc::size_mismatch, "target and distribution sizes differ");
  ScoreGradient g;
  RowMatrixXd diff = p.probs - q.probs;
  g.row_l1 = diff.cwiseAbs().rowwise().sum();
  g.grad = diff / double(p.n);
  return g;
}

/// Natural-log entropy per row; 0 log 0 = 0.
inline VectorXd row_entropy(const AlignmentDistribution& p) {
  const auto P = p.probs.array();
  return (-(P > 0.0).select(P * P.log(), 0.0).rowwise().sum()).matrix();
}

/// Entropy of a single probability vector.
inline double entropy(const Eigen::Ref<const VectorXd>& row) {
  const auto r = row.array();
  return -(r > 0.0).select(r * r.log(), 0.0).sum();
}

/// z + sigma * eps with eps elementwise standard normal from the seeded
/// generator (row-major draw order). sigma = 0 returns z bitwise unchanged,
/// which is also the inference path.
template <typename Scalar>
RowMatrix<Scalar> perturb(const RowMatrix<Scalar>& z, const PerturbationSpec& spec) {
  if (spec.sigma < 0.0) fail(Errc::negative_sigma, "sigma must be >= 0");
  if (spec.sigma == 0.0) return z;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix<Scalar> out = z;
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j)
      out(i, j) += Scalar(spec.sigma * normal(rng));
  return out;
}

/// The random draws behind one FuseMix application: a self-pair-free partner
/// permutation and one Beta(beta, beta) coefficient per row. Exposed so the
/// x-side/y-side coupling is observable.
struct FuseMixDraws {
  std::vector<Index> partner;
  VectorXd lambda;
};

inline FuseMixDraws fusemix_draws(Index n, double beta_param, std::uint64_t seed) {
  if (n < 2) fail(Errc::batch_too_small, "fusemix needs a batch of at least 2");
  if (!(beta_param > 0.0)) fail(Errc::invalid_argument, "beta_param must be positive");
  std::mt19937_64 rng(seed);
  FuseMixDraws d;
  d.partner.resize(std::size_t(n));
  for (Index i = 0; i < n; ++i) d.partner[std::size_t(i)] = i;
  // Re-draw the whole permutation until no row is paired with itself.
  bool has_self = true;
  while (has_self) {
    std::shuffle(d.partner.begin(), d.partner.end(), rng);
    has_self = false;
    for (Index i = 0; i < n; ++i)
      if (d.partner[std::size_t(i)] == i) {
        has_self = true;
        break;
      }
  }
  std::gamma_distribution<double> gamma(beta_param, 1.0);
  d.lambda.resize(n);
  for (Index i = 0; i < n; ++i) {
    double g1 = gamma(rng);
    double g2 = gamma(rng);
    d.lambda(i) = (g1 + g2 > 0.0) ? g1 / (g1 + g2) : 0.5;
  }
  return d;
}

/// Blends x'_i = lambda_i x_i + (1-lambda_i) x_{partner_i} with the same
/// lambda and partner applied to both modalities.
template <typename Scalar>
std::pair<RowMatrix<Scalar>, RowMatrix<Scalar>> fusemix_apply(const RowMatrix<Scalar>& x,
                                                              const RowMatrix<Scalar>& y,
                                                              const FuseMixDraws& d) {
  if (x.rows() != y.rows()) fail(Errc::dim_mismatch, "batch sizes differ");
  if (Index(d.partner.size()) != x.rows() || d.lambda.size() != x.rows())
    fail(Errc::size_mismatch, "draws do not match batch size");
  RowMatrix<Scalar> xm(x.rows(), x.cols());
  RowMatrix<Scalar> ym(y.rows(), y.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index j = d.partner[std::size_t(i)];
    const Scalar lam = Scalar(d.lambda(i));
    xm.row(i) = lam * x.row(i) + (Scalar(1) - lam) * x.row(j);
    ym.row(i) = lam * y.row(i) + (Scalar(1) - lam) * y.row(j);
  }
  return {std::move(xm), std::move(ym)};
}

template <typename Scalar>
std::pair<RowMatrix<Scalar>, RowMatrix<Scalar>> fusemix_mix(const RowMatrix<Scalar>& x,
                                                            const RowMatrix<Scalar>& y,
                                                            double beta_param,
                                                            std::uint64_t seed) {
  return fusemix_apply(x, y, fusemix_draws(x.rows(), beta_param, seed));
}

struct CclOptions {
  double alpha = 0.1;
  double sigma = 0.01;
  double lambda = 1.0;
  double tau = 0.07;
  std::uint64_t seed_x = 0;  // noise streams for the two sides are independent
  std::uint64_t seed_y = 0;
  bool symmetric = true;
  Similarity similarity = Similarity::cosine;
  // When noise was already injected upstream (pre-adapter position), the
  // loss skips its own perturbation but still reports the lambda*sigma^2
  // addend for the configured sigma.
  bool perturb_inputs = true;
};

/// The full objective on one batch: perturb both sides, score, smooth,
/// symmetric KL, plus lambda*sigma^2 (constant in the parameters, zero
/// gradient). Gradients are taken through the similarity into zx and zy at
/// the perturbed points. Entropy and per-sample gradient-norm diagnostics
/// ride along.
template <typename Scalar>
LossBundle<Scalar> ccl_loss(const RowMatrix<Scalar>& zx, const RowMatrix<Scalar>& zy,
                            const CclOptions& opt) {
  if (zx.rows() != zy.rows() || zx.cols() != zy.cols())
    fail(Errc::dim_mismatch, "zx and zy shapes differ");
  if (opt.sigma < 0.0) fail(Errc::negative_sigma, "sigma must be >= 0");
  const Index n = zx.rows();
  if (n < 1) fail(Errc::batch_too_small, "batch must be non-empty");

  if (opt.tau <= 0.0) fail(Errc::non_positive_temperature, "tau must be positive");

  RowMatrix<Scalar> px = opt.perturb_inputs ? perturb(zx, {opt.sigma, opt.seed_x}) : zx;
  RowMatrix<Scalar> py = opt.perturb_inputs ? perturb(zy, {opt.sigma, opt.seed_y}) : zy;

  RowMatrixXd x = px.template cast<double>();
  RowMatrixXd y = py.template cast<double>();

  RowMatrixXd s;          // scores
  RowMatrixXd cosines;    // cosine matrix, only used on the cosine path
  VectorXd nx, ny;
  if (opt.similarity == Similarity::cosine) {
    nx = detail::checked_row_norms(px, "zx");
    ny = detail::checked_row_norms(py, "zy");
    RowMatrixXd xhat = nx.cwiseInverse().asDiagonal() * x;
    RowMatrixXd yhat = ny.cwiseInverse().asDiagonal() * y;
    cosines = xhat * yhat.transpose();
    s = cosines / opt.tau;
    x = std::move(xhat);  // downstream gradient formulas use the unit rows
    y = std::move(yhat);
  } else {
    s = (x * y.transpose()) / opt.tau;
  }

  const TargetDistribution q = smoothed_targets(n, opt.alpha);
  const RowMatrixXd p_fwd = detail::softmax_rows_d(s);

  double loss = detail::kl_rows_mean(q.probs, p_fwd);
  RowMatrixXd g = p_fwd - q.probs;  // dL/ds * n for the forward direction

  const AlignmentDistribution p_dist{n, p_fwd};
  LossBundle<Scalar> bundle;
  bundle.mean_entropy = row_entropy(p_dist).mean();
  bundle.mean_grad_l1 = g.cwiseAbs().rowwise().sum().mean();

  if (opt.symmetric) {
    const RowMatrixXd p_bwd = detail::softmax_rows_d(s.transpose());
    loss = 0.5 * (loss + detail::kl_rows_mean(q.probs, p_bwd));
    g = 0.5 * (g + (p_bwd - q.probs).transpose());
  }
  g /= double(n);

  bundle.loss = loss + opt.lambda * opt.sigma * opt.sigma;

  RowMatrixXd gx, gy;
  if (opt.similarity == Similarity::cosine) {
    // s_ij = xhat_i . yhat_j / tau; differentiate through the normalization.
    RowMatrixXd gc = g.cwiseProduct(cosines);
    VectorXd wx = gc.rowwise().sum();
    VectorXd wy = gc.colwise().sum().transpose();
    VectorXd inv_x = (nx * opt.tau).cwiseInverse();
    VectorXd inv_y = (ny * opt.tau).cwiseInverse();
    gx = inv_x.asDiagonal() * (g * y - wx.asDiagonal() * x);
    gy = inv_y.asDiagonal() * (g.transpose() * x - wy.asDiagonal() * y);
  } else {
    gx = (g * y) / opt.tau;
    gy = (g.transpose() * x) / opt.tau;
  }
  bundle.grad_zx = gx.cast<Scalar>();
  bundle.grad_zy = gy.cast<Scalar>();
  return bundle;
}

}  // namespace modest
