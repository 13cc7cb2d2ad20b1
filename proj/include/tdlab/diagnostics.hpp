#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/algorithms.hpp"
#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/network.hpp"
#include "tdlab/oracles.hpp"

namespace tdlab {

// ---------------------------------------------------------------------------
// Gradient covariance spectrum
// ---------------------------------------------------------------------------

/// Empirical gradient covariance Sigma = J^T D J over a finite support,
/// held in factored form: J stacks the initialization-point gradients row
/// per support pair, D the distribution weights. Eigenvalues of Sigma are
/// the squared singular values of D^{1/2} J, computed from the p x n factor
/// rather than the n x n product (squaring doubles the condition number).
struct SigmaEstimate {
  Eigen::MatrixXd jacobian;                // p x n, rows = grad Q(x_i; theta0)
  Eigen::VectorXd weights;                 // p, sums to 1
  Eigen::VectorXd factor_singular_values;  // of D^{1/2} J, descending
  double threshold = 0.0;                  // numerical-rank cutoff on the factor
  int rank = 0;
  Eigen::MatrixXd range_basis;   // n x rank, orthonormal
  Eigen::MatrixXd kernel_basis;  // n x (n-rank); empty when not materialized

  long long dim() const { return jacobian.cols(); }
  bool kernel_materialized() const { return kernel_basis.cols() > 0 || rank == dim(); }

  /// Largest / smallest non-zero eigenvalue of Sigma itself.
  double sigma_max() const {
    return factor_singular_values.size() ? factor_singular_values(0) * factor_singular_values(0)
                                         : 0.0;
  }
  double sigma_min_nonzero() const {
    if (rank == 0) return 0.0;
    const double s = factor_singular_values(rank - 1);
    return s * s;
  }
  /// lambda0-hat fed to the theorem step-size schedule.
  double lambda0_hat() const { return sigma_min_nonzero(); }

  /// Dense Sigma; intended for small n (tests, brute-force comparisons).
  Eigen::MatrixXd dense() const {
    return jacobian.transpose() * weights.asDiagonal() * jacobian;
  }
};

/// By default the kernel basis is materialized only when the full n x n
/// orthogonal complement is affordable.
inline constexpr long long kKernelMaterializeLimit = 2048;

/// Builds the weighted Jacobian factor exactly over the finite support and
/// decomposes it. Rank threshold: max(n,p) * eps_mach * sv_max.
inline SigmaEstimate estimate_sigma(const NetworkParams& params_at_init, const Activation& act,
                                    const FeatureMap& fmap, const Eigen::VectorXd& weights,
                                    long long kernel_limit = kKernelMaterializeLimit) {
  const int p = fmap.n_rows();
  if (p == 0 || weights.size() == 0) throw std::invalid_argument("estimate_sigma: empty support");
  if (weights.size() != p)
    throw std::invalid_argument("estimate_sigma: weights size does not match the support");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("estimate_sigma: weights must sum to 1");
  for (int i = 0; i < p; ++i)
    if (weights(i) < 0.0) throw std::invalid_argument("estimate_sigma: negative weight");

  SigmaEstimate sigma;
  sigma.weights = weights;
  const long long n = params_at_init.num_params();
  sigma.jacobian.resize(p, n);
  ForwardCache cache;
  Eigen::VectorXd grad;
  for (int i = 0; i < p; ++i) {
    grad_theta_into(params_at_init, act, fmap.row(i), cache, grad);
    sigma.jacobian.row(i) = grad.transpose();
  }

  const Eigen::MatrixXd factor = weights.cwiseSqrt().asDiagonal() * sigma.jacobian;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(factor, Eigen::ComputeThinV);
  sigma.factor_singular_values = svd.singularValues();
  const double sv_max = sigma.factor_singular_values.size() ? sigma.factor_singular_values(0) : 0.0;
  sigma.threshold = static_cast<double>(std::max<long long>(n, p)) *
                    std::numeric_limits<double>::epsilon() * sv_max;
  int rank = 0;
  while (rank < sigma.factor_singular_values.size() &&
         sigma.factor_singular_values(rank) > sigma.threshold)
    ++rank;
  sigma.rank = rank;
  sigma.range_basis = svd.matrixV().leftCols(rank);

  if (n <= kernel_limit && rank < n) {
    // Complete the range basis to an orthonormal basis of R^n; the trailing
    // columns of the Q factor span the kernel.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sigma.range_basis);
    const Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    sigma.kernel_basis = full.rightCols(n - rank);
  }
  return sigma;
}

/// Monte-Carlo cross-check: empirical visit frequencies along one Markovian
/// trajectory replace the exact stationary weights.
inline SigmaEstimate estimate_sigma_mc(const NetworkParams& params_at_init, const Activation& act,
                                       const FeatureMap& fmap, const TabularMdp& mdp,
                                       const TabularPolicy& policy, long long n_samples,
                                       std::uint64_t seed, long long burn_in = 0) {
  if (n_samples < 1) throw std::invalid_argument("estimate_sigma_mc: n_samples must be >= 1");
  const Trajectory traj = sample_trajectory(mdp, policy, n_samples, seed, burn_in);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(fmap.n_rows());
  for (const Transition& t : traj.steps) counts(fmap.pair_index(t.s, t.a)) += 1.0;
  return estimate_sigma(params_at_init, act, fmap, counts / counts.sum());
}

// ---------------------------------------------------------------------------
// Spectrum sweep
// ---------------------------------------------------------------------------

struct SpectrumReport {
  int width = 0;
  double sigma_max = 0.0;
  double sigma_min_nonzero = 0.0;
  double ratio = 0.0;  // sigma_max / sigma_min_nonzero, >= 1
  int rank = 0;
  double threshold = 0.0;
};

struct SpectrumSummary {
  int width = 0;
  double mean_ratio = 0.0;
  double std_ratio = 0.0;
  double mean_sigma_max = 0.0;
  double mean_sigma_min_nonzero = 0.0;
  int rank = 0;  // from the last trial; ranks agree across trials in practice
  std::vector<SpectrumReport> trials;
};

/// Ratio r = sigma_max / sigma_min_nonzero across widths, averaged over
/// independent initializations. Stationary weights, exact support sums.
inline std::vector<SpectrumSummary> spectrum_sweep(const std::vector<int>& widths,
                                                   int trials_per_width, const TabularMdp& mdp,
                                                   const TabularPolicy& policy,
                                                   const FeatureMap& fmap, int depth,
                                                   const Activation& act, std::uint64_t seed) {
  if (widths.empty()) throw std::invalid_argument("spectrum_sweep: no widths");
  if (!std::is_sorted(widths.begin(), widths.end()))
    throw std::invalid_argument("spectrum_sweep: widths must be ascending");
  if (trials_per_width < 1)
    throw std::invalid_argument("spectrum_sweep: trials_per_width must be >= 1");
  const Eigen::VectorXd weights = stationary_distribution(mdp, policy);

  std::vector<SpectrumSummary> summaries;
  summaries.reserve(widths.size());
  for (std::size_t wi = 0; wi < widths.size(); ++wi) {
    SpectrumSummary summary;
    summary.width = widths[wi];
    double sum_ratio = 0.0, sum_sq = 0.0;
    for (int trial = 0; trial < trials_per_width; ++trial) {
      const NetworkParams params =
          init_params(depth, widths[wi], fmap.dim, mix_seed(seed, wi * 1000 + trial));
      const SigmaEstimate sigma = estimate_sigma(params, act, fmap, weights, /*kernel_limit=*/0);
      SpectrumReport report;
      report.width = widths[wi];
      report.sigma_max = sigma.sigma_max();
      report.sigma_min_nonzero = sigma.sigma_min_nonzero();
      report.ratio = report.sigma_max / report.sigma_min_nonzero;
      report.rank = sigma.rank;
      report.threshold = sigma.threshold;
      summary.trials.push_back(report);
      sum_ratio += report.ratio;
      sum_sq += report.ratio * report.ratio;
      summary.mean_sigma_max += report.sigma_max / trials_per_width;
      summary.mean_sigma_min_nonzero += report.sigma_min_nonzero / trials_per_width;
      summary.rank = report.rank;
    }
    summary.mean_ratio = sum_ratio / trials_per_width;
    const double var = sum_sq / trials_per_width - summary.mean_ratio * summary.mean_ratio;
    summary.std_ratio = var > 0.0 ? std::sqrt(var) : 0.0;
    summaries.push_back(std::move(summary));
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Subspace structure
// ---------------------------------------------------------------------------

/// Max over kernel directions v and support pairs x of |<grad Q(x), v>|.
/// Over the finite support this is exactly zero up to SVD roundoff: any
/// kernel vector satisfies <grad Q(x; theta0), v> = 0 almost surely.
/// Returns 0 vacuously for a full-rank estimate. When the kernel basis is
/// not materialized the kernel-projector residual ||g - V V^T g|| is used,
/// which upper-bounds every per-vector inner product.
inline double kernel_orthogonality_check(const SigmaEstimate& sigma) {
  if (sigma.rank == sigma.dim()) return 0.0;
  double worst = 0.0;
  if (sigma.kernel_basis.cols() > 0) {
    const Eigen::MatrixXd inner = sigma.jacobian * sigma.kernel_basis;  // p x (n-rank)
    worst = inner.cwiseAbs().maxCoeff();
  } else {
    for (int i = 0; i < sigma.jacobian.rows(); ++i) {
      const Eigen::VectorXd g = sigma.jacobian.row(i).transpose();
      const Eigen::VectorXd residual = g - sigma.range_basis * (sigma.range_basis.transpose() * g);
      worst = std::max(worst, residual.norm());
    }
  }
  return worst;
}

/// Splits theta - theta_ref into range- and kernel-space components of
/// Sigma. The pieces are orthogonal and sum back to the difference.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> subspace_decompose(
    const SigmaEstimate& sigma, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_ref) {
  if (theta.size() != sigma.dim() || theta_ref.size() != sigma.dim())
    throw std::invalid_argument("subspace_decompose: dimension mismatch");
  const Eigen::VectorXd diff = theta - theta_ref;
  const Eigen::VectorXd parallel =
      sigma.range_basis * (sigma.range_basis.transpose() * diff);
  return {parallel, diff - parallel};
}

// ---------------------------------------------------------------------------
// Regularity probes (Bellman-optimality and minimax feature covariances)
// ---------------------------------------------------------------------------

namespace detail {

/// Orthonormal basis of the joint range of two factored covariances, then
/// lambda_min of (1-nu)^2 Sigma - gamma^2 Sigma* restricted to that space.
inline double restricted_min_eig(const Eigen::MatrixXd& jac, const Eigen::VectorXd& w,
                                 const Eigen::MatrixXd& jac_star, const Eigen::VectorXd& w_star,
                                 double nu, double gamma) {
  Eigen::MatrixXd stacked(jac.rows() + jac_star.rows(), jac.cols());
  stacked.topRows(jac.rows()) = w.cwiseSqrt().asDiagonal() * jac;
  stacked.bottomRows(jac_star.rows()) = w_star.cwiseSqrt().asDiagonal() * jac_star;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = std::max<double>(stacked.rows(), stacked.cols()) *
                        std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
  int rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  if (rank == 0) return 0.0;
  const Eigen::MatrixXd basis = svd.matrixV().leftCols(rank);  // n x k

  const Eigen::MatrixXd jb = jac * basis;            // p x k
  const Eigen::MatrixXd jsb = jac_star * basis;      // p* x k
  const Eigen::MatrixXd reduced =
      (1.0 - nu) * (1.0 - nu) * (jb.transpose() * w.asDiagonal() * jb) -
      gamma * gamma * (jsb.transpose() * w_star.asDiagonal() * jsb);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (reduced + reduced.transpose()));
  return eig.eigenvalues().minCoeff();
}

}  // namespace detail

/// Assumption probe for neural Q-learning: minimum over theta samples of
/// lambda_min((1-nu)^2 Sigma - gamma^2 Sigma*(theta)) restricted to the
/// joint range space. Sigma*(theta) uses per state the action maximizing
/// |<grad Q(s,a; theta0), theta>| (ties to the smallest index) and the
/// stationary state marginal as weight.
inline double regularity_probe_q(const NetworkParams& params_at_init, const Activation& act,
                                 const FeatureMap& fmap, const TabularMdp& mdp,
                                 const TabularPolicy& policy,
                                 const std::vector<Eigen::VectorXd>& theta_samples, double nu) {
  if (theta_samples.empty()) throw std::invalid_argument("regularity_probe_q: no theta samples");
  if (fmap.n_states != mdp.n_states || fmap.n_actions != mdp.n_actions)
    throw std::invalid_argument("regularity_probe_q: feature map layout does not match MDP");

  const Eigen::VectorXd pair_weights = stationary_distribution(mdp, policy);
  const Eigen::VectorXd state_weights = stationary_state_distribution(mdp, policy);
  const SigmaEstimate sigma =
      estimate_sigma(params_at_init, act, fmap, pair_weights, /*kernel_limit=*/0);

  double min_eig = std::numeric_limits<double>::infinity();
  for (const Eigen::VectorXd& theta : theta_samples) {
    if (theta.size() != sigma.dim())
      throw std::invalid_argument("regularity_probe_q: theta sample has wrong length");
    Eigen::MatrixXd jac_star(mdp.n_states, sigma.dim());
    for (int s = 0; s < mdp.n_states; ++s) {
      int best = 0;
      double best_val = -1.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double v = std::abs(sigma.jacobian.row(fmap.pair_index(s, a)).dot(theta));
        if (v > best_val) {
          best_val = v;
          best = a;
        }
      }
      jac_star.row(s) = sigma.jacobian.row(fmap.pair_index(s, best));
    }
    min_eig = std::min(min_eig, detail::restricted_min_eig(sigma.jacobian, pair_weights, jac_star,
                                                           state_weights, nu, mdp.gamma));
  }
  return min_eig;
}

/// Action-pair selector of the minimax covariance: (a1, a2) attaining the
/// chosen pure-strategy order on <grad Q(s,.,.; theta0), theta>, ties to the
/// smallest indices.
inline std::pair<int, int> minimax_selector(const Eigen::MatrixXd& inner_products,
                                            MinimaxOrder order) {
  const int rows = static_cast<int>(inner_products.rows());
  const int cols = static_cast<int>(inner_products.cols());
  int best_a1 = 0, best_a2 = 0;
  double outer = 0.0;
  for (int a1 = 0; a1 < rows; ++a1) {
    int inner_idx = 0;
    double inner = inner_products(a1, 0);
    for (int a2 = 1; a2 < cols; ++a2) {
      const double v = inner_products(a1, a2);
      if (order == MinimaxOrder::MaxMin ? v < inner : v > inner) {
        inner = v;
        inner_idx = a2;
      }
    }
    if (a1 == 0 || (order == MinimaxOrder::MaxMin ? inner > outer : inner < outer)) {
      outer = inner;
      best_a1 = a1;
      best_a2 = inner_idx;
    }
  }
  return {best_a1, best_a2};
}

/// Assumption probe for minimax neural Q-learning. For each (theta1, theta2)
/// pair and state, the two cross action pairs (a1 from one parameter's
/// selector, a2 from the other's) compete on |<grad Q, theta1 - theta2>|;
/// ties keep the first candidate.
inline double regularity_probe_minimax(const NetworkParams& params_at_init, const Activation& act,
                                       const FeatureMap& fmap, const MarkovGame& game,
                                       const TabularPolicy& pi1, const TabularPolicy& pi2,
                                       const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>&
                                           theta_pairs,
                                       double nu, MinimaxOrder order = MinimaxOrder::MaxMin) {
  if (theta_pairs.empty())
    throw std::invalid_argument("regularity_probe_minimax: no theta pairs");
  if (fmap.n_states != game.n_states || fmap.n_actions != game.n_actions_p1 ||
      fmap.n_actions2 != game.n_actions_p2)
    throw std::invalid_argument("regularity_probe_minimax: feature map layout mismatch");

  const Eigen::VectorXd triple_weights = stationary_distribution(game, pi1, pi2);
  const Eigen::VectorXd state_weights = stationary_state_distribution(game, pi1, pi2);
  const SigmaEstimate sigma =
      estimate_sigma(params_at_init, act, fmap, triple_weights, /*kernel_limit=*/0);

  Eigen::MatrixXd inner(game.n_actions_p1, game.n_actions_p2);
  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& [theta1, theta2] : theta_pairs) {
    const Eigen::VectorXd diff = theta1 - theta2;
    Eigen::MatrixXd jac_star(game.n_states, sigma.dim());
    for (int s = 0; s < game.n_states; ++s) {
      auto selector_for = [&](const Eigen::VectorXd& theta) {
        for (int a1 = 0; a1 < game.n_actions_p1; ++a1)
          for (int a2 = 0; a2 < game.n_actions_p2; ++a2)
            inner(a1, a2) = sigma.jacobian.row(fmap.triple_index(s, a1, a2)).dot(theta);
        return minimax_selector(inner, order);
      };
      const auto [a1_first, a2_first] = selector_for(theta1);
      const auto [a1_second, a2_second] = selector_for(theta2);
      const int cand_rows[2] = {fmap.triple_index(s, a1_first, a2_second),
                                fmap.triple_index(s, a1_second, a2_first)};
      const double score0 = std::abs(sigma.jacobian.row(cand_rows[0]).dot(diff));
      const double score1 = std::abs(sigma.jacobian.row(cand_rows[1]).dot(diff));
      jac_star.row(s) = sigma.jacobian.row(score1 > score0 ? cand_rows[1] : cand_rows[0]);
    }
    min_eig = std::min(min_eig, detail::restricted_min_eig(sigma.jacobian, triple_weights,
                                                           jac_star, state_weights, nu,
                                                           game.gamma));
  }
  return min_eig;
}

/// Largest nu on the grid {0.01, 0.02, ..., 0.99} whose probe stays above
/// -1e-8; feeds the Q-learning step-size schedule. Empty when none passes.
template <typename Probe>
inline std::optional<double> largest_feasible_nu(Probe&& probe) {
  std::optional<double> best;
  for (int i = 1; i <= 99; ++i) {
    const double nu = i / 100.0;
    if (probe(nu) >= -1e-8) best = nu;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Bellman contraction
// ---------------------------------------------------------------------------

/// Max over random bounded Q-table pairs of
/// ||T^pi Q1 - T^pi Q2||_d / ||Q1 - Q2||_d under the stationary weights;
/// the exact operator keeps this at or below gamma.
inline double contraction_check(const TabularMdp& mdp, const TabularPolicy& policy, int n_trials,
                                std::uint64_t seed) {
  if (n_trials < 1) throw std::invalid_argument("contraction_check: n_trials must be >= 1");
  const Eigen::VectorXd d = stationary_distribution(mdp, policy);
  const Eigen::MatrixXd p_pair = pair_transition_matrix(mdp, policy);
  const int n = mdp.n_states * mdp.n_actions;
  const double bound = mdp.r_max / (1.0 - mdp.gamma);

  Rng rng(seed);
  double worst = 0.0;
  Eigen::VectorXd q1(n), q2(n);
  for (int trial = 0; trial < n_trials; ++trial) {
    for (int i = 0; i < n; ++i) {
      q1(i) = rng.uniform(-bound, bound);
      q2(i) = rng.uniform(-bound, bound);
    }
    const Eigen::VectorXd diff = q1 - q2;
    const double denom = std::sqrt(diff.cwiseAbs2().cwiseProduct(d).sum());
    if (denom == 0.0) continue;  // ratio defined as 0 for identical tables
    const Eigen::VectorXd backup_diff = mdp.gamma * (p_pair * diff);
    const double numer = std::sqrt(backup_diff.cwiseAbs2().cwiseProduct(d).sum());
    worst = std::max(worst, numer / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Linearization gap
// ---------------------------------------------------------------------------

struct GapScanPoint {
  int width = 0;
  double max_gap = 0.0;
};

namespace detail {

/// Top curvature direction of Q at theta0 for input x, via power iteration
/// on Hessian-vector products formed from central differences of the exact
/// gradient.
inline Eigen::VectorXd top_curvature_direction(const NetworkParams& params, const Activation& act,
                                               const Eigen::VectorXd& x, Rng& rng,
                                               int iterations) {
  const long long n = params.num_params();
  Eigen::VectorXd v(n);
  for (long long i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();
  const double eps = 1e-4;
  ForwardCache cache;
  Eigen::VectorXd grad_plus, grad_minus;
  NetworkParams probe = params;
  for (int it = 0; it < iterations; ++it) {
    probe.theta = params.theta + eps * v;
    grad_theta_into(probe, act, x, cache, grad_plus);
    probe.theta = params.theta - eps * v;
    grad_theta_into(probe, act, x, cache, grad_minus);
    Eigen::VectorXd hv = (grad_plus - grad_minus) / (2.0 * eps);
    const double norm = hv.norm();
    if (norm < 1e-14) break;
    v = hv / norm;
  }
  return v;
}

}  // namespace detail

/// Max |Q - Qhat| on the sphere ||theta - theta0|| = omega per width. The
/// sphere is probed with n_theta uniform directions plus, per feature, the
/// top curvature direction found by power iteration; uniform directions
/// alone concentrate on an O(1/m) average effect and miss the sphere
/// maximum, which the Hessian's top eigenvector attains. The base point
/// theta0 itself is always included (gap exactly 0).
inline std::vector<GapScanPoint> linearization_gap_scan(int depth, int input_dim,
                                                        const std::vector<int>& widths,
                                                        double omega, int n_theta, int n_x,
                                                        std::uint64_t seed, const Activation& act,
                                                        int power_iterations = 25) {
  if (widths.empty()) throw std::invalid_argument("linearization_gap_scan: no widths");
  if (!std::is_sorted(widths.begin(), widths.end()))
    throw std::invalid_argument("linearization_gap_scan: widths must be ascending");
  if (n_theta < 1 || n_x < 1)
    throw std::invalid_argument("linearization_gap_scan: n_theta and n_x must be >= 1");
  if (omega <= 0.0) throw std::invalid_argument("linearization_gap_scan: omega must be positive");

  std::vector<GapScanPoint> points;
  points.reserve(widths.size());
  for (std::size_t wi = 0; wi < widths.size(); ++wi) {
    const int m = widths[wi];
    const NetworkParams params = init_params(depth, m, input_dim, mix_seed(seed, wi));
    const long long n = params.num_params();
    Rng rng(mix_seed(seed, 0x9A50 + wi));

    // Unit feature inputs plus their gradients at theta0.
    std::vector<Eigen::VectorXd> xs;
    std::vector<Eigen::VectorXd> grads;
    std::vector<double> q0s;
    ForwardCache cache;
    for (int j = 0; j < n_x; ++j) {
      Eigen::VectorXd x(input_dim);
      for (int k = 0; k < input_dim; ++k) x(k) = rng.normal();
      x.normalize();
      Eigen::VectorXd g;
      const double q0 = grad_theta_into(params, act, x, cache, g);
      xs.push_back(std::move(x));
      grads.push_back(std::move(g));
      q0s.push_back(q0);
    }

    double max_gap = 0.0;  // theta = theta0 contributes exactly 0
    NetworkParams probe = params;
    Eigen::VectorXd direction(n);
    auto record_gap = [&](const Eigen::VectorXd& dir) {
      for (double sign : {1.0, -1.0}) {
        probe.theta = params.theta + (sign * omega) * dir;
        for (int j = 0; j < n_x; ++j) {
          const double q = forward(probe, act, xs[j]);
          const double q_hat = q0s[j] + sign * omega * grads[j].dot(dir);
          max_gap = std::max(max_gap, std::abs(q - q_hat));
        }
      }
    };

    for (int i = 0; i < n_theta; ++i) {
      for (long long k = 0; k < n; ++k) direction(k) = rng.normal();
      direction.normalize();
      record_gap(direction);
    }
    for (int j = 0; j < n_x; ++j)
      record_gap(detail::top_curvature_direction(params, act, xs[j], rng, power_iterations));

    points.push_back({m, max_gap});
  }
  return points;
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("linear_fit: need at least two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) throw std::invalid_argument("linear_fit: degenerate abscissae");
  LinearFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = fit.slope * x[i] + fit.intercept;
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
  }
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res < 1e-24 ? 1.0 : 0.0);
  return fit;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int n_used = 0;
  int n_excluded = 0;  // non-positive errors dropped with a warning count
};

/// OLS on (log T, log error). Non-positive errors are excluded; fewer than
/// three usable points is an error.
inline SlopeFit fit_rate_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<double> lx, ly;
  int excluded = 0;
  for (const auto& [t, err] : points) {
    if (!(err > 0.0) || !(t > 0.0)) {
      ++excluded;
      continue;
    }
    lx.push_back(std::log(t));
    ly.push_back(std::log(err));
  }
  if (lx.size() < 3)
    throw std::invalid_argument("fit_rate_slope: fewer than 3 usable points after exclusions");
  const LinearFit fit = linear_fit(lx, ly);
  return {fit.slope, fit.intercept, fit.r_squared, static_cast<int>(lx.size()), excluded};
}

}  // namespace tdlab
