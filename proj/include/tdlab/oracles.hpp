#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/network.hpp"

namespace tdlab {

struct QTable {
  Eigen::MatrixXd q;  // n_states x n_actions

  Eigen::VectorXd flattened() const {
    Eigen::VectorXd v(q.size());
    for (int s = 0; s < q.rows(); ++s)
      for (int a = 0; a < q.cols(); ++a) v(s * q.cols() + a) = q(s, a);
    return v;
  }
};

struct GameQTable {
  int n_states = 0;
  int n_actions_p1 = 0;
  int n_actions_p2 = 0;
  Eigen::MatrixXd q;  // n_states x (a1*a2)

  double value(int s, int a1, int a2) const { return q(s, a1 * n_actions_p2 + a2); }
  double& value(int s, int a1, int a2) { return q(s, a1 * n_actions_p2 + a2); }

  Eigen::VectorXd flattened() const {
    Eigen::VectorXd v(q.size());
    for (int s = 0; s < n_states; ++s)
      for (int j = 0; j < q.cols(); ++j) v(s * q.cols() + j) = q(s, j);
    return v;
  }
};

enum class MinimaxOrder { MaxMin, MinMax };

/// Pure-strategy backup value of a payoff matrix M[a1][a2]; ties break to the
/// smallest indices. MaxMin = max_{a1} min_{a2}, MinMax = min_{a1} max_{a2}.
inline double minimax_value(const Eigen::MatrixXd& payoff, MinimaxOrder order) {
  if (payoff.rows() < 1 || payoff.cols() < 1)
    throw std::invalid_argument("minimax_value: empty payoff matrix");
  double outer = 0.0;
  for (int a1 = 0; a1 < payoff.rows(); ++a1) {
    double inner = payoff(a1, 0);
    for (int a2 = 1; a2 < payoff.cols(); ++a2) {
      const double v = payoff(a1, a2);
      if (order == MinimaxOrder::MaxMin ? v < inner : v > inner) inner = v;
    }
    if (a1 == 0 || (order == MinimaxOrder::MaxMin ? inner > outer : inner < outer)) outer = inner;
  }
  return outer;
}

/// Q^pi by direct linear solve of (I - gamma P^pi) q = r over (s,a) pairs.
inline QTable exact_q_pi(const TabularMdp& mdp, const TabularPolicy& policy) {
  const int n = mdp.n_states * mdp.n_actions;
  const Eigen::MatrixXd p_pair = pair_transition_matrix(mdp, policy);
  Eigen::VectorXd r(n);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) r(s * mdp.n_actions + a) = mdp.reward(s, a);

  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * p_pair;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  const Eigen::VectorXd q = lu.solve(r);
  const double residual = (system * q - r).cwiseAbs().maxCoeff();
  if (!q.allFinite() || residual > 1e-9)
    throw std::runtime_error("exact_q_pi: linear solve failed (residual " +
                             std::to_string(residual) + ")");

  QTable table;
  table.q.resize(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) table.q(s, a) = q(s * mdp.n_actions + a);
  return table;
}

/// Q* by value iteration, stopping when the sweep difference guarantees
/// ||q - Q*||_inf <= tol via the gamma/(1-gamma) amplification bound.
inline QTable exact_q_star(const TabularMdp& mdp, double tol) {
  if (tol <= 0.0) throw std::invalid_argument("exact_q_star: tol must be positive");
  const double gamma = mdp.gamma;
  const double stop = gamma > 0.0 ? tol * (1.0 - gamma) / gamma : 0.0;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  Eigen::MatrixXd next(mdp.n_states, mdp.n_actions);
  for (long long sweep = 0;; ++sweep) {
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        double backup = 0.0;
        for (int t = 0; t < mdp.n_states; ++t) backup += mdp.p(s, a, t) * q.row(t).maxCoeff();
        next(s, a) = mdp.reward(s, a) + gamma * backup;
      }
    }
    const double diff = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (diff <= stop) break;
    if (sweep > 1000000)
      throw std::runtime_error("exact_q_star: value iteration failed to converge");
  }
  return QTable{q};
}

/// Minimax Q* by value iteration with the selected pure-strategy order
/// applied to the next-state payoff matrix.
inline GameQTable exact_minimax_q(const MarkovGame& game, double tol, MinimaxOrder order) {
  if (tol <= 0.0) throw std::invalid_argument("exact_minimax_q: tol must be positive");
  const double gamma = game.gamma;
  const double stop = gamma > 0.0 ? tol * (1.0 - gamma) / gamma : 0.0;
  GameQTable table;
  table.n_states = game.n_states;
  table.n_actions_p1 = game.n_actions_p1;
  table.n_actions_p2 = game.n_actions_p2;
  table.q = Eigen::MatrixXd::Zero(game.n_states, game.n_actions_p1 * game.n_actions_p2);

  Eigen::MatrixXd payoff(game.n_actions_p1, game.n_actions_p2);
  Eigen::MatrixXd next = table.q;
  for (long long sweep = 0;; ++sweep) {
    Eigen::VectorXd state_value(game.n_states);
    for (int s = 0; s < game.n_states; ++s) {
      for (int a1 = 0; a1 < game.n_actions_p1; ++a1)
        for (int a2 = 0; a2 < game.n_actions_p2; ++a2)
          payoff(a1, a2) = table.q(s, a1 * game.n_actions_p2 + a2);
      state_value(s) = minimax_value(payoff, order);
    }
    for (int s = 0; s < game.n_states; ++s) {
      for (int a1 = 0; a1 < game.n_actions_p1; ++a1) {
        for (int a2 = 0; a2 < game.n_actions_p2; ++a2) {
          double backup = 0.0;
          for (int t = 0; t < game.n_states; ++t) backup += game.p(s, a1, a2, t) * state_value(t);
          next(s, a1 * game.n_actions_p2 + a2) = game.r(s, a1, a2) + gamma * backup;
        }
      }
    }
    const double diff = (next - table.q).cwiseAbs().maxCoeff();
    table.q = next;
    if (diff <= stop) break;
    if (sweep > 1000000)
      throw std::runtime_error("exact_minimax_q: value iteration failed to converge");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Projected Bellman fixed point on the linearized class
// ---------------------------------------------------------------------------

struct FixedPointResult {
  Eigen::VectorXd theta_star;  // theta0 + delta, minimum-norm delta
  Eigen::VectorXd q_hat;       // Qhat(.; theta_star) over the support rows
  Eigen::VectorXd delta;
  bool inside_ball = false;  // ||delta|| <= omega
  double delta_norm = 0.0;
  double residual = 0.0;  // D-weighted fixed-point residual on the support
  int rank = 0;
  double omega = 0.0;
};

/// Solves the LSTD-style stationarity system of the projected Bellman
/// operator on the affine class around theta0:
///   J^T D (J delta + q0 - r - gamma P^pi (J delta + q0)) = 0,
/// where J holds the support gradients at theta0 and D the stationary
/// weights. delta is the minimum-norm solution (no kernel component); when
/// ||delta|| > omega the instance is flagged rather than projected.
inline FixedPointResult projected_fixed_point(const NetworkParams& params_at_init,
                                              const Activation& act, const FeatureMap& fmap,
                                              const TabularMdp& mdp, const TabularPolicy& policy,
                                              double omega) {
  if (fmap.n_states != mdp.n_states || fmap.n_actions != mdp.n_actions || fmap.n_actions2 != 0)
    throw std::invalid_argument("projected_fixed_point: feature map layout does not match MDP");
  const int p = mdp.n_states * mdp.n_actions;
  const long long n = params_at_init.num_params();

  Eigen::MatrixXd jac(p, n);
  Eigen::VectorXd q0(p), r(p);
  ForwardCache cache;
  Eigen::VectorXd grad;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const int i = s * mdp.n_actions + a;
      q0(i) = grad_theta_into(params_at_init, act, fmap.row(fmap.pair_index(s, a)), cache, grad);
      jac.row(i) = grad.transpose();
      r(i) = mdp.reward(s, a);
    }
  }

  const Eigen::VectorXd d = stationary_distribution(mdp, policy);
  const Eigen::MatrixXd p_pair = pair_transition_matrix(mdp, policy);

  // Range basis of J^T via thin SVD of the weighted factor.
  const Eigen::MatrixXd jac_weighted = d.cwiseSqrt().asDiagonal() * jac;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac_weighted, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double threshold =
      std::max<double>(n, p) * std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
  int rank = 0;
  while (rank < sv.size() && sv(rank) > threshold) ++rank;
  if (rank == 0) throw std::runtime_error("projected_fixed_point: zero-rank support Jacobian");
  const Eigen::MatrixXd range = svd.matrixV().leftCols(rank);  // n x rank

  // Reduced system in range coordinates: M c = rhs, delta = range * c.
  const Eigen::MatrixXd bellman = Eigen::MatrixXd::Identity(p, p) - mdp.gamma * p_pair;
  const Eigen::MatrixXd jac_range = jac * range;  // p x rank
  const Eigen::MatrixXd m_reduced =
      jac_range.transpose() * d.asDiagonal() * (bellman * jac_range);
  const Eigen::VectorXd rhs = jac_range.transpose() * (d.asDiagonal() * (r - bellman * q0));

  Eigen::FullPivLU<Eigen::MatrixXd> lu(m_reduced);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "projected_fixed_point: reduced stationarity system is singular (rank " +
        std::to_string(lu.rank()) + " of " + std::to_string(rank) + ")");
  const Eigen::VectorXd coeffs = lu.solve(rhs);

  FixedPointResult result;
  result.delta = range * coeffs;
  result.theta_star = params_at_init.theta + result.delta;
  result.q_hat = q0 + jac * result.delta;
  result.delta_norm = result.delta.norm();
  result.omega = omega;
  result.inside_ball = result.delta_norm <= omega;
  result.rank = rank;

  // Fixed-point residual of the projected operator in the D-weighted norm:
  // project the Bellman target back onto the affine class and compare.
  const Eigen::VectorXd target = r + mdp.gamma * (p_pair * result.q_hat);
  const Eigen::VectorXd proj_coeffs =
      (jac_range.transpose() * d.asDiagonal() * jac_range)
          .ldlt()
          .solve(jac_range.transpose() * (d.asDiagonal() * (target - q0)));
  const Eigen::VectorXd projected = q0 + jac_range * proj_coeffs;
  result.residual = std::sqrt((result.q_hat - projected)
                                  .cwiseAbs2()
                                  .cwiseProduct(d)
                                  .sum());
  if (result.residual > 1e-8)
    throw std::runtime_error("projected_fixed_point: fixed-point residual " +
                             std::to_string(result.residual) + " exceeds 1e-8");
  return result;
}

}  // namespace tdlab
