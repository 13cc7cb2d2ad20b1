#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/network.hpp"
#include "tdlab/oracles.hpp"

using namespace tdlab;

namespace {

TabularMdp single_state_mdp(double reward, double gamma) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.gamma = gamma;
  mdp.r_max = std::abs(reward) + 1.0;
  mdp.transition = {1.0};
  mdp.reward = Eigen::MatrixXd::Constant(1, 1, reward);
  return mdp;
}

// Independent oracle: plain value-iteration sweeps of T^pi.
Eigen::MatrixXd value_iteration_q_pi(const TabularMdp& mdp, const TabularPolicy& pi, int sweeps) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int k = 0; k < sweeps; ++k) {
    Eigen::MatrixXd next(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double backup = 0;
        for (int t = 0; t < mdp.n_states; ++t)
          for (int b = 0; b < mdp.n_actions; ++b)
            backup += mdp.p(s, a, t) * pi.probs(t, b) * q(t, b);
        next(s, a) = mdp.reward(s, a) + mdp.gamma * backup;
      }
    q = next;
  }
  return q;
}

}  // namespace

TEST_CASE("exact_q_pi: geometric series and gamma = 0 limits") {
  const TabularMdp mdp = single_state_mdp(0.7, 0.9);
  CHECK(exact_q_pi(mdp, uniform_policy(1, 1)).q(0, 0) ==
        doctest::Approx(0.7 / 0.1).epsilon(1e-12));

  TabularMdp near_zero = random_mdp(3, 2, 0.9, 1.0, 4);
  near_zero.gamma = 1e-300;  // gamma = 0 limit within the (0,1) domain
  const QTable q = exact_q_pi(near_zero, uniform_policy(3, 2));
  CHECK((q.q - near_zero.reward).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("exact_q_pi: agrees with iterated Bellman sweeps") {
  const TabularMdp mdp = random_mdp(3, 2, 0.9, 1.0, 8);
  const TabularPolicy pi = uniform_policy(3, 2);
  const QTable solved = exact_q_pi(mdp, pi);
  const Eigen::MatrixXd iterated = value_iteration_q_pi(mdp, pi, 400);
  CHECK((solved.q - iterated).cwiseAbs().maxCoeff() <= 1e-8);

  // Residual invariant: q = T^pi q within 1e-9.
  const Eigen::MatrixXd once = [&] {
    Eigen::MatrixXd next(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double backup = 0;
        for (int t = 0; t < mdp.n_states; ++t)
          for (int b = 0; b < mdp.n_actions; ++b)
            backup += mdp.p(s, a, t) * pi.probs(t, b) * solved.q(t, b);
        next(s, a) = mdp.reward(s, a) + mdp.gamma * backup;
      }
    return next;
  }();
  CHECK((solved.q - once).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("exact_q_star: single action reduces to policy evaluation") {
  const TabularMdp mdp = random_mdp(4, 1, 0.9, 1.0, 10);
  const QTable star = exact_q_star(mdp, 1e-10);
  const QTable pi_q = exact_q_pi(mdp, uniform_policy(4, 1));
  CHECK((star.q - pi_q.q).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("exact_q_star: matches enumeration of deterministic policies") {
  // On a 2-state 2-action instance, Q*(s,a) = r(s,a) + gamma E[max_b Q*(s',b)]
  // and V* = max over the four deterministic policies of their V^pi.
  const TabularMdp mdp = random_mdp(2, 2, 0.9, 1.0, 12);
  const QTable star = exact_q_star(mdp, 1e-11);

  Eigen::VectorXd best_v = Eigen::VectorXd::Constant(2, -1e60);
  for (int a0 = 0; a0 < 2; ++a0)
    for (int a1 = 0; a1 < 2; ++a1) {
      TabularPolicy det;
      det.probs = Eigen::MatrixXd::Zero(2, 2);
      det.probs(0, a0) = 1;
      det.probs(1, a1) = 1;
      const QTable q = exact_q_pi(mdp, det);
      best_v(0) = std::max(best_v(0), q.q(0, a0));
      best_v(1) = std::max(best_v(1), q.q(1, a1));
    }
  for (int s = 0; s < 2; ++s)
    CHECK(star.q.row(s).maxCoeff() == doctest::Approx(best_v(s)).epsilon(1e-8));
}

TEST_CASE("value iteration contracts at rate gamma") {
  const TabularMdp mdp = random_mdp(4, 2, 0.9, 1.0, 14);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 2);
  double prev_diff = -1;
  for (int sweep = 0; sweep < 30; ++sweep) {
    Eigen::MatrixXd next(4, 2);
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) {
        double backup = 0;
        for (int t = 0; t < 4; ++t) backup += mdp.p(s, a, t) * q.row(t).maxCoeff();
        next(s, a) = mdp.reward(s, a) + mdp.gamma * backup;
      }
    const double diff = (next - q).cwiseAbs().maxCoeff();
    if (prev_diff > 1e-14) CHECK(diff <= mdp.gamma * prev_diff + 1e-12);
    prev_diff = diff;
    q = next;
  }
}

TEST_CASE("minimax_value: the two orders differ off saddle points") {
  Eigen::MatrixXd payoff(2, 2);
  payoff << 1, 0, 2, -1;
  CHECK(minimax_value(payoff, MinimaxOrder::MaxMin) == 0.0);
  CHECK(minimax_value(payoff, MinimaxOrder::MinMax) == 1.0);

  const Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(3, 2, 0.4);
  CHECK(minimax_value(constant, MinimaxOrder::MaxMin) ==
        minimax_value(constant, MinimaxOrder::MinMax));
}

TEST_CASE("exact_minimax_q: 1x1 actions reduce to policy evaluation") {
  const TabularMdp mdp = random_mdp(3, 1, 0.9, 1.0, 16);
  const MarkovGame game = game_from_single_action_mdp(mdp);
  const GameQTable minimax = exact_minimax_q(game, 1e-10, MinimaxOrder::MaxMin);
  const QTable q_pi = exact_q_pi(mdp, uniform_policy(3, 1));
  for (int s = 0; s < 3; ++s)
    CHECK(minimax.value(s, 0, 0) == doctest::Approx(q_pi.q(s, 0)).epsilon(1e-9));
}

TEST_CASE("exact_minimax_q: fixed point of the minimax backup") {
  const MarkovGame game = random_game(3, 2, 2, 0.8, 1.0, 19);
  for (MinimaxOrder order : {MinimaxOrder::MaxMin, MinimaxOrder::MinMax}) {
    const GameQTable q = exact_minimax_q(game, 1e-10, order);
    Eigen::MatrixXd payoff(2, 2);
    for (int s = 0; s < 3; ++s) {
      for (int a1 = 0; a1 < 2; ++a1)
        for (int a2 = 0; a2 < 2; ++a2) {
          double backup = 0;
          for (int t = 0; t < 3; ++t) {
            for (int b1 = 0; b1 < 2; ++b1)
              for (int b2 = 0; b2 < 2; ++b2) payoff(b1, b2) = q.value(t, b1, b2);
            backup += game.p(s, a1, a2, t) * minimax_value(payoff, order);
          }
          CHECK(q.value(s, a1, a2) ==
                doctest::Approx(game.r(s, a1, a2) + game.gamma * backup).epsilon(1e-8));
        }
    }
  }
}

TEST_CASE("projected_fixed_point: gamma = 0 is weighted least squares") {
  TabularMdp mdp = random_mdp(3, 2, 0.9, 1.0, 22);
  mdp.gamma = 1e-300;
  const TabularPolicy pi = uniform_policy(3, 2);
  const FeatureMap fmap = one_hot_features(3, 2);
  const NetworkParams params = init_params(1, 8, fmap.dim, 5);
  const Activation act = Activation::elu();
  const FixedPointResult fp = projected_fixed_point(params, act, fmap, mdp, pi, 50.0);

  // Residual r - Qhat is D-orthogonal to the gradient span.
  const Eigen::VectorXd d = stationary_distribution(mdp, pi);
  Eigen::VectorXd r(6);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) r(s * 2 + a) = mdp.reward(s, a);
  Eigen::MatrixXd jac(6, params.num_params());
  for (int i = 0; i < 6; ++i) jac.row(i) = grad_theta(params, act, fmap.row(i)).transpose();
  const Eigen::VectorXd residual = r - fp.q_hat;
  CHECK((jac.transpose() * d.asDiagonal() * residual).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("projected_fixed_point: full-rank features recover Q^pi exactly") {
  const TabularMdp mdp = random_mdp(4, 2, 0.9, 0.5, 30);
  const TabularPolicy pi = uniform_policy(4, 2);
  const FeatureMap fmap = one_hot_features(4, 2);
  const NetworkParams params = init_params(2, 32, fmap.dim, 3);
  const FixedPointResult fp =
      projected_fixed_point(params, Activation::elu(), fmap, mdp, pi, 50.0);
  const QTable q_pi = exact_q_pi(mdp, pi);
  CHECK((fp.q_hat - q_pi.flattened()).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(fp.rank == 8);
  CHECK(fp.inside_ball);
  CHECK(fp.residual <= 1e-8);
}

TEST_CASE("projected_fixed_point: kernel offsets leave support values fixed") {
  const TabularMdp mdp = random_mdp(2, 2, 0.9, 1.0, 33);
  const TabularPolicy pi = uniform_policy(2, 2);
  const FeatureMap fmap = one_hot_features(2, 2);
  const NetworkParams params = init_params(1, 4, fmap.dim, 8);  // n = 16 > p = 4
  const Activation act = Activation::elu();
  const FixedPointResult fp = projected_fixed_point(params, act, fmap, mdp, pi, 50.0);

  Eigen::MatrixXd jac(4, params.num_params());
  Eigen::VectorXd q0(4);
  for (int i = 0; i < 4; ++i) {
    q0(i) = forward(params, act, fmap.row(i));
    jac.row(i) = grad_theta(params, act, fmap.row(i)).transpose();
  }
  // Build a kernel vector of the Jacobian via its SVD.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeFullV);
  const Eigen::VectorXd kernel_dir = svd.matrixV().col(params.num_params() - 1);
  CHECK((jac * kernel_dir).cwiseAbs().maxCoeff() <= 1e-10);

  const Eigen::VectorXd shifted = fp.delta + 3.0 * kernel_dir;
  const Eigen::VectorXd q_shifted = q0 + jac * shifted;
  CHECK((q_shifted - fp.q_hat).cwiseAbs().maxCoeff() <= 1e-10);

  // Minimum-norm contract: delta carries no kernel component.
  CHECK(std::abs(fp.delta.dot(kernel_dir)) <= 1e-10);
}

TEST_CASE("projected_fixed_point: stationarity holds on range directions") {
  const TabularMdp mdp = random_mdp(3, 2, 0.85, 1.0, 40);
  const TabularPolicy pi = uniform_policy(3, 2);
  const FeatureMap fmap = one_hot_features(3, 2);
  const NetworkParams params = init_params(2, 16, fmap.dim, 12);
  const Activation act = Activation::elu();
  const FixedPointResult fp = projected_fixed_point(params, act, fmap, mdp, pi, 50.0);

  const Eigen::VectorXd d = stationary_distribution(mdp, pi);
  const Eigen::MatrixXd p_pair = pair_transition_matrix(mdp, pi);
  Eigen::VectorXd r(6);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) r(s * 2 + a) = mdp.reward(s, a);
  Eigen::MatrixXd jac(6, params.num_params());
  for (int i = 0; i < 6; ++i) jac.row(i) = grad_theta(params, act, fmap.row(i)).transpose();

  // E[Delta-hat grad Qhat] restricted to range directions vanishes.
  const Eigen::VectorXd delta_hat = fp.q_hat - r - mdp.gamma * (p_pair * fp.q_hat);
  const Eigen::VectorXd stationarity = jac.transpose() * d.asDiagonal() * delta_hat;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinV);
  Rng rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd coeff(svd.matrixV().cols());
    for (int i = 0; i < coeff.size(); ++i) coeff(i) = rng.normal();
    Eigen::VectorXd v = svd.matrixV() * coeff;
    v.normalize();
    CHECK(std::abs(stationarity.dot(v)) <= 1e-8);
  }
}
