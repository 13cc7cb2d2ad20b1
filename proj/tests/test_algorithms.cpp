#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tdlab/algorithms.hpp"
#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/network.hpp"

using namespace tdlab;

namespace {

TabularMdp constant_reward_mdp(double reward) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.gamma = 0.5;  // unused by gamma = 0 training configs
  mdp.r_max = std::abs(reward) + 1.0;
  mdp.transition = {1.0};
  mdp.reward = Eigen::MatrixXd::Constant(1, 1, reward);
  return mdp;
}

TrainConfig base_config(Algorithm alg, double gamma, long long iterations) {
  TrainConfig cfg;
  cfg.algorithm = alg;
  cfg.gamma = gamma;
  cfg.omega = 5.0;
  cfg.iterations = iterations;
  cfg.schedule = LrSchedule::constant(0.05);
  cfg.seed = 7;
  cfg.eval_every = std::max<long long>(1, iterations / 8);
  return cfg;
}

}  // namespace

TEST_CASE("step_size: theorem schedule values") {
  // TD with gamma = 0.9, lambda0 = 1 at t = 0: 1 / (2 * 0.1 * 1 * 1) = 5.
  CHECK(step_size(Algorithm::Td, LrSchedule::theorem(1.0), 0.9, 0) ==
        doctest::Approx(5.0).epsilon(1e-15));
  // Harmonic halving between t = 0 and t = 1.
  const double eta0 = step_size(Algorithm::Td, LrSchedule::theorem(0.3), 0.9, 0);
  const double eta1 = step_size(Algorithm::Td, LrSchedule::theorem(0.3), 0.9, 1);
  CHECK(eta1 / eta0 == doctest::Approx(0.5).epsilon(1e-15));
  // Minimax Q with nu = 0.5, lambda0 = 2 at t = 3: 1 / (2 * 0.5 * 2 * 4).
  CHECK(step_size(Algorithm::MinimaxQ, LrSchedule::theorem(2.0, 0.5), 0.9, 3) ==
        doctest::Approx(0.125).epsilon(1e-15));

  CHECK(step_size(Algorithm::Td, LrSchedule::constant(0.01), 0.9, 5) == 0.01);
  CHECK_THROWS_AS(step_size(Algorithm::Td, LrSchedule::theorem(0.0), 0.9, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(step_size(Algorithm::QLearning, LrSchedule::theorem(1.0, 0.0), 0.9, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(step_size(Algorithm::Td, LrSchedule::constant(-1.0), 0.9, 0),
                  std::invalid_argument);
}

TEST_CASE("td_error_policy_eval: formula agreement and reductions") {
  const NetworkParams params = init_params(2, 8, 4, 3);
  const Activation act = Activation::gelu();
  Rng rng(4);
  Eigen::VectorXd x1(4), x2(4);
  for (int i = 0; i < 4; ++i) {
    x1(i) = rng.normal();
    x2(i) = rng.normal();
  }
  x1.normalize();
  x2.normalize();
  const double q1 = forward(params, act, x1);
  const double q2 = forward(params, act, x2);
  CHECK(td_error_policy_eval(params, act, x1, x2, 0.5, 0.9) == q1 - (0.5 + 0.9 * q2));
  CHECK(td_error_policy_eval(params, act, x1, x2, 0.3, 0.0) == q1 - 0.3);

  NetworkParams zero = params;
  zero.theta.setZero();
  CHECK(td_error_policy_eval(zero, Activation::elu(), x1, x2, 0.7, 0.9) == -0.7);
}

TEST_CASE("td_error_optimality: max backup with low-index ties") {
  const FeatureMap fmap = one_hot_features(2, 2);
  const NetworkParams params = init_params(2, 16, fmap.dim, 9);
  const Activation act = Activation::elu();

  const double q_next0 = forward(params, act, fmap.row(fmap.pair_index(1, 0)));
  const double q_next1 = forward(params, act, fmap.row(fmap.pair_index(1, 1)));
  const double q_t = forward(params, act, fmap.row(fmap.pair_index(0, 0)));
  CHECK(td_error_optimality(params, act, fmap, 0, 0, 0.2, 1, 0.5) ==
        q_t - (0.2 + 0.5 * std::max(q_next0, q_next1)));

  // Single action: identical to policy evaluation with that action.
  const FeatureMap fmap1 = one_hot_features(3, 1);
  const NetworkParams params1 = init_params(1, 8, fmap1.dim, 2);
  const double opt = td_error_optimality(params1, act, fmap1, 0, 0, 0.1, 2, 0.9);
  const double pe = td_error_policy_eval(params1, act, fmap1.row(fmap1.pair_index(0, 0)),
                                         fmap1.row(fmap1.pair_index(2, 0)), 0.1, 0.9);
  CHECK(opt == pe);

  NetworkParams zero = params;
  zero.theta.setZero();
  CHECK(td_error_optimality(zero, act, fmap, 0, 0, 0.4, 1, 0.9) == -0.4);
}

TEST_CASE("td_error_minimax: max-min backup over the next-state matrix") {
  const FeatureMap fmap = one_hot_game_features(2, 2, 2);
  const NetworkParams params = init_params(2, 16, fmap.dim, 11);
  const Activation act = Activation::elu();

  const Eigen::MatrixXd payoff = next_state_q_matrix(params, act, fmap, 1);
  const double q_t = forward(params, act, fmap.row(fmap.triple_index(0, 0, 1)));
  CHECK(td_error_minimax(params, act, fmap, 0, 0, 1, 0.3, 1, 0.8) ==
        q_t - (0.3 + 0.8 * minimax_value(payoff, MinimaxOrder::MaxMin)));
  CHECK(td_error_minimax(params, act, fmap, 0, 0, 1, 0.3, 1, 0.8, MinimaxOrder::MinMax) ==
        q_t - (0.3 + 0.8 * minimax_value(payoff, MinimaxOrder::MinMax)));

  // 1x1 action sets reduce to policy evaluation.
  const FeatureMap fmap1 = one_hot_game_features(2, 1, 1);
  const NetworkParams params1 = init_params(1, 8, fmap1.dim, 6);
  CHECK(td_error_minimax(params1, act, fmap1, 0, 0, 0, 0.2, 1, 0.9) ==
        td_error_policy_eval(params1, act, fmap1.row(fmap1.triple_index(0, 0, 0)),
                             fmap1.row(fmap1.triple_index(1, 0, 0)), 0.2, 0.9));

  NetworkParams zero = params;
  zero.theta.setZero();
  CHECK(td_error_minimax(zero, act, fmap, 0, 1, 1, 0.6, 0, 0.9) == -0.6);
}

TEST_CASE("train: zero iterations returns theta0 and one log row") {
  const TabularMdp mdp = constant_reward_mdp(0.3);
  const FeatureMap fmap = one_hot_features(1, 1);
  const NetworkParams params = init_params(1, 4, fmap.dim, 1);
  TrainConfig cfg = base_config(Algorithm::Td, 0.0, 0);
  const RunRecord rec = train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg);
  CHECK(rec.final_theta == params.theta);
  REQUIRE(rec.rows.size() == 1);
  CHECK(rec.rows[0].t == 0);
  CHECK(rec.rows[0].theta_dist == 0.0);
}

TEST_CASE("train: gamma = 0 single-state instance learns Q = r") {
  const double c = 0.8;
  const TabularMdp mdp = constant_reward_mdp(c);
  const FeatureMap fmap = one_hot_features(1, 1);
  const NetworkParams params = init_params(2, 64, fmap.dim, 21);
  TrainConfig cfg = base_config(Algorithm::Td, 0.0, 10000);
  const RunRecord rec = train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg);
  const double q_final =
      forward(params.with_theta(rec.final_theta), Activation::elu(), fmap.row(0));
  CHECK(std::abs(q_final - c) <= 1e-2);

  // Iterates stay inside the ball at every log point.
  for (const LogRow& row : rec.rows) CHECK(row.theta_dist <= cfg.omega + 1e-12);
}

TEST_CASE("train: tail squared TD error non-increasing across horizons") {
  const TabularMdp mdp = constant_reward_mdp(0.8);
  const FeatureMap fmap = one_hot_features(1, 1);
  const NetworkParams params = init_params(2, 32, fmap.dim, 33);
  double previous = std::numeric_limits<double>::infinity();
  for (long long horizon : {100LL, 1000LL, 10000LL}) {
    TrainConfig cfg = base_config(Algorithm::Td, 0.0, horizon);
    std::vector<double> trace;
    train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg, nullptr, nullptr,
          &trace);
    double tail = 0.0;
    const std::size_t tail_len = 100;
    for (std::size_t i = trace.size() - tail_len; i < trace.size(); ++i)
      tail += trace[i] * trace[i];
    tail /= tail_len;
    CHECK(tail <= previous + 1e-12);
    previous = tail;
  }
}

TEST_CASE("train: semi-gradient replay reproduces the final iterate bitwise") {
  const TabularMdp mdp = random_mdp(3, 2, 0.9, 1.0, 44);
  const TabularPolicy pi = uniform_policy(3, 2);
  const FeatureMap fmap = one_hot_features(3, 2);
  const NetworkParams params = init_params(2, 16, fmap.dim, 5);
  const Activation act = Activation::elu();
  TrainConfig cfg = base_config(Algorithm::Td, 0.9, 200);
  cfg.record_transitions = true;
  const RunRecord rec = train(mdp, pi, fmap, params, act, cfg);
  REQUIRE(rec.transitions.size() == static_cast<std::size_t>(cfg.iterations) + 1);

  // Replay: recompute Delta_t * grad Q(x_t; theta_t) from the stored stream.
  const BallConstraint ball{params.theta, cfg.omega};
  NetworkParams current = params;
  for (long long t = 0; t < cfg.iterations; ++t) {
    const Transition& tr = rec.transitions[static_cast<std::size_t>(t)];
    const double delta = td_error_policy_eval(
        current, act, fmap.row(fmap.pair_index(tr.s, tr.a)),
        fmap.row(fmap.pair_index(tr.s_next, tr.a_next)), tr.r, cfg.gamma);
    const Eigen::VectorXd grad = grad_theta(current, act, fmap.row(fmap.pair_index(tr.s, tr.a)));
    const double eta = step_size(cfg.algorithm, cfg.schedule, cfg.gamma, t);
    Eigen::VectorXd theta = current.theta - (eta * delta) * grad;
    if ((theta - ball.center).norm() > ball.radius) theta = project_ball(ball, theta);
    current.theta = theta;
  }
  CHECK(current.theta == rec.final_theta);
}

TEST_CASE("train: TD and Q-learning coincide bitwise with one action") {
  const TabularMdp mdp = random_mdp(4, 1, 0.9, 1.0, 55);
  const TabularPolicy pi = uniform_policy(4, 1);
  const FeatureMap fmap = one_hot_features(4, 1);
  const NetworkParams params = init_params(2, 16, fmap.dim, 6);
  TrainConfig cfg = base_config(Algorithm::Td, 0.9, 300);
  const RunRecord td = train(mdp, pi, fmap, params, Activation::elu(), cfg);
  cfg.algorithm = Algorithm::QLearning;
  const RunRecord ql = train(mdp, pi, fmap, params, Activation::elu(), cfg);
  CHECK(td.final_theta == ql.final_theta);
  REQUIRE(td.rows.size() == ql.rows.size());
  for (std::size_t i = 0; i < td.rows.size(); ++i) {
    CHECK(td.rows[i].td_error == ql.rows[i].td_error);
    CHECK(td.rows[i].theta_dist == ql.rows[i].theta_dist);
  }
}

TEST_CASE("train: non-finite updates abort with a diagnostic") {
  const TabularMdp mdp = constant_reward_mdp(1.0);
  const FeatureMap fmap = one_hot_features(1, 1);
  const NetworkParams params = init_params(2, 8, fmap.dim, 8);
  TrainConfig cfg = base_config(Algorithm::Td, 0.9, 500);
  cfg.omega = 1e280;  // no effective projection
  cfg.schedule = LrSchedule::constant(1e260);
  CHECK_THROWS_WITH_AS(
      static_cast<void>(train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg)),
      doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("train: config validation") {
  const TabularMdp mdp = constant_reward_mdp(0.5);
  const FeatureMap fmap = one_hot_features(1, 1);
  const NetworkParams params = init_params(1, 4, fmap.dim, 9);
  TrainConfig cfg = base_config(Algorithm::Td, 0.9, 10);
  cfg.omega = 0.0;
  CHECK_THROWS_AS(
      static_cast<void>(train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg)),
      std::invalid_argument);
  cfg = base_config(Algorithm::MinimaxQ, 0.9, 10);
  CHECK_THROWS_AS(
      static_cast<void>(train(mdp, uniform_policy(1, 1), fmap, params, Activation::elu(), cfg)),
      std::invalid_argument);
}

TEST_CASE("train: minimax run on a game logs feasible iterates") {
  const MarkovGame game = random_game(2, 2, 2, 0.5, 1.0, 66);
  const FeatureMap fmap = one_hot_game_features(2, 2, 2);
  const NetworkParams params = init_params(2, 16, fmap.dim, 10);
  TrainConfig cfg = base_config(Algorithm::MinimaxQ, 0.5, 400);
  const RunRecord rec = train(game, uniform_policy(2, 2), uniform_policy(2, 2), fmap, params,
                              Activation::elu(), cfg);
  for (const LogRow& row : rec.rows) CHECK(row.theta_dist <= cfg.omega + 1e-12);
  CHECK(rec.rows.back().t == cfg.iterations);
}
