#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/network.hpp"
#include "tdlab/oracles.hpp"

namespace tdlab {

enum class Algorithm { Td, QLearning, MinimaxQ };

inline std::string algorithm_name(Algorithm alg) {
  switch (alg) {
    case Algorithm::Td: return "td";
    case Algorithm::QLearning: return "q";
    case Algorithm::MinimaxQ: return "minimax_q";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "td") return Algorithm::Td;
  if (name == "q") return Algorithm::QLearning;
  if (name == "minimax_q") return Algorithm::MinimaxQ;
  throw std::invalid_argument("algorithm_from_name: unknown algorithm '" + name + "'");
}

// ---------------------------------------------------------------------------
// Step sizes
// ---------------------------------------------------------------------------

/// Learning-rate schedule. The theorem schedule is
///   eta_t = 1 / (2 (1-gamma) lambda0 (t+1))   for TD, and
///   eta_t = 1 / (2 nu lambda0 (t+1))          for Q / minimax Q,
/// with lambda0 the minimum non-zero singular value of the gradient
/// covariance (estimated by the diagnostics when not given).
struct LrSchedule {
  enum class Kind { Theorem, Constant };
  Kind kind = Kind::Theorem;
  double lambda0 = 0.0;
  double nu = 0.0;
  double eta0 = 0.0;

  static LrSchedule theorem(double lambda0, double nu = 0.0) {
    return {Kind::Theorem, lambda0, nu, 0.0};
  }
  static LrSchedule constant(double eta0) { return {Kind::Constant, 0.0, 0.0, eta0}; }
};

inline double step_size(Algorithm alg, const LrSchedule& schedule, double gamma, long long t) {
  if (t < 0) throw std::invalid_argument("step_size: t must be >= 0");
  if (schedule.kind == LrSchedule::Kind::Constant) {
    if (schedule.eta0 <= 0.0) throw std::invalid_argument("step_size: eta0 must be positive");
    return schedule.eta0;
  }
  if (schedule.lambda0 <= 0.0) throw std::invalid_argument("step_size: lambda0 must be positive");
  double factor = 0.0;
  if (alg == Algorithm::Td) {
    factor = 1.0 - gamma;
    if (factor <= 0.0) throw std::invalid_argument("step_size: requires gamma < 1");
  } else {
    factor = schedule.nu;
    if (factor <= 0.0) throw std::invalid_argument("step_size: nu must be positive");
  }
  return 1.0 / (2.0 * factor * schedule.lambda0 * static_cast<double>(t + 1));
}

// ---------------------------------------------------------------------------
// TD errors
// ---------------------------------------------------------------------------

/// Policy-evaluation TD error: Delta = Q(x_t) - (r + gamma Q(x_{t+1})).
inline double td_error_policy_eval(const NetworkParams& params, const Activation& act,
                                   const Eigen::VectorXd& phi_t, const Eigen::VectorXd& phi_next,
                                   double r_t, double gamma) {
  return forward(params, act, phi_t) - (r_t + gamma * forward(params, act, phi_next));
}

/// Optimality-operator TD error:
/// Delta = Q(x_t) - (r + gamma max_b Q(phi(s',b))); max ties break low.
inline double td_error_optimality(const NetworkParams& params, const Activation& act,
                                  const FeatureMap& fmap, int s_t, int a_t, double r_t, int s_next,
                                  double gamma) {
  const double q_t = forward(params, act, fmap.row(fmap.pair_index(s_t, a_t)));
  double best = forward(params, act, fmap.row(fmap.pair_index(s_next, 0)));
  for (int b = 1; b < fmap.n_actions; ++b) {
    const double v = forward(params, act, fmap.row(fmap.pair_index(s_next, b)));
    if (v > best) best = v;
  }
  return q_t - (r_t + gamma * best);
}

/// Next-state payoff matrix of Q values for a game state.
inline Eigen::MatrixXd next_state_q_matrix(const NetworkParams& params, const Activation& act,
                                           const FeatureMap& fmap, int s) {
  Eigen::MatrixXd payoff(fmap.n_actions, fmap.n_actions2);
  for (int b1 = 0; b1 < fmap.n_actions; ++b1)
    for (int b2 = 0; b2 < fmap.n_actions2; ++b2)
      payoff(b1, b2) = forward(params, act, fmap.row(fmap.triple_index(s, b1, b2)));
  return payoff;
}

/// Minimax TD error with the selected backup order (default max-min):
/// Delta = Q(x_t) - (r + gamma max_{b1} min_{b2} Q(phi(s',b1,b2))).
inline double td_error_minimax(const NetworkParams& params, const Activation& act,
                               const FeatureMap& fmap, int s_t, int a1, int a2, double r_t,
                               int s_next, double gamma,
                               MinimaxOrder order = MinimaxOrder::MaxMin) {
  const double q_t = forward(params, act, fmap.row(fmap.triple_index(s_t, a1, a2)));
  const Eigen::MatrixXd payoff = next_state_q_matrix(params, act, fmap, s_next);
  return q_t - (r_t + gamma * minimax_value(payoff, order));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  Algorithm algorithm = Algorithm::Td;
  double gamma = 0.9;
  double omega = 1.0;
  long long iterations = 1;  // T
  LrSchedule schedule;
  std::uint64_t seed = 0;
  long long burn_in = 0;
  long long eval_every = 1;
  MinimaxOrder minimax_order = MinimaxOrder::MaxMin;
  bool record_transitions = false;

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
    if (omega <= 0.0) throw std::invalid_argument("TrainConfig: omega must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("TrainConfig: gamma must lie in [0,1)");
    if (burn_in < 0) throw std::invalid_argument("TrainConfig: burn_in must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
    if (schedule.kind == LrSchedule::Kind::Constant) {
      if (schedule.eta0 <= 0.0) throw std::invalid_argument("TrainConfig: eta0 must be positive");
    } else {
      if (schedule.lambda0 <= 0.0)
        throw std::invalid_argument("TrainConfig: lambda0 must be positive");
      if (algorithm != Algorithm::Td && schedule.nu <= 0.0)
        throw std::invalid_argument("TrainConfig: nu must be positive for Q-style schedules");
    }
  }
};

/// Optional oracle reference for evaluation: support-row weights and target
/// Q values; the logged error is sum_i w_i (Q(x_i; theta) - q_ref_i)^2.
struct EvalReference {
  Eigen::VectorXd weights;
  Eigen::VectorXd q_ref;
};

struct LogRow {
  long long t = 0;
  double td_error = 0.0;
  double theta_dist = 0.0;          // ||theta_t - theta0||
  double q_eval_error = std::numeric_limits<double>::quiet_NaN();
  bool projection_hit = false;  // the update producing theta_t was projected
};

struct RunRecord {
  std::vector<LogRow> rows;
  Eigen::VectorXd final_theta;
  std::vector<Transition> transitions;           // populated when recording
  std::vector<GameTransition> game_transitions;  // populated when recording
};

namespace detail {

inline double eval_error(const NetworkParams& params, const Activation& act,
                         const FeatureMap& fmap, const EvalReference* eval) {
  if (eval == nullptr) return std::numeric_limits<double>::quiet_NaN();
  double err = 0.0;
  for (int i = 0; i < eval->weights.size(); ++i) {
    const double diff = forward(params, act, fmap.row(i)) - eval->q_ref(i);
    err += eval->weights(i) * diff * diff;
  }
  return err;
}

[[noreturn]] inline void abort_non_finite(long long t, double delta, double grad_norm) {
  throw std::runtime_error("train: non-finite update at step " + std::to_string(t) +
                           " (td_error " + std::to_string(delta) + ", ||grad|| " +
                           std::to_string(grad_norm) + ")");
}

}  // namespace detail

/// Projected stochastic semi-gradient training on an MDP (TD or Q-learning).
/// One Markovian SARSA-chained stream drives both algorithms; Q-learning
/// simply ignores the chained next action. When `cycle` is given the sampler
/// is replaced by cycling that fixed trajectory. `td_trace`, when non-null,
/// collects every per-step TD error (epoch curves aggregate from it).
inline RunRecord train(const TabularMdp& mdp, const TabularPolicy& policy, const FeatureMap& fmap,
                       const NetworkParams& net_init, const Activation& act,
                       const TrainConfig& cfg, const EvalReference* eval = nullptr,
                       const Trajectory* cycle = nullptr,
                       std::vector<double>* td_trace = nullptr) {
  cfg.validate();
  if (cfg.algorithm == Algorithm::MinimaxQ)
    throw std::invalid_argument("train: minimax Q-learning needs a MarkovGame");
  if (fmap.n_states != mdp.n_states || fmap.n_actions != mdp.n_actions || fmap.n_actions2 != 0)
    throw std::invalid_argument("train: feature map layout does not match the MDP");
  if (cycle != nullptr && cycle->steps.empty())
    throw std::invalid_argument("train: empty fixed trajectory");

  NetworkParams params = net_init;
  const BallConstraint ball{net_init.theta, cfg.omega};
  std::optional<MdpSampler> sampler;
  if (cycle == nullptr) sampler.emplace(mdp, policy, cfg.seed, cfg.burn_in);
  std::size_t cycle_pos = 0;
  auto next_transition = [&]() -> Transition {
    if (cycle == nullptr) return sampler->next();
    const Transition& t = cycle->steps[cycle_pos];
    cycle_pos = (cycle_pos + 1) % cycle->steps.size();
    return t;
  };

  RunRecord record;
  Eigen::VectorXd grad;
  ForwardCache cache;
  bool last_projection_hit = false;

  for (long long t = 0; t <= cfg.iterations; ++t) {
    const Transition tr = next_transition();
    if (cfg.record_transitions) record.transitions.push_back(tr);

    const double q_t =
        grad_theta_into(params, act, fmap.row(fmap.pair_index(tr.s, tr.a)), cache, grad);
    double target = 0.0;
    if (cfg.algorithm == Algorithm::Td) {
      target = tr.r + cfg.gamma *
                          forward(params, act, fmap.row(fmap.pair_index(tr.s_next, tr.a_next)));
    } else {
      double best = forward(params, act, fmap.row(fmap.pair_index(tr.s_next, 0)));
      for (int b = 1; b < mdp.n_actions; ++b)
        best = std::max(best, forward(params, act, fmap.row(fmap.pair_index(tr.s_next, b))));
      target = tr.r + cfg.gamma * best;
    }
    const double delta = q_t - target;

    if (t % cfg.eval_every == 0 || t == cfg.iterations) {
      LogRow row;
      row.t = t;
      row.td_error = delta;
      row.theta_dist = (params.theta - ball.center).norm();
      row.q_eval_error = detail::eval_error(params, act, fmap, eval);
      row.projection_hit = last_projection_hit;
      record.rows.push_back(row);
    }
    if (t == cfg.iterations) break;
    if (td_trace != nullptr) td_trace->push_back(delta);

    if (!std::isfinite(delta) || !grad.allFinite())
      detail::abort_non_finite(t, delta, grad.norm());
    const double eta = step_size(cfg.algorithm, cfg.schedule, cfg.gamma, t);
    params.theta -= (eta * delta) * grad;
    const double dist = (params.theta - ball.center).norm();
    last_projection_hit = dist > ball.radius;
    if (last_projection_hit) params.theta = project_ball(ball, params.theta);
  }

  record.final_theta = params.theta;
  return record;
}

/// Minimax neural Q-learning on a two-player zero-sum Markov game.
inline RunRecord train(const MarkovGame& game, const TabularPolicy& pi1, const TabularPolicy& pi2,
                       const FeatureMap& fmap, const NetworkParams& net_init,
                       const Activation& act, const TrainConfig& cfg,
                       const EvalReference* eval = nullptr) {
  cfg.validate();
  if (cfg.algorithm != Algorithm::MinimaxQ)
    throw std::invalid_argument("train: MarkovGame overload runs minimax Q-learning only");
  if (fmap.n_states != game.n_states || fmap.n_actions != game.n_actions_p1 ||
      fmap.n_actions2 != game.n_actions_p2)
    throw std::invalid_argument("train: feature map layout does not match the game");

  NetworkParams params = net_init;
  const BallConstraint ball{net_init.theta, cfg.omega};
  GameSampler sampler(game, pi1, pi2, cfg.seed, cfg.burn_in);

  RunRecord record;
  Eigen::VectorXd grad;
  ForwardCache cache;
  bool last_projection_hit = false;

  for (long long t = 0; t <= cfg.iterations; ++t) {
    const GameTransition tr = sampler.next();
    if (cfg.record_transitions) record.game_transitions.push_back(tr);

    const double q_t = grad_theta_into(
        params, act, fmap.row(fmap.triple_index(tr.s, tr.a1, tr.a2)), cache, grad);
    const Eigen::MatrixXd payoff = next_state_q_matrix(params, act, fmap, tr.s_next);
    const double delta = q_t - (tr.r + cfg.gamma * minimax_value(payoff, cfg.minimax_order));

    if (t % cfg.eval_every == 0 || t == cfg.iterations) {
      LogRow row;
      row.t = t;
      row.td_error = delta;
      row.theta_dist = (params.theta - ball.center).norm();
      row.q_eval_error = detail::eval_error(params, act, fmap, eval);
      row.projection_hit = last_projection_hit;
      record.rows.push_back(row);
    }
    if (t == cfg.iterations) break;

    if (!std::isfinite(delta) || !grad.allFinite())
      detail::abort_non_finite(t, delta, grad.norm());
    const double eta = step_size(cfg.algorithm, cfg.schedule, cfg.gamma, t);
    params.theta -= (eta * delta) * grad;
    const double dist = (params.theta - ball.center).norm();
    last_projection_hit = dist > ball.radius;
    if (last_projection_hit) params.theta = project_ball(ball, params.theta);
  }

  record.final_theta = params.theta;
  return record;
}

}  // namespace tdlab
