#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/rng.hpp"

namespace tdlab {

inline constexpr double kRowSumTol = 1e-12;

// ---------------------------------------------------------------------------
// Environment types
// ---------------------------------------------------------------------------

/// Finite discounted MDP with deterministic rewards r(s,a).
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  double r_max = 0.0;
  std::vector<double> transition;  // [s][a][s'], row-major
  Eigen::MatrixXd reward;          // n_states x n_actions

  double p(int s, int a, int s_next) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s_next];
  }
  double& p(int s, int a, int s_next) {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s_next];
  }

  void validate() const {
    if (n_states < 1 || n_actions < 1)
      throw std::invalid_argument("TabularMdp: n_states and n_actions must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("TabularMdp: gamma must lie in (0,1)");
    if (r_max <= 0.0) throw std::invalid_argument("TabularMdp: r_max must be positive");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states)
      throw std::invalid_argument("TabularMdp: transition tensor has wrong size");
    if (reward.rows() != n_states || reward.cols() != n_actions)
      throw std::invalid_argument("TabularMdp: reward matrix has wrong shape");
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (int t = 0; t < n_states; ++t) {
          const double v = p(s, a, t);
          if (v < 0.0) throw std::invalid_argument("TabularMdp: negative transition probability");
          sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol)
          throw std::invalid_argument("TabularMdp: transition row (" + std::to_string(s) + "," +
                                      std::to_string(a) + ") does not sum to 1");
        if (std::abs(reward(s, a)) > r_max)
          throw std::invalid_argument("TabularMdp: |reward| exceeds r_max");
      }
    }
  }
};

/// Two-player zero-sum Markov game; player 1 maximizes r, player 2 minimizes.
struct MarkovGame {
  int n_states = 0;
  int n_actions_p1 = 0;
  int n_actions_p2 = 0;
  double gamma = 0.0;
  std::vector<double> transition;  // [s][a1][a2][s'], row-major
  Eigen::MatrixXd reward;          // n_states x (a1*a2), column index a1*n_actions_p2+a2

  double p(int s, int a1, int a2, int s_next) const {
    return transition[((static_cast<std::size_t>(s) * n_actions_p1 + a1) * n_actions_p2 + a2) *
                          n_states +
                      s_next];
  }
  double& p(int s, int a1, int a2, int s_next) {
    return transition[((static_cast<std::size_t>(s) * n_actions_p1 + a1) * n_actions_p2 + a2) *
                          n_states +
                      s_next];
  }
  double r(int s, int a1, int a2) const { return reward(s, a1 * n_actions_p2 + a2); }
  double& r(int s, int a1, int a2) { return reward(s, a1 * n_actions_p2 + a2); }

  void validate() const {
    if (n_states < 1 || n_actions_p1 < 1 || n_actions_p2 < 1)
      throw std::invalid_argument("MarkovGame: sizes must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("MarkovGame: gamma must lie in (0,1)");
    if (transition.size() !=
        static_cast<std::size_t>(n_states) * n_actions_p1 * n_actions_p2 * n_states)
      throw std::invalid_argument("MarkovGame: transition tensor has wrong size");
    if (reward.rows() != n_states || reward.cols() != n_actions_p1 * n_actions_p2)
      throw std::invalid_argument("MarkovGame: reward tensor has wrong shape");
    for (int s = 0; s < n_states; ++s) {
      for (int a1 = 0; a1 < n_actions_p1; ++a1) {
        for (int a2 = 0; a2 < n_actions_p2; ++a2) {
          double sum = 0.0;
          for (int t = 0; t < n_states; ++t) {
            const double v = p(s, a1, a2, t);
            if (v < 0.0) throw std::invalid_argument("MarkovGame: negative transition probability");
            sum += v;
          }
          if (std::abs(sum - 1.0) > kRowSumTol)
            throw std::invalid_argument("MarkovGame: transition row does not sum to 1");
        }
      }
    }
  }
};

/// Stochastic stationary policy pi(a|s) as a row-stochastic matrix.
struct TabularPolicy {
  Eigen::MatrixXd probs;  // n_states x n_actions

  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }

  void validate() const {
    if (probs.rows() < 1 || probs.cols() < 1)
      throw std::invalid_argument("TabularPolicy: empty policy");
    for (int s = 0; s < probs.rows(); ++s) {
      double sum = 0.0;
      for (int a = 0; a < probs.cols(); ++a) {
        if (probs(s, a) < 0.0) throw std::invalid_argument("TabularPolicy: negative probability");
        sum += probs(s, a);
      }
      if (std::abs(sum - 1.0) > kRowSumTol)
        throw std::invalid_argument("TabularPolicy: row " + std::to_string(s) +
                                    " does not sum to 1");
    }
  }
};

/// One sampled step. a_next = -1 when the tuple carries no successor action.
struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  int a_next = -1;
};

struct GameTransition {
  int s = 0;
  int a1 = 0;
  int a2 = 0;
  double r = 0.0;
  int s_next = 0;
};

struct Trajectory {
  std::vector<Transition> steps;
  std::uint64_t seed = 0;
};

struct GameTrajectory {
  std::vector<GameTransition> steps;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

/// Random MDP with Dirichlet(1,..,1) transition rows and rewards uniform in
/// [-r_max, r_max]. Deterministic given the seed.
inline TabularMdp random_mdp(int n_states, int n_actions, double gamma, double r_max,
                             std::uint64_t seed) {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("random_mdp: n_states and n_actions must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("random_mdp: gamma not in (0,1)");
  if (r_max <= 0.0) throw std::invalid_argument("random_mdp: r_max must be positive");

  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.r_max = r_max;
  mdp.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  mdp.reward.resize(n_states, n_actions);

  Rng rng(seed);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (int t = 0; t < n_states; ++t) {
        const double e = rng.exponential();
        mdp.p(s, a, t) = e;
        sum += e;
      }
      for (int t = 0; t < n_states; ++t) mdp.p(s, a, t) /= sum;
      mdp.reward(s, a) = rng.uniform(-r_max, r_max);
    }
  }
  mdp.validate();
  return mdp;
}

/// Random zero-sum game; same construction as random_mdp over joint actions.
inline MarkovGame random_game(int n_states, int n_actions_p1, int n_actions_p2, double gamma,
                              double r_max, std::uint64_t seed) {
  if (n_states < 1 || n_actions_p1 < 1 || n_actions_p2 < 1)
    throw std::invalid_argument("random_game: sizes must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("random_game: gamma not in (0,1)");
  if (r_max <= 0.0) throw std::invalid_argument("random_game: r_max must be positive");

  MarkovGame game;
  game.n_states = n_states;
  game.n_actions_p1 = n_actions_p1;
  game.n_actions_p2 = n_actions_p2;
  game.gamma = gamma;
  game.transition.assign(
      static_cast<std::size_t>(n_states) * n_actions_p1 * n_actions_p2 * n_states, 0.0);
  game.reward.resize(n_states, n_actions_p1 * n_actions_p2);

  Rng rng(seed);
  for (int s = 0; s < n_states; ++s) {
    for (int a1 = 0; a1 < n_actions_p1; ++a1) {
      for (int a2 = 0; a2 < n_actions_p2; ++a2) {
        double sum = 0.0;
        for (int t = 0; t < n_states; ++t) {
          const double e = rng.exponential();
          game.p(s, a1, a2, t) = e;
          sum += e;
        }
        for (int t = 0; t < n_states; ++t) game.p(s, a1, a2, t) /= sum;
        game.r(s, a1, a2) = rng.uniform(-r_max, r_max);
      }
    }
  }
  game.validate();
  return game;
}

/// Game with 1x1 action sets mirroring a single-action MDP. Used to exercise
/// the minimax reduction against plain TD on the same chain.
inline MarkovGame game_from_single_action_mdp(const TabularMdp& mdp) {
  if (mdp.n_actions != 1)
    throw std::invalid_argument("game_from_single_action_mdp: MDP must have one action");
  MarkovGame game;
  game.n_states = mdp.n_states;
  game.n_actions_p1 = 1;
  game.n_actions_p2 = 1;
  game.gamma = mdp.gamma;
  game.transition = mdp.transition;
  game.reward = mdp.reward;
  game.validate();
  return game;
}

inline TabularPolicy uniform_policy(int n_states, int n_actions) {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("uniform_policy: sizes must be >= 1");
  TabularPolicy pi;
  pi.probs = Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions);
  return pi;
}

/// pi(a|s) = eps/|A| + (1-eps) on the greedy action; argmax ties break to the
/// smallest action index.
inline TabularPolicy epsilon_greedy(const Eigen::MatrixXd& q_values, double epsilon) {
  if (q_values.cols() < 1) throw std::invalid_argument("epsilon_greedy: empty action set");
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("epsilon_greedy: epsilon must lie in [0,1]");
  const int n_states = static_cast<int>(q_values.rows());
  const int n_actions = static_cast<int>(q_values.cols());
  TabularPolicy pi;
  pi.probs = Eigen::MatrixXd::Constant(n_states, n_actions, epsilon / n_actions);
  for (int s = 0; s < n_states; ++s) {
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (q_values(s, a) > q_values(s, best)) best = a;
    pi.probs(s, best) += 1.0 - epsilon;
  }
  pi.validate();
  return pi;
}

// ---------------------------------------------------------------------------
// Markovian sampling
// ---------------------------------------------------------------------------

// The samplers keep two engines: one for state transitions and one for action
// draws. Degenerate action sets then leave the state stream untouched, so TD,
// Q-learning and the minimax learner see identical chains from the same seed.
class MdpSampler {
 public:
  MdpSampler(const TabularMdp& mdp, const TabularPolicy& policy, std::uint64_t seed,
             long long burn_in = 0)
      : mdp_(&mdp),
        policy_(&policy),
        state_rng_(mix_seed(seed, 0x5354u)),
        action_rng_(mix_seed(seed, 0x414354u)) {
    if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions)
      throw std::invalid_argument("MdpSampler: policy shape does not match the MDP");
    s_ = state_rng_.uniform_int(mdp.n_states);
    a_ = action_rng_.categorical(policy_->probs.row(s_));
    for (long long i = 0; i < burn_in; ++i) next();
  }

  /// SARSA-chained tuple (s,a,r,s',a'); a' is reused as the next step's a.
  Transition next() {
    Transition t;
    t.s = s_;
    t.a = a_;
    t.r = mdp_->reward(s_, a_);
    double cum = 0.0;
    const double u = state_rng_.uniform();
    int s_next = mdp_->n_states - 1;
    for (int j = 0; j < mdp_->n_states; ++j) {
      cum += mdp_->p(s_, a_, j);
      if (u < cum) {
        s_next = j;
        break;
      }
    }
    t.s_next = s_next;
    t.a_next = action_rng_.categorical(policy_->probs.row(s_next));
    s_ = s_next;
    a_ = t.a_next;
    return t;
  }

 private:
  const TabularMdp* mdp_;
  const TabularPolicy* policy_;
  Rng state_rng_;
  Rng action_rng_;
  int s_ = 0;
  int a_ = 0;
};

class GameSampler {
 public:
  GameSampler(const MarkovGame& game, const TabularPolicy& pi1, const TabularPolicy& pi2,
              std::uint64_t seed, long long burn_in = 0)
      : game_(&game),
        pi1_(&pi1),
        pi2_(&pi2),
        state_rng_(mix_seed(seed, 0x5354u)),
        action_rng_(mix_seed(seed, 0x414354u)) {
    if (pi1.n_states() != game.n_states || pi1.n_actions() != game.n_actions_p1 ||
        pi2.n_states() != game.n_states || pi2.n_actions() != game.n_actions_p2)
      throw std::invalid_argument("GameSampler: policy shapes do not match the game");
    s_ = state_rng_.uniform_int(game.n_states);
    for (long long i = 0; i < burn_in; ++i) next();
  }

  GameTransition next() {
    GameTransition t;
    t.s = s_;
    t.a1 = action_rng_.categorical(pi1_->probs.row(s_));
    t.a2 = action_rng_.categorical(pi2_->probs.row(s_));
    t.r = game_->r(s_, t.a1, t.a2);
    double cum = 0.0;
    const double u = state_rng_.uniform();
    int s_next = game_->n_states - 1;
    for (int j = 0; j < game_->n_states; ++j) {
      cum += game_->p(s_, t.a1, t.a2, j);
      if (u < cum) {
        s_next = j;
        break;
      }
    }
    t.s_next = s_next;
    s_ = s_next;
    return t;
  }

 private:
  const MarkovGame* game_;
  const TabularPolicy* pi1_;
  const TabularPolicy* pi2_;
  Rng state_rng_;
  Rng action_rng_;
  int s_ = 0;
};

/// Samples a chained trajectory: uniform initial state, burn_in steps
/// discarded, then `length` transitions under pi and the transition kernel.
inline Trajectory sample_trajectory(const TabularMdp& mdp, const TabularPolicy& policy,
                                    long long length, std::uint64_t seed, long long burn_in = 0) {
  if (length < 1) throw std::invalid_argument("sample_trajectory: length must be >= 1");
  if (burn_in < 0) throw std::invalid_argument("sample_trajectory: burn_in must be >= 0");
  Trajectory traj;
  traj.seed = seed;
  traj.steps.reserve(static_cast<std::size_t>(length));
  MdpSampler sampler(mdp, policy, seed, burn_in);
  for (long long i = 0; i < length; ++i) traj.steps.push_back(sampler.next());
  return traj;
}

inline GameTrajectory sample_game_trajectory(const MarkovGame& game, const TabularPolicy& pi1,
                                             const TabularPolicy& pi2, long long length,
                                             std::uint64_t seed, long long burn_in = 0) {
  if (length < 1) throw std::invalid_argument("sample_game_trajectory: length must be >= 1");
  if (burn_in < 0) throw std::invalid_argument("sample_game_trajectory: burn_in must be >= 0");
  GameTrajectory traj;
  traj.seed = seed;
  traj.steps.reserve(static_cast<std::size_t>(length));
  GameSampler sampler(game, pi1, pi2, seed, burn_in);
  for (long long i = 0; i < length; ++i) traj.steps.push_back(sampler.next());
  return traj;
}

// ---------------------------------------------------------------------------
// Chain analysis
// ---------------------------------------------------------------------------

/// State transition matrix P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a).
inline Eigen::MatrixXd state_transition_matrix(const TabularMdp& mdp,
                                               const TabularPolicy& policy) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int t = 0; t < mdp.n_states; ++t) p(s, t) += policy.probs(s, a) * mdp.p(s, a, t);
  return p;
}

inline Eigen::MatrixXd state_transition_matrix(const MarkovGame& game, const TabularPolicy& pi1,
                                               const TabularPolicy& pi2) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(game.n_states, game.n_states);
  for (int s = 0; s < game.n_states; ++s)
    for (int a1 = 0; a1 < game.n_actions_p1; ++a1)
      for (int a2 = 0; a2 < game.n_actions_p2; ++a2)
        for (int t = 0; t < game.n_states; ++t)
          p(s, t) += pi1.probs(s, a1) * pi2.probs(s, a2) * game.p(s, a1, a2, t);
  return p;
}

/// Pair transition matrix over (s,a): P[(s,a),(s',a')] = P(s'|s,a) pi(a'|s').
inline Eigen::MatrixXd pair_transition_matrix(const TabularMdp& mdp, const TabularPolicy& policy) {
  const int n = mdp.n_states * mdp.n_actions;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int t = 0; t < mdp.n_states; ++t)
        for (int b = 0; b < mdp.n_actions; ++b)
          p(s * mdp.n_actions + a, t * mdp.n_actions + b) = mdp.p(s, a, t) * policy.probs(t, b);
  return p;
}

/// Left fixed point of a row-stochastic matrix: mu^T P = mu^T, sum(mu) = 1.
/// Throws when the chain is not uniquely ergodic (kernel dimension != 1).
inline Eigen::VectorXd stationary_state_distribution(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.rows());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - p.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  lu.setThreshold(1e-10);
  if (lu.dimensionOfKernel() != 1)
    throw std::runtime_error(
        "stationary_distribution: state chain is not uniquely ergodic "
        "(fixed-point solve kernel dimension " +
        std::to_string(lu.dimensionOfKernel()) + ")");
  Eigen::VectorXd mu = lu.kernel().col(0);
  const double sum = mu.sum();
  if (std::abs(sum) < 1e-14)
    throw std::runtime_error("stationary_distribution: degenerate kernel vector");
  mu /= sum;
  for (int i = 0; i < n; ++i) {
    if (mu(i) < -1e-10)
      throw std::runtime_error("stationary_distribution: fixed point has negative mass");
    if (mu(i) < 0.0) mu(i) = 0.0;
  }
  mu /= mu.sum();
  const double residual = (p.transpose() * mu - mu).cwiseAbs().maxCoeff();
  if (residual > 1e-10)
    throw std::runtime_error("stationary_distribution: fixed-point residual " +
                             std::to_string(residual) + " exceeds 1e-10");
  return mu;
}

inline Eigen::VectorXd stationary_state_distribution(const TabularMdp& mdp,
                                                     const TabularPolicy& policy) {
  return stationary_state_distribution(state_transition_matrix(mdp, policy));
}

inline Eigen::VectorXd stationary_state_distribution(const MarkovGame& game,
                                                     const TabularPolicy& pi1,
                                                     const TabularPolicy& pi2) {
  return stationary_state_distribution(state_transition_matrix(game, pi1, pi2));
}

/// Stationary distribution over (s,a): mu(s) * pi(a|s), flattened s-major.
inline Eigen::VectorXd stationary_distribution(const TabularMdp& mdp,
                                               const TabularPolicy& policy) {
  const Eigen::VectorXd mu = stationary_state_distribution(mdp, policy);
  Eigen::VectorXd d(mdp.n_states * mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) d(s * mdp.n_actions + a) = mu(s) * policy.probs(s, a);
  return d;
}

/// Stationary distribution over (s,a1,a2) for a game under a policy pair.
inline Eigen::VectorXd stationary_distribution(const MarkovGame& game, const TabularPolicy& pi1,
                                               const TabularPolicy& pi2) {
  const Eigen::VectorXd mu = stationary_state_distribution(game, pi1, pi2);
  Eigen::VectorXd d(game.n_states * game.n_actions_p1 * game.n_actions_p2);
  for (int s = 0; s < game.n_states; ++s)
    for (int a1 = 0; a1 < game.n_actions_p1; ++a1)
      for (int a2 = 0; a2 < game.n_actions_p2; ++a2)
        d((s * game.n_actions_p1 + a1) * game.n_actions_p2 + a2) =
            mu(s) * pi1.probs(s, a1) * pi2.probs(s, a2);
  return d;
}

/// Exact sup_s d_TV(P(s_t|s_0=s), mu) for t = 0..horizon via matrix powers.
inline std::vector<std::pair<int, double>> mixing_profile(const TabularMdp& mdp,
                                                          const TabularPolicy& policy,
                                                          int horizon) {
  const Eigen::MatrixXd p = state_transition_matrix(mdp, policy);
  const Eigen::VectorXd mu = stationary_state_distribution(p);
  const int n = static_cast<int>(p.rows());
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  std::vector<std::pair<int, double>> profile;
  profile.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int t = 0; t <= horizon; ++t) {
    double sup_tv = 0.0;
    for (int s = 0; s < n; ++s) {
      const double tv = 0.5 * (power.row(s).transpose() - mu).cwiseAbs().sum();
      sup_tv = std::max(sup_tv, tv);
    }
    profile.emplace_back(t, sup_tv);
    power = power * p;
  }
  return profile;
}

/// First t with sup-TV <= threshold, or -1 when the profile never crosses.
inline int mixing_time(const std::vector<std::pair<int, double>>& profile,
                       double threshold = 0.25) {
  for (const auto& [t, tv] : profile)
    if (tv <= threshold) return t;
  return -1;
}

/// Default burn-in: 10 x fitted mixing time, or 100 when the fit is
/// unavailable at the probed horizon.
inline long long default_burn_in(const TabularMdp& mdp, const TabularPolicy& policy,
                                 int horizon = 256) {
  const auto profile = mixing_profile(mdp, policy, horizon);
  const int tmix = mixing_time(profile);
  return tmix < 0 ? 100 : 10LL * std::max(tmix, 1);
}

}  // namespace tdlab
