#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/rng.hpp"

namespace tdlab {

inline constexpr double kUnitNormTol = 1e-12;
inline constexpr double kDefaultMinAngle = M_PI / 180.0;  // 1 degree

enum class FeatureKind { OneHot, RandomUnit, Grid };

/// Dense table of unit-norm feature vectors, one row per sample point.
/// When built for an environment the (s,a) / (s,a1,a2) layout is recorded so
/// rows can be addressed by indices.
struct FeatureMap {
  int dim = 0;
  Eigen::MatrixXd rows;  // n_rows x dim, each row unit norm
  FeatureKind kind = FeatureKind::OneHot;
  int n_states = 0;    // 0 when the table has no environment layout
  int n_actions = 0;   // actions of player 1 for game layouts
  int n_actions2 = 0;  // 0 for single-agent layouts

  int n_rows() const { return static_cast<int>(rows.rows()); }

  void set_layout(int states, int actions, int actions2 = 0) {
    const long long expected =
        static_cast<long long>(states) * actions * (actions2 > 0 ? actions2 : 1);
    if (expected != rows.rows())
      throw std::invalid_argument("FeatureMap: layout does not match the table size");
    n_states = states;
    n_actions = actions;
    n_actions2 = actions2;
  }

  int pair_index(int s, int a) const {
    if (n_states == 0 || n_actions2 != 0)
      throw std::invalid_argument("FeatureMap: no (s,a) layout attached");
    return s * n_actions + a;
  }
  int triple_index(int s, int a1, int a2) const {
    if (n_states == 0 || n_actions2 == 0)
      throw std::invalid_argument("FeatureMap: no (s,a1,a2) layout attached");
    return (s * n_actions + a1) * n_actions2 + a2;
  }

  Eigen::VectorXd row(int i) const { return rows.row(i).transpose(); }

  void validate() const {
    if (dim < 1) throw std::invalid_argument("FeatureMap: dim must be >= 1");
    if (rows.cols() != dim) throw std::invalid_argument("FeatureMap: row width != dim");
    for (int i = 0; i < rows.rows(); ++i)
      if (std::abs(rows.row(i).norm() - 1.0) > kUnitNormTol)
        throw std::invalid_argument("FeatureMap: row " + std::to_string(i) + " is not unit norm");
  }
};

/// Wraps an explicit row table (rows must be unit norm). Used for custom
/// instances, e.g. deliberately duplicated rows in rank-deficiency studies.
inline FeatureMap feature_map_from_rows(Eigen::MatrixXd table,
                                        FeatureKind kind = FeatureKind::RandomUnit) {
  FeatureMap map;
  map.dim = static_cast<int>(table.cols());
  map.rows = std::move(table);
  map.kind = kind;
  map.validate();
  return map;
}

/// Standard basis map over n_rows points: row i = e_i in R^{n_rows}.
inline FeatureMap one_hot_rows(int n_rows) {
  if (n_rows < 1) throw std::invalid_argument("one_hot_rows: n_rows must be >= 1");
  FeatureMap map;
  map.dim = n_rows;
  map.rows = Eigen::MatrixXd::Identity(n_rows, n_rows);
  map.kind = FeatureKind::OneHot;
  return map;
}

/// One-hot encoding of (s,a): d = n_states * n_actions, row = e_{s*A+a}.
inline FeatureMap one_hot_features(int n_states, int n_actions) {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("one_hot_features: sizes must be >= 1");
  FeatureMap map = one_hot_rows(n_states * n_actions);
  map.set_layout(n_states, n_actions);
  return map;
}

/// One-hot encoding of (s,a1,a2) for Markov games.
inline FeatureMap one_hot_game_features(int n_states, int n_actions_p1, int n_actions_p2) {
  if (n_states < 1 || n_actions_p1 < 1 || n_actions_p2 < 1)
    throw std::invalid_argument("one_hot_game_features: sizes must be >= 1");
  FeatureMap map = one_hot_rows(n_states * n_actions_p1 * n_actions_p2);
  map.set_layout(n_states, n_actions_p1, n_actions_p2);
  return map;
}

/// Normalized Gaussian rows; any candidate whose absolute cosine with an
/// existing row exceeds cos(min_angle) is redrawn, so no two rows are within
/// min_angle of parallel.
inline FeatureMap random_unit_features(int n_pairs, int d, std::uint64_t seed,
                                       double min_angle = kDefaultMinAngle) {
  if (n_pairs < 1) throw std::invalid_argument("random_unit_features: n_pairs must be >= 1");
  if (d < 2) throw std::invalid_argument("random_unit_features: d must be >= 2");
  if (min_angle < 0.0 || min_angle >= M_PI / 2)
    throw std::invalid_argument("random_unit_features: min_angle must lie in [0, pi/2)");

  constexpr int kMaxRedraws = 10000;
  const double cos_limit = std::cos(min_angle);
  FeatureMap map;
  map.dim = d;
  map.rows.resize(n_pairs, d);
  map.kind = FeatureKind::RandomUnit;

  Rng rng(seed);
  Eigen::VectorXd candidate(d);
  for (int i = 0; i < n_pairs; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      for (int j = 0; j < d; ++j) candidate(j) = rng.normal();
      const double norm = candidate.norm();
      if (norm < 1e-12) continue;
      candidate /= norm;
      bool ok = true;
      for (int k = 0; k < i; ++k) {
        if (std::abs(map.rows.row(k).dot(candidate.transpose())) > cos_limit) {
          ok = false;
          break;
        }
      }
      if (ok) {
        map.rows.row(i) = candidate.transpose();
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::invalid_argument("random_unit_features: could not satisfy min_angle for row " +
                                  std::to_string(i) + " after 10^4 redraws");
  }
  return map;
}

struct GridFeatures {
  FeatureMap map;
  std::vector<int> assignment;  // sample index -> feature row
  int clamp_warnings = 0;       // samples clamped to a boundary cell
};

/// Fixed grid discretization: samples in the same occupied cell share one
/// one-hot row; out-of-range coordinates clamp to the boundary cell and are
/// counted as warnings. Occupied cells are numbered in first-visit order.
inline GridFeatures grid_features(const std::vector<Eigen::VectorXd>& samples,
                                  const std::vector<int>& bins_per_dim, const Eigen::VectorXd& lo,
                                  const Eigen::VectorXd& hi) {
  if (samples.empty()) throw std::invalid_argument("grid_features: no samples");
  const int dims = static_cast<int>(lo.size());
  if (hi.size() != dims || static_cast<int>(bins_per_dim.size()) != dims)
    throw std::invalid_argument("grid_features: lo/hi/bins dimension mismatch");
  for (int k = 0; k < dims; ++k) {
    if (!(lo(k) < hi(k))) throw std::invalid_argument("grid_features: requires lo < hi per dim");
    if (bins_per_dim[k] < 1) throw std::invalid_argument("grid_features: bins_per_dim must be >= 1");
  }

  GridFeatures out;
  std::vector<long long> cell_of_sample(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Eigen::VectorXd& x = samples[i];
    if (x.size() != dims) throw std::invalid_argument("grid_features: sample dimension mismatch");
    long long cell = 0;
    bool clamped = false;
    for (int k = 0; k < dims; ++k) {
      const double width = (hi(k) - lo(k)) / bins_per_dim[k];
      int idx = static_cast<int>(std::floor((x(k) - lo(k)) / width));
      if (idx < 0) {
        idx = 0;
        clamped = true;
      } else if (idx >= bins_per_dim[k]) {
        idx = bins_per_dim[k] - 1;
        clamped = x(k) > hi(k);  // x == hi lands in the top cell without warning
      }
      cell = cell * bins_per_dim[k] + idx;
    }
    if (clamped) ++out.clamp_warnings;
    cell_of_sample[i] = cell;
  }

  std::vector<long long> occupied;  // cell id -> row, first-visit order
  out.assignment.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    int row = -1;
    for (std::size_t k = 0; k < occupied.size(); ++k) {
      if (occupied[k] == cell_of_sample[i]) {
        row = static_cast<int>(k);
        break;
      }
    }
    if (row < 0) {
      row = static_cast<int>(occupied.size());
      occupied.push_back(cell_of_sample[i]);
    }
    out.assignment[i] = row;
  }

  const int d = static_cast<int>(occupied.size());
  out.map.dim = d;
  out.map.rows = Eigen::MatrixXd::Identity(d, d);
  out.map.kind = FeatureKind::Grid;
  return out;
}

}  // namespace tdlab
