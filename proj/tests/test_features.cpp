#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tdlab/features.hpp"

using namespace tdlab;

TEST_CASE("one_hot_features: basis structure") {
  const FeatureMap tiny = one_hot_features(1, 1);
  CHECK(tiny.dim == 1);
  CHECK(tiny.rows(0, 0) == 1.0);

  const FeatureMap map = one_hot_features(2, 2);
  CHECK(map.dim == 4);
  CHECK(map.pair_index(1, 0) == 2);
  CHECK(map.rows.row(2) == Eigen::RowVector4d(0, 0, 1, 0));

  // Pairwise dot products form the identity.
  const Eigen::MatrixXd gram = map.rows * map.rows.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feature rows are unit norm for every constructor") {
  for (const FeatureMap& map :
       {one_hot_features(3, 2), random_unit_features(6, 8, 3), one_hot_game_features(2, 2, 2)}) {
    for (int i = 0; i < map.n_rows(); ++i)
      CHECK(std::abs(map.rows.row(i).norm() - 1.0) <= 1e-12);
  }
}

TEST_CASE("random_unit_features: separation, determinism, failure") {
  const FeatureMap map = random_unit_features(3, 8, 5);
  const double cos_limit = std::cos(kDefaultMinAngle);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      CHECK(std::abs(map.rows.row(i).dot(map.rows.row(j))) < cos_limit);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      CHECK(std::abs(map.rows.row(i).dot(map.rows.row(j))) < 1.0 - 1e-9);

  const FeatureMap again = random_unit_features(3, 8, 5);
  CHECK(map.rows == again.rows);

  const FeatureMap one = random_unit_features(1, 4, 2);
  CHECK(std::abs(one.rows.row(0).norm() - 1.0) <= 1e-12);

  // 50 pairwise nearly-orthogonal directions cannot fit in the plane.
  CHECK_THROWS_AS(random_unit_features(50, 2, 1, 80.0 * M_PI / 180.0), std::invalid_argument);
}

TEST_CASE("grid_features: single sample and same-cell sharing") {
  std::vector<Eigen::VectorXd> samples;
  samples.push_back(Eigen::VectorXd::Constant(1, 0.4));
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, 0.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(1, 1.0);
  const GridFeatures single = grid_features(samples, {4}, lo, hi);
  CHECK(single.map.dim == 1);
  CHECK(single.map.rows(0, 0) == 1.0);

  samples.push_back(Eigen::VectorXd::Constant(1, 0.45));  // same cell as 0.4
  const GridFeatures shared = grid_features(samples, {4}, lo, hi);
  CHECK(shared.map.dim == 1);
  CHECK(shared.assignment[0] == shared.assignment[1]);
}

TEST_CASE("grid_features: cell index = floor((x-lo)/width)") {
  std::vector<Eigen::VectorXd> samples;
  samples.push_back(Eigen::VectorXd::Constant(1, 0.1));
  samples.push_back(Eigen::VectorXd::Constant(1, 0.9));
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, 0.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(1, 1.0);
  const GridFeatures gf = grid_features(samples, {2}, lo, hi);
  CHECK(gf.map.dim == 2);
  CHECK(gf.assignment[0] != gf.assignment[1]);
  CHECK(gf.map.rows.row(gf.assignment[0]).dot(gf.map.rows.row(gf.assignment[1])) == 0.0);
}

TEST_CASE("grid_features: out-of-range samples clamp with a warning count") {
  std::vector<Eigen::VectorXd> samples;
  samples.push_back(Eigen::VectorXd::Constant(1, -0.5));
  samples.push_back(Eigen::VectorXd::Constant(1, 1.5));
  samples.push_back(Eigen::VectorXd::Constant(1, 0.5));
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, 0.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(1, 1.0);
  const GridFeatures gf = grid_features(samples, {2}, lo, hi);
  CHECK(gf.clamp_warnings == 2);
  CHECK(gf.assignment[0] != gf.assignment[1]);  // clamped to opposite boundary cells

  CHECK_THROWS_AS(grid_features(samples, {2}, hi, lo), std::invalid_argument);
  CHECK_THROWS_AS(grid_features(samples, {0}, lo, hi), std::invalid_argument);
}

TEST_CASE("feature_map_from_rows validates unit norms") {
  Eigen::MatrixXd ok(2, 2);
  ok << 1, 0, 0, 1;
  CHECK_NOTHROW(feature_map_from_rows(ok));
  Eigen::MatrixXd bad(1, 2);
  bad << 1, 1;
  CHECK_THROWS_AS(feature_map_from_rows(bad), std::invalid_argument);
}

TEST_CASE("layout bookkeeping for games") {
  const FeatureMap map = one_hot_game_features(2, 2, 3);
  CHECK(map.triple_index(1, 1, 2) == 1 * 6 + 1 * 3 + 2);
  CHECK_THROWS_AS(map.pair_index(0, 0), std::invalid_argument);
}
