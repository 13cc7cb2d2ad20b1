#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdlab/algorithms.hpp"
#include "tdlab/diagnostics.hpp"
#include "tdlab/env.hpp"
#include "tdlab/features.hpp"
#include "tdlab/oracles.hpp"

namespace tdlab {

using json = nlohmann::json;

/// Shortest round-trip decimal representation; used for every numeric CSV
/// field so reruns are byte-identical.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Environments <-> JSON (64-bit floats, row-major nesting)
// ---------------------------------------------------------------------------

inline json to_json(const TabularMdp& mdp) {
  json transition = json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    json per_state = json::array();
    for (int a = 0; a < mdp.n_actions; ++a) {
      json row = json::array();
      for (int t = 0; t < mdp.n_states; ++t) row.push_back(mdp.p(s, a, t));
      per_state.push_back(std::move(row));
    }
    transition.push_back(std::move(per_state));
  }
  json reward = json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    json row = json::array();
    for (int a = 0; a < mdp.n_actions; ++a) row.push_back(mdp.reward(s, a));
    reward.push_back(std::move(row));
  }
  return json{{"n_states", mdp.n_states},
              {"n_actions", mdp.n_actions},
              {"gamma", mdp.gamma},
              {"r_max", mdp.r_max},
              {"transition", std::move(transition)},
              {"reward", std::move(reward)}};
}

inline TabularMdp mdp_from_json(const json& j) {
  TabularMdp mdp;
  mdp.n_states = j.at("n_states").get<int>();
  mdp.n_actions = j.at("n_actions").get<int>();
  mdp.gamma = j.at("gamma").get<double>();
  mdp.r_max = j.value("r_max", 0.0);
  mdp.transition.assign(
      static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states, 0.0);
  mdp.reward.resize(mdp.n_states, mdp.n_actions);
  const json& transition = j.at("transition");
  const json& reward = j.at("reward");
  double max_abs_r = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int t = 0; t < mdp.n_states; ++t)
        mdp.p(s, a, t) = transition.at(s).at(a).at(t).get<double>();
      mdp.reward(s, a) = reward.at(s).at(a).get<double>();
      max_abs_r = std::max(max_abs_r, std::abs(mdp.reward(s, a)));
    }
  }
  if (mdp.r_max <= 0.0) mdp.r_max = max_abs_r > 0.0 ? max_abs_r : 1.0;
  mdp.validate();
  return mdp;
}

inline json to_json(const MarkovGame& game) {
  json transition = json::array();
  for (int s = 0; s < game.n_states; ++s) {
    json per_state = json::array();
    for (int a1 = 0; a1 < game.n_actions_p1; ++a1) {
      json per_a1 = json::array();
      for (int a2 = 0; a2 < game.n_actions_p2; ++a2) {
        json row = json::array();
        for (int t = 0; t < game.n_states; ++t) row.push_back(game.p(s, a1, a2, t));
        per_a1.push_back(std::move(row));
      }
      per_state.push_back(std::move(per_a1));
    }
    transition.push_back(std::move(per_state));
  }
  json reward = json::array();
  for (int s = 0; s < game.n_states; ++s) {
    json per_a1 = json::array();
    for (int a1 = 0; a1 < game.n_actions_p1; ++a1) {
      json row = json::array();
      for (int a2 = 0; a2 < game.n_actions_p2; ++a2) row.push_back(game.r(s, a1, a2));
      per_a1.push_back(std::move(row));
    }
    reward.push_back(std::move(per_a1));
  }
  return json{{"n_states", game.n_states},
              {"n_actions_p1", game.n_actions_p1},
              {"n_actions_p2", game.n_actions_p2},
              {"gamma", game.gamma},
              {"transition", std::move(transition)},
              {"reward", std::move(reward)}};
}

inline MarkovGame game_from_json(const json& j) {
  MarkovGame game;
  game.n_states = j.at("n_states").get<int>();
  game.n_actions_p1 = j.at("n_actions_p1").get<int>();
  game.n_actions_p2 = j.at("n_actions_p2").get<int>();
  game.gamma = j.at("gamma").get<double>();
  game.transition.assign(static_cast<std::size_t>(game.n_states) * game.n_actions_p1 *
                             game.n_actions_p2 * game.n_states,
                         0.0);
  game.reward.resize(game.n_states, game.n_actions_p1 * game.n_actions_p2);
  const json& transition = j.at("transition");
  const json& reward = j.at("reward");
  for (int s = 0; s < game.n_states; ++s)
    for (int a1 = 0; a1 < game.n_actions_p1; ++a1)
      for (int a2 = 0; a2 < game.n_actions_p2; ++a2) {
        for (int t = 0; t < game.n_states; ++t)
          game.p(s, a1, a2, t) = transition.at(s).at(a1).at(a2).at(t).get<double>();
        game.r(s, a1, a2) = reward.at(s).at(a1).at(a2).get<double>();
      }
  game.validate();
  return game;
}

inline json to_json(const TabularPolicy& policy) {
  json probs = json::array();
  for (int s = 0; s < policy.probs.rows(); ++s) {
    json row = json::array();
    for (int a = 0; a < policy.probs.cols(); ++a) row.push_back(policy.probs(s, a));
    probs.push_back(std::move(row));
  }
  return json{{"probs", std::move(probs)}};
}

inline TabularPolicy policy_from_json(const json& j) {
  const json& probs = j.at("probs");
  TabularPolicy policy;
  const int n_states = static_cast<int>(probs.size());
  const int n_actions = static_cast<int>(probs.at(0).size());
  policy.probs.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) policy.probs(s, a) = probs.at(s).at(a).get<double>();
  policy.validate();
  return policy;
}

inline json to_json(const FeatureMap& fmap) {
  json rows = json::array();
  for (int i = 0; i < fmap.n_rows(); ++i) {
    json row = json::array();
    for (int k = 0; k < fmap.dim; ++k) row.push_back(fmap.rows(i, k));
    rows.push_back(std::move(row));
  }
  return json{{"dim", fmap.dim},
              {"rows", std::move(rows)},
              {"n_states", fmap.n_states},
              {"n_actions", fmap.n_actions},
              {"n_actions2", fmap.n_actions2}};
}

inline FeatureMap feature_map_from_json(const json& j) {
  const json& rows = j.at("rows");
  FeatureMap fmap;
  fmap.dim = j.at("dim").get<int>();
  fmap.rows.resize(static_cast<int>(rows.size()), fmap.dim);
  for (int i = 0; i < fmap.rows.rows(); ++i)
    for (int k = 0; k < fmap.dim; ++k) fmap.rows(i, k) = rows.at(i).at(k).get<double>();
  const int states = j.value("n_states", 0);
  if (states > 0) fmap.set_layout(states, j.value("n_actions", 0), j.value("n_actions2", 0));
  fmap.validate();
  return fmap;
}

inline json to_json(const QTable& table) {
  json q = json::array();
  for (int s = 0; s < table.q.rows(); ++s) {
    json row = json::array();
    for (int a = 0; a < table.q.cols(); ++a) row.push_back(table.q(s, a));
    q.push_back(std::move(row));
  }
  return json{{"q", std::move(q)}};
}

inline json to_json(const GameQTable& table) {
  json q = json::array();
  for (int s = 0; s < table.n_states; ++s) {
    json per_a1 = json::array();
    for (int a1 = 0; a1 < table.n_actions_p1; ++a1) {
      json row = json::array();
      for (int a2 = 0; a2 < table.n_actions_p2; ++a2) row.push_back(table.value(s, a1, a2));
      per_a1.push_back(std::move(row));
    }
    q.push_back(std::move(per_a1));
  }
  return json{{"q", std::move(q)},
              {"n_states", table.n_states},
              {"n_actions_p1", table.n_actions_p1},
              {"n_actions_p2", table.n_actions_p2}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

inline std::string run_record_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "t,td_error,theta_dist,q_eval_error,projection_hit\n";
  for (const LogRow& row : record.rows) {
    out << row.t << ',' << format_double(row.td_error) << ',' << format_double(row.theta_dist)
        << ',' << format_double(row.q_eval_error) << ',' << (row.projection_hit ? 1 : 0) << '\n';
  }
  return out.str();
}

inline std::string spectrum_csv(const std::vector<SpectrumSummary>& summaries) {
  std::ostringstream out;
  out << "m,sigma_max,sigma_min_nonzero,ratio,rank\n";
  for (const SpectrumSummary& s : summaries) {
    out << s.width << ',' << format_double(s.mean_sigma_max) << ','
        << format_double(s.mean_sigma_min_nonzero) << ',' << format_double(s.mean_ratio) << ','
        << s.rank << '\n';
  }
  return out.str();
}

inline std::string mixing_profile_csv(const std::vector<std::pair<int, double>>& profile) {
  std::ostringstream out;
  out << "t,sup_tv\n";
  for (const auto& [t, tv] : profile) out << t << ',' << format_double(tv) << '\n';
  return out.str();
}

inline std::string gap_scan_csv(const std::vector<GapScanPoint>& points) {
  std::ostringstream out;
  out << "m,max_gap\n";
  for (const GapScanPoint& p : points) out << p.width << ',' << format_double(p.max_gap) << '\n';
  return out.str();
}

/// Epoch-aggregated training curve (steps, mean squared TD error per epoch).
inline std::string curve_csv(const std::vector<std::pair<long long, double>>& curve) {
  std::ostringstream out;
  out << "t,mean_sq_td_error\n";
  for (const auto& [t, v] : curve) out << t << ',' << format_double(v) << '\n';
  return out.str();
}

}  // namespace tdlab
