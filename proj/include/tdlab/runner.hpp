#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tdlab/serialize.hpp"

namespace tdlab {

// ---------------------------------------------------------------------------
// Experiment specification (one JSON document; a resolved snapshot is
// written into every result bundle)
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::string name = "experiment";
  json raw;  // the document as given

  // Resolved environment: exactly one of the two is set.
  std::optional<TabularMdp> mdp;
  std::optional<MarkovGame> game;
  TabularPolicy policy;    // player 1 for games
  TabularPolicy policy2;   // games only
  FeatureMap features;

  int depth = 2;
  Activation activation = Activation::elu();
  std::uint64_t net_seed = 0;

  TrainConfig train;        // widths/seeds/iterations filled per sweep point
  bool lambda0_auto = true;  // estimate lambda0 from Sigma at each run's init
  bool nu_auto = true;       // nu = 1 - gamma unless given
  bool burn_in_auto = true;  // 10 x fitted mixing time

  std::string eval_reference = "none";  // none|q_pi|q_star|fixed_point|minimax_q

  std::vector<int> widths = {64};
  std::vector<std::uint64_t> seeds = {0};
  std::vector<long long> iteration_grid;  // optional sweep axis over T

  // figure1 protocol
  long long fig1_samples = 2000;
  long long fig1_epochs = 500;
  double fig1_eta0 = 0.001;

  // diagnostics toggles
  bool diag_spectrum = false;
  int diag_spectrum_trials = 3;
  bool diag_mixing = false;
  int diag_mixing_horizon = 64;
  bool diag_contraction = false;
  int diag_contraction_trials = 100;
  bool diag_linearization = false;
  int diag_lin_n_theta = 8;
  int diag_lin_n_x = 4;
  double diag_lin_omega = 1.0;
  bool diag_regularity = false;
  int diag_regularity_samples = 8;
};

namespace detail {

inline TabularPolicy resolve_policy(const json& j, const TabularMdp* mdp, int n_states,
                                    int n_actions) {
  const std::string type = j.value("type", "uniform");
  if (type == "uniform") return uniform_policy(n_states, n_actions);
  if (type == "inline") return policy_from_json(j);
  if (type == "epsilon_greedy") {
    if (mdp == nullptr)
      throw std::invalid_argument("ExperimentSpec: epsilon_greedy policy needs an MDP");
    const double epsilon = j.value("epsilon", 0.1);
    return epsilon_greedy(exact_q_star(*mdp, 1e-10).q, epsilon);
  }
  throw std::invalid_argument("ExperimentSpec: unknown policy type '" + type + "'");
}

}  // namespace detail

/// Parses and resolves a spec document. Environment sources: "random_mdp" /
/// "random_game" generator blocks, "inline" JSON, or "file" references.
inline ExperimentSpec parse_experiment_spec(const json& j) {
  ExperimentSpec spec;
  spec.raw = j;
  spec.name = j.value("name", "experiment");

  const json& env = j.at("environment");
  const std::string env_type = env.value("type", "mdp");
  if (env_type == "mdp") {
    if (env.contains("random_mdp")) {
      const json& g = env.at("random_mdp");
      spec.mdp = random_mdp(g.at("n_states").get<int>(), g.at("n_actions").get<int>(),
                            g.at("gamma").get<double>(), g.at("r_max").get<double>(),
                            g.at("seed").get<std::uint64_t>());
    } else if (env.contains("inline")) {
      spec.mdp = mdp_from_json(env.at("inline"));
    } else if (env.contains("file")) {
      spec.mdp = mdp_from_json(load_json_file(env.at("file").get<std::string>()));
    } else {
      throw std::invalid_argument("ExperimentSpec: environment needs random_mdp/inline/file");
    }
  } else if (env_type == "game") {
    if (env.contains("random_game")) {
      const json& g = env.at("random_game");
      spec.game = random_game(g.at("n_states").get<int>(), g.at("n_actions_p1").get<int>(),
                              g.at("n_actions_p2").get<int>(), g.at("gamma").get<double>(),
                              g.at("r_max").get<double>(), g.at("seed").get<std::uint64_t>());
    } else if (env.contains("inline")) {
      spec.game = game_from_json(env.at("inline"));
    } else if (env.contains("file")) {
      spec.game = game_from_json(load_json_file(env.at("file").get<std::string>()));
    } else {
      throw std::invalid_argument("ExperimentSpec: environment needs random_game/inline/file");
    }
  } else {
    throw std::invalid_argument("ExperimentSpec: unknown environment type '" + env_type + "'");
  }

  if (spec.mdp) {
    spec.policy = detail::resolve_policy(j.value("policy", json{{"type", "uniform"}}),
                                         &*spec.mdp, spec.mdp->n_states, spec.mdp->n_actions);
  } else {
    spec.policy = detail::resolve_policy(j.value("policy", json{{"type", "uniform"}}), nullptr,
                                         spec.game->n_states, spec.game->n_actions_p1);
    spec.policy2 = detail::resolve_policy(j.value("policy2", json{{"type", "uniform"}}), nullptr,
                                          spec.game->n_states, spec.game->n_actions_p2);
  }

  const json features = j.value("features", json{{"type", "one_hot"}});
  const std::string ftype = features.value("type", "one_hot");
  if (ftype == "one_hot") {
    spec.features = spec.mdp ? one_hot_features(spec.mdp->n_states, spec.mdp->n_actions)
                             : one_hot_game_features(spec.game->n_states, spec.game->n_actions_p1,
                                                     spec.game->n_actions_p2);
  } else if (ftype == "random_unit") {
    const int n_rows = spec.mdp
                           ? spec.mdp->n_states * spec.mdp->n_actions
                           : spec.game->n_states * spec.game->n_actions_p1 * spec.game->n_actions_p2;
    const double min_angle_deg = features.value("min_angle_deg", 1.0);
    spec.features = random_unit_features(n_rows, features.at("dim").get<int>(),
                                         features.value("seed", std::uint64_t{0}),
                                         min_angle_deg * M_PI / 180.0);
    if (spec.mdp)
      spec.features.set_layout(spec.mdp->n_states, spec.mdp->n_actions);
    else
      spec.features.set_layout(spec.game->n_states, spec.game->n_actions_p1,
                               spec.game->n_actions_p2);
  } else if (ftype == "file") {
    spec.features = feature_map_from_json(load_json_file(features.at("file").get<std::string>()));
  } else {
    throw std::invalid_argument("ExperimentSpec: unknown feature type '" + ftype + "'");
  }

  const json net = j.value("network", json::object());
  spec.depth = net.value("depth", 2);
  spec.activation = Activation::from_name(net.value("activation", std::string("elu")));
  spec.net_seed = net.value("seed", std::uint64_t{0});

  const json train = j.value("train", json::object());
  spec.train.algorithm = algorithm_from_name(train.value("algorithm", std::string("td")));
  spec.train.gamma = spec.mdp ? spec.mdp->gamma : spec.game->gamma;
  spec.train.omega = train.value("omega", 10.0);
  spec.train.iterations = train.value("iterations", 1024LL);
  spec.train.eval_every = train.value("eval_every", 64LL);
  spec.train.seed = train.value("seed", std::uint64_t{0});
  spec.train.minimax_order =
      train.value("minimax_order", std::string("maxmin")) == "minmax" ? MinimaxOrder::MinMax
                                                                      : MinimaxOrder::MaxMin;
  const json schedule = train.value("schedule", json{{"kind", "theorem"}});
  if (schedule.value("kind", std::string("theorem")) == "constant") {
    spec.train.schedule = LrSchedule::constant(schedule.value("eta0", 0.001));
  } else {
    spec.train.schedule.kind = LrSchedule::Kind::Theorem;
    if (schedule.contains("lambda0") && schedule.at("lambda0").is_number()) {
      spec.train.schedule.lambda0 = schedule.at("lambda0").get<double>();
      spec.lambda0_auto = false;
    }
    if (schedule.contains("nu") && schedule.at("nu").is_number()) {
      spec.train.schedule.nu = schedule.at("nu").get<double>();
      spec.nu_auto = false;
    }
  }
  if (train.contains("burn_in") && train.at("burn_in").is_number()) {
    spec.train.burn_in = train.at("burn_in").get<long long>();
    spec.burn_in_auto = false;
  }

  spec.eval_reference = j.value("eval", json::object()).value("reference", std::string("none"));

  const json sweep = j.value("sweep", json::object());
  if (sweep.contains("widths")) spec.widths = sweep.at("widths").get<std::vector<int>>();
  if (sweep.contains("seeds")) spec.seeds = sweep.at("seeds").get<std::vector<std::uint64_t>>();
  if (sweep.contains("iterations"))
    spec.iteration_grid = sweep.at("iterations").get<std::vector<long long>>();
  if (spec.widths.empty() || spec.seeds.empty())
    throw std::invalid_argument("ExperimentSpec: sweep axes must be non-empty");

  const json fig1 = j.value("figure1", json::object());
  spec.fig1_samples = fig1.value("samples", 2000LL);
  spec.fig1_epochs = fig1.value("epochs", 500LL);
  spec.fig1_eta0 = fig1.value("eta0", 0.001);

  const json diag = j.value("diagnostics", json::object());
  spec.diag_spectrum = diag.value("spectrum", false);
  spec.diag_spectrum_trials = diag.value("spectrum_trials", 3);
  spec.diag_mixing = diag.value("mixing", false);
  spec.diag_mixing_horizon = diag.value("mixing_horizon", 64);
  spec.diag_contraction = diag.value("contraction", false);
  spec.diag_contraction_trials = diag.value("contraction_trials", 100);
  spec.diag_linearization = diag.value("linearization", false);
  spec.diag_lin_n_theta = diag.value("linearization_n_theta", 8);
  spec.diag_lin_n_x = diag.value("linearization_n_x", 4);
  spec.diag_lin_omega = diag.value("linearization_omega", 1.0);
  spec.diag_regularity = diag.value("regularity", false);
  spec.diag_regularity_samples = diag.value("regularity_samples", 8);
  return spec;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
  return parse_experiment_spec(load_json_file(path));
}

// ---------------------------------------------------------------------------
// Result bundles
// ---------------------------------------------------------------------------

struct RunOutcome {
  int width = 0;
  std::uint64_t seed = 0;
  long long iterations = 0;
  std::string csv_path;
  bool ok = false;
  std::string error;
  double lambda0 = 0.0;
  double nu = 0.0;
  double final_td_error = 0.0;
  double final_q_eval_error = std::numeric_limits<double>::quiet_NaN();
  double final_theta_dist = 0.0;
};

struct ResultBundle {
  std::string out_dir;
  json summary;
  std::vector<RunOutcome> runs;
  bool partial_failures = false;
};

namespace detail {

struct RunPlan {
  int width = 0;
  std::uint64_t seed = 0;
  long long iterations = 0;
  std::string label;
};

inline json outcome_json(const RunOutcome& run) {
  json j{{"width", run.width},
         {"seed", run.seed},
         {"iterations", run.iterations},
         {"csv", run.csv_path},
         {"status", run.ok ? "ok" : "failed"},
         {"lambda0", run.lambda0},
         {"nu", run.nu},
         {"final_td_error", run.final_td_error},
         {"final_q_eval_error", run.final_q_eval_error},
         {"final_theta_dist", run.final_theta_dist}};
  if (!run.ok) j["error"] = run.error;
  return j;
}

/// Runs one sweep point end to end; exceptions are reported per run.
inline RunOutcome execute_run(const ExperimentSpec& spec, const RunPlan& plan,
                              const std::filesystem::path& run_dir) {
  RunOutcome outcome;
  outcome.width = plan.width;
  outcome.seed = plan.seed;
  outcome.iterations = plan.iterations;
  const std::string csv_name = "run_" + plan.label + ".csv";
  outcome.csv_path = (run_dir / csv_name).string();
  try {
    const NetworkParams params =
        init_params(spec.depth, plan.width, spec.features.dim, mix_seed(spec.net_seed, plan.seed));

    TrainConfig cfg = spec.train;
    cfg.iterations = plan.iterations;
    cfg.seed = mix_seed(cfg.seed, plan.seed + 1);

    Eigen::VectorXd weights;
    if (spec.mdp)
      weights = stationary_distribution(*spec.mdp, spec.policy);
    else
      weights = stationary_distribution(*spec.game, spec.policy, spec.policy2);

    if (cfg.schedule.kind == LrSchedule::Kind::Theorem) {
      if (spec.lambda0_auto) {
        const SigmaEstimate sigma =
            estimate_sigma(params, spec.activation, spec.features, weights, /*kernel_limit=*/0);
        cfg.schedule.lambda0 = sigma.lambda0_hat();
      }
      if (spec.nu_auto) cfg.schedule.nu = 1.0 - cfg.gamma;
    }
    if (spec.burn_in_auto && spec.mdp) cfg.burn_in = default_burn_in(*spec.mdp, spec.policy);
    outcome.lambda0 = cfg.schedule.lambda0;
    outcome.nu = cfg.schedule.nu;

    std::optional<EvalReference> eval;
    if (spec.eval_reference == "q_pi") {
      eval = EvalReference{weights, exact_q_pi(*spec.mdp, spec.policy).flattened()};
    } else if (spec.eval_reference == "q_star") {
      eval = EvalReference{weights, exact_q_star(*spec.mdp, 1e-10).flattened()};
    } else if (spec.eval_reference == "fixed_point") {
      eval = EvalReference{weights, projected_fixed_point(params, spec.activation, spec.features,
                                                          *spec.mdp, spec.policy, cfg.omega)
                                        .q_hat};
    } else if (spec.eval_reference == "minimax_q") {
      eval = EvalReference{weights,
                           exact_minimax_q(*spec.game, 1e-10, cfg.minimax_order).flattened()};
    } else if (spec.eval_reference != "none") {
      throw std::invalid_argument("unknown eval reference '" + spec.eval_reference + "'");
    }

    RunRecord record;
    if (spec.mdp) {
      record = train(*spec.mdp, spec.policy, spec.features, params, spec.activation, cfg,
                     eval ? &*eval : nullptr);
    } else {
      record = train(*spec.game, spec.policy, spec.policy2, spec.features, params,
                     spec.activation, cfg, eval ? &*eval : nullptr);
    }
    write_text_file(outcome.csv_path, run_record_csv(record));

    json sidecar{{"width", plan.width},
                 {"seed", plan.seed},
                 {"net_seed", mix_seed(spec.net_seed, plan.seed)},
                 {"trajectory_seed", cfg.seed},
                 {"iterations", cfg.iterations},
                 {"burn_in", cfg.burn_in},
                 {"eval_every", cfg.eval_every},
                 {"gamma", cfg.gamma},
                 {"omega", cfg.omega},
                 {"algorithm", algorithm_name(cfg.algorithm)},
                 {"schedule",
                  json{{"kind",
                        cfg.schedule.kind == LrSchedule::Kind::Theorem ? "theorem" : "constant"},
                       {"lambda0", cfg.schedule.lambda0},
                       {"nu", cfg.schedule.nu},
                       {"eta0", cfg.schedule.eta0}}},
                 {"eval_reference", spec.eval_reference}};
    write_json_file((run_dir / ("run_" + plan.label + ".json")).string(), sidecar);

    outcome.final_td_error = record.rows.back().td_error;
    outcome.final_q_eval_error = record.rows.back().q_eval_error;
    outcome.final_theta_dist = record.rows.back().theta_dist;
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = e.what();
  }
  return outcome;
}

inline void run_parallel(std::vector<std::function<void()>>& jobs, int threads) {
  if (threads < 1) threads = 1;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      jobs[i]();
    }
  };
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

/// Executes the cartesian sweep (widths x seeds x optional iteration grid).
/// Independent runs may execute concurrently; outputs are deterministic given
/// the seed list, and per-run failures are recorded without aborting.
inline ResultBundle run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                                   int threads = 1) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  const fs::path root(out_dir);
  const fs::path run_dir = root / "runs";
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw std::runtime_error("run_experiment: cannot create output directory " + out_dir);

  std::vector<detail::RunPlan> plans;
  const std::vector<long long> iteration_axis =
      spec.iteration_grid.empty() ? std::vector<long long>{spec.train.iterations}
                                  : spec.iteration_grid;
  for (int width : spec.widths)
    for (std::uint64_t seed : spec.seeds)
      for (long long iters : iteration_axis) {
        detail::RunPlan plan;
        plan.width = width;
        plan.seed = seed;
        plan.iterations = iters;
        plan.label = "m" + std::to_string(width) + "_s" + std::to_string(seed) +
                     (spec.iteration_grid.empty() ? "" : "_T" + std::to_string(iters));
        plans.push_back(std::move(plan));
      }

  ResultBundle bundle;
  bundle.out_dir = out_dir;
  bundle.runs.resize(plans.size());
  std::vector<std::function<void()>> jobs;
  jobs.reserve(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i)
    jobs.emplace_back(
        [&, i]() { bundle.runs[i] = detail::execute_run(spec, plans[i], run_dir); });
  detail::run_parallel(jobs, threads);

  json runs_json = json::array();
  for (const RunOutcome& run : bundle.runs) {
    if (!run.ok) bundle.partial_failures = true;
    runs_json.push_back(detail::outcome_json(run));
  }

  json summary{{"name", spec.name}, {"resolved_spec", spec.raw}, {"runs", std::move(runs_json)}};

  // Rate fit over the iteration grid: mean final oracle error per T.
  if (!spec.iteration_grid.empty() && spec.eval_reference != "none") {
    std::vector<std::pair<double, double>> points;
    for (long long iters : iteration_axis) {
      double sum = 0.0;
      int count = 0;
      for (const RunOutcome& run : bundle.runs)
        if (run.ok && run.iterations == iters && std::isfinite(run.final_q_eval_error)) {
          sum += run.final_q_eval_error;
          ++count;
        }
      if (count > 0) points.emplace_back(static_cast<double>(iters), sum / count);
    }
    if (points.size() >= 3) {
      const SlopeFit fit = fit_rate_slope(points);
      summary["slope_fit"] = json{{"slope", fit.slope},
                                  {"intercept", fit.intercept},
                                  {"r_squared", fit.r_squared},
                                  {"n_used", fit.n_used},
                                  {"n_excluded", fit.n_excluded}};
    }
  }

  // Optional diagnostics block.
  if (spec.diag_spectrum && spec.mdp) {
    const auto summaries =
        spectrum_sweep(spec.widths, spec.diag_spectrum_trials, *spec.mdp, spec.policy,
                       spec.features, spec.depth, spec.activation, spec.net_seed);
    write_text_file((root / "spectrum.csv").string(), spectrum_csv(summaries));
    json rows = json::array();
    for (const SpectrumSummary& s : summaries)
      rows.push_back(json{{"m", s.width},
                          {"mean_ratio", s.mean_ratio},
                          {"std_ratio", s.std_ratio},
                          {"rank", s.rank}});
    summary["spectrum"] = std::move(rows);
  }
  if (spec.diag_mixing && spec.mdp) {
    const auto profile = mixing_profile(*spec.mdp, spec.policy, spec.diag_mixing_horizon);
    write_text_file((root / "mixing.csv").string(), mixing_profile_csv(profile));
    summary["mixing_time"] = mixing_time(profile);
  }
  if (spec.diag_contraction && spec.mdp) {
    const double worst = contraction_check(*spec.mdp, spec.policy, spec.diag_contraction_trials,
                                           mix_seed(spec.net_seed, 0xC0));
    summary["contraction_max_ratio"] = worst;
  }
  if (spec.diag_linearization) {
    const auto scan = linearization_gap_scan(spec.depth, spec.features.dim, spec.widths,
                                             spec.diag_lin_omega, spec.diag_lin_n_theta,
                                             spec.diag_lin_n_x, mix_seed(spec.net_seed, 0x11),
                                             spec.activation);
    write_text_file((root / "linearization.csv").string(), gap_scan_csv(scan));
    json rows = json::array();
    for (const GapScanPoint& p : scan)
      rows.push_back(json{{"m", p.width}, {"max_gap", p.max_gap}});
    summary["linearization_gap"] = std::move(rows);
  }
  if (spec.diag_regularity) {
    const int width = spec.widths.front();
    const NetworkParams params =
        init_params(spec.depth, width, spec.features.dim, mix_seed(spec.net_seed, 0x77));
    Rng rng(mix_seed(spec.net_seed, 0x78));
    auto ball_sample = [&](double radius) {
      Eigen::VectorXd v(params.num_params());
      for (long long i = 0; i < v.size(); ++i) v(i) = rng.normal();
      v *= radius * std::pow(rng.uniform(), 1.0 / 3.0) / v.norm();
      return Eigen::VectorXd(params.theta + v);
    };
    if (spec.mdp) {
      std::vector<Eigen::VectorXd> samples;
      for (int i = 0; i < spec.diag_regularity_samples; ++i)
        samples.push_back(ball_sample(spec.train.omega));
      const auto nu = largest_feasible_nu([&](double nu_probe) {
        return regularity_probe_q(params, spec.activation, spec.features, *spec.mdp, spec.policy,
                                  samples, nu_probe);
      });
      summary["regularity_nu"] = nu ? json(*nu) : json();
    } else {
      std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;
      for (int i = 0; i < spec.diag_regularity_samples; ++i)
        pairs.emplace_back(ball_sample(2.0 * spec.train.omega),
                           ball_sample(2.0 * spec.train.omega));
      const auto nu = largest_feasible_nu([&](double nu_probe) {
        return regularity_probe_minimax(params, spec.activation, spec.features, *spec.game,
                                        spec.policy, spec.policy2, pairs, nu_probe,
                                        spec.train.minimax_order);
      });
      summary["regularity_nu"] = nu ? json(*nu) : json();
    }
  }

  summary["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bundle.summary = std::move(summary);
  write_json_file((root / "summary.json").string(), bundle.summary);
  return bundle;
}

// ---------------------------------------------------------------------------
// Figure-1 style replication
// ---------------------------------------------------------------------------

/// Produces (a) per-width training curves (epoch-aggregated squared TD error
/// while cycling one fixed trajectory) and (b) the ratio-vs-width table.
inline ResultBundle replicate_figure1(const ExperimentSpec& spec, const std::string& out_dir,
                                      int threads = 1) {
  namespace fs = std::filesystem;
  if (!spec.mdp) throw std::invalid_argument("replicate_figure1: needs an MDP environment");
  const auto start = std::chrono::steady_clock::now();
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("replicate_figure1: cannot create " + out_dir);

  struct CurveResult {
    int width = 0;
    bool ok = false;
    std::string error;
    double tail_mean = 0.0;
    std::vector<std::pair<long long, double>> curve;  // (step, epoch-mean sq TD error)
  };

  const long long burn =
      spec.burn_in_auto ? default_burn_in(*spec.mdp, spec.policy) : spec.train.burn_in;
  std::vector<CurveResult> results(spec.widths.size() * spec.seeds.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t wi = 0; wi < spec.widths.size(); ++wi) {
    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
      jobs.emplace_back([&, wi, si]() {
        CurveResult& res = results[wi * spec.seeds.size() + si];
        res.width = spec.widths[wi];
        try {
          const std::uint64_t seed = spec.seeds[si];
          const Trajectory traj = sample_trajectory(*spec.mdp, spec.policy, spec.fig1_samples,
                                                    mix_seed(spec.train.seed, seed), burn);
          const NetworkParams params = init_params(spec.depth, spec.widths[wi], spec.features.dim,
                                                   mix_seed(spec.net_seed, seed));
          TrainConfig cfg = spec.train;
          cfg.iterations = spec.fig1_samples * spec.fig1_epochs;
          cfg.eval_every = cfg.iterations;  // per-step errors come from the trace
          cfg.schedule = LrSchedule::constant(spec.fig1_eta0);
          std::vector<double> trace;
          trace.reserve(static_cast<std::size_t>(cfg.iterations));
          train(*spec.mdp, spec.policy, spec.features, params, spec.activation, cfg, nullptr,
                &traj, &trace);
          res.curve.reserve(static_cast<std::size_t>(spec.fig1_epochs));
          for (long long e = 0; e < spec.fig1_epochs; ++e) {
            double mean_sq = 0.0;
            for (long long k = 0; k < spec.fig1_samples; ++k) {
              const double d = trace[static_cast<std::size_t>(e * spec.fig1_samples + k)];
              mean_sq += d * d;
            }
            res.curve.emplace_back((e + 1) * spec.fig1_samples, mean_sq / spec.fig1_samples);
          }
          const long long tail = std::max<long long>(1, spec.fig1_epochs / 10);
          double tail_mean = 0.0;
          for (long long e = spec.fig1_epochs - tail; e < spec.fig1_epochs; ++e)
            tail_mean += res.curve[static_cast<std::size_t>(e)].second;
          res.tail_mean = tail_mean / tail;
          res.ok = true;
        } catch (const std::exception& e) {
          res.ok = false;
          res.error = e.what();
        }
      });
    }
  }
  detail::run_parallel(jobs, threads);

  ResultBundle bundle;
  bundle.out_dir = out_dir;
  json curves = json::array();
  for (std::size_t wi = 0; wi < spec.widths.size(); ++wi) {
    // Seed-averaged curve per width.
    std::vector<std::pair<long long, double>> mean_curve;
    double tail_mean = 0.0;
    int ok_count = 0;
    std::string error;
    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
      const CurveResult& res = results[wi * spec.seeds.size() + si];
      if (!res.ok) {
        error = res.error;
        continue;
      }
      if (mean_curve.empty()) mean_curve.assign(res.curve.begin(), res.curve.end());
      else
        for (std::size_t k = 0; k < mean_curve.size(); ++k)
          mean_curve[k].second += res.curve[k].second;
      tail_mean += res.tail_mean;
      ++ok_count;
    }
    json entry{{"m", spec.widths[wi]}};
    if (ok_count > 0) {
      for (auto& [t, v] : mean_curve) v /= ok_count;
      tail_mean /= ok_count;
      const std::string csv_path =
          (root / ("curve_m" + std::to_string(spec.widths[wi]) + ".csv")).string();
      write_text_file(csv_path, curve_csv(mean_curve));
      entry["csv"] = csv_path;
      entry["tail_mean_sq_td_error"] = tail_mean;
      entry["seeds_ok"] = ok_count;
    } else {
      bundle.partial_failures = true;
      entry["status"] = "failed";
      entry["error"] = error;
    }
    curves.push_back(std::move(entry));
  }

  const auto summaries =
      spectrum_sweep(spec.widths, spec.diag_spectrum_trials, *spec.mdp, spec.policy, spec.features,
                     spec.depth, spec.activation, spec.net_seed);
  write_text_file((root / "spectrum.csv").string(), spectrum_csv(summaries));
  json spectrum_rows = json::array();
  for (const SpectrumSummary& s : summaries)
    spectrum_rows.push_back(json{{"m", s.width},
                                 {"mean_ratio", s.mean_ratio},
                                 {"std_ratio", s.std_ratio},
                                 {"rank", s.rank}});

  bundle.summary = json{{"name", spec.name},
                        {"resolved_spec", spec.raw},
                        {"curves", std::move(curves)},
                        {"spectrum", std::move(spectrum_rows)},
                        {"wall_clock_seconds",
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count()}};
  write_json_file((root / "summary.json").string(), bundle.summary);
  return bundle;
}

}  // namespace tdlab
