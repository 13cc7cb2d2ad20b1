// Command-line front end: train / diagnose / sweep / figure1 / oracle.
// Exit codes: 0 full success, 2 partial run failures, 1 fatal errors.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tdlab/runner.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config (JSON)")->required();
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed, "Override the base training seed")
      ->each([&](const std::string&) { opts.seed_given = true; });
  cmd->add_option("--threads", opts.threads, "Sweep-level worker threads");
}

tdlab::ExperimentSpec load_spec(const CommonOptions& opts) {
  tdlab::ExperimentSpec spec = tdlab::load_experiment_spec(opts.config_path);
  if (opts.seed_given) {
    spec.train.seed = opts.seed;
    spec.raw["train"]["seed"] = opts.seed;
  }
  return spec;
}

int bundle_exit_code(const tdlab::ResultBundle& bundle) {
  if (bundle.partial_failures) {
    std::cerr << "warning: some runs failed; see " << bundle.out_dir << "/summary.json\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural TD / Q-learning laboratory"};
  app.require_subcommand(1);

  CommonOptions train_opts, diagnose_opts, sweep_opts, fig1_opts, oracle_opts;
  CLI::App* cmd_train = app.add_subcommand("train", "Single training run (first width/seed)");
  add_common(cmd_train, train_opts);
  CLI::App* cmd_diagnose = app.add_subcommand("diagnose", "Run the configured diagnostics only");
  add_common(cmd_diagnose, diagnose_opts);
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "Cartesian width x seed x T sweep");
  add_common(cmd_sweep, sweep_opts);
  CLI::App* cmd_fig1 =
      app.add_subcommand("figure1", "Training curves and spectrum ratios across widths");
  add_common(cmd_fig1, fig1_opts);
  CLI::App* cmd_oracle =
      app.add_subcommand("oracle", "Exact Q tables and the projected fixed point");
  add_common(cmd_oracle, oracle_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      tdlab::ExperimentSpec spec = load_spec(train_opts);
      spec.widths = {spec.widths.front()};
      spec.seeds = {spec.seeds.front()};
      spec.iteration_grid.clear();
      const auto bundle = tdlab::run_experiment(spec, train_opts.out_dir, 1);
      return bundle_exit_code(bundle);
    }
    if (cmd_diagnose->parsed()) {
      tdlab::ExperimentSpec spec = load_spec(diagnose_opts);
      spec.seeds = {spec.seeds.front()};
      spec.iteration_grid.clear();
      spec.train.iterations = 0;  // diagnostics only; skip real training work
      const auto bundle = tdlab::run_experiment(spec, diagnose_opts.out_dir, diagnose_opts.threads);
      return bundle_exit_code(bundle);
    }
    if (cmd_sweep->parsed()) {
      const auto bundle =
          tdlab::run_experiment(load_spec(sweep_opts), sweep_opts.out_dir, sweep_opts.threads);
      return bundle_exit_code(bundle);
    }
    if (cmd_fig1->parsed()) {
      const auto bundle =
          tdlab::replicate_figure1(load_spec(fig1_opts), fig1_opts.out_dir, fig1_opts.threads);
      return bundle_exit_code(bundle);
    }
    if (cmd_oracle->parsed()) {
      tdlab::ExperimentSpec spec = load_spec(oracle_opts);
      std::filesystem::create_directories(oracle_opts.out_dir);
      tdlab::json out{{"name", spec.name}};
      if (spec.mdp) {
        out["q_pi"] = tdlab::to_json(tdlab::exact_q_pi(*spec.mdp, spec.policy));
        out["q_star"] = tdlab::to_json(tdlab::exact_q_star(*spec.mdp, 1e-10));
        const auto params = tdlab::init_params(spec.depth, spec.widths.front(), spec.features.dim,
                                               tdlab::mix_seed(spec.net_seed, spec.seeds.front()));
        const auto fp = tdlab::projected_fixed_point(params, spec.activation, spec.features,
                                                     *spec.mdp, spec.policy, spec.train.omega);
        tdlab::json fp_json{{"inside_ball", fp.inside_ball},
                            {"delta_norm", fp.delta_norm},
                            {"residual", fp.residual},
                            {"rank", fp.rank},
                            {"omega", fp.omega}};
        tdlab::json q_hat = tdlab::json::array();
        for (int i = 0; i < fp.q_hat.size(); ++i) q_hat.push_back(fp.q_hat(i));
        fp_json["q_hat"] = std::move(q_hat);
        out["fixed_point"] = std::move(fp_json);
      } else {
        out["minimax_q_maxmin"] = tdlab::to_json(
            tdlab::exact_minimax_q(*spec.game, 1e-10, tdlab::MinimaxOrder::MaxMin));
        out["minimax_q_minmax"] = tdlab::to_json(
            tdlab::exact_minimax_q(*spec.game, 1e-10, tdlab::MinimaxOrder::MinMax));
      }
      tdlab::write_json_file(oracle_opts.out_dir + "/oracle.json", out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
