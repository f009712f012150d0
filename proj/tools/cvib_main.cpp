#include <cstdint>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cvib/experiment.hpp"

namespace {

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) throw std::invalid_argument("--seed: empty seed list");
  return seeds;
}

cvib::ExperimentConfig resolve_config(const std::string& config_path,
                                      const std::string& objective,
                                      const std::string& model,
                                      const std::string& seed_list,
                                      const std::string& out_dir) {
  cvib::ExperimentConfig cfg = cvib::load_experiment_config(config_path);
  if (!objective.empty()) cfg.objective = cvib::objective_from_string(objective);
  if (!model.empty()) cfg.model = cvib::model_kind_from_string(model);
  if (!seed_list.empty()) cfg.seeds = parse_seed_list(seed_list);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

void print_aggregate(const cvib::ExperimentOutcome& outcome) {
  std::cout.precision(6);
  std::cout << "metric mean std\n";
  for (const auto& [metric, stat] : outcome.aggregate)
    std::cout << metric << " " << stat.mean << " " << stat.stddev << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual learning for MNAR implicit feedback"};
  app.require_subcommand(1);

  std::string input, format = "triplet", out_dir, config_path;
  std::string objective, model, seed_list, checkpoint, test_path;
  double validation_fraction = 0.30;
  uint64_t seed = 0;
  int jobs = 1;
  cvib::SynthConfig synth_cfg;
  std::vector<int> ndcg_ks{5, 10};

  auto* prepare = app.add_subcommand("prepare", "Load a raw dataset, binarize, split");
  prepare->add_option("--input", input, "raw dataset file")->required();
  prepare->add_option("--format", format, "matrix|triplet")
      ->check(CLI::IsMember({"matrix", "triplet"}));
  prepare->add_option("--out", out_dir, "output directory")->required();
  prepare->add_option("--validation-fraction", validation_fraction);
  prepare->add_option("--seed", seed, "split seed");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic MNAR dataset");
  synth->add_option("--users", synth_cfg.num_users);
  synth->add_option("--items", synth_cfg.num_items);
  synth->add_option("--latent-dim", synth_cfg.latent_dim);
  synth->add_option("--policy-strength", synth_cfg.policy_strength);
  synth->add_option("--observed-fraction", synth_cfg.target_observed_fraction);
  synth->add_option("--mar-fraction", synth_cfg.mar_test_fraction);
  synth->add_option("--seed", synth_cfg.rng_seed);
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "Train per seed and evaluate on MAR test");
  train->add_option("--config", config_path, "experiment config (json)")->required();
  train->add_option("--objective", objective)
      ->check(CLI::IsMember({"erm", "cvib", "ips", "snips", "dr", "drjl"}));
  train->add_option("--model", model)->check(CLI::IsMember({"mf", "ncf"}));
  train->add_option("--seed", seed_list, "comma-separated seed list");
  train->add_option("--out", out_dir, "output directory");

  auto* grid = app.add_subcommand("grid", "Hyperparameter grid search");
  grid->add_option("--config", config_path)->required();
  grid->add_option("--objective", objective)
      ->check(CLI::IsMember({"erm", "cvib", "ips", "snips", "dr", "drjl"}));
  grid->add_option("--model", model)->check(CLI::IsMember({"mf", "ncf"}));
  grid->add_option("--seed", seed_list, "comma-separated seed list");
  grid->add_option("--out", out_dir);
  grid->add_option("--jobs", jobs, "parallel grid cells");

  auto* sweep = app.add_subcommand("sweep", "Alpha/gamma sensitivity sweep");
  sweep->add_option("--config", config_path)->required();
  sweep->add_option("--model", model)->check(CLI::IsMember({"mf", "ncf"}));
  sweep->add_option("--seed", seed_list, "comma-separated seed list");
  sweep->add_option("--out", out_dir);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--test", test_path)->required();
  eval->add_option("--ndcg-k", ndcg_ks, "nDCG cutoffs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      cvib::SplitSpec split;
      split.validation_fraction = validation_fraction;
      split.rng_seed = seed;
      const auto summary = cvib::run_prepare(input, format, out_dir, split);
      std::cout << "users " << summary.num_users << "\nitems " << summary.num_items
                << "\nn_observed " << summary.n_observed << "\nctr_observed "
                << summary.ctr_observed << "\n";
    } else if (synth->parsed()) {
      const auto summary = cvib::run_synth(synth_cfg, out_dir);
      std::cout << "n_train " << summary.n_train << "\nn_test " << summary.n_test
                << "\nctr_observed " << summary.ctr_observed << "\nctr_true "
                << summary.ctr_true << "\n";
    } else if (train->parsed()) {
      const auto cfg =
          resolve_config(config_path, objective, model, seed_list, out_dir);
      print_aggregate(cvib::run_train_experiment(cfg));
    } else if (grid->parsed()) {
      const auto cfg =
          resolve_config(config_path, objective, model, seed_list, out_dir);
      const auto result = cvib::run_grid_experiment(cfg, jobs);
      std::cout << "best lr " << result.best.lr << " weight_decay "
                << result.best.weight_decay << " batch_size " << result.best.batch_size;
      if (cfg.objective == cvib::ObjectiveKind::kCvib)
        std::cout << " alpha " << result.best.cvib.alpha << " gamma "
                  << result.best.cvib.gamma;
      std::cout << " val_loss " << result.leaderboard.front().val_score << "\n";
    } else if (sweep->parsed()) {
      auto cfg = resolve_config(config_path, objective, model, seed_list, out_dir);
      const auto outcome = cvib::run_sweep_experiment(cfg);
      std::cout << "alpha_auc_range " << outcome.alpha_auc_range
                << "\ngamma_auc_range " << outcome.gamma_auc_range << "\n";
    } else if (eval->parsed()) {
      const auto model_ptr = cvib::load_checkpoint(checkpoint);
      const auto test = cvib::load_triplet_format(test_path);
      const auto report = cvib::evaluate(*model_ptr, test, ndcg_ks);
      std::cout << cvib::format_eval_report(report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
