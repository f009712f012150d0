#include "cvib/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace cvib {

namespace fs = std::filesystem;
using nlohmann::json;

TrainConfig ExperimentConfig::train_config(uint64_t seed) const {
  TrainConfig cfg;
  cfg.objective = objective;
  cfg.cvib = cvib;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  cfg.batch_size = batch_size;
  cfg.max_epochs = max_epochs;
  cfg.patience = patience;
  cfg.rng_seed = seed;
  cfg.selection = selection;
  return cfg;
}

namespace {

const char* to_string(SelectionMetric m) {
  return m == SelectionMetric::kValidationLoss ? "loss" : "auc";
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j = json::parse(json_text);
  reject_unknown_keys(
      j,
      {"train_path", "test_path", "model", "objective", "emb_dim", "hidden_dim",
       "stochastic_embeddings", "lr", "weight_decay", "batch_size", "max_epochs",
       "patience", "alpha", "beta", "gamma", "selection_metric",
       "validation_fraction", "mar_calibration_fraction", "propensity_clip_floor",
       "seeds", "ndcg_ks", "grids", "out_dir"},
      "experiment config");

  ExperimentConfig cfg;
  cfg.train_path = j.value("train_path", cfg.train_path);
  cfg.test_path = j.value("test_path", cfg.test_path);
  if (j.contains("model")) cfg.model = model_kind_from_string(j.at("model"));
  if (j.contains("objective"))
    cfg.objective = objective_from_string(j.at("objective"));

  const bool is_cvib = cfg.objective == ObjectiveKind::kCvib;
  for (const char* key : {"alpha", "beta", "gamma"})
    if (!is_cvib && j.contains(key))
      throw std::invalid_argument(std::string("config: \"") + key +
                                  "\" only applies to the cvib objective");
  const bool propensity = needs_propensities(cfg.objective);
  for (const char* key : {"mar_calibration_fraction", "propensity_clip_floor"})
    if (!propensity && j.contains(key))
      throw std::invalid_argument(std::string("config: \"") + key +
                                  "\" only applies to propensity-based objectives");

  cfg.emb_dim = j.value("emb_dim", cfg.emb_dim);
  cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
  cfg.stochastic_embeddings = j.value("stochastic_embeddings", cfg.stochastic_embeddings);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.cvib.alpha = j.value("alpha", cfg.cvib.alpha);
  cfg.cvib.beta = j.value("beta", cfg.cvib.beta);
  cfg.cvib.gamma = j.value("gamma", cfg.cvib.gamma);
  if (j.contains("selection_metric")) {
    const std::string s = j.at("selection_metric");
    if (s == "loss") cfg.selection = SelectionMetric::kValidationLoss;
    else if (s == "auc") cfg.selection = SelectionMetric::kValidationAuc;
    else throw std::invalid_argument("config: selection_metric must be loss or auc");
  }
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  cfg.mar_calibration_fraction =
      j.value("mar_calibration_fraction", cfg.mar_calibration_fraction);
  cfg.propensity_clip_floor =
      j.value("propensity_clip_floor", cfg.propensity_clip_floor);
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
  }
  if (j.contains("ndcg_ks")) cfg.ndcg_ks = j.at("ndcg_ks").get<std::vector<int>>();
  if (j.contains("grids")) {
    const json& g = j.at("grids");
    reject_unknown_keys(g, {"lr", "weight_decay", "batch_size", "alpha", "gamma"},
                        "grids");
    if (g.contains("lr")) cfg.grids.lrs = g.at("lr").get<std::vector<double>>();
    if (g.contains("weight_decay"))
      cfg.grids.weight_decays = g.at("weight_decay").get<std::vector<double>>();
    if (g.contains("batch_size"))
      cfg.grids.batch_sizes = g.at("batch_size").get<std::vector<int>>();
    if (g.contains("alpha")) cfg.grids.alphas = g.at("alpha").get<std::vector<double>>();
    if (g.contains("gamma")) cfg.grids.gammas = g.at("gamma").get<std::vector<double>>();
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment_config(ss.str());
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["train_path"] = cfg.train_path;
  j["test_path"] = cfg.test_path;
  j["model"] = to_string(cfg.model);
  j["objective"] = to_string(cfg.objective);
  j["emb_dim"] = cfg.emb_dim;
  if (cfg.model == ModelKind::kNcf) j["hidden_dim"] = cfg.hidden_dim;
  j["stochastic_embeddings"] = cfg.stochastic_embeddings;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  if (cfg.objective == ObjectiveKind::kCvib) {
    j["alpha"] = cfg.cvib.alpha;
    j["beta"] = cfg.cvib.beta;
    j["gamma"] = cfg.cvib.gamma;
  }
  if (needs_propensities(cfg.objective)) {
    j["mar_calibration_fraction"] = cfg.mar_calibration_fraction;
    j["propensity_clip_floor"] = cfg.propensity_clip_floor;
  }
  j["selection_metric"] = to_string(cfg.selection);
  j["validation_fraction"] = cfg.validation_fraction;
  j["seeds"] = cfg.seeds;
  j["ndcg_ks"] = cfg.ndcg_ks;
  j["out_dir"] = cfg.out_dir;
  return j.dump();
}

DatasetSummary run_prepare(const std::string& input_path, const std::string& format,
                           const std::string& out_dir, const SplitSpec& split) {
  InteractionTable table = [&] {
    if (format == "matrix") return load_matrix_format(input_path);
    if (format == "triplet") return load_triplet_format(input_path);
    throw std::invalid_argument("prepare: format must be matrix or triplet");
  }();

  auto [train, valid] = split_train_validation(table, split);

  DatasetSummary s;
  s.num_users = table.num_users();
  s.num_items = table.num_items();
  s.n_observed = table.num_observed();
  s.positive_rate = table.positive_rate();
  s.ctr_observed = table.positive_rate();
  s.n_train = train.num_observed();
  s.n_validation = valid.num_observed();

  fs::create_directories(out_dir);
  const std::string audit = "source=" + input_path + " format=" + format +
                            " validation_fraction=" +
                            std::to_string(split.validation_fraction) +
                            " seed=" + std::to_string(split.rng_seed);
  save_triplet_format(train, (fs::path(out_dir) / "train.txt").string(), {audit});
  save_triplet_format(valid, (fs::path(out_dir) / "valid.txt").string(), {audit});
  save_triplet_format(table, (fs::path(out_dir) / "full.txt").string(), {audit});

  auto out = open_out(fs::path(out_dir) / "summary.txt");
  out.precision(17);
  out << "# " << audit << "\n"
      << "num_users " << s.num_users << "\n"
      << "num_items " << s.num_items << "\n"
      << "n_observed " << s.n_observed << "\n"
      << "positive_rate " << s.positive_rate << "\n"
      << "ctr_observed " << s.ctr_observed << "\n"
      << "n_train " << s.n_train << "\n"
      << "n_validation " << s.n_validation << "\n";
  return s;
}

SynthSummary run_synth(const SynthConfig& cfg, const std::string& out_dir) {
  SynthResult result = generate_synthetic_mnar(cfg);

  SynthSummary s;
  s.num_users = cfg.num_users;
  s.num_items = cfg.num_items;
  s.n_train = result.train.num_observed();
  s.n_test = result.test.num_observed();
  s.ctr_observed = result.train.positive_rate();
  s.ctr_true = std::accumulate(result.truth.true_prob.begin(),
                               result.truth.true_prob.end(), 0.0) /
               static_cast<double>(result.truth.true_prob.size());

  fs::create_directories(out_dir);
  std::ostringstream audit;
  audit.precision(17);
  audit << "synthetic users=" << cfg.num_users << " items=" << cfg.num_items
        << " latent_dim=" << cfg.latent_dim
        << " policy_strength=" << cfg.policy_strength
        << " target_observed_fraction=" << cfg.target_observed_fraction
        << " seed=" << cfg.rng_seed;
  save_triplet_format(result.train, (fs::path(out_dir) / "train.txt").string(),
                      {audit.str()});
  save_triplet_format(result.test, (fs::path(out_dir) / "test.txt").string(),
                      {audit.str()});
  save_dense_matrix(result.truth.true_prob, cfg.num_users, cfg.num_items,
                    (fs::path(out_dir) / "truth.txt").string());
  save_dense_matrix(result.truth.policy_prob, cfg.num_users, cfg.num_items,
                    (fs::path(out_dir) / "policy.txt").string());

  auto out = open_out(fs::path(out_dir) / "summary.txt");
  out.precision(17);
  out << "# " << audit.str() << "\n"
      << "num_users " << s.num_users << "\n"
      << "num_items " << s.num_items << "\n"
      << "n_train " << s.n_train << "\n"
      << "n_test " << s.n_test << "\n"
      << "ctr_observed " << s.ctr_observed << "\n"
      << "ctr_true " << s.ctr_true << "\n"
      << "ctr_gap " << s.ctr_observed - s.ctr_true << "\n";
  return s;
}

namespace {

struct LoadedExperiment {
  InteractionTable full_train;
  InteractionTable test;
};

LoadedExperiment load_tables(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty() || cfg.test_path.empty())
    throw std::invalid_argument("config: train_path and test_path are required");
  return {load_triplet_format(cfg.train_path), load_triplet_format(cfg.test_path)};
}

/// Carves the propensity-calibration slice out of the test table: the first
/// round(fraction * n) rows of a seeded shuffle go to calibration, the rest
/// stay for evaluation.
std::pair<InteractionTable, InteractionTable> carve_calibration(
    const InteractionTable& test, double fraction, uint64_t seed) {
  SplitSpec spec;
  spec.validation_fraction = fraction;
  spec.rng_seed = seed;
  auto [eval_part, calibration] = split_train_validation(test, spec);
  return {std::move(calibration), std::move(eval_part)};
}

void write_history(const fs::path& path, const std::string& audit,
                   const std::vector<EpochRecord>& history) {
  auto out = open_out(path);
  out.precision(17);
  out << "# " << audit << "\n";
  out << "epoch,train_loss,val_loss,wall_time_s\n";
  for (const auto& rec : history)
    out << rec.epoch << "," << rec.train_loss << "," << rec.val_loss << ","
        << rec.wall_time_s << "\n";
}

}  // namespace

AggregateStat aggregate_stat(const std::vector<double>& samples) {
  AggregateStat stat;
  if (samples.empty()) return stat;
  stat.mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
              static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double acc = 0.0;
    for (double s : samples) acc += (s - stat.mean) * (s - stat.mean);
    stat.stddev = std::sqrt(acc / static_cast<double>(samples.size() - 1));
  }
  return stat;
}

ExperimentOutcome run_train_experiment(const ExperimentConfig& cfg) {
  const LoadedExperiment data = load_tables(cfg);
  const std::string audit = "config " + config_to_json(cfg);
  const bool write = !cfg.out_dir.empty();
  if (write) fs::create_directories(cfg.out_dir);

  ExperimentOutcome outcome;
  std::map<std::string, std::vector<double>> samples;

  for (uint64_t seed : cfg.seeds) {
    SplitSpec split;
    split.validation_fraction = cfg.validation_fraction;
    split.rng_seed = seed;
    auto [train_table, val_table] = split_train_validation(data.full_train, split);

    Propensities props;
    const InteractionTable* eval_table = &data.test;
    InteractionTable eval_holder(0, 0);
    if (needs_propensities(cfg.objective)) {
      auto [calibration, rest] =
          carve_calibration(data.test, cfg.mar_calibration_fraction, seed);
      props = estimate_propensities(data.full_train, calibration,
                                    cfg.propensity_clip_floor);
      eval_holder = std::move(rest);
      eval_table = &eval_holder;
      if (write) {
        auto out = open_out(fs::path(cfg.out_dir) /
                            ("seed_" + std::to_string(seed) + "_propensities.txt"));
        out << "# " << audit << "\n" << format_propensity_report(props);
      }
    }

    InitSpec init_spec;
    init_spec.kind = cfg.model;
    init_spec.num_users = data.full_train.num_users();
    init_spec.num_items = data.full_train.num_items();
    init_spec.emb_dim = cfg.emb_dim;
    init_spec.hidden_dim = cfg.hidden_dim;
    init_spec.stochastic = cfg.stochastic_embeddings;
    init_spec.rng_seed = seed;
    auto model = init_params(init_spec);

    TrainResult result =
        train(*model, train_table, val_table, cfg.train_config(seed),
              needs_propensities(cfg.objective) ? &props : nullptr);

    EvalReport report = evaluate(*result.best_model, *eval_table, cfg.ndcg_ks);

    SeedOutcome seed_outcome;
    seed_outcome.seed = seed;
    seed_outcome.report = report;
    seed_outcome.best_val_score = result.best_val_score;
    seed_outcome.best_epoch = result.best_epoch;
    seed_outcome.epochs_run = static_cast<int>(result.history.size());
    outcome.per_seed.push_back(seed_outcome);

    samples["mse"].push_back(report.mse);
    samples["auc"].push_back(report.auc);
    for (const auto& [k, v] : report.ndcg_at)
      samples["ndcg@" + std::to_string(k)].push_back(v);

    if (write) {
      const std::string stem = "seed_" + std::to_string(seed);
      auto report_out = open_out(fs::path(cfg.out_dir) / (stem + "_report.txt"));
      report_out << "# " << audit << "\n"
                 << "# seed " << seed << " best_epoch " << result.best_epoch
                 << " epochs_run " << result.history.size() << "\n"
                 << format_eval_report(report);
      write_history(fs::path(cfg.out_dir) / (stem + "_history.csv"), audit,
                    result.history);
      save_checkpoint(*result.best_model,
                      (fs::path(cfg.out_dir) / (stem + "_checkpoint.txt")).string());
    }
  }

  for (const auto& [metric, values] : samples)
    outcome.aggregate[metric] = aggregate_stat(values);

  if (write) {
    auto out = open_out(fs::path(cfg.out_dir) / "aggregate.txt");
    out.precision(17);
    out << "# " << audit << "\n";
    out << "metric mean std\n";
    for (const auto& [metric, stat] : outcome.aggregate)
      out << metric << " " << stat.mean << " " << stat.stddev << "\n";
    out << "n_seeds " << cfg.seeds.size() << "\n";
  }
  return outcome;
}

GridResult run_grid_experiment(const ExperimentConfig& cfg, int jobs) {
  const LoadedExperiment data = load_tables(cfg);
  const uint64_t seed = cfg.seeds.front();
  const std::string audit = "config " + config_to_json(cfg);

  SplitSpec split;
  split.validation_fraction = cfg.validation_fraction;
  split.rng_seed = seed;
  auto [train_table, val_table] = split_train_validation(data.full_train, split);

  Propensities props;
  if (needs_propensities(cfg.objective)) {
    auto carved = carve_calibration(data.test, cfg.mar_calibration_fraction, seed);
    props = estimate_propensities(data.full_train, carved.first,
                                  cfg.propensity_clip_floor);
  }

  InitSpec init_spec;
  init_spec.kind = cfg.model;
  init_spec.num_users = data.full_train.num_users();
  init_spec.num_items = data.full_train.num_items();
  init_spec.emb_dim = cfg.emb_dim;
  init_spec.hidden_dim = cfg.hidden_dim;
  init_spec.stochastic = cfg.stochastic_embeddings;
  init_spec.rng_seed = seed;

  const bool write = !cfg.out_dir.empty();
  std::map<int, double> completed;
  std::unique_ptr<std::ofstream> journal;
  if (write) {
    fs::create_directories(cfg.out_dir);
    const fs::path journal_path = fs::path(cfg.out_dir) / "journal.csv";
    if (fs::exists(journal_path)) {
      std::ifstream in(journal_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int index;
        char comma;
        double score;
        if (ls >> index >> comma >> score) completed[index] = score;
      }
    }
    journal = std::make_unique<std::ofstream>(journal_path, std::ios::app);
    if (!*journal) throw std::runtime_error("cannot write " + journal_path.string());
  }

  auto on_complete = [&](const GridEntry& entry) {
    if (journal) {
      journal->precision(17);
      *journal << entry.index << "," << entry.val_score << std::endl;  // flush
    }
  };

  GridResult result = grid_search(
      init_spec, cfg.train_config(seed), train_table, val_table, cfg.grids,
      needs_propensities(cfg.objective) ? &props : nullptr, jobs,
      completed.empty() ? nullptr : &completed, on_complete);

  if (write) {
    auto out = open_out(fs::path(cfg.out_dir) / "leaderboard.csv");
    out.precision(17);
    out << "# " << audit << "\n";
    out << "rank,index,lr,weight_decay,batch_size,alpha,gamma,val_loss\n";
    int rank = 1;
    for (const auto& entry : result.leaderboard) {
      out << rank++ << "," << entry.index << "," << entry.config.lr << ","
          << entry.config.weight_decay << "," << entry.config.batch_size << ",";
      if (cfg.objective == ObjectiveKind::kCvib)
        out << entry.config.cvib.alpha << "," << entry.config.cvib.gamma << ",";
      else
        out << ",,";
      out << entry.val_score << "\n";
    }
  }
  return result;
}

SweepOutcome run_sweep_experiment(const ExperimentConfig& cfg) {
  if (cfg.objective != ObjectiveKind::kCvib)
    throw std::invalid_argument("sweep: objective must be cvib");

  constexpr double kZ90 = 1.6448536269514722;  // two-sided 90% normal quantile
  SweepOutcome outcome;

  auto run_point = [&](const std::string& param, double alpha, double gamma) {
    ExperimentConfig point = cfg;
    point.cvib.alpha = alpha;
    point.cvib.gamma = gamma;
    point.out_dir.clear();  // only the sensitivity table is written
    ExperimentOutcome exp = run_train_experiment(point);
    std::vector<double> aucs;
    for (const auto& s : exp.per_seed) aucs.push_back(s.report.auc);
    const AggregateStat stat = aggregate_stat(aucs);
    SweepRow row;
    row.param = param;
    row.value = param == "alpha" ? alpha : gamma;
    row.mean_auc = stat.mean;
    const double half =
        kZ90 * stat.stddev / std::sqrt(static_cast<double>(aucs.size()));
    row.ci_lo = stat.mean - half;
    row.ci_hi = stat.mean + half;
    row.n_seeds = static_cast<int>(aucs.size());
    outcome.rows.push_back(row);
    return stat.mean;
  };

  std::vector<double> alpha_means, gamma_means;
  for (double alpha : cfg.grids.alphas)
    alpha_means.push_back(run_point("alpha", alpha, 1e-3));
  for (double gamma : cfg.grids.gammas)
    gamma_means.push_back(run_point("gamma", 1.0, gamma));

  auto range = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  outcome.alpha_auc_range = range(alpha_means);
  outcome.gamma_auc_range = range(gamma_means);

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    auto out = open_out(fs::path(cfg.out_dir) / "sensitivity.csv");
    out.precision(17);
    out << "# config " << config_to_json(cfg) << "\n";
    out << "param,value,mean_auc,ci90_lo,ci90_hi,n_seeds\n";
    for (const auto& row : outcome.rows)
      out << row.param << "," << row.value << "," << row.mean_auc << ","
          << row.ci_lo << "," << row.ci_hi << "," << row.n_seeds << "\n";
    out << "# alpha_auc_range " << outcome.alpha_auc_range << "\n";
    out << "# gamma_auc_range " << outcome.gamma_auc_range << "\n";
  }
  return outcome;
}

}  // namespace cvib
