#ifndef CVIB_EXPERIMENT_HPP_
#define CVIB_EXPERIMENT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvib/data.hpp"
#include "cvib/eval.hpp"
#include "cvib/training.hpp"

namespace cvib {

/// One experiment: dataset paths, backbone, objective and every knob the
/// run needs. Loaded from a JSON config file; unknown keys and flags that
/// do not apply to the chosen objective are rejected.
struct ExperimentConfig {
  std::string train_path;
  std::string test_path;
  ModelKind model = ModelKind::kMf;
  ObjectiveKind objective = ObjectiveKind::kErm;
  int emb_dim = 4;
  int hidden_dim = 8;
  bool stochastic_embeddings = false;
  double lr = 0.01;
  double weight_decay = 1e-4;
  int batch_size = 256;
  int max_epochs = 200;
  int patience = 5;
  CvibConfig cvib;
  SelectionMetric selection = SelectionMetric::kValidationLoss;
  double validation_fraction = 0.30;
  double mar_calibration_fraction = 0.05;
  double propensity_clip_floor = 0.05;
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> ndcg_ks{5, 10};
  GridSpec grids;
  std::string out_dir;

  TrainConfig train_config(uint64_t seed) const;
};

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);
/// The resolved config as one-line JSON, used as the audit header of every
/// output file.
std::string config_to_json(const ExperimentConfig& cfg);

struct DatasetSummary {
  int32_t num_users = 0;
  int32_t num_items = 0;
  int64_t n_observed = 0;
  double positive_rate = 0.0;
  double ctr_observed = 0.0;
  int64_t n_train = 0;
  int64_t n_validation = 0;
};

/// Loads and binarizes a raw dataset, splits train/validation and writes
/// canonical triplet files plus summary.txt under out_dir.
DatasetSummary run_prepare(const std::string& input_path, const std::string& format,
                           const std::string& out_dir, const SplitSpec& split);

struct SynthSummary {
  int32_t num_users = 0;
  int32_t num_items = 0;
  int64_t n_train = 0;
  int64_t n_test = 0;
  double ctr_observed = 0.0;  // positive rate on the MNAR train table
  double ctr_true = 0.0;      // mean of the true outcome probability
};

/// Generates a synthetic MNAR dataset and writes train.txt, test.txt, the
/// dense ground-truth sidecar truth.txt and summary.txt under out_dir.
SynthSummary run_synth(const SynthConfig& cfg, const std::string& out_dir);

struct SeedOutcome {
  uint64_t seed = 0;
  EvalReport report;
  double best_val_score = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

struct AggregateStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single seed
};

struct ExperimentOutcome {
  std::vector<SeedOutcome> per_seed;
  std::map<std::string, AggregateStat> aggregate;  // mse, auc, ndcg@K
};

/// Trains once per seed, evaluates on the MAR test set and, when out_dir is
/// set, writes per-seed report/history/checkpoint files plus aggregate.txt.
/// Propensity objectives calibrate on a seeded 5% slice of the test rows,
/// which is then excluded from evaluation.
ExperimentOutcome run_train_experiment(const ExperimentConfig& cfg);

/// Grid search with a resume journal: completed cells are read back from
/// out_dir/journal.csv and skipped; the ranked leaderboard goes to
/// out_dir/leaderboard.csv.
GridResult run_grid_experiment(const ExperimentConfig& cfg, int jobs = 1);

struct SweepRow {
  std::string param;  // "alpha" or "gamma"
  double value = 0.0;
  double mean_auc = 0.0;
  double ci_lo = 0.0;  // 90% normal-approximation interval over seeds
  double ci_hi = 0.0;
  int n_seeds = 0;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;
  double alpha_auc_range = 0.0;  // spread of mean AUC across the alpha grid
  double gamma_auc_range = 0.0;
};

/// Sensitivity sweep of the balancing and confidence-penalty weights: every
/// alpha with gamma pinned at 1e-3, then every gamma with alpha pinned at 1.
/// Writes out_dir/sensitivity.csv when out_dir is set.
SweepOutcome run_sweep_experiment(const ExperimentConfig& cfg);

/// Aggregate over per-metric samples; stddev is the n-1 sample form.
AggregateStat aggregate_stat(const std::vector<double>& samples);

}  // namespace cvib

#endif  // CVIB_EXPERIMENT_HPP_
