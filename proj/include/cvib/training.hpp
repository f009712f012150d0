#ifndef CVIB_TRAINING_HPP_
#define CVIB_TRAINING_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "cvib/data.hpp"
#include "cvib/models.hpp"
#include "cvib/objectives.hpp"

namespace cvib {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Moment buffers, shape-congruent with the model's arrays.
struct AdamState {
  explicit AdamState(const Model& model, const AdamConfig& cfg);
  AdamConfig cfg;
  Gradients m;
  Gradients v;
  int64_t t = 0;
};

/// Standard Adam update with bias correction. Weight decay is folded into
/// the gradient (classic L2 coupling, grad += wd * param), which is what
/// makes it interchangeable with the embedding-norm term under gradient
/// flow.
void adam_step(Model& model, const Gradients& grads, AdamState& state);

enum class SelectionMetric { kValidationLoss, kValidationAuc };

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::kErm;
  CvibConfig cvib;
  double lr = 0.01;
  double weight_decay = 1e-4;
  int batch_size = 256;
  int max_epochs = 200;
  int patience = 5;
  uint64_t rng_seed = 0;
  SelectionMetric selection = SelectionMetric::kValidationLoss;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  std::unique_ptr<Model> best_model;
  std::vector<EpochRecord> history;
  double best_val_score = 0.0;  // selection metric; equals val loss by default
  int best_epoch = 0;
};

/// Mean factual bce of the model on a table; the model-selection criterion.
double validation_erm_loss(const Model& model, const InteractionTable& table);

/// Per-epoch loop: shuffle the factual set, walk it in batches, draw the
/// per-objective auxiliary batches (counterfactuals for the balancing term,
/// full-space batches for the doubly robust estimators), update with Adam,
/// then score the validation split and early-stop on `patience` epochs
/// without improvement. Returns the best-validation parameters.
/// `props` is required for the propensity-based objectives. Deterministic
/// given (seed, config, data).
TrainResult train(const Model& init, const InteractionTable& train_table,
                  const InteractionTable& val_table, const TrainConfig& cfg,
                  const Propensities* props = nullptr);

/// Default search space of the experiment protocol.
struct GridSpec {
  std::vector<double> lrs{0.1, 0.05, 0.01, 0.005, 0.001};
  std::vector<double> weight_decays{1e-3, 1e-4, 1e-5};
  std::vector<int> batch_sizes{128, 256, 512, 1024, 2048};
  // used only when the objective is cvib
  std::vector<double> alphas{2.0, 1.0, 0.5, 0.1};
  std::vector<double> gammas{1.0, 0.1, 1e-2, 1e-3};
};

/// Full cartesian product in lexicographic order (lr, weight_decay,
/// batch_size[, alpha, gamma]); the enumeration index is the deterministic
/// tie-break key. Throws on an empty grid axis.
std::vector<TrainConfig> enumerate_grid(const GridSpec& grids,
                                        const TrainConfig& base);

struct GridEntry {
  int index = 0;  // position in enumerate_grid order
  TrainConfig config;
  double val_score = 0.0;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridEntry> leaderboard;  // ascending by (val_score, index)
};

/// Trains every grid cell from the same seeded initialization and ranks by
/// validation score. Entries present in `completed` (index -> score) are
/// reused instead of re-run; `on_complete` fires once per freshly trained
/// cell. `jobs` > 1 runs cells in parallel; results are independent of the
/// schedule.
GridResult grid_search(
    const InitSpec& model_spec, const TrainConfig& base,
    const InteractionTable& train_table, const InteractionTable& val_table,
    const GridSpec& grids, const Propensities* props = nullptr, int jobs = 1,
    const std::map<int, double>* completed = nullptr,
    const std::function<void(const GridEntry&)>& on_complete = nullptr);

}  // namespace cvib

#endif  // CVIB_TRAINING_HPP_
