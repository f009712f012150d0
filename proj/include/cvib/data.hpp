#ifndef CVIB_DATA_HPP_
#define CVIB_DATA_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cvib {

struct Event {
  int32_t user = 0;
  int32_t item = 0;
  friend bool operator==(const Event&, const Event&) = default;
};

/// One logged interaction. y is the binarized outcome, 1 iff rating >= 3.
struct Observation {
  Event event;
  int rating = 0;  // raw rating in 1..5
  int y = 0;
};

/// Raised by the file loaders; message carries file/row/column context.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Sparse table of observed (user, item) outcomes over a fixed U x I
/// universe. The observation mask is membership in observed(). Immutable
/// once filled; safe to share across threads.
class InteractionTable {
 public:
  InteractionTable(int32_t num_users, int32_t num_items);

  /// Inserts an observation; y is derived from the rating. Throws on
  /// duplicate events, out-of-range indices or ratings outside 1..5.
  void add(Event e, int rating);

  int32_t num_users() const { return num_users_; }
  int32_t num_items() const { return num_items_; }
  const std::vector<Observation>& observed() const { return observed_; }
  int64_t num_observed() const { return static_cast<int64_t>(observed_.size()); }
  int64_t num_cells() const {
    return static_cast<int64_t>(num_users_) * num_items_;
  }
  int64_t num_unobserved() const { return num_cells() - num_observed(); }

  bool is_observed(Event e) const;
  /// Observation for e, or nullptr if the cell is unobserved.
  const Observation* find(Event e) const;

  /// Mean binarized outcome over the observed set (the observed CTR).
  double positive_rate() const;

 private:
  int64_t key(Event e) const {
    return static_cast<int64_t>(e.user) * num_items_ + e.item;
  }
  int32_t num_users_;
  int32_t num_items_;
  std::vector<Observation> observed_;
  std::unordered_map<int64_t, int32_t> index_;
};

struct SplitSpec {
  double validation_fraction = 0.30;
  uint64_t rng_seed = 0;
};

/// Partitions the observed set into (train, validation) tables over the same
/// universe. Validation size is round(fraction * N), clamped to [1, N-1].
/// Deterministic per seed. Requires at least two observations.
std::pair<InteractionTable, InteractionTable> split_train_validation(
    const InteractionTable& table, const SplitSpec& spec);

/// Draws batch_size distinct events uniformly from the unobserved complement.
/// Throws if the complement is smaller than the batch.
std::vector<Event> sample_counterfactual_batch(const InteractionTable& table,
                                               int64_t batch_size,
                                               std::mt19937_64& rng);

/// Dense per-cell ground truth for synthetic data: the true outcome
/// probability and the exposure probability of the logging policy.
struct SynthGroundTruth {
  int32_t num_users = 0;
  int32_t num_items = 0;
  std::vector<double> true_prob;    // row-major U x I
  std::vector<double> policy_prob;  // row-major U x I

  double true_at(Event e) const {
    return true_prob[static_cast<size_t>(e.user) * num_items + e.item];
  }
  double policy_at(Event e) const {
    return policy_prob[static_cast<size_t>(e.user) * num_items + e.item];
  }
};

struct SynthConfig {
  int32_t num_users = 100;
  int32_t num_items = 100;
  int latent_dim = 4;
  double policy_strength = 0.0;
  double target_observed_fraction = 0.05;
  // Size of the uniform MAR test sample, as a fraction of all cells.
  // Defaults to the observed fraction when <= 0.
  double mar_test_fraction = -1.0;
  uint64_t rng_seed = 0;
};

struct SynthResult {
  InteractionTable train;
  InteractionTable test;
  SynthGroundTruth truth;
};

/// Generates a rank-`latent_dim` preference matrix, samples binary outcomes
/// for every cell, then exposes cells under a policy with per-cell
/// probability proportional to exp(policy_strength * true_prob), rescaled so
/// the mean exposure rate equals target_observed_fraction (each cell capped
/// at 1 - kProbEps). The train table holds the exposed cells (MNAR); the
/// test table is a fresh uniform sample of held-out cells (MAR). Throws if
/// more than half of the cells would need capping.
SynthResult generate_synthetic_mnar(const SynthConfig& cfg);

// --- file formats ---

/// Dense matrix format: one whitespace-separated integer row per user,
/// 0 = missing, 1..5 = rating.
InteractionTable load_matrix_format(const std::string& path);

/// Triplet format: one "user item rating" line each, optionally preceded by
/// a first line "#users=U items=I base=B" declaring the universe (indices
/// are 1-based when no header is present). Other '#' lines are comments.
InteractionTable load_triplet_format(const std::string& path);

/// Writes the canonical triplet form: universe header, then the given
/// comment lines (each prefixed "# "), then one 1-based triple per line.
void save_triplet_format(const InteractionTable& table, const std::string& path,
                         const std::vector<std::string>& header_comments = {});

/// Dense real matrix, one row per user, %.17g entries (bit-exact reload).
void save_dense_matrix(const std::vector<double>& values, int32_t rows,
                       int32_t cols, const std::string& path);
std::vector<double> load_dense_matrix(const std::string& path, int32_t rows,
                                      int32_t cols);

}  // namespace cvib

#endif  // CVIB_DATA_HPP_
