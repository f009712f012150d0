#ifndef CVIB_EVAL_HPP_
#define CVIB_EVAL_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvib/data.hpp"
#include "cvib/math.hpp"
#include "cvib/models.hpp"

namespace cvib {

/// Thrown when a metric is undefined for the given data (single-class AUC,
/// nDCG with no positive user).
class MetricUndefinedError : public std::runtime_error {
 public:
  explicit MetricUndefinedError(const std::string& what)
      : std::runtime_error(what) {}
};

struct EvalReport {
  double mse = 0.0;
  double auc = 0.0;
  std::map<int, double> ndcg_at;
  int64_t n_test = 0;
  int64_t n_users_ranked = 0;
};

/// Mean squared error between predicted probabilities and binary outcomes.
double mse(std::span<const Prob> probs, std::span<const int> y);

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Rank-sum computation, exactly equal to the pairwise
/// count. Throws MetricUndefinedError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> y);

struct RankedItem {
  int32_t item = 0;
  double score = 0.0;
  int label = 0;
};

/// Mean over users of DCG@k / IDCG@k with binary gains and log2(rank+1)
/// discounts; score ties break by ascending item index. Users without a
/// positive are skipped and reported through n_users_ranked. Throws
/// MetricUndefinedError when no user has a positive.
double ndcg_at_k(std::span<const std::vector<RankedItem>> users, int k,
                 int64_t* n_users_ranked = nullptr);

/// Scores every test event with the model and assembles the full report;
/// nDCG is computed per user over that user's test items.
EvalReport evaluate(const Model& model, const InteractionTable& test,
                    std::span<const int> ndcg_ks);

/// Flat key-value block: mse, auc, ndcg@K..., n_test, n_users_ranked.
std::string format_eval_report(const EvalReport& report);
EvalReport parse_eval_report(const std::string& text);

}  // namespace cvib

#endif  // CVIB_EVAL_HPP_
