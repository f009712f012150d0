#ifndef CVIB_OBJECTIVES_HPP_
#define CVIB_OBJECTIVES_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvib/data.hpp"
#include "cvib/math.hpp"
#include "cvib/models.hpp"

namespace cvib {

enum class ObjectiveKind { kErm, kCvib, kIps, kSnips, kDr, kDrjl };

const char* to_string(ObjectiveKind kind);
ObjectiveKind objective_from_string(const std::string& s);
/// True for the estimators that need propensity scores (IPS/SNIPS/DR/DRJL).
bool needs_propensities(ObjectiveKind kind);

/// Scalar loss plus d(loss)/d(logit) per batch element.
struct LossResult {
  double loss = 0.0;
  std::vector<double> upstream;
};

/// Mean binary cross entropy over the factual batch.
LossResult erm_loss(std::span<const Prediction> preds, std::span<const int> y);

struct CvibConfig {
  double alpha = 1.0;   // balancing (factual -> counterfactual cross entropy)
  double beta = 0.0;    // minimality (embedding norms)
  double gamma = 1e-3;  // confidence penalty (factual entropy)
};

struct CvibResult {
  double loss = 0.0;
  std::vector<double> upstream_factual;
  std::vector<double> upstream_counterfactual;
  double d_emb_norm = 0.0;  // d(loss)/d(emb_norms), i.e. beta
};

/// Full objective over an element-wise paired factual/counterfactual batch:
///   mean bce(y, q+) + alpha * mean xent(q+, q-) - gamma * mean entropy(q+)
///   + beta * emb_norms.
/// The balancing term is differentiated through both q+ and q-.
CvibResult cvib_loss(std::span<const Prediction> factual, std::span<const int> y,
                     std::span<const Prediction> counterfactual, double emb_norms,
                     const CvibConfig& cfg);

/// Global propensities p(O=1 | Y=y) from the naive Bayes decomposition
/// p(y|O=1) p(O=1) / p(y), with p(y) taken from a small MAR sample.
struct Propensities {
  double p_given_y1 = 1.0;
  double p_given_y0 = 1.0;
  double clip_floor = 0.05;
  int clip_events = 0;
  // estimation inputs, kept for the report
  double train_positive_rate = 0.0;
  double p_observed = 0.0;
  double mar_positive_rate = 0.0;
  int64_t n_observed = 0;
  int64_t n_unobserved = 0;

  double lookup(const Event&, int y) const {
    return y == 1 ? p_given_y1 : p_given_y0;
  }
};

Propensities estimate_propensities(const InteractionTable& train,
                                   const InteractionTable& mar_sample,
                                   double clip_floor = 0.05);

std::string format_propensity_report(const Propensities& p);

/// Inverse-propensity-weighted factual loss, mean of bce_i / p_i.
LossResult ips_loss(std::span<const Prediction> preds, std::span<const int> y,
                    std::span<const Event> events, const Propensities& props);

/// Self-normalized variant, sum(w_i bce_i) / sum(w_i) with w_i = 1/p_i; the
/// weights are treated as constants in the gradient.
LossResult snips_loss(std::span<const Prediction> preds, std::span<const int> y,
                      std::span<const Event> events, const Propensities& props);

/// Population-normalized IPS risk estimate, sum(bce_i / p_i) / total_events,
/// for an observed set with per-event exposure probabilities. Unbiased for
/// the full-population mean loss when the propensities are the true ones.
double ips_risk_estimate(std::span<const double> observed_bce,
                         std::span<const double> observed_propensity,
                         int64_t total_events);

/// A batch drawn from the full U x I event space with its observation
/// indicators; y is meaningful only where observed is nonzero.
struct DrBatch {
  std::vector<Event> events;
  std::vector<uint8_t> observed;
  std::vector<int> y;
};

struct DrResult {
  double loss = 0.0;
  std::vector<double> upstream_model;
  std::vector<double> upstream_imputer;
};

/// Doubly robust risk over the sampled event space:
///   mean_i [ e_hat_i + O_i (e_i - e_hat_i) / p_i ]
/// with e_i = bce(y_i, q_i) on observed events and e_hat_i = xent(q_imp_i,
/// q_i) the imputed error. Gradients are returned for both the prediction
/// model and the imputation model.
DrResult dr_loss(std::span<const Prediction> model_preds,
                 std::span<const Prediction> imputer_preds, const DrBatch& batch,
                 const Propensities& props);

/// Imputation objective of the joint-learning scheme: mean over the observed
/// batch of (e_i - e_hat_i)^2 / p_i with the prediction model frozen.
LossResult drjl_imputer_loss(std::span<const Prediction> model_preds,
                             std::span<const Prediction> imputer_preds,
                             std::span<const int> y, std::span<const Event> events,
                             const Propensities& props);

struct DrjlStepResult {
  double model_loss = 0.0;
  double imputer_loss = 0.0;
  std::vector<double> model_upstream;    // aligned with batch_all
  std::vector<double> imputer_upstream;  // aligned with the factual batch
};

/// One joint-learning step: the model sees the DR loss on batch_all with the
/// imputer frozen, the imputer sees the imputation loss on the factual batch
/// with the model frozen. Parameter updates are left to the caller.
DrjlStepResult drjl_step(const Model& model, const Model& imputer,
                         std::span<const Event> factual_events,
                         std::span<const int> factual_y, const DrBatch& batch_all,
                         const Propensities& props);

}  // namespace cvib

#endif  // CVIB_OBJECTIVES_HPP_
