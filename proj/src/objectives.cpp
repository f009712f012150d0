#include "cvib/objectives.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cvib {

const char* to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kErm: return "erm";
    case ObjectiveKind::kCvib: return "cvib";
    case ObjectiveKind::kIps: return "ips";
    case ObjectiveKind::kSnips: return "snips";
    case ObjectiveKind::kDr: return "dr";
    case ObjectiveKind::kDrjl: return "drjl";
  }
  return "?";
}

ObjectiveKind objective_from_string(const std::string& s) {
  if (s == "erm") return ObjectiveKind::kErm;
  if (s == "cvib") return ObjectiveKind::kCvib;
  if (s == "ips") return ObjectiveKind::kIps;
  if (s == "snips") return ObjectiveKind::kSnips;
  if (s == "dr") return ObjectiveKind::kDr;
  if (s == "drjl") return ObjectiveKind::kDrjl;
  throw std::invalid_argument("unknown objective: " + s);
}

bool needs_propensities(ObjectiveKind kind) {
  return kind == ObjectiveKind::kIps || kind == ObjectiveKind::kSnips ||
         kind == ObjectiveKind::kDr || kind == ObjectiveKind::kDrjl;
}

LossResult erm_loss(std::span<const Prediction> preds, std::span<const int> y) {
  if (preds.empty()) throw std::invalid_argument("erm_loss: empty batch");
  if (preds.size() != y.size())
    throw std::invalid_argument("erm_loss: length mismatch");
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  LossResult r;
  r.upstream.resize(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    r.loss += bce(y[i], preds[i].prob) * inv_n;
    r.upstream[i] = (preds[i].prob.value() - y[i]) * inv_n;
  }
  return r;
}

CvibResult cvib_loss(std::span<const Prediction> factual, std::span<const int> y,
                     std::span<const Prediction> counterfactual, double emb_norms,
                     const CvibConfig& cfg) {
  if (factual.empty()) throw std::invalid_argument("cvib_loss: empty batch");
  if (factual.size() != y.size() || factual.size() != counterfactual.size())
    throw std::invalid_argument("cvib_loss: length mismatch");

  const double inv_n = 1.0 / static_cast<double>(factual.size());
  CvibResult r;
  r.upstream_factual.resize(factual.size());
  r.upstream_counterfactual.resize(factual.size());
  double sufficiency = 0.0, balancing = 0.0, penalty = 0.0;
  for (size_t i = 0; i < factual.size(); ++i) {
    const Prob qp = factual[i].prob;
    const Prob qm = counterfactual[i].prob;
    sufficiency += bce(y[i], qp);
    balancing += xent(qp, qm);
    penalty += entropy(qp);
    // d(xent(q+, q-))/dq+ = -logit(q-);  d(entropy(q+))/dq+ = -logit(q+)
    const double d_factual = (qp.value() - y[i]) +
                             cfg.alpha * -qm.logit() * qp.dsigmoid() +
                             cfg.gamma * qp.logit() * qp.dsigmoid();
    r.upstream_factual[i] = d_factual * inv_n;
    r.upstream_counterfactual[i] = cfg.alpha * (qm.value() - qp.value()) * inv_n;
  }
  r.loss = inv_n * (sufficiency + cfg.alpha * balancing - cfg.gamma * penalty) +
           cfg.beta * emb_norms;
  r.d_emb_norm = cfg.beta;
  return r;
}

Propensities estimate_propensities(const InteractionTable& train,
                                   const InteractionTable& mar_sample,
                                   double clip_floor) {
  if (train.num_observed() == 0)
    throw std::invalid_argument("estimate_propensities: empty train table");
  if (mar_sample.num_observed() == 0)
    throw std::invalid_argument("estimate_propensities: empty MAR sample");

  Propensities p;
  p.clip_floor = clip_floor;
  p.train_positive_rate = train.positive_rate();
  p.n_observed = train.num_observed();
  p.n_unobserved = train.num_unobserved();
  p.p_observed = static_cast<double>(p.n_observed) /
                 static_cast<double>(train.num_cells());
  p.mar_positive_rate = mar_sample.positive_rate();
  if (p.mar_positive_rate <= 0.0 || p.mar_positive_rate >= 1.0)
    throw std::invalid_argument(
        "estimate_propensities: MAR sample has a single outcome class, p(y) "
        "degenerate");

  auto clip = [&](double v) {
    if (v < clip_floor) {
      ++p.clip_events;
      return clip_floor;
    }
    if (v > 1.0) {
      ++p.clip_events;
      return 1.0;
    }
    return v;
  };
  p.p_given_y1 = clip(p.train_positive_rate * p.p_observed / p.mar_positive_rate);
  p.p_given_y0 = clip((1.0 - p.train_positive_rate) * p.p_observed /
                      (1.0 - p.mar_positive_rate));
  return p;
}

std::string format_propensity_report(const Propensities& p) {
  std::ostringstream os;
  os.precision(17);
  os << "p_o1_given_y1 " << p.p_given_y1 << "\n"
     << "p_o1_given_y0 " << p.p_given_y0 << "\n"
     << "train_positive_rate " << p.train_positive_rate << "\n"
     << "p_observed " << p.p_observed << "\n"
     << "mar_positive_rate " << p.mar_positive_rate << "\n"
     << "n_observed " << p.n_observed << "\n"
     << "n_unobserved " << p.n_unobserved << "\n"
     << "clip_floor " << p.clip_floor << "\n"
     << "clip_events " << p.clip_events << "\n";
  return os.str();
}

LossResult ips_loss(std::span<const Prediction> preds, std::span<const int> y,
                    std::span<const Event> events, const Propensities& props) {
  if (preds.empty()) throw std::invalid_argument("ips_loss: empty batch");
  if (preds.size() != y.size() || preds.size() != events.size())
    throw std::invalid_argument("ips_loss: length mismatch");
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  LossResult r;
  r.upstream.resize(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    const double w = 1.0 / props.lookup(events[i], y[i]);
    r.loss += bce(y[i], preds[i].prob) * w * inv_n;
    r.upstream[i] = (preds[i].prob.value() - y[i]) * w * inv_n;
  }
  return r;
}

LossResult snips_loss(std::span<const Prediction> preds, std::span<const int> y,
                      std::span<const Event> events, const Propensities& props) {
  if (preds.empty()) throw std::invalid_argument("snips_loss: empty batch");
  if (preds.size() != y.size() || preds.size() != events.size())
    throw std::invalid_argument("snips_loss: length mismatch");
  double w_sum = 0.0;
  std::vector<double> w(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    w[i] = 1.0 / props.lookup(events[i], y[i]);
    w_sum += w[i];
  }
  LossResult r;
  r.upstream.resize(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    r.loss += bce(y[i], preds[i].prob) * w[i] / w_sum;
    r.upstream[i] = (preds[i].prob.value() - y[i]) * w[i] / w_sum;
  }
  return r;
}

double ips_risk_estimate(std::span<const double> observed_bce,
                         std::span<const double> observed_propensity,
                         int64_t total_events) {
  if (observed_bce.size() != observed_propensity.size())
    throw std::invalid_argument("ips_risk_estimate: length mismatch");
  if (total_events < 1)
    throw std::invalid_argument("ips_risk_estimate: total_events must be >= 1");
  double acc = 0.0;
  for (size_t i = 0; i < observed_bce.size(); ++i)
    acc += observed_bce[i] / observed_propensity[i];
  return acc / static_cast<double>(total_events);
}

DrResult dr_loss(std::span<const Prediction> model_preds,
                 std::span<const Prediction> imputer_preds, const DrBatch& batch,
                 const Propensities& props) {
  const size_t n = batch.events.size();
  if (n == 0) throw std::invalid_argument("dr_loss: empty batch");
  if (model_preds.size() != n || imputer_preds.size() != n ||
      batch.observed.size() != n || batch.y.size() != n)
    throw std::invalid_argument("dr_loss: length mismatch");

  const double inv_n = 1.0 / static_cast<double>(n);
  DrResult r;
  r.upstream_model.resize(n);
  r.upstream_imputer.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Prob q = model_preds[i].prob;
    const Prob q_imp = imputer_preds[i].prob;
    const double e_hat = xent(q_imp, q);
    double w = 0.0;
    double e = 0.0;
    if (batch.observed[i]) {
      w = 1.0 / props.lookup(batch.events[i], batch.y[i]);
      e = bce(batch.y[i], q);
    }
    r.loss += (e_hat + w * (e - e_hat)) * inv_n;
    // d(xent(a, q))/d(logit_q) = q - a for either label argument a
    r.upstream_model[i] =
        ((1.0 - w) * (q.value() - q_imp.value()) +
         (batch.observed[i] ? w * (q.value() - batch.y[i]) : 0.0)) *
        inv_n;
    r.upstream_imputer[i] = (1.0 - w) * -q.logit() * q_imp.dsigmoid() * inv_n;
  }
  return r;
}

LossResult drjl_imputer_loss(std::span<const Prediction> model_preds,
                             std::span<const Prediction> imputer_preds,
                             std::span<const int> y, std::span<const Event> events,
                             const Propensities& props) {
  const size_t n = model_preds.size();
  if (n == 0) throw std::invalid_argument("drjl_imputer_loss: empty batch");
  if (imputer_preds.size() != n || y.size() != n || events.size() != n)
    throw std::invalid_argument("drjl_imputer_loss: length mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult r;
  r.upstream.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Prob q = model_preds[i].prob;
    const Prob q_imp = imputer_preds[i].prob;
    const double p = props.lookup(events[i], y[i]);
    const double e = bce(y[i], q);
    const double e_hat = xent(q_imp, q);
    const double diff = e - e_hat;
    r.loss += diff * diff / p * inv_n;
    // d(e_hat)/d(imputer logit) = -logit(q) * q_imp (1 - q_imp)
    r.upstream[i] = 2.0 * diff / p * q.logit() * q_imp.dsigmoid() * inv_n;
  }
  return r;
}

DrjlStepResult drjl_step(const Model& model, const Model& imputer,
                         std::span<const Event> factual_events,
                         std::span<const int> factual_y, const DrBatch& batch_all,
                         const Propensities& props) {
  std::vector<Prediction> model_all, imputer_all, model_obs, imputer_obs;
  model.forward(batch_all.events, model_all);
  imputer.forward(batch_all.events, imputer_all);
  model.forward(factual_events, model_obs);
  imputer.forward(factual_events, imputer_obs);

  DrjlStepResult r;
  DrResult dr = dr_loss(model_all, imputer_all, batch_all, props);
  r.model_loss = dr.loss;
  r.model_upstream = std::move(dr.upstream_model);  // imputer frozen

  LossResult imp =
      drjl_imputer_loss(model_obs, imputer_obs, factual_y, factual_events, props);
  r.imputer_loss = imp.loss;
  r.imputer_upstream = std::move(imp.upstream);
  return r;
}

}  // namespace cvib
