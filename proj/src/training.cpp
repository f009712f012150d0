#include "cvib/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "cvib/eval.hpp"

namespace cvib {

AdamState::AdamState(const Model& model, const AdamConfig& config) : cfg(config) {
  m = model.zero_gradients();
  v = model.zero_gradients();
}

void adam_step(Model& model, const Gradients& grads, AdamState& state) {
  auto& arrays = model.arrays();
  if (grads.size() != arrays.size())
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
  for (size_t a = 0; a < arrays.size(); ++a) {
    auto& p = arrays[a].values;
    if (grads[a].size() != p.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (size_t k = 0; k < p.size(); ++k) {
      const double g = grads[a][k] + state.cfg.weight_decay * p[k];
      state.m[a][k] = state.cfg.beta1 * state.m[a][k] + (1.0 - state.cfg.beta1) * g;
      state.v[a][k] = state.cfg.beta2 * state.v[a][k] + (1.0 - state.cfg.beta2) * g * g;
      const double m_hat = state.m[a][k] / bc1;
      const double v_hat = state.v[a][k] / bc2;
      p[k] -= state.cfg.lr * m_hat / (std::sqrt(v_hat) + state.cfg.eps);
    }
  }
}

double validation_erm_loss(const Model& model, const InteractionTable& table) {
  if (table.num_observed() == 0)
    throw std::invalid_argument("validation_erm_loss: empty table");
  std::vector<Event> events;
  std::vector<int> y;
  events.reserve(table.num_observed());
  y.reserve(table.num_observed());
  for (const auto& o : table.observed()) {
    events.push_back(o.event);
    y.push_back(o.y);
  }
  std::vector<Prediction> preds;
  model.forward(events, preds);
  return erm_loss(preds, y).loss;
}

namespace {

double validation_auc(const Model& model, const InteractionTable& table) {
  std::vector<Event> events;
  std::vector<int> y;
  for (const auto& o : table.observed()) {
    events.push_back(o.event);
    y.push_back(o.y);
  }
  std::vector<Prediction> preds;
  model.forward(events, preds);
  std::vector<double> scores(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) scores[i] = preds[i].logit;
  return auc(scores, y);
}

DrBatch sample_dr_batch(const InteractionTable& table, size_t n,
                        std::mt19937_64& rng) {
  std::uniform_int_distribution<int32_t> user_dist(0, table.num_users() - 1);
  std::uniform_int_distribution<int32_t> item_dist(0, table.num_items() - 1);
  DrBatch batch;
  batch.events.resize(n);
  batch.observed.resize(n);
  batch.y.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Event e{user_dist(rng), item_dist(rng)};
    batch.events[i] = e;
    const Observation* o = table.find(e);
    batch.observed[i] = o != nullptr;
    batch.y[i] = o != nullptr ? o->y : 0;
  }
  return batch;
}

InitSpec spec_of(const Model& model, uint64_t seed) {
  InitSpec spec;
  spec.kind = model.kind();
  spec.num_users = model.num_users();
  spec.num_items = model.num_items();
  spec.emb_dim = model.emb_dim();
  if (model.kind() == ModelKind::kNcf)
    spec.hidden_dim = static_cast<const NcfModel&>(model).hidden_dim();
  spec.stochastic = false;  // the imputation model stays deterministic
  spec.rng_seed = seed;
  return spec;
}

}  // namespace

TrainResult train(const Model& init, const InteractionTable& train_table,
                  const InteractionTable& val_table, const TrainConfig& cfg,
                  const Propensities* props) {
  if (train_table.num_observed() == 0 || val_table.num_observed() == 0)
    throw std::invalid_argument("train: empty train or validation table");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (needs_propensities(cfg.objective) && props == nullptr)
    throw std::invalid_argument("train: objective requires propensities");
  if (cfg.objective == ObjectiveKind::kCvib &&
      train_table.num_unobserved() < cfg.batch_size)
    throw std::invalid_argument(
        "train: cvib needs at least batch_size unobserved events");

  auto model = init.clone();
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState adam(*model, adam_cfg);

  std::unique_ptr<Model> imputer;
  std::unique_ptr<AdamState> adam_imputer;
  const bool doubly_robust =
      cfg.objective == ObjectiveKind::kDr || cfg.objective == ObjectiveKind::kDrjl;
  if (doubly_robust) {
    imputer = init_params(spec_of(init, cfg.rng_seed ^ 0x9e3779b97f4a7c15ull));
    if (cfg.objective == ObjectiveKind::kDrjl)
      adam_imputer = std::make_unique<AdamState>(*imputer, adam_cfg);
  }

  std::mt19937_64 rng(cfg.rng_seed);
  const auto& observed = train_table.observed();
  std::vector<int64_t> order(observed.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_val_score = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  std::vector<Event> events;
  std::vector<int> y;
  std::vector<Prediction> preds, cf_preds, imp_preds;
  NoiseLog noise, cf_noise;

  const auto run_start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t n_events = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      const size_t n = end - start;
      events.resize(n);
      y.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const Observation& o = observed[order[start + i]];
        events[i] = o.event;
        y[i] = o.y;
      }

      Gradients grads = model->zero_gradients();
      double batch_loss = 0.0;
      switch (cfg.objective) {
        case ObjectiveKind::kErm: {
          model->forward(events, preds);
          LossResult r = erm_loss(preds, y);
          model->backward(events, r.upstream, grads);
          batch_loss = r.loss;
          break;
        }
        case ObjectiveKind::kCvib: {
          const std::vector<Event> cf =
              sample_counterfactual_batch(train_table, static_cast<int64_t>(n), rng);
          double emb_term;
          if (model->stochastic()) {
            model->forward_stochastic(events, rng, preds, noise);
            model->forward_stochastic(cf, rng, cf_preds, cf_noise);
            emb_term = model->embedding_kl(events) + model->embedding_kl(cf);
          } else {
            model->forward(events, preds);
            model->forward(cf, cf_preds);
            emb_term = model->embedding_sq_norm(events) + model->embedding_sq_norm(cf);
          }
          CvibResult r = cvib_loss(preds, y, cf_preds, emb_term, cfg.cvib);
          if (model->stochastic()) {
            model->backward_stochastic(events, r.upstream_factual, noise, grads);
            model->backward_stochastic(cf, r.upstream_counterfactual, cf_noise, grads);
            if (r.d_emb_norm != 0.0) {
              model->add_embedding_kl_grad(events, r.d_emb_norm, grads);
              model->add_embedding_kl_grad(cf, r.d_emb_norm, grads);
            }
          } else {
            model->backward(events, r.upstream_factual, grads);
            model->backward(cf, r.upstream_counterfactual, grads);
            if (r.d_emb_norm != 0.0) {
              model->add_embedding_sq_norm_grad(events, r.d_emb_norm, grads);
              model->add_embedding_sq_norm_grad(cf, r.d_emb_norm, grads);
            }
          }
          batch_loss = r.loss;
          break;
        }
        case ObjectiveKind::kIps:
        case ObjectiveKind::kSnips: {
          model->forward(events, preds);
          LossResult r = cfg.objective == ObjectiveKind::kIps
                             ? ips_loss(preds, y, events, *props)
                             : snips_loss(preds, y, events, *props);
          model->backward(events, r.upstream, grads);
          batch_loss = r.loss;
          break;
        }
        case ObjectiveKind::kDr: {
          const DrBatch all = sample_dr_batch(train_table, n, rng);
          model->forward(all.events, preds);
          imputer->forward(all.events, imp_preds);
          DrResult r = dr_loss(preds, imp_preds, all, *props);
          model->backward(all.events, r.upstream_model, grads);
          batch_loss = r.loss;  // imputer stays at its initialization
          break;
        }
        case ObjectiveKind::kDrjl: {
          const DrBatch all = sample_dr_batch(train_table, n, rng);
          DrjlStepResult r = drjl_step(*model, *imputer, events, y, all, *props);
          model->backward(all.events, r.model_upstream, grads);
          Gradients imp_grads = imputer->zero_gradients();
          imputer->backward(events, r.imputer_upstream, imp_grads);
          adam_step(*imputer, imp_grads, *adam_imputer);
          batch_loss = r.model_loss;
          break;
        }
      }
      adam_step(*model, grads, adam);
      loss_sum += batch_loss * static_cast<double>(n);
      n_events += static_cast<int64_t>(n);
    }

    const double train_loss = loss_sum / static_cast<double>(n_events);
    const double val_loss = validation_erm_loss(*model, val_table);
    const double score = cfg.selection == SelectionMetric::kValidationLoss
                             ? val_loss
                             : -validation_auc(*model, val_table);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start)
            .count();
    result.history.push_back({epoch, train_loss, val_loss, wall});

    if (score < result.best_val_score) {
      result.best_val_score = score;
      result.best_epoch = epoch;
      result.best_model = model->clone();
      epochs_since_improvement = 0;
    } else if (++epochs_since_improvement >= cfg.patience) {
      break;
    }
  }
  return result;
}

std::vector<TrainConfig> enumerate_grid(const GridSpec& grids,
                                        const TrainConfig& base) {
  const bool is_cvib = base.objective == ObjectiveKind::kCvib;
  if (grids.lrs.empty() || grids.weight_decays.empty() || grids.batch_sizes.empty() ||
      (is_cvib && (grids.alphas.empty() || grids.gammas.empty())))
    throw std::invalid_argument("enumerate_grid: empty grid axis");

  std::vector<TrainConfig> configs;
  for (double lr : grids.lrs)
    for (double wd : grids.weight_decays)
      for (int bs : grids.batch_sizes) {
        TrainConfig cfg = base;
        cfg.lr = lr;
        cfg.weight_decay = wd;
        cfg.batch_size = bs;
        if (!is_cvib) {
          configs.push_back(cfg);
          continue;
        }
        for (double alpha : grids.alphas)
          for (double gamma : grids.gammas) {
            cfg.cvib.alpha = alpha;
            cfg.cvib.gamma = gamma;
            configs.push_back(cfg);
          }
      }
  return configs;
}

GridResult grid_search(const InitSpec& model_spec, const TrainConfig& base,
                       const InteractionTable& train_table,
                       const InteractionTable& val_table, const GridSpec& grids,
                       const Propensities* props, int jobs,
                       const std::map<int, double>* completed,
                       const std::function<void(const GridEntry&)>& on_complete) {
  const std::vector<TrainConfig> configs = enumerate_grid(grids, base);
  const auto init = init_params(model_spec);

  std::vector<GridEntry> entries(configs.size());
  std::mutex mu;
  std::atomic<size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      GridEntry entry;
      entry.index = static_cast<int>(i);
      entry.config = configs[i];
      if (completed != nullptr) {
        auto it = completed->find(static_cast<int>(i));
        if (it != completed->end()) {
          entry.val_score = it->second;
          entries[i] = entry;
          continue;
        }
      }
      TrainResult r = train(*init, train_table, val_table, configs[i], props);
      entry.val_score = r.best_val_score;
      entries[i] = entry;
      if (on_complete) {
        std::lock_guard<std::mutex> lock(mu);
        on_complete(entry);
      }
    }
  };

  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(entries.begin(), entries.end(), [](const GridEntry& a, const GridEntry& b) {
    if (a.val_score != b.val_score) return a.val_score < b.val_score;
    return a.index < b.index;
  });
  return GridResult{entries.front().config, std::move(entries)};
}

}  // namespace cvib
