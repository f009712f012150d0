#include "cvib/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cvib {

double mse(std::span<const Prob> probs, std::span<const int> y) {
  if (probs.empty()) throw std::invalid_argument("mse: empty input");
  if (probs.size() != y.size()) throw std::invalid_argument("mse: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double d = probs[i].value() - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(probs.size());
}

double auc(std::span<const double> scores, std::span<const int> y) {
  if (scores.size() != y.size()) throw std::invalid_argument("auc: length mismatch");
  int64_t n_pos = 0, n_neg = 0;
  for (int label : y) (label == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw MetricUndefinedError("auc: needs both classes, got " +
                               std::to_string(n_pos) + " positives and " +
                               std::to_string(n_neg) + " negatives");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks over positives; tie groups share the mean rank,
  // which reproduces the half-credit pairwise count exactly.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (size_t k = i; k < j; ++k)
      if (y[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double num =
      pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ndcg_at_k(std::span<const std::vector<RankedItem>> users, int k,
                 int64_t* n_users_ranked) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  double acc = 0.0;
  int64_t ranked = 0;
  std::vector<RankedItem> sorted;
  for (const auto& user : users) {
    int64_t n_pos = 0;
    for (const auto& it : user) n_pos += it.label == 1;
    if (n_pos == 0) continue;  // IDCG undefined

    sorted.assign(user.begin(), user.end());
    std::sort(sorted.begin(), sorted.end(), [](const RankedItem& a, const RankedItem& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.item < b.item;
    });
    double dcg = 0.0;
    const int top = std::min<int64_t>(k, static_cast<int64_t>(sorted.size()));
    for (int r = 0; r < top; ++r)
      if (sorted[r].label == 1) dcg += 1.0 / std::log2(static_cast<double>(r + 2));
    double idcg = 0.0;
    const int ideal = std::min<int64_t>(std::min<int64_t>(k, n_pos),
                                        static_cast<int64_t>(sorted.size()));
    for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r + 2));
    acc += dcg / idcg;
    ++ranked;
  }
  if (ranked == 0)
    throw MetricUndefinedError("ndcg_at_k: no user with a positive item");
  if (n_users_ranked != nullptr) *n_users_ranked = ranked;
  return acc / static_cast<double>(ranked);
}

EvalReport evaluate(const Model& model, const InteractionTable& test,
                    std::span<const int> ndcg_ks) {
  if (test.num_observed() == 0) throw std::invalid_argument("evaluate: empty test set");

  std::vector<Event> events;
  std::vector<int> labels;
  events.reserve(test.num_observed());
  labels.reserve(test.num_observed());
  for (const auto& o : test.observed()) {
    events.push_back(o.event);
    labels.push_back(o.y);
  }
  std::vector<Prediction> preds;
  model.forward(events, preds);

  std::vector<Prob> probs;
  std::vector<double> scores;
  probs.reserve(preds.size());
  scores.reserve(preds.size());
  for (const auto& p : preds) {
    probs.push_back(p.prob);
    scores.push_back(p.logit);
  }

  EvalReport report;
  report.n_test = test.num_observed();
  report.mse = mse(probs, labels);
  report.auc = auc(scores, labels);

  std::vector<std::vector<RankedItem>> per_user(test.num_users());
  for (size_t i = 0; i < events.size(); ++i)
    per_user[events[i].user].push_back({events[i].item, scores[i], labels[i]});
  std::vector<std::vector<RankedItem>> users;
  for (auto& u : per_user)
    if (!u.empty()) users.push_back(std::move(u));

  for (int k : ndcg_ks)
    report.ndcg_at[k] = ndcg_at_k(users, k, &report.n_users_ranked);
  return report;
}

std::string format_eval_report(const EvalReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "mse " << report.mse << "\n";
  os << "auc " << report.auc << "\n";
  for (const auto& [k, v] : report.ndcg_at) os << "ndcg@" << k << " " << v << "\n";
  os << "n_test " << report.n_test << "\n";
  os << "n_users_ranked " << report.n_users_ranked << "\n";
  return os.str();
}

EvalReport parse_eval_report(const std::string& text) {
  EvalReport report;
  std::istringstream is(text);
  std::string key;
  while (is >> key) {
    if (key.empty() || key[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    if (key == "mse") is >> report.mse;
    else if (key == "auc") is >> report.auc;
    else if (key == "n_test") is >> report.n_test;
    else if (key == "n_users_ranked") is >> report.n_users_ranked;
    else if (key.rfind("ndcg@", 0) == 0) {
      double v;
      is >> v;
      report.ndcg_at[std::stoi(key.substr(5))] = v;
    } else {
      throw std::invalid_argument("parse_eval_report: unknown key " + key);
    }
  }
  return report;
}

}  // namespace cvib
