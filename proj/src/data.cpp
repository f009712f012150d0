#include "cvib/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cvib/math.hpp"

namespace cvib {

InteractionTable::InteractionTable(int32_t num_users, int32_t num_items)
    : num_users_(num_users), num_items_(num_items) {
  if (num_users < 0 || num_items < 0)
    throw std::invalid_argument("InteractionTable: negative universe size");
}

void InteractionTable::add(Event e, int rating) {
  if (e.user < 0 || e.user >= num_users_ || e.item < 0 || e.item >= num_items_)
    throw std::invalid_argument("InteractionTable::add: event out of bounds (user " +
                                std::to_string(e.user) + ", item " +
                                std::to_string(e.item) + ")");
  if (rating < 1 || rating > 5)
    throw std::invalid_argument("InteractionTable::add: rating " +
                                std::to_string(rating) + " outside 1..5");
  auto [it, inserted] = index_.emplace(key(e), static_cast<int32_t>(observed_.size()));
  if (!inserted)
    throw std::invalid_argument("InteractionTable::add: duplicate event (user " +
                                std::to_string(e.user) + ", item " +
                                std::to_string(e.item) + ")");
  observed_.push_back(Observation{e, rating, rating >= 3 ? 1 : 0});
}

bool InteractionTable::is_observed(Event e) const {
  return index_.count(key(e)) != 0;
}

const Observation* InteractionTable::find(Event e) const {
  auto it = index_.find(key(e));
  return it == index_.end() ? nullptr : &observed_[it->second];
}

double InteractionTable::positive_rate() const {
  if (observed_.empty()) return 0.0;
  int64_t pos = 0;
  for (const auto& o : observed_) pos += o.y;
  return static_cast<double>(pos) / static_cast<double>(observed_.size());
}

std::pair<InteractionTable, InteractionTable> split_train_validation(
    const InteractionTable& table, const SplitSpec& spec) {
  const int64_t n = table.num_observed();
  if (n < 2)
    throw std::invalid_argument("split_train_validation: need at least 2 observations");
  if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
    throw std::invalid_argument("split_train_validation: fraction must be in (0,1)");

  int64_t n_val = std::lround(spec.validation_fraction * static_cast<double>(n));
  n_val = std::clamp<int64_t>(n_val, 1, n - 1);

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.rng_seed);
  std::shuffle(order.begin(), order.end(), rng);

  InteractionTable train(table.num_users(), table.num_items());
  InteractionTable valid(table.num_users(), table.num_items());
  for (int64_t i = 0; i < n; ++i) {
    const Observation& o = table.observed()[order[i]];
    (i < n_val ? valid : train).add(o.event, o.rating);
  }
  return {std::move(train), std::move(valid)};
}

std::vector<Event> sample_counterfactual_batch(const InteractionTable& table,
                                               int64_t batch_size,
                                               std::mt19937_64& rng) {
  const int64_t n_ul = table.num_unobserved();
  if (batch_size < 1)
    throw std::invalid_argument("sample_counterfactual_batch: batch_size must be >= 1");
  if (n_ul < batch_size)
    throw std::invalid_argument(
        "sample_counterfactual_batch: complement has " + std::to_string(n_ul) +
        " events, batch needs " + std::to_string(batch_size));

  std::vector<Event> batch;
  batch.reserve(batch_size);

  // Rejection sampling gets slow when the batch covers most of the
  // complement; enumerate in that regime instead.
  if (n_ul <= 4 * batch_size) {
    std::vector<Event> complement;
    complement.reserve(n_ul);
    for (int32_t u = 0; u < table.num_users(); ++u)
      for (int32_t i = 0; i < table.num_items(); ++i)
        if (!table.is_observed({u, i})) complement.push_back({u, i});
    std::shuffle(complement.begin(), complement.end(), rng);
    batch.assign(complement.begin(), complement.begin() + batch_size);
    return batch;
  }

  std::uniform_int_distribution<int32_t> user_dist(0, table.num_users() - 1);
  std::uniform_int_distribution<int32_t> item_dist(0, table.num_items() - 1);
  std::unordered_set<int64_t> drawn;
  while (static_cast<int64_t>(batch.size()) < batch_size) {
    Event e{user_dist(rng), item_dist(rng)};
    if (table.is_observed(e)) continue;
    int64_t k = static_cast<int64_t>(e.user) * table.num_items() + e.item;
    if (!drawn.insert(k).second) continue;
    batch.push_back(e);
  }
  return batch;
}

SynthResult generate_synthetic_mnar(const SynthConfig& cfg) {
  if (cfg.num_users < 1 || cfg.num_items < 1)
    throw std::invalid_argument("generate_synthetic_mnar: empty universe");
  if (cfg.latent_dim < 1)
    throw std::invalid_argument("generate_synthetic_mnar: latent_dim must be >= 1");
  if (cfg.policy_strength < 0.0)
    throw std::invalid_argument("generate_synthetic_mnar: policy_strength must be >= 0");
  if (!(cfg.target_observed_fraction > 0.0 && cfg.target_observed_fraction < 1.0))
    throw std::invalid_argument(
        "generate_synthetic_mnar: target_observed_fraction must be in (0,1)");

  const int64_t n_cells = static_cast<int64_t>(cfg.num_users) * cfg.num_items;
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  std::vector<double> user_f(static_cast<size_t>(cfg.num_users) * cfg.latent_dim);
  std::vector<double> item_f(static_cast<size_t>(cfg.num_items) * cfg.latent_dim);
  for (auto& v : user_f) v = normal(rng) * scale;
  for (auto& v : item_f) v = normal(rng) * scale;

  SynthGroundTruth truth;
  truth.num_users = cfg.num_users;
  truth.num_items = cfg.num_items;
  truth.true_prob.resize(n_cells);
  truth.policy_prob.resize(n_cells);

  std::vector<uint8_t> y(n_cells);
  for (int32_t u = 0; u < cfg.num_users; ++u) {
    for (int32_t i = 0; i < cfg.num_items; ++i) {
      double dot = 0.0;
      for (int d = 0; d < cfg.latent_dim; ++d)
        dot += user_f[static_cast<size_t>(u) * cfg.latent_dim + d] *
               item_f[static_cast<size_t>(i) * cfg.latent_dim + d];
      const size_t c = static_cast<size_t>(u) * cfg.num_items + i;
      truth.true_prob[c] = 1.0 / (1.0 + std::exp(-dot));
      y[c] = unif(rng) < truth.true_prob[c] ? 1 : 0;
    }
  }

  // Exposure policy: proportional to exp(strength * true_prob), rescaled to
  // the target mean rate; cells forced above 1 - eps are capped.
  double raw_sum = 0.0;
  for (int64_t c = 0; c < n_cells; ++c) {
    truth.policy_prob[c] = std::exp(cfg.policy_strength * truth.true_prob[c]);
    raw_sum += truth.policy_prob[c];
  }
  const double rescale =
      cfg.target_observed_fraction * static_cast<double>(n_cells) / raw_sum;
  int64_t capped = 0;
  for (int64_t c = 0; c < n_cells; ++c) {
    truth.policy_prob[c] *= rescale;
    if (truth.policy_prob[c] > 1.0 - kProbEps) {
      truth.policy_prob[c] = 1.0 - kProbEps;
      ++capped;
    }
  }
  if (capped * 2 > n_cells)
    throw std::runtime_error(
        "generate_synthetic_mnar: infeasible rescale, " + std::to_string(capped) +
        " of " + std::to_string(n_cells) + " cells capped");

  InteractionTable train(cfg.num_users, cfg.num_items);
  std::vector<Event> held_out;
  held_out.reserve(n_cells);
  for (int32_t u = 0; u < cfg.num_users; ++u) {
    for (int32_t i = 0; i < cfg.num_items; ++i) {
      const size_t c = static_cast<size_t>(u) * cfg.num_items + i;
      if (unif(rng) < truth.policy_prob[c])
        train.add({u, i}, y[c] ? 5 : 1);
      else
        held_out.push_back({u, i});
    }
  }

  double test_fraction = cfg.mar_test_fraction > 0.0 ? cfg.mar_test_fraction
                                                     : cfg.target_observed_fraction;
  int64_t n_test = std::lround(test_fraction * static_cast<double>(n_cells));
  n_test = std::min<int64_t>(n_test, static_cast<int64_t>(held_out.size()));
  std::shuffle(held_out.begin(), held_out.end(), rng);

  InteractionTable test(cfg.num_users, cfg.num_items);
  for (int64_t k = 0; k < n_test; ++k) {
    const Event e = held_out[k];
    const size_t c = static_cast<size_t>(e.user) * cfg.num_items + e.item;
    test.add(e, y[c] ? 5 : 1);
  }

  return SynthResult{std::move(train), std::move(test), std::move(truth)};
}

namespace {

// Parses "#users=U items=I base=B"; returns false when the line is not a
// universe declaration.
bool parse_universe_header(const std::string& line, int64_t* users,
                           int64_t* items, int* base) {
  if (line.rfind("#users=", 0) != 0) return false;
  int64_t u = -1, i = -1;
  int b = 1;
  if (std::sscanf(line.c_str(), "#users=%ld items=%ld base=%d", &u, &i, &b) < 2)
    throw FormatError("malformed universe header: " + line);
  if (u < 0 || i < 0 || (b != 0 && b != 1))
    throw FormatError("invalid universe header values: " + line);
  *users = u;
  *items = i;
  *base = b;
  return true;
}

}  // namespace

InteractionTable load_matrix_format(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);

  std::vector<std::vector<int>> rows;
  std::string line;
  int64_t lineno = 0;
  int64_t n_cols = -1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<int> row;
    int v;
    while (ls >> v) {
      if (v < 0 || v > 5)
        throw FormatError(path + ": row " + std::to_string(lineno) + " col " +
                          std::to_string(row.size() + 1) + ": value " +
                          std::to_string(v) + " outside 0..5");
      row.push_back(v);
    }
    if (!ls.eof()) {
      std::string tok;
      ls.clear();
      ls >> tok;
      throw FormatError(path + ": row " + std::to_string(lineno) + " col " +
                        std::to_string(row.size() + 1) + ": not an integer: " + tok);
    }
    if (row.empty()) continue;  // blank line
    if (n_cols < 0) n_cols = static_cast<int64_t>(row.size());
    if (static_cast<int64_t>(row.size()) != n_cols)
      throw FormatError(path + ": row " + std::to_string(lineno) + ": has " +
                        std::to_string(row.size()) + " columns, expected " +
                        std::to_string(n_cols));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": empty matrix file");

  InteractionTable table(static_cast<int32_t>(rows.size()),
                         static_cast<int32_t>(n_cols));
  for (int32_t u = 0; u < static_cast<int32_t>(rows.size()); ++u)
    for (int32_t i = 0; i < static_cast<int32_t>(n_cols); ++i)
      if (rows[u][i] != 0) table.add({u, i}, rows[u][i]);
  return table;
}

InteractionTable load_triplet_format(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);

  std::string line;
  int64_t lineno = 0;
  int64_t decl_users = -1, decl_items = -1;
  int base = 1;
  bool saw_header = false;

  struct Triple {
    int64_t user, item;
    int rating;
    int64_t lineno;
  };
  std::vector<Triple> triples;
  int64_t max_user = -1, max_item = -1;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (lineno == 1 && parse_universe_header(line, &decl_users, &decl_items, &base))
        saw_header = true;
      continue;  // comment
    }
    std::istringstream ls(line);
    int64_t u, i;
    int r;
    if (!(ls >> u >> i >> r))
      throw FormatError(path + ": line " + std::to_string(lineno) +
                        ": expected \"user item rating\"");
    if (r < 1 || r > 5)
      throw FormatError(path + ": line " + std::to_string(lineno) + ": rating " +
                        std::to_string(r) + " outside 1..5");
    u -= base;
    i -= base;
    if (u < 0 || i < 0)
      throw FormatError(path + ": line " + std::to_string(lineno) +
                        ": index below base " + std::to_string(base));
    max_user = std::max(max_user, u);
    max_item = std::max(max_item, i);
    triples.push_back({u, i, r, lineno});
  }

  int64_t num_users = saw_header ? decl_users : max_user + 1;
  int64_t num_items = saw_header ? decl_items : max_item + 1;
  if (!saw_header && triples.empty())
    throw FormatError(path + ": empty triplet file with no universe header");
  if (max_user >= num_users || max_item >= num_items)
    throw FormatError(path + ": indices exceed declared universe " +
                      std::to_string(num_users) + "x" + std::to_string(num_items));

  InteractionTable table(static_cast<int32_t>(num_users),
                         static_cast<int32_t>(num_items));
  for (const auto& t : triples) {
    if (table.is_observed({static_cast<int32_t>(t.user), static_cast<int32_t>(t.item)}))
      throw FormatError(path + ": line " + std::to_string(t.lineno) +
                        ": duplicate event (" + std::to_string(t.user + base) + ", " +
                        std::to_string(t.item + base) + ")");
    table.add({static_cast<int32_t>(t.user), static_cast<int32_t>(t.item)}, t.rating);
  }
  return table;
}

void save_triplet_format(const InteractionTable& table, const std::string& path,
                         const std::vector<std::string>& header_comments) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "#users=" << table.num_users() << " items=" << table.num_items()
      << " base=1\n";
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (const auto& o : table.observed())
    out << o.event.user + 1 << " " << o.event.item + 1 << " " << o.rating << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_dense_matrix(const std::vector<double>& values, int32_t rows,
                       int32_t cols, const std::string& path) {
  if (values.size() != static_cast<size_t>(rows) * cols)
    throw std::invalid_argument("save_dense_matrix: size mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[40];
  for (int32_t r = 0; r < rows; ++r) {
    for (int32_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[static_cast<size_t>(r) * cols + c]);
      out << buf << (c + 1 == cols ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<double> load_dense_matrix(const std::string& path, int32_t rows,
                                      int32_t cols) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<double> values(static_cast<size_t>(rows) * cols);
  for (auto& v : values)
    if (!(in >> v)) throw FormatError(path + ": truncated dense matrix");
  return values;
}

}  // namespace cvib
