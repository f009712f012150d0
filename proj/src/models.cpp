#include "cvib/models.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cvib {

const char* to_string(ModelKind kind) {
  return kind == ModelKind::kMf ? "mf" : "ncf";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mf") return ModelKind::kMf;
  if (s == "ncf") return ModelKind::kNcf;
  throw std::invalid_argument("unknown model kind: " + s);
}

Model::Model(int32_t num_users, int32_t num_items, int emb_dim, bool stochastic)
    : num_users_(num_users), num_items_(num_items), emb_dim_(emb_dim),
      stochastic_(stochastic) {
  if (num_users < 1 || num_items < 1 || emb_dim < 1)
    throw std::invalid_argument("Model: dimensions must be >= 1");
  arrays_.push_back({"user_emb", {num_users, emb_dim},
                     std::vector<double>(static_cast<size_t>(num_users) * emb_dim)});
  arrays_.push_back({"item_emb", {num_items, emb_dim},
                     std::vector<double>(static_cast<size_t>(num_items) * emb_dim)});
  if (stochastic_) {
    arrays_.push_back({"user_log_sigma", {emb_dim}, std::vector<double>(emb_dim)});
    arrays_.push_back({"item_log_sigma", {emb_dim}, std::vector<double>(emb_dim)});
  }
}

const NamedArray* Model::array(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return &a;
  return nullptr;
}

void Model::check_batch(std::span<const Event> batch) const {
  for (const Event& e : batch)
    if (e.user < 0 || e.user >= num_users_ || e.item < 0 || e.item >= num_items_)
      throw std::invalid_argument("Model: event out of bounds (user " +
                                  std::to_string(e.user) + ", item " +
                                  std::to_string(e.item) + ")");
}

Gradients Model::zero_gradients() const {
  Gradients g(arrays_.size());
  for (size_t a = 0; a < arrays_.size(); ++a)
    g[a].assign(arrays_[a].values.size(), 0.0);
  return g;
}

void Model::forward(std::span<const Event> batch, std::vector<Prediction>& out) const {
  forward_impl(batch, nullptr, out);
}

void Model::forward_stochastic(std::span<const Event> batch, std::mt19937_64& rng,
                               std::vector<Prediction>& out, NoiseLog& noise) const {
  if (!stochastic_)
    throw std::logic_error("forward_stochastic on a deterministic model");
  std::normal_distribution<double> normal(0.0, 1.0);
  noise.user_eps.resize(batch.size() * emb_dim_);
  noise.item_eps.resize(batch.size() * emb_dim_);
  for (auto& v : noise.user_eps) v = normal(rng);
  for (auto& v : noise.item_eps) v = normal(rng);
  forward_impl(batch, &noise, out);
}

void Model::forward_impl(std::span<const Event> batch, const NoiseLog* noise,
                         std::vector<Prediction>& out) const {
  check_batch(batch);
  out.resize(batch.size());
  std::vector<double> zu(emb_dim_), zi(emb_dim_);
  for (size_t n = 0; n < batch.size(); ++n) {
    const double* eu = user_row(batch[n].user);
    const double* ei = item_row(batch[n].item);
    const double* pu = eu;
    const double* pi = ei;
    if (noise != nullptr) {
      for (int d = 0; d < emb_dim_; ++d) {
        zu[d] = eu[d] + noise->user_eps[n * emb_dim_ + d] * std::exp(user_log_sigma()[d]);
        zi[d] = ei[d] + noise->item_eps[n * emb_dim_ + d] * std::exp(item_log_sigma()[d]);
      }
      pu = zu.data();
      pi = zi.data();
    }
    const double logit = event_logit(pu, pi);
    out[n] = Prediction{logit, sigmoid(logit)};
  }
}

void Model::backward(std::span<const Event> batch, std::span<const double> upstream,
                     Gradients& grads) const {
  backward_impl(batch, upstream, nullptr, grads);
}

void Model::backward_stochastic(std::span<const Event> batch,
                                std::span<const double> upstream,
                                const NoiseLog& noise, Gradients& grads) const {
  if (!stochastic_)
    throw std::logic_error("backward_stochastic on a deterministic model");
  backward_impl(batch, upstream, &noise, grads);
}

void Model::backward_impl(std::span<const Event> batch,
                          std::span<const double> upstream, const NoiseLog* noise,
                          Gradients& grads) const {
  check_batch(batch);
  if (upstream.size() != batch.size())
    throw std::invalid_argument("backward: upstream length != batch length");
  if (grads.size() != arrays_.size())
    throw std::invalid_argument("backward: gradient shape mismatch");
  for (size_t a = 0; a < arrays_.size(); ++a)
    if (grads[a].size() != arrays_[a].values.size())
      throw std::invalid_argument("backward: gradient shape mismatch");

  std::vector<double> zu(emb_dim_), zi(emb_dim_);
  std::vector<double> dzu(emb_dim_), dzi(emb_dim_);
  for (size_t n = 0; n < batch.size(); ++n) {
    const Event e = batch[n];
    const double* eu = user_row(e.user);
    const double* ei = item_row(e.item);
    const double* pu = eu;
    const double* pi = ei;
    if (noise != nullptr) {
      for (int d = 0; d < emb_dim_; ++d) {
        zu[d] = eu[d] + noise->user_eps[n * emb_dim_ + d] * std::exp(user_log_sigma()[d]);
        zi[d] = ei[d] + noise->item_eps[n * emb_dim_ + d] * std::exp(item_log_sigma()[d]);
      }
      pu = zu.data();
      pi = zi.data();
    }
    std::fill(dzu.begin(), dzu.end(), 0.0);
    std::fill(dzi.begin(), dzi.end(), 0.0);
    event_backward(pu, pi, upstream[n], dzu.data(), dzi.data(), grads);

    double* gu = grads[0].data() + static_cast<size_t>(e.user) * emb_dim_;
    double* gi = grads[1].data() + static_cast<size_t>(e.item) * emb_dim_;
    for (int d = 0; d < emb_dim_; ++d) {
      gu[d] += dzu[d];
      gi[d] += dzi[d];
    }
    if (noise != nullptr) {
      // d(z)/d(log_sigma_d) = eps_d * sigma_d
      for (int d = 0; d < emb_dim_; ++d) {
        grads[2][d] += dzu[d] * noise->user_eps[n * emb_dim_ + d] *
                       std::exp(user_log_sigma()[d]);
        grads[3][d] += dzi[d] * noise->item_eps[n * emb_dim_ + d] *
                       std::exp(item_log_sigma()[d]);
      }
    }
  }
}

double Model::embedding_sq_norm(std::span<const Event> batch) const {
  check_batch(batch);
  double acc = 0.0;
  for (const Event& e : batch) {
    const double* eu = user_row(e.user);
    const double* ei = item_row(e.item);
    for (int d = 0; d < emb_dim_; ++d) acc += eu[d] * eu[d] + ei[d] * ei[d];
  }
  return acc;
}

void Model::add_embedding_sq_norm_grad(std::span<const Event> batch, double coeff,
                                       Gradients& grads) const {
  check_batch(batch);
  for (const Event& e : batch) {
    const double* eu = user_row(e.user);
    const double* ei = item_row(e.item);
    double* gu = grads[0].data() + static_cast<size_t>(e.user) * emb_dim_;
    double* gi = grads[1].data() + static_cast<size_t>(e.item) * emb_dim_;
    for (int d = 0; d < emb_dim_; ++d) {
      gu[d] += coeff * 2.0 * eu[d];
      gi[d] += coeff * 2.0 * ei[d];
    }
  }
}

double Model::embedding_kl(std::span<const Event> batch) const {
  if (!stochastic_) throw std::logic_error("embedding_kl on a deterministic model");
  check_batch(batch);
  double acc = 0.0;
  double sigma_part = 0.0;  // batch-constant: sigmas are shared
  for (int d = 0; d < emb_dim_; ++d) {
    const double su = std::exp(user_log_sigma()[d]);
    const double si = std::exp(item_log_sigma()[d]);
    sigma_part += su - 0.5 * std::log(su) + si - 0.5 * std::log(si);
  }
  sigma_part -= 2.0 * emb_dim_;  // the -D constant for the 2D-dim embedding
  for (const Event& e : batch) {
    const double* eu = user_row(e.user);
    const double* ei = item_row(e.item);
    for (int d = 0; d < emb_dim_; ++d) acc += eu[d] * eu[d] + ei[d] * ei[d];
    acc += sigma_part;
  }
  return acc;
}

void Model::add_embedding_kl_grad(std::span<const Event> batch, double coeff,
                                  Gradients& grads) const {
  if (!stochastic_) throw std::logic_error("embedding_kl on a deterministic model");
  add_embedding_sq_norm_grad(batch, coeff, grads);
  // d(sigma - 0.5 ln sigma)/d(log_sigma) = sigma - 0.5, once per batch event.
  const double n = static_cast<double>(batch.size());
  for (int d = 0; d < emb_dim_; ++d) {
    grads[2][d] += coeff * n * (std::exp(user_log_sigma()[d]) - 0.5);
    grads[3][d] += coeff * n * (std::exp(item_log_sigma()[d]) - 0.5);
  }
}

// --- MF ---

MfModel::MfModel(int32_t num_users, int32_t num_items, int emb_dim, bool stochastic)
    : Model(num_users, num_items, emb_dim, stochastic) {}

std::unique_ptr<Model> MfModel::clone() const {
  return std::make_unique<MfModel>(*this);
}

double MfModel::event_logit(const double* zu, const double* zi) const {
  double dot = 0.0;
  for (int d = 0; d < emb_dim_; ++d) dot += zu[d] * zi[d];
  return dot;
}

void MfModel::event_backward(const double* zu, const double* zi, double upstream,
                             double* dzu, double* dzi, Gradients&) const {
  for (int d = 0; d < emb_dim_; ++d) {
    dzu[d] = upstream * zi[d];
    dzi[d] = upstream * zu[d];
  }
}

// --- NCF ---

NcfModel::NcfModel(int32_t num_users, int32_t num_items, int emb_dim,
                   int hidden_dim, bool stochastic)
    : Model(num_users, num_items, emb_dim, stochastic), hidden_dim_(hidden_dim) {
  if (hidden_dim < 1) throw std::invalid_argument("NcfModel: hidden_dim must be >= 1");
  w1_idx_ = static_cast<int>(arrays_.size());
  arrays_.push_back({"w1", {hidden_dim, 2 * emb_dim},
                     std::vector<double>(static_cast<size_t>(hidden_dim) * 2 * emb_dim)});
  b1_idx_ = static_cast<int>(arrays_.size());
  arrays_.push_back({"b1", {hidden_dim}, std::vector<double>(hidden_dim)});
  wout_idx_ = static_cast<int>(arrays_.size());
  arrays_.push_back({"w_out", {hidden_dim}, std::vector<double>(hidden_dim)});
  bout_idx_ = static_cast<int>(arrays_.size());
  arrays_.push_back({"b_out", {1}, std::vector<double>(1)});
}

std::unique_ptr<Model> NcfModel::clone() const {
  return std::make_unique<NcfModel>(*this);
}

double NcfModel::event_logit(const double* zu, const double* zi) const {
  const auto& w1 = arrays_[w1_idx_].values;
  const auto& b1 = arrays_[b1_idx_].values;
  const auto& w_out = arrays_[wout_idx_].values;
  const int two_d = 2 * emb_dim_;
  double logit = arrays_[bout_idx_].values[0];
  for (int j = 0; j < hidden_dim_; ++j) {
    double a = b1[j];
    const double* row = w1.data() + static_cast<size_t>(j) * two_d;
    for (int d = 0; d < emb_dim_; ++d) a += row[d] * zu[d] + row[emb_dim_ + d] * zi[d];
    if (a > 0.0) logit += w_out[j] * a;
  }
  return logit;
}

void NcfModel::event_backward(const double* zu, const double* zi, double upstream,
                              double* dzu, double* dzi, Gradients& grads) const {
  const auto& w1 = arrays_[w1_idx_].values;
  const auto& b1 = arrays_[b1_idx_].values;
  const auto& w_out = arrays_[wout_idx_].values;
  const int two_d = 2 * emb_dim_;

  grads[bout_idx_][0] += upstream;
  for (int j = 0; j < hidden_dim_; ++j) {
    double a = b1[j];
    const double* row = w1.data() + static_cast<size_t>(j) * two_d;
    for (int d = 0; d < emb_dim_; ++d) a += row[d] * zu[d] + row[emb_dim_ + d] * zi[d];
    if (a <= 0.0) continue;  // relu subgradient at 0 taken as 0
    grads[wout_idx_][j] += upstream * a;
    const double da = upstream * w_out[j];
    grads[b1_idx_][j] += da;
    double* grow = grads[w1_idx_].data() + static_cast<size_t>(j) * two_d;
    for (int d = 0; d < emb_dim_; ++d) {
      grow[d] += da * zu[d];
      grow[emb_dim_ + d] += da * zi[d];
      dzu[d] += da * row[d];
      dzi[d] += da * row[emb_dim_ + d];
    }
  }
}

// --- init & checkpoint ---

std::unique_ptr<Model> init_params(const InitSpec& spec) {
  std::unique_ptr<Model> model;
  if (spec.kind == ModelKind::kMf)
    model = std::make_unique<MfModel>(spec.num_users, spec.num_items, spec.emb_dim,
                                      spec.stochastic);
  else
    model = std::make_unique<NcfModel>(spec.num_users, spec.num_items, spec.emb_dim,
                                       spec.hidden_dim, spec.stochastic);

  std::mt19937_64 rng(spec.rng_seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (auto& arr : model->arrays()) {
    if (arr.name == "b1" || arr.name == "b_out") continue;  // biases stay zero
    if (arr.name == "user_log_sigma" || arr.name == "item_log_sigma") {
      std::fill(arr.values.begin(), arr.values.end(), std::log(0.5));
      continue;
    }
    for (auto& v : arr.values) v = normal(rng);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "cvib-checkpoint 1\n";
  out << "kind " << to_string(model.kind()) << "\n";
  out << "num_users " << model.num_users() << "\n";
  out << "num_items " << model.num_items() << "\n";
  out << "emb_dim " << model.emb_dim() << "\n";
  if (model.kind() == ModelKind::kNcf)
    out << "hidden_dim " << static_cast<const NcfModel&>(model).hidden_dim() << "\n";
  out << "stochastic " << (model.stochastic() ? 1 : 0) << "\n";
  out << "arrays " << model.arrays().size() << "\n";
  char buf[40];
  for (const auto& arr : model.arrays()) {
    out << "array " << arr.name;
    for (int64_t s : arr.shape) out << " " << s;
    out << "\n";
    for (size_t k = 0; k < arr.values.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", arr.values[k]);
      out << buf << (k + 1 == arr.values.size() ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "cvib-checkpoint" || version != 1)
    throw FormatError(path + ": not a cvib checkpoint");

  std::string token, kind_str;
  int32_t num_users = 0, num_items = 0;
  int emb_dim = 0, hidden_dim = 8, stochastic = 0;
  size_t n_arrays = 0;
  while (in >> token) {
    if (token == "kind") in >> kind_str;
    else if (token == "num_users") in >> num_users;
    else if (token == "num_items") in >> num_items;
    else if (token == "emb_dim") in >> emb_dim;
    else if (token == "hidden_dim") in >> hidden_dim;
    else if (token == "stochastic") in >> stochastic;
    else if (token == "arrays") { in >> n_arrays; break; }
    else throw FormatError(path + ": unexpected token " + token);
  }

  InitSpec spec;
  spec.kind = model_kind_from_string(kind_str);
  spec.num_users = num_users;
  spec.num_items = num_items;
  spec.emb_dim = emb_dim;
  spec.hidden_dim = hidden_dim;
  spec.stochastic = stochastic != 0;
  auto model = init_params(spec);
  if (model->arrays().size() != n_arrays)
    throw FormatError(path + ": array count mismatch");

  for (auto& arr : model->arrays()) {
    std::string name;
    in >> token >> name;
    if (token != "array" || name != arr.name)
      throw FormatError(path + ": expected array " + arr.name);
    for (size_t s = 0; s < arr.shape.size(); ++s) {
      int64_t dim;
      in >> dim;
      if (dim != arr.shape[s]) throw FormatError(path + ": shape mismatch for " + name);
    }
    for (auto& v : arr.values)
      if (!(in >> v)) throw FormatError(path + ": truncated values for " + name);
  }
  return model;
}

}  // namespace cvib
