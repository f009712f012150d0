#ifndef CVIB_MODELS_HPP_
#define CVIB_MODELS_HPP_

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvib/data.hpp"
#include "cvib/math.hpp"

namespace cvib {

enum class ModelKind { kMf, kNcf };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct Prediction {
  double logit = 0.0;
  Prob prob;
};

struct NamedArray {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> values;
};

/// Gradient buffers, index-aligned with Model::arrays().
using Gradients = std::vector<std::vector<double>>;

/// Per-event reparameterization noise recorded by a stochastic forward pass
/// so the matching backward pass can replay it.
struct NoiseLog {
  std::vector<double> user_eps;  // batch x emb_dim, row-major
  std::vector<double> item_eps;
};

/// A prediction backbone over user/item embeddings. Arrays 0 and 1 are
/// always the user and item embedding tables. In stochastic mode the model
/// additionally learns per-dimension log standard deviations shared across
/// users (and across items), and the embedding fed forward is
/// e + eps * exp(log_sigma).
class Model {
 public:
  virtual ~Model() = default;
  virtual ModelKind kind() const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  int32_t num_users() const { return num_users_; }
  int32_t num_items() const { return num_items_; }
  int emb_dim() const { return emb_dim_; }
  bool stochastic() const { return stochastic_; }

  std::vector<NamedArray>& arrays() { return arrays_; }
  const std::vector<NamedArray>& arrays() const { return arrays_; }
  const NamedArray* array(const std::string& name) const;

  /// Deterministic forward pass (sigma ignored in stochastic mode; used for
  /// all evaluation).
  void forward(std::span<const Event> batch, std::vector<Prediction>& out) const;

  /// Accumulates d(sum_i upstream_i * logit_i)/d(theta) into grads.
  void backward(std::span<const Event> batch, std::span<const double> upstream,
                Gradients& grads) const;

  /// Stochastic forward with fresh reparameterization noise; records the
  /// draws so backward_stochastic can differentiate the same sample.
  void forward_stochastic(std::span<const Event> batch, std::mt19937_64& rng,
                          std::vector<Prediction>& out, NoiseLog& noise) const;
  void backward_stochastic(std::span<const Event> batch,
                           std::span<const double> upstream, const NoiseLog& noise,
                           Gradients& grads) const;

  /// Sum over the batch of ||e_u||^2 + ||e_i||^2; events sharing a user or
  /// item count once per occurrence.
  double embedding_sq_norm(std::span<const Event> batch) const;
  /// Adds coeff * d(embedding_sq_norm)/d(theta) to grads.
  void add_embedding_sq_norm_grad(std::span<const Event> batch, double coeff,
                                  Gradients& grads) const;

  /// Stochastic counterpart of the minimality term: sum over the batch of
  /// gaussian_kl(concat(e_u, e_i), concat(sigma_u, sigma_i)).
  double embedding_kl(std::span<const Event> batch) const;
  void add_embedding_kl_grad(std::span<const Event> batch, double coeff,
                             Gradients& grads) const;

  Gradients zero_gradients() const;

 protected:
  Model(int32_t num_users, int32_t num_items, int emb_dim, bool stochastic);
  void check_batch(std::span<const Event> batch) const;

  const double* user_row(int32_t u) const {
    return arrays_[0].values.data() + static_cast<size_t>(u) * emb_dim_;
  }
  const double* item_row(int32_t i) const {
    return arrays_[1].values.data() + static_cast<size_t>(i) * emb_dim_;
  }
  // log-sigma arrays sit at indices 2 and 3 in stochastic mode.
  const double* user_log_sigma() const { return arrays_[2].values.data(); }
  const double* item_log_sigma() const { return arrays_[3].values.data(); }
  int emb_base() const { return stochastic_ ? 4 : 2; }

  // logit of one event given its (possibly perturbed) embeddings.
  virtual double event_logit(const double* zu, const double* zi) const = 0;
  // d(logit)/d(zu), d(logit)/d(zi) and any grads of trailing arrays.
  virtual void event_backward(const double* zu, const double* zi, double upstream,
                              double* dzu, double* dzi, Gradients& grads) const = 0;

  int32_t num_users_;
  int32_t num_items_;
  int emb_dim_;
  bool stochastic_;
  std::vector<NamedArray> arrays_;

 private:
  void forward_impl(std::span<const Event> batch, const NoiseLog* noise,
                    std::vector<Prediction>& out) const;
  void backward_impl(std::span<const Event> batch, std::span<const double> upstream,
                     const NoiseLog* noise, Gradients& grads) const;
};

/// Dot-product factorization: logit = e_u . e_i.
class MfModel : public Model {
 public:
  MfModel(int32_t num_users, int32_t num_items, int emb_dim, bool stochastic);
  ModelKind kind() const override { return ModelKind::kMf; }
  std::unique_ptr<Model> clone() const override;

 protected:
  double event_logit(const double* zu, const double* zi) const override;
  void event_backward(const double* zu, const double* zi, double upstream,
                      double* dzu, double* dzi, Gradients& grads) const override;
};

/// One-hidden-layer MLP over the concatenated embeddings:
/// h = relu(W1 [e_u; e_i] + b1), logit = w_out . h + b_out.
class NcfModel : public Model {
 public:
  NcfModel(int32_t num_users, int32_t num_items, int emb_dim, int hidden_dim,
           bool stochastic);
  ModelKind kind() const override { return ModelKind::kNcf; }
  std::unique_ptr<Model> clone() const override;
  int hidden_dim() const { return hidden_dim_; }

 protected:
  double event_logit(const double* zu, const double* zi) const override;
  void event_backward(const double* zu, const double* zi, double upstream,
                      double* dzu, double* dzi, Gradients& grads) const override;

 private:
  int hidden_dim_;
  int w1_idx_, b1_idx_, wout_idx_, bout_idx_;
};

struct InitSpec {
  ModelKind kind = ModelKind::kMf;
  int32_t num_users = 0;
  int32_t num_items = 0;
  int emb_dim = 4;
  int hidden_dim = 8;
  bool stochastic = false;
  uint64_t rng_seed = 0;
};

/// Embeddings and weights ~ N(0, 0.01^2), biases zero, log-sigmas at
/// ln(0.5) (the stationary point of the KL's sigma term). Deterministic per
/// seed.
std::unique_ptr<Model> init_params(const InitSpec& spec);

/// Text checkpoint of named arrays with shape headers; values at 17
/// significant digits so save/load round-trips bit-exactly.
void save_checkpoint(const Model& model, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace cvib

#endif  // CVIB_MODELS_HPP_
