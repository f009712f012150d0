#ifndef CVIB_MATH_HPP_
#define CVIB_MATH_HPP_

#include <vector>

namespace cvib {

// Clamp width for probabilities; keeps every log term finite in double
// precision.
inline constexpr double kProbEps = 1e-7;

/// A probability clamped to [kProbEps, 1 - kProbEps].
class Prob {
 public:
  Prob() : value_(0.5) {}
  explicit Prob(double v);

  double value() const { return value_; }
  /// ln(p / (1 - p)) of the clamped value.
  double logit() const;
  /// Derivative of the sigmoid at this output value: p (1 - p).
  double dsigmoid() const { return value_ * (1.0 - value_); }

 private:
  double value_;
};

using Vec = std::vector<double>;

/// 1 / (1 + exp(-logit)), clamped. Throws std::domain_error on a non-finite
/// input.
Prob sigmoid(double logit);

/// Binary cross entropy -[y ln q + (1-y) ln(1-q)], y in {0,1}.
double bce(int y, Prob q);

/// Cross entropy between two Bernoulli distributions,
/// -[q_a ln q_b + (1-q_a) ln(1-q_b)]. Minimized over q_b at q_b = q_a.
double xent(Prob q_a, Prob q_b);

/// Bernoulli entropy, xent(q, q). Maximal (ln 2) at q = 0.5.
double entropy(Prob q);

/// KL(N(e, diag(sigma)) || N(0, I)) in the form
///   ||e||^2 + sum_d (sigma_d - 0.5 ln sigma_d) - D.
/// Requires sigma_d > 0 and |sigma| == |e|; zero for e = 0, sigma = 1.
double gaussian_kl(const Vec& e, const Vec& sigma);

double squared_norm(const Vec& v);

}  // namespace cvib

#endif  // CVIB_MATH_HPP_
