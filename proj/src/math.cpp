#include "cvib/math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cvib {

Prob::Prob(double v) {
  if (!std::isfinite(v)) throw std::domain_error("Prob: non-finite value");
  value_ = std::clamp(v, kProbEps, 1.0 - kProbEps);
}

double Prob::logit() const { return std::log(value_ / (1.0 - value_)); }

Prob sigmoid(double logit) {
  if (!std::isfinite(logit)) throw std::domain_error("sigmoid: non-finite logit");
  // Evaluate the numerically stable branch, then clamp.
  double v = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                          : std::exp(logit) / (1.0 + std::exp(logit));
  return Prob(v);
}

double bce(int y, Prob q) {
  if (y != 0 && y != 1) throw std::invalid_argument("bce: y must be 0 or 1");
  return y == 1 ? -std::log(q.value()) : -std::log(1.0 - q.value());
}

double xent(Prob q_a, Prob q_b) {
  const double a = q_a.value(), b = q_b.value();
  return -(a * std::log(b) + (1.0 - a) * std::log(1.0 - b));
}

double entropy(Prob q) { return xent(q, q); }

double gaussian_kl(const Vec& e, const Vec& sigma) {
  if (e.size() != sigma.size())
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  double acc = squared_norm(e);
  for (double s : sigma) {
    if (!(s > 0.0)) throw std::domain_error("gaussian_kl: sigma must be positive");
    acc += s - 0.5 * std::log(s);
  }
  return acc - static_cast<double>(e.size());
}

double squared_norm(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

}  // namespace cvib
