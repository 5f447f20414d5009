#include "dmden/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmden/error.hpp"

namespace dmden {
namespace {

void require_step_from_two(const NoiseSchedule& s, int t, const char* what) {
  if (t < 2 || t > s.T())
    throw ParameterError(std::string(what) + ": step " + std::to_string(t) + " outside [2, " +
                         std::to_string(s.T()) + "]");
}

}  // namespace

double lipschitz_step(const NoiseSchedule& s, int t) {
  require_step_from_two(s, t, "lipschitz_step");
  return std::sqrt(s.alpha(t)) * s.one_minus_alpha_bar(t - 1) / s.one_minus_alpha_bar(t);
}

double lipschitz_range(const NoiseSchedule& s, int tau1, int tau2) {
  require_step_from_two(s, tau1, "lipschitz_range");
  require_step_from_two(s, tau2, "lipschitz_range");
  if (tau1 > tau2) throw ParameterError("lipschitz_range: need tau1 <= tau2");
  return s.one_minus_alpha_bar(tau1 - 1) * std::sqrt(s.alpha_bar(tau2)) /
         (s.one_minus_alpha_bar(tau2) * std::sqrt(s.alpha_bar(tau1 - 1)));
}

double lipschitz_eps(const NoiseSchedule& s, int t) {
  const double L = lipschitz_step(s, t);
  return std::sqrt(s.one_minus_alpha_bar(t)) / s.beta(t) * (std::sqrt(s.alpha(t)) * L + 1.0);
}

double lipschitz_snr_form(const NoiseSchedule& s, int t_hat) {
  require_step_from_two(s, t_hat, "lipschitz_snr_form");
  const double snr = snr_dm(s, t_hat);
  return s.beta(1) / std::sqrt(s.alpha(1)) * std::sqrt(snr * (snr + 1.0));
}

void BoundParams::validate() const {
  if (T < 1) throw ParameterError("bounds: T must be >= 1");
  if (t_hat < 1 || t_hat > T) throw ParameterError("bounds: t_hat must lie in [1, T]");
  if (N < 1) throw ParameterError("bounds: N must be >= 1");
  if (!(L1 >= 0.0) || !(delta >= 0.0) || !(xi >= 0.0) || !(envelope >= 0.0) || !(omega >= 0.0))
    throw ParameterError("bounds: parameters must be nonnegative");
  if (!(gamma > 0.0)) throw ParameterError("bounds: gamma must be > 0");
}

double default_envelope_constant(const NoiseSchedule& s) {
  return s.beta(s.T()) * std::pow(static_cast<double>(s.T()), s.gamma());
}

namespace {

double denoising_term(const BoundParams& p) {
  const double log_t = std::log(static_cast<double>(p.t_hat));
  return 2.0 * p.N * p.L1 * (1.0 + log_t) * p.envelope *
         std::pow(static_cast<double>(p.T), -p.gamma / 2.0);
}

}  // namespace

double theorem2_bound(const BoundParams& p) {
  p.validate();
  const double t = p.t_hat;
  const double log_t = std::log(t);
  const double delta_coef =
      4.0 * p.L1 * t * log_t + (4.0 * p.L1 + 2.0) * t + 2.0 * p.L1 * log_t + 2.0 * p.L1 - 1.0;
  return denoising_term(p) + delta_coef * p.delta;
}

double theorem1_bound(const BoundParams& p, double eta_sq) {
  p.validate();
  if (!(eta_sq >= 0.0)) throw ParameterError("bounds: eta_sq must be >= 0");
  return denoising_term(p) + p.xi * eta_sq;
}

MeanEstimate estimate_stepwise_gap(const StepwiseDenoiser& learned, const Gmm& g, int t, int n, Rng& rng) {
  if (n < 1) throw ParameterError("estimate_stepwise_gap: n must be >= 1");
  const NoiseSchedule& s = learned.schedule();
  if (t < 1 || t > s.T()) throw IndexError("estimate_stepwise_gap: step out of range");
  const Batch x0 = sample(g, n, rng);
  Batch x_t(g.N(), n);
  for (int j = 0; j < n; ++j) x_t.col(j) = forward_sample(x0.col(j), s, t, rng);

  const OracleDenoiser oracle(g, s);
  const Batch diff = oracle.step_batch(x_t, t) - learned.step_batch(x_t, t);
  const Eigen::ArrayXd norms = diff.colwise().norm().transpose().array();
  MeanEstimate est;
  est.mean = norms.mean();
  est.se = n > 1 ? std::sqrt((norms - est.mean).square().sum() / (n - 1) / n) : 0.0;
  return est;
}

Matrix finite_difference_jacobian(const VectorMap& f, const Vector& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite differences: h must be > 0");
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const Vector up = f(probe);
    probe[j] = x[j] - h;
    const Vector down = f(probe);
    probe[j] = x[j];
    J.col(j) = (up - down) / (2.0 * h);
  }
  return J;
}

double spectral_norm(const Matrix& J, int max_iter, double tol) {
  if (J.size() == 0) return 0.0;
  const Matrix gram = J.transpose() * J;
  Vector v = Vector::Ones(gram.cols()) / std::sqrt(static_cast<double>(gram.cols()));
  // A deterministic but non-symmetric start avoids landing exactly in the
  // orthogonal complement of the top singular vector for structured J.
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += 1e-3 * static_cast<double>(i + 1);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    w /= norm;
    const double next = w.dot(gram * w);
    v = std::move(w);
    if (std::abs(next - lambda) <= tol * std::max(1.0, next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

double empirical_jacobian_norm(const VectorMap& f, const Vector& x, double h) {
  return spectral_norm(finite_difference_jacobian(f, x, h));
}

double empirical_jacobian_norm(const StepwiseDenoiser& d, const Vector& x_t, int t, double h) {
  return empirical_jacobian_norm([&](const Vector& x) { return d.step(x, t); }, x_t, h);
}

double estimate_first_step_lipschitz(const StepwiseDenoiser& d, Rng& rng, int samples, double h) {
  if (samples < 1) throw ParameterError("estimate_first_step_lipschitz: samples must be >= 1");
  double best = 0.0;
  for (int i = 0; i < samples; ++i)
    best = std::max(best, empirical_jacobian_norm(d, rng.normal_vector(d.dimension()), 1, h));
  return best;
}

}  // namespace dmden
