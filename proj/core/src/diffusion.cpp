#include "dmden/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmden/error.hpp"

namespace dmden {

Vector StepwiseDenoiser::step(const Vector& x_t, int t) const {
  Batch x = x_t;
  return step_batch(x, t).col(0);
}

OracleDenoiser::OracleDenoiser(Gmm prior, NoiseSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule)) {}

Batch OracleDenoiser::step_batch(const Batch& x_t, int t) const {
  if (x_t.rows() != prior_.N()) throw ParameterError("oracle step: wrong dimension");
  const auto c = posterior_coefficients(schedule_, t);
  Batch out = c.xt_coef * x_t;
  out += c.x0_coef * cme_at_diffusion_step(prior_, x_t, schedule_, t);
  return out;
}

BridgeCoefficients bridge_coefficients(const NoiseSchedule& s, int from_t, int to_s) {
  if (from_t < 1 || from_t > s.T() || to_s < 0 || to_s >= from_t)
    throw IndexError("bridge_coefficients: need 0 <= s < t <= T");
  const double ab_t = s.alpha_bar(from_t);
  const double ab_s = s.alpha_bar(to_s);
  const double omab_t = s.one_minus_alpha_bar(from_t);
  const double omab_s = s.one_minus_alpha_bar(to_s);
  // 1 - abar_t / abar_s = 1 - prod_{i=s+1..t} alpha_i
  double log_ratio = 0.0;
  for (int i = to_s + 1; i <= from_t; ++i) log_ratio += std::log1p(-s.beta(i));
  const double one_minus_ratio = -std::expm1(log_ratio);
  return {std::sqrt(ab_s) * one_minus_ratio / omab_t, std::sqrt(ab_t / ab_s) * omab_s / omab_t};
}

BridgeCoefficients posterior_coefficients(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T()) throw IndexError("posterior step " + std::to_string(t) + " out of range");
  const double omab = s.one_minus_alpha_bar(t);
  return {std::sqrt(s.alpha_bar(t - 1)) * s.beta(t) / omab,
          std::sqrt(s.alpha(t)) * s.one_minus_alpha_bar(t - 1) / omab};
}

Vector forward_sample(const Vector& x0, const NoiseSchedule& s, int t, Rng& rng) {
  if (t < 1 || t > s.T()) throw IndexError("forward_sample: step out of range");
  return std::sqrt(s.alpha_bar(t)) * x0 +
         std::sqrt(s.one_minus_alpha_bar(t)) * rng.normal_vector(x0.size());
}

Vector posterior_mean(const Vector& x_t, const Vector& x0, const NoiseSchedule& s, int t) {
  const auto c = posterior_coefficients(s, t);
  return c.x0_coef * x0 + c.xt_coef * x_t;
}

Vector oracle_step(const Gmm& g, const Vector& x_t, const NoiseSchedule& s, int t) {
  const auto c = posterior_coefficients(s, t);
  return c.x0_coef * cme_at_diffusion_step(g, x_t, s, t) + c.xt_coef * x_t;
}

DenoiseResult deterministic_denoise(const StepwiseDenoiser& d, const Observation& obs) {
  Batch y = obs.y;
  const double eta[] = {obs.eta_sq_assumed};
  auto r = deterministic_denoise(d, y, eta);
  return {r.x0.col(0), r.t_hat.front()};
}

BatchDenoiseResult deterministic_denoise(const StepwiseDenoiser& d, const Batch& y,
                                         std::span<const double> eta_sq_assumed,
                                         const StepObserver& observer) {
  const Eigen::Index B = y.cols();
  if (static_cast<Eigen::Index>(eta_sq_assumed.size()) != B)
    throw ParameterError("deterministic_denoise: one noise level per column required");
  if (y.rows() != d.dimension()) throw ParameterError("deterministic_denoise: wrong dimension");

  const NoiseSchedule& s = d.schedule();
  BatchDenoiseResult out;
  out.x0.resize(y.rows(), B);
  out.t_hat.resize(static_cast<std::size_t>(B));
  int t_max = 0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const double eta_sq = eta_sq_assumed[static_cast<std::size_t>(j)];
    if (!(eta_sq > 0.0)) throw ParameterError("deterministic_denoise: eta_sq must be > 0");
    out.x0.col(j) = y.col(j) / std::sqrt(1.0 + eta_sq);
    const int t_hat = match_timestep(s, eta_sq);
    out.t_hat[static_cast<std::size_t>(j)] = t_hat;
    t_max = std::max(t_max, t_hat);
  }
  if (observer) observer(t_max, out.x0);

  std::vector<Eigen::Index> active;
  for (int t = t_max; t >= 1; --t) {
    active.clear();
    for (Eigen::Index j = 0; j < B; ++j)
      if (out.t_hat[static_cast<std::size_t>(j)] >= t) active.push_back(j);

    if (static_cast<Eigen::Index>(active.size()) == B) {
      out.x0 = d.step_batch(out.x0, t);
    } else if (!active.empty()) {
      Batch sub(y.rows(), static_cast<Eigen::Index>(active.size()));
      for (std::size_t i = 0; i < active.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = out.x0.col(active[i]);
      const Batch stepped = d.step_batch(sub, t);
      for (std::size_t i = 0; i < active.size(); ++i) out.x0.col(active[i]) = stepped.col(static_cast<Eigen::Index>(i));
    }
    if (observer) observer(t - 1, out.x0);
  }
  return out;
}

Vector stochastic_reverse(const StepwiseDenoiser& d, int start_t, const Vector& x_start, Rng& rng) {
  Batch x = x_start;
  const int start[] = {start_t};
  return stochastic_reverse(d, start, x, std::span<Rng>(&rng, 1)).col(0);
}

Batch stochastic_reverse(const StepwiseDenoiser& d, std::span<const int> start_t,
                         const Batch& x_start, std::span<Rng> rngs) {
  const Eigen::Index B = x_start.cols();
  if (static_cast<Eigen::Index>(start_t.size()) != B || static_cast<Eigen::Index>(rngs.size()) != B)
    throw ParameterError("stochastic_reverse: one start step and one rng per column required");
  const NoiseSchedule& s = d.schedule();
  int t_max = 0;
  for (int t0 : start_t) {
    if (t0 < 1 || t0 > s.T()) throw IndexError("stochastic_reverse: start step out of range");
    t_max = std::max(t_max, t0);
  }

  Batch x = x_start;
  std::vector<Eigen::Index> active;
  for (int t = t_max; t >= 1; --t) {
    active.clear();
    for (Eigen::Index j = 0; j < B; ++j)
      if (start_t[static_cast<std::size_t>(j)] >= t) active.push_back(j);
    if (active.empty()) continue;

    Batch sub(x.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t i = 0; i < active.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = x.col(active[i]);
    Batch next = d.step_batch(sub, t);
    if (t > 1) {
      const double sigma = std::sqrt(s.sigma_sq(t));
      for (std::size_t i = 0; i < active.size(); ++i)
        next.col(static_cast<Eigen::Index>(i)) +=
            sigma * rngs[static_cast<std::size_t>(active[i])].normal_vector(x.rows());
    }
    for (std::size_t i = 0; i < active.size(); ++i) x.col(active[i]) = next.col(static_cast<Eigen::Index>(i));
  }
  return x;
}

Vector mu_from_eps(const Vector& eps_hat, const Vector& x_t, const NoiseSchedule& s, int t) {
  const double coef = s.beta(t) / std::sqrt(s.one_minus_alpha_bar(t));
  return (x_t - coef * eps_hat) / std::sqrt(s.alpha(t));
}

Vector eps_from_mu(const Vector& mu, const Vector& x_t, const NoiseSchedule& s, int t) {
  const double coef = s.beta(t) / std::sqrt(s.one_minus_alpha_bar(t));
  return (x_t - std::sqrt(s.alpha(t)) * mu) / coef;
}

// ---------------------------------------------------------------------------

JensenGapEstimate jensen_gap_estimate(const Gmm& g, const NoiseSchedule& s, int t, int n_outer,
                                      int n_inner, Rng& rng) {
  if (t < 1 || t >= s.T()) throw IndexError("jensen_gap_estimate: need 1 <= t < T");
  if (n_outer < 1) throw ParameterError("jensen_gap_estimate: n_outer must be >= 1");
  if (n_inner < 2) throw ParameterError("jensen_gap_estimate: n_inner must be >= 2");

  const int next = t + 1;
  const double ab_next = s.alpha_bar(next);
  const double scale_next = 1.0 / std::sqrt(ab_next);
  const GmmPosterior posterior_next(g, s.one_minus_alpha_bar(next) / ab_next, true);
  const auto bridge = posterior_coefficients(s, next);
  const double sigma_next = std::sqrt(s.sigma_sq(next));
  const OracleDenoiser oracle(g, s);

  std::vector<double> norms(static_cast<std::size_t>(n_outer));
  std::vector<double> squares(static_cast<std::size_t>(n_outer));
  Batch x0 = sample(g, n_outer, rng);
  for (int j = 0; j < n_outer; ++j) {
    const Vector x_next = forward_sample(x0.col(j), s, next, rng);
    const Vector mean_t = oracle.step(x_next, next);
    const Vector target = oracle.step(mean_t, t);

    Batch inner(g.N(), n_inner);
    const Vector y = scale_next * x_next;
    for (int i = 0; i < n_inner; ++i) {
      const Vector x0_draw = posterior_next.sample(y, rng);
      inner.col(i) = bridge.x0_coef * x0_draw + bridge.xt_coef * x_next +
                     sigma_next * rng.normal_vector(g.N());
    }
    const Batch z = oracle.step_batch(inner, t).colwise() - target;
    const Vector zbar = z.rowwise().mean();
    const double spread = (z.colwise() - zbar).squaredNorm() / (n_inner - 1);
    const double u = zbar.squaredNorm() - spread / n_inner;
    squares[static_cast<std::size_t>(j)] = u;
    norms[static_cast<std::size_t>(j)] = std::sqrt(std::max(u, 0.0));
  }

  auto mean_se = [n_outer](const std::vector<double>& v, double& mean, double& se) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= n_outer;
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var = n_outer > 1 ? var / (n_outer - 1) : 0.0;
    mean = m;
    se = std::sqrt(var / n_outer);
  };
  JensenGapEstimate est;
  mean_se(norms, est.mean_norm, est.se_norm);
  mean_se(squares, est.mean_sq, est.se_sq);
  return est;
}

Vector jensen_gap_exact(const Gmm& g, const NoiseSchedule& s, int t, const Vector& x_next) {
  if (t < 1 || t >= s.T()) throw IndexError("jensen_gap_exact: need 1 <= t < T");
  const int next = t + 1;
  // Tower property: E[g_t(x_t) | x_{t+1}] = E[x_{t-1} | x_{t+1}].
  const auto two_step = bridge_coefficients(s, next, t - 1);
  const Vector outer = two_step.x0_coef * cme_at_diffusion_step(g, x_next, s, next) +
                       two_step.xt_coef * x_next;
  const Vector nested = oracle_step(g, oracle_step(g, x_next, s, next), s, t);
  return outer - nested;
}

}  // namespace dmden
