#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dmden/gmm.hpp"
#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"
#include "dmden/types.hpp"

namespace dmden {

/// One reverse step f_t : x_t -> E-model[x_{t-1} | x_t].
///
/// Implementations must be deterministic and dimension-preserving.
class StepwiseDenoiser {
 public:
  virtual ~StepwiseDenoiser() = default;

  virtual const NoiseSchedule& schedule() const = 0;
  virtual int dimension() const = 0;

  /// Applies step t to every column of `x_t`.
  virtual Batch step_batch(const Batch& x_t, int t) const = 0;

  Vector step(const Vector& x_t, int t) const;
};

/// Exact stepwise conditional mean g_t(x_t) = E[x_{t-1} | x_t] under a
/// Gaussian-mixture prior. Realizes a zero stepwise error.
class OracleDenoiser final : public StepwiseDenoiser {
 public:
  OracleDenoiser(Gmm prior, NoiseSchedule schedule);

  const NoiseSchedule& schedule() const override { return schedule_; }
  int dimension() const override { return prior_.N(); }
  const Gmm& prior() const noexcept { return prior_; }

  Batch step_batch(const Batch& x_t, int t) const override;

 private:
  Gmm prior_;
  NoiseSchedule schedule_;
};

/// y = x + n with n ~ N(0, eta_sq I). `eta_sq_assumed` is the noise level
/// handed to the denoiser and may differ from the true one.
struct Observation {
  Vector y;
  double eta_sq = 1.0;
  double eta_sq_assumed = 1.0;

  static Observation matched(Vector y, double eta_sq) { return {std::move(y), eta_sq, eta_sq}; }
};

/// Coefficients of E[x_s | x_t, x_0] = x0_coef * x_0 + xt_coef * x_t for s < t.
/// With s = t - 1 these are the forward-posterior mean coefficients.
struct BridgeCoefficients {
  double x0_coef;
  double xt_coef;
};
BridgeCoefficients bridge_coefficients(const NoiseSchedule& s, int from_t, int to_s);
BridgeCoefficients posterior_coefficients(const NoiseSchedule& s, int t);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Vector forward_sample(const Vector& x0, const NoiseSchedule& s, int t, Rng& rng);

/// Mean of q(x_{t-1} | x_t, x_0). t = 1 uses abar_0 = 1 and returns x_0.
Vector posterior_mean(const Vector& x_t, const Vector& x0, const NoiseSchedule& s, int t);

/// g_t(x_t) = a_t E[x_0 | x_t] + b_t x_t.
Vector oracle_step(const Gmm& g, const Vector& x_t, const NoiseSchedule& s, int t);

struct DenoiseResult {
  Vector x0;
  int t_hat = 0;
};

/// Deterministic reverse chain started at the SNR-matched step.
/// Consumes no randomness.
DenoiseResult deterministic_denoise(const StepwiseDenoiser& d, const Observation& obs);

struct BatchDenoiseResult {
  Batch x0;
  std::vector<int> t_hat;
};

/// Called with (t, current estimates) once before the first step
/// (t = max t_hat) and after every step (t = remaining step index).
using StepObserver = std::function<void(int, const Batch&)>;

/// Column-wise deterministic denoising with a per-column assumed noise level.
BatchDenoiseResult deterministic_denoise(const StepwiseDenoiser& d, const Batch& y,
                                         std::span<const double> eta_sq_assumed,
                                         const StepObserver& observer = {});

/// Ancestral reverse process x_{t-1} = f_t(x_t) + sigma_t z from start_t.
Vector stochastic_reverse(const StepwiseDenoiser& d, int start_t, const Vector& x_start, Rng& rng);

/// Column j starts at start_t[j] and draws its noise from rngs[j].
Batch stochastic_reverse(const StepwiseDenoiser& d, std::span<const int> start_t,
                         const Batch& x_start, std::span<Rng> rngs);

/// Noise-prediction reparameterization of the reverse mean.
Vector mu_from_eps(const Vector& eps_hat, const Vector& x_t, const NoiseSchedule& s, int t);
/// Inverse of mu_from_eps.
Vector eps_from_mu(const Vector& mu, const Vector& x_t, const NoiseSchedule& s, int t);

struct JensenGapEstimate {
  /// Mean over x_{t+1} of the (inner-noise debiased) gap norm.
  double mean_norm = 0.0;
  double se_norm = 0.0;
  /// Unbiased estimate of E||gap||^2 and its standard error.
  double mean_sq = 0.0;
  double se_sq = 0.0;
};

/// Monte-Carlo estimate of E_{x_{t+1}} || E[g_t(x_t) | x_{t+1}] - g_t(E[x_t | x_{t+1}]) ||.
/// The inner expectation averages g_t over n_inner exact posterior draws
/// of x_t given x_{t+1}.
JensenGapEstimate jensen_gap_estimate(const Gmm& g, const NoiseSchedule& s, int t, int n_outer,
                                      int n_inner, Rng& rng);

/// Closed-form gap at one x_{t+1}, using E[g_t(x_t) | x_{t+1}] = E[x_{t-1} | x_{t+1}].
Vector jensen_gap_exact(const Gmm& g, const NoiseSchedule& s, int t, const Vector& x_next);

}  // namespace dmden
