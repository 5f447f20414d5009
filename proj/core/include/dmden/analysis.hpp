#pragma once

#include <functional>

#include "dmden/diffusion.hpp"
#include "dmden/gmm.hpp"
#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"
#include "dmden/types.hpp"

namespace dmden {

/// Per-step contraction factor of the reverse mean,
/// L_t = sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t). Requires t >= 2.
double lipschitz_step(const NoiseSchedule& s, int t);

/// Product of L_t over t = tau1..tau2 in telescoped closed form.
double lipschitz_range(const NoiseSchedule& s, int tau1, int tau2);

/// Lipschitz constant of the noise predictor implied by L_t.
double lipschitz_eps(const NoiseSchedule& s, int t);

/// L_{2:t_hat} written through SNR_DM(t_hat).
double lipschitz_snr_form(const NoiseSchedule& s, int t_hat);

/// Inputs of the error-bound evaluators. `envelope` is the explicit
/// constant c with beta_t <= c T^{-gamma}.
struct BoundParams {
  int T = 1;
  int t_hat = 1;
  double L1 = 1.0;
  double delta = 0.0;
  double xi = 0.0;
  int N = 1;
  double gamma = 1.0;
  double envelope = 1.0;
  double omega = 0.0;  // metadata only

  void validate() const;
};

/// beta_T * T^gamma: the smallest c with beta_t <= c T^{-gamma} on a
/// non-decreasing schedule.
double default_envelope_constant(const NoiseSchedule& s);

/// Stepwise-error bound:
/// 2 N L1 (1 + log t) c T^{-gamma/2}
///   + (4 L1 t log t + (4 L1 + 2) t + 2 L1 log t + 2 L1 - 1) Delta.
double theorem2_bound(const BoundParams& p);

/// Score-error bound: 2 N L1 c T^{-gamma/2} (1 + log t) + Xi eta_sq.
double theorem1_bound(const BoundParams& p, double eta_sq);

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean of || oracle_step(x_t) - learned.step(x_t) || over x_t from the
/// forward marginal at step t.
MeanEstimate estimate_stepwise_gap(const StepwiseDenoiser& learned, const Gmm& g, int t, int n, Rng& rng);

using VectorMap = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian of f at x.
Matrix finite_difference_jacobian(const VectorMap& f, const Vector& x, double h);

/// Largest singular value by power iteration on J^T J.
double spectral_norm(const Matrix& J, int max_iter = 1000, double tol = 1e-14);

/// || J f_t(x_t) ||_2 from central differences with step h.
double empirical_jacobian_norm(const StepwiseDenoiser& d, const Vector& x_t, int t, double h);
double empirical_jacobian_norm(const VectorMap& f, const Vector& x, double h);

/// Max of empirical_jacobian_norm at step 1 over `samples` random
/// standard-normal inputs.
double estimate_first_step_lipschitz(const StepwiseDenoiser& d, Rng& rng, int samples = 16, double h = 1e-5);

}  // namespace dmden
