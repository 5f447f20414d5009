#include "dmden/schedule.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dmden/error.hpp"

namespace dmden {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, double gamma)
    : betas_(std::move(betas)), gamma_(gamma) {
  if (betas_.empty()) throw ParameterError("schedule: T must be >= 1");
  if (!(gamma_ > 0.0)) throw ParameterError("schedule: gamma must be > 0");
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0))
      throw ParameterError("schedule: beta_" + std::to_string(i + 1) + " must lie in (0, 1)");
    if (i > 0 && b < betas_[i - 1])
      throw ParameterError("schedule: betas must be non-decreasing (beta_" +
                           std::to_string(i + 1) + ")");
  }

  const std::size_t T = betas_.size();
  alphas_.resize(T);
  alpha_bars_.resize(T + 1);
  one_minus_ab_.resize(T + 1);
  sigmas_sq_.resize(T);

  // Accumulate log(alpha_bar) so that 1 - alpha_bar keeps full relative
  // precision when the betas are tiny.
  double log_ab = 0.0;
  alpha_bars_[0] = 1.0;
  one_minus_ab_[0] = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    log_ab += std::log1p(-betas_[i]);
    alpha_bars_[i + 1] = std::exp(log_ab);
    one_minus_ab_[i + 1] = -std::expm1(log_ab);
  }
  for (std::size_t i = 0; i < T; ++i)
    sigmas_sq_[i] = betas_[i] * one_minus_ab_[i] / one_minus_ab_[i + 1];
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T())
    throw IndexError("schedule: step " + std::to_string(t) + " outside [1, " +
                     std::to_string(T()) + "]");
}

void NoiseSchedule::check_cumulative(int t) const {
  if (t < 0 || t > T())
    throw IndexError("schedule: step " + std::to_string(t) + " outside [0, " +
                     std::to_string(T()) + "]");
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t);
  return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_cumulative(t);
  return alpha_bars_[t];
}

double NoiseSchedule::one_minus_alpha_bar(int t) const {
  check_cumulative(t);
  return one_minus_ab_[t];
}

double NoiseSchedule::sigma_sq(int t) const {
  check_step(t);
  return sigmas_sq_[t - 1];
}

NoiseSchedule build_linear_schedule(int T, double beta_1, double beta_T, double gamma) {
  if (T < 1) throw ParameterError("schedule.T must be >= 1");
  if (!(beta_1 > 0.0 && beta_1 < 1.0)) throw ParameterError("schedule.beta1 must lie in (0, 1)");
  if (!(beta_T > 0.0 && beta_T < 1.0)) throw ParameterError("schedule.betaT must lie in (0, 1)");
  if (beta_T < beta_1) throw ParameterError("schedule.betaT must be >= schedule.beta1");
  if (!(gamma > 0.0)) throw ParameterError("schedule.gamma must be > 0");

  std::vector<double> betas(static_cast<std::size_t>(T));
  if (T == 1) {
    betas[0] = beta_1;
  } else {
    const double step = (beta_T - beta_1) / static_cast<double>(T - 1);
    for (int t = 1; t <= T; ++t) betas[t - 1] = beta_1 + (t - 1) * step;
    betas[T - 1] = beta_T;
  }
  return NoiseSchedule(std::move(betas), gamma);
}

NoiseSchedule build_constant_schedule(int T, double beta, double gamma) {
  if (T < 1) throw ParameterError("schedule.T must be >= 1");
  return NoiseSchedule(std::vector<double>(static_cast<std::size_t>(T), beta), gamma);
}

double snr_dm(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T()) throw IndexError("snr_dm: step " + std::to_string(t) + " out of range");
  return s.alpha_bar(t) / s.one_minus_alpha_bar(t);
}

double snr_dm_db(const NoiseSchedule& s, int t) { return linear_to_db(snr_dm(s, t)); }

int match_timestep(const NoiseSchedule& s, double eta_sq) {
  if (!(eta_sq > 0.0)) throw ParameterError("match_timestep: eta_sq must be > 0");
  const double target = 1.0 / eta_sq;
  int best = 1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= s.T(); ++t) {
    const double err = std::abs(target - snr_dm(s, t));
    if (err < best_err) {
      best_err = err;
      best = t;
    }
  }
  return best;
}

double constant_beta_inference_steps(double beta, double snr) {
  if (!(beta > 0.0 && beta < 1.0)) throw ParameterError("beta must lie in (0, 1)");
  if (!(snr > 0.0)) throw ParameterError("snr must be > 0");
  // log(snr / (1 + snr)) = -log1p(1 / snr)
  return -std::log1p(1.0 / snr) / std::log1p(-beta);
}

std::optional<double> reference_beta_T(int T) {
  switch (T) {
    case 5: return 0.95;
    case 10: return 0.7;
    case 50: return 0.2;
    case 100: return 0.1;
    case 300: return 0.035;
    case 1000: return 0.01;
    default: return std::nullopt;
  }
}

NoiseSchedule reference_schedule(int T, double gamma) {
  const auto beta_T = reference_beta_T(T);
  if (!beta_T)
    throw ParameterError("no reference schedule for T = " + std::to_string(T));
  return build_linear_schedule(T, kReferenceBeta1, *beta_T, gamma);
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double linear_to_db(double x) { return 10.0 * std::log10(x); }

}  // namespace dmden
