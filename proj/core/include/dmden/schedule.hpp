#pragma once

#include <optional>
#include <span>
#include <vector>

namespace dmden {

/// Variance-preserving diffusion schedule with all per-step scalars
/// precomputed. Steps are 1-based: t = 1..T. Index 0 is valid for the
/// cumulative products only, with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  /// Takes beta_1..beta_T. Requires 0 < beta_1 <= ... <= beta_T < 1.
  explicit NoiseSchedule(std::vector<double> betas, double gamma = 1.0);

  int T() const noexcept { return static_cast<int>(betas_.size()); }
  double gamma() const noexcept { return gamma_; }

  double beta(int t) const;
  double alpha(int t) const;
  /// Defined for t = 0..T.
  double alpha_bar(int t) const;
  /// 1 - alpha_bar(t) without cancellation; defined for t = 0..T.
  double one_minus_alpha_bar(int t) const;
  /// Reverse-process variance; sigma_sq(1) == 0.
  double sigma_sq(int t) const;

  std::span<const double> betas() const noexcept { return betas_; }

 private:
  void check_step(int t) const;
  void check_cumulative(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;    // size T+1, [0] = 1
  std::vector<double> one_minus_ab_;  // size T+1, [0] = 0
  std::vector<double> sigmas_sq_;
  double gamma_;
};

/// Linear ramp with inclusive endpoints: beta_1 at t = 1 and beta_T at t = T.
NoiseSchedule build_linear_schedule(int T, double beta_1, double beta_T, double gamma = 1.0);

/// beta_t = beta for every step.
NoiseSchedule build_constant_schedule(int T, double beta, double gamma = 1.0);

/// alpha_bar(t) / (1 - alpha_bar(t)).
double snr_dm(const NoiseSchedule& s, int t);
double snr_dm_db(const NoiseSchedule& s, int t);

/// Step whose SNR is closest to 1/eta_sq. Ties go to the smaller step.
int match_timestep(const NoiseSchedule& s, double eta_sq);

/// Real-valued matched step for a constant-beta schedule:
/// log(snr / (1 + snr)) / log(1 - beta).
double constant_beta_inference_steps(double beta, double snr);

/// beta_T used for each step count of the reference hyperparameter table
/// (beta_1 = 1e-4 throughout). Empty for step counts not in the table.
std::optional<double> reference_beta_T(int T);
inline constexpr double kReferenceBeta1 = 1e-4;
inline constexpr int kReferenceStepCounts[] = {5, 10, 50, 100, 300, 1000};

/// Linear schedule from the reference table. Throws ParameterError when
/// T is not a table entry.
NoiseSchedule reference_schedule(int T, double gamma = 1.0);

double db_to_linear(double db);
double linear_to_db(double x);

}  // namespace dmden
