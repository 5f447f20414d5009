#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"
#include "dmden/types.hpp"

namespace dmden {

/// Gaussian mixture prior  p(x) = sum_k p(k) N(x; mu_k, C_k).
///
/// Immutable after construction. The lower Cholesky factor of every
/// covariance is cached for sampling.
class Gmm {
 public:
  /// Validates weights (nonnegative, sum to 1 within 1e-12), covariance
  /// symmetry (max asymmetry <= 1e-12) and positive definiteness.
  Gmm(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covs);

  int K() const noexcept { return static_cast<int>(weights_.size()); }
  int N() const noexcept { return static_cast<int>(means_.front().size()); }

  const std::vector<double>& weights() const noexcept { return weights_; }
  const Vector& mean(int k) const { return means_.at(static_cast<std::size_t>(k)); }
  const Matrix& cov(int k) const { return covs_.at(static_cast<std::size_t>(k)); }
  const Matrix& cov_factor(int k) const { return factors_.at(static_cast<std::size_t>(k)); }

  /// sum_k p(k) mu_k
  Vector mixture_mean() const;
  /// E||x||^2 = sum_k p(k) (tr C_k + ||mu_k||^2)
  double second_moment() const;

 private:
  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  std::vector<Matrix> factors_;
};

/// Random mixture: means i.i.d. N(0, 1/sqrt(N)) (variance), covariances
/// V diag(1 + xi) V^T with V the eigenvectors of S^T S for S ~ U(0,1)^{NxN}
/// and xi ~ U(0,1)^N, weights U(0,1) normalized. Deterministic in `seed`.
Gmm random_gmm(int N, int K, std::uint64_t seed);

/// Single zero-mean identity-covariance component.
Gmm standard_normal_gmm(int N);

/// Shifts and scales so that E[x] = 0 and E||x||^2 = N.
Gmm normalize_gmm(const Gmm& g);

/// n ancestral draws, one per column.
Batch sample(const Gmm& g, Eigen::Index n, Rng& rng);

/// Conditional statistics of x given y = x + n, n ~ N(0, eta_sq I),
/// with the per-component factorizations of C_k + eta_sq I prepared once.
class GmmPosterior {
 public:
  /// `with_sampling` additionally factors the per-component posterior
  /// covariances so that sample() can be used.
  GmmPosterior(const Gmm& g, double eta_sq, bool with_sampling = false);

  double eta_sq() const noexcept { return eta_sq_; }

  /// p(k | y), computed in log-space.
  Vector responsibilities(const Eigen::Ref<const Vector>& y) const;
  /// E[x | y] for one observation.
  Vector cme(const Eigen::Ref<const Vector>& y) const;
  /// E[x | y] for every column of `ys`.
  Batch cme_batch(const Batch& ys) const;
  /// One draw from p(x | y). Requires with_sampling.
  Vector sample(const Eigen::Ref<const Vector>& y, Rng& rng) const;

 private:
  Vector log_joint(const Eigen::Ref<const Vector>& y, std::vector<Vector>* gains) const;

  const Gmm* g_;
  double eta_sq_;
  std::vector<Eigen::LLT<Matrix>> chol_;  // C_k + eta_sq I
  std::vector<double> log_norm_;          // log p(k) - (N log 2pi + log det) / 2
  std::vector<Matrix> post_factor_;       // square root of posterior covariance
};

Vector responsibilities(const Gmm& g, const Vector& y, double eta_sq);

/// sum_k p(k|y) (mu_k + C_k (C_k + eta_sq I)^{-1} (y - mu_k))
Vector cme(const Gmm& g, const Vector& y, double eta_sq);

/// E[x_0 | x_t] under the diffusion marginal
/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
Vector cme_at_diffusion_step(const Gmm& g, const Vector& x_t, const NoiseSchedule& s, int t);
Batch cme_at_diffusion_step(const Gmm& g, const Batch& x_t, const NoiseSchedule& s, int t);

/// Text serialization (header `DMDEN-GMM v1`), bit-exact on reload.
void write_gmm(std::ostream& out, const Gmm& g);
Gmm read_gmm(std::istream& in);
void save_gmm(const std::filesystem::path& path, const Gmm& g);
Gmm load_gmm(const std::filesystem::path& path);

/// Sample sets (header `DMDEN-SAMPLES v1`, then `n N`, then one row per
/// sample).
void write_samples(std::ostream& out, const Batch& samples);
Batch read_samples(std::istream& in);

}  // namespace dmden
