#include "dmden/gmm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "dmden/error.hpp"
#include "dmden/textio.hpp"

namespace dmden {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

Gmm::Gmm(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covs)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
  if (weights_.empty()) throw ParameterError("gmm: K must be >= 1");
  if (means_.size() != weights_.size() || covs_.size() != weights_.size())
    throw ParameterError("gmm: weights, means and covariances disagree on K");
  const Eigen::Index n = means_.front().size();
  if (n < 1) throw ParameterError("gmm: N must be >= 1");

  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("gmm: weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ParameterError("gmm: weights must sum to 1");

  factors_.reserve(covs_.size());
  for (std::size_t k = 0; k < covs_.size(); ++k) {
    const Matrix& c = covs_[k];
    if (means_[k].size() != n || c.rows() != n || c.cols() != n)
      throw ParameterError("gmm: component " + std::to_string(k) + " has inconsistent dimension");
    if (!means_[k].allFinite() || !c.allFinite())
      throw ParameterError("gmm: component " + std::to_string(k) + " is not finite");
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ParameterError("gmm: covariance " + std::to_string(k) + " is not symmetric");
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success)
      throw NumericError("gmm: covariance " + std::to_string(k) + " is not positive definite");
    factors_.push_back(llt.matrixL());
  }
}

Vector Gmm::mixture_mean() const {
  Vector m = Vector::Zero(N());
  for (int k = 0; k < K(); ++k) m += weights_[k] * means_[k];
  return m;
}

double Gmm::second_moment() const {
  double e = 0.0;
  for (int k = 0; k < K(); ++k) e += weights_[k] * (covs_[k].trace() + means_[k].squaredNorm());
  return e;
}

Gmm random_gmm(int N, int K, std::uint64_t seed) {
  if (N < 1) throw ParameterError("random_gmm: N must be >= 1");
  if (K < 1) throw ParameterError("random_gmm: K must be >= 1");
  Rng rng(seed);
  const double mean_std = std::pow(static_cast<double>(N), -0.25);

  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (int k = 0; k < K; ++k) {
    Vector mu(N);
    for (int i = 0; i < N; ++i) mu[i] = mean_std * rng.normal();

    Matrix S(N, N);
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i) S(i, j) = rng.uniform();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S.transpose() * S);
    if (eig.info() != Eigen::Success) throw NumericError("random_gmm: eigendecomposition failed");
    const Matrix& V = eig.eigenvectors();

    Vector spectrum(N);
    for (int i = 0; i < N; ++i) spectrum[i] = 1.0 + rng.uniform();
    Matrix C = V * spectrum.asDiagonal() * V.transpose();
    C = 0.5 * (C + C.transpose()).eval();

    means.push_back(std::move(mu));
    covs.push_back(std::move(C));
  }

  std::vector<double> weights(static_cast<std::size_t>(K));
  for (auto& w : weights) w = rng.uniform();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= total;
  if (K == 1) weights[0] = 1.0;

  return Gmm(std::move(weights), std::move(means), std::move(covs));
}

Gmm standard_normal_gmm(int N) {
  if (N < 1) throw ParameterError("standard_normal_gmm: N must be >= 1");
  return Gmm({1.0}, {Vector::Zero(N)}, {Matrix::Identity(N, N)});
}

Gmm normalize_gmm(const Gmm& g) {
  const Vector m = g.mixture_mean();
  double centered = 0.0;
  for (int k = 0; k < g.K(); ++k)
    centered += g.weights()[k] * (g.cov(k).trace() + (g.mean(k) - m).squaredNorm());
  if (!(centered > 0.0) || !std::isfinite(centered))
    throw NumericError("normalize_gmm: mixture has zero second moment");

  const double c_sq = static_cast<double>(g.N()) / centered;
  const double c = std::sqrt(c_sq);
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (int k = 0; k < g.K(); ++k) {
    means.push_back(c * (g.mean(k) - m));
    Matrix C = c_sq * g.cov(k);
    C = 0.5 * (C + C.transpose()).eval();
    covs.push_back(std::move(C));
  }
  return Gmm(g.weights(), std::move(means), std::move(covs));
}

Batch sample(const Gmm& g, Eigen::Index n, Rng& rng) {
  if (n < 0) throw ParameterError("sample: negative count");
  Batch out(g.N(), n);
  std::vector<double> cumulative(g.weights().size());
  std::partial_sum(g.weights().begin(), g.weights().end(), cumulative.begin());
  for (Eigen::Index j = 0; j < n; ++j) {
    const double u = rng.uniform() * cumulative.back();
    int k = 0;
    while (k + 1 < g.K() && u >= cumulative[static_cast<std::size_t>(k)]) ++k;
    const Vector z = rng.normal_vector(g.N());
    out.col(j) = g.mean(k) + g.cov_factor(k) * z;
  }
  return out;
}

// ---------------------------------------------------------------------------

GmmPosterior::GmmPosterior(const Gmm& g, double eta_sq, bool with_sampling)
    : g_(&g), eta_sq_(eta_sq) {
  if (!(eta_sq >= 0.0) || !std::isfinite(eta_sq))
    throw ParameterError("posterior: eta_sq must be finite and >= 0");
  const int N = g.N();
  chol_.reserve(static_cast<std::size_t>(g.K()));
  log_norm_.reserve(static_cast<std::size_t>(g.K()));
  for (int k = 0; k < g.K(); ++k) {
    Matrix cy = g.cov(k);
    cy.diagonal().array() += eta_sq;
    Eigen::LLT<Matrix> llt(cy);
    if (llt.info() != Eigen::Success)
      throw NumericError("posterior: C_k + eta^2 I is not positive definite (k = " +
                         std::to_string(k) + ")");
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    log_norm_.push_back(std::log(g.weights()[k]) - 0.5 * (N * kLog2Pi + log_det));
    chol_.push_back(std::move(llt));
  }

  if (with_sampling) {
    post_factor_.reserve(static_cast<std::size_t>(g.K()));
    for (int k = 0; k < g.K(); ++k) {
      // C - C (C + eta^2 I)^{-1} C
      const Matrix& c = g.cov(k);
      Matrix p = c - c * chol_[static_cast<std::size_t>(k)].solve(c);
      p = 0.5 * (p + p.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
      const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      post_factor_.push_back(eig.eigenvectors() * root.asDiagonal());
    }
  }
}

Vector GmmPosterior::log_joint(const Eigen::Ref<const Vector>& y,
                               std::vector<Vector>* gains) const {
  const int K = g_->K();
  if (y.size() != g_->N()) throw ParameterError("posterior: observation has wrong dimension");
  Vector lj(K);
  if (gains) gains->resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto& llt = chol_[static_cast<std::size_t>(k)];
    Vector w = llt.solve(y - g_->mean(k));
    lj[k] = log_norm_[static_cast<std::size_t>(k)] - 0.5 * (y - g_->mean(k)).dot(w);
    if (gains) (*gains)[static_cast<std::size_t>(k)] = std::move(w);
  }
  return lj;
}

Vector GmmPosterior::responsibilities(const Eigen::Ref<const Vector>& y) const {
  const Vector lj = log_joint(y, nullptr);
  const double lse = log_sum_exp(lj);
  if (!std::isfinite(lse)) throw NumericError("responsibilities: all log-likelihoods are -inf");
  return (lj.array() - lse).exp().matrix();
}

Vector GmmPosterior::cme(const Eigen::Ref<const Vector>& y) const {
  std::vector<Vector> gains;
  const Vector lj = log_joint(y, &gains);
  const double lse = log_sum_exp(lj);
  if (!std::isfinite(lse)) throw NumericError("cme: all log-likelihoods are -inf");
  Vector out = Vector::Zero(g_->N());
  for (int k = 0; k < g_->K(); ++k) {
    const double r = std::exp(lj[k] - lse);
    if (r == 0.0) continue;
    out += r * (g_->mean(k) + g_->cov(k) * gains[static_cast<std::size_t>(k)]);
  }
  return out;
}

Batch GmmPosterior::cme_batch(const Batch& ys) const {
  const int K = g_->K();
  const Eigen::Index B = ys.cols();
  if (ys.rows() != g_->N()) throw ParameterError("posterior: observations have wrong dimension");

  Matrix log_joint(K, B);
  std::vector<Batch> estimates(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const Batch centered = ys.colwise() - g_->mean(k);
    const Batch w = chol_[static_cast<std::size_t>(k)].solve(centered);
    log_joint.row(k) = (log_norm_[static_cast<std::size_t>(k)] -
                        0.5 * centered.cwiseProduct(w).colwise().sum().array())
                           .matrix();
    estimates[static_cast<std::size_t>(k)] = (g_->cov(k) * w).colwise() + g_->mean(k);
  }

  Batch out = Batch::Zero(g_->N(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const double m = log_joint.col(j).maxCoeff();
    if (!std::isfinite(m)) throw NumericError("cme: all log-likelihoods are -inf");
    const Vector r = (log_joint.col(j).array() - m).exp().matrix();
    const double z = r.sum();
    for (int k = 0; k < K; ++k)
      if (r[k] != 0.0) out.col(j) += (r[k] / z) * estimates[static_cast<std::size_t>(k)].col(j);
  }
  return out;
}

Vector GmmPosterior::sample(const Eigen::Ref<const Vector>& y, Rng& rng) const {
  if (post_factor_.empty())
    throw ParameterError("posterior: constructed without sampling support");
  std::vector<Vector> gains;
  const Vector lj = log_joint(y, &gains);
  const double lse = log_sum_exp(lj);
  if (!std::isfinite(lse)) throw NumericError("posterior: all log-likelihoods are -inf");

  const double u = rng.uniform();
  double acc = 0.0;
  int k = 0;
  for (; k < g_->K() - 1; ++k) {
    acc += std::exp(lj[k] - lse);
    if (u < acc) break;
  }
  const auto kk = static_cast<std::size_t>(k);
  const Vector mean = g_->mean(k) + g_->cov(k) * gains[kk];
  return mean + post_factor_[kk] * rng.normal_vector(g_->N());
}

Vector responsibilities(const Gmm& g, const Vector& y, double eta_sq) {
  return GmmPosterior(g, eta_sq).responsibilities(y);
}

Vector cme(const Gmm& g, const Vector& y, double eta_sq) { return GmmPosterior(g, eta_sq).cme(y); }

namespace {

double diffusion_noise_ratio(const NoiseSchedule& s, int t, double& scale) {
  const double ab = s.alpha_bar(t);
  if (!(ab > std::numeric_limits<double>::min()))
    throw NumericError("cme_at_diffusion_step: alpha_bar underflow at step " + std::to_string(t));
  scale = 1.0 / std::sqrt(ab);
  return s.one_minus_alpha_bar(t) / ab;
}

}  // namespace

Vector cme_at_diffusion_step(const Gmm& g, const Vector& x_t, const NoiseSchedule& s, int t) {
  double scale = 0.0;
  const double eta_sq = diffusion_noise_ratio(s, t, scale);
  return GmmPosterior(g, eta_sq).cme(Vector(scale * x_t));
}

Batch cme_at_diffusion_step(const Gmm& g, const Batch& x_t, const NoiseSchedule& s, int t) {
  double scale = 0.0;
  const double eta_sq = diffusion_noise_ratio(s, t, scale);
  return GmmPosterior(g, eta_sq).cme_batch(scale * x_t);
}

// ---------------------------------------------------------------------------

void write_gmm(std::ostream& out, const Gmm& g) {
  out << "DMDEN-GMM v1\n" << g.K() << ' ' << g.N() << '\n';
  out << textio::join(g.weights()) << '\n';
  for (int k = 0; k < g.K(); ++k) {
    out << textio::join(g.mean(k)) << '\n';
    for (int i = 0; i < g.N(); ++i) out << textio::join(g.cov(k).row(i)) << '\n';
  }
}

Gmm read_gmm(std::istream& in) {
  if (textio::read_line(in, "gmm header") != "DMDEN-GMM v1")
    throw IoError("gmm: missing 'DMDEN-GMM v1' header");
  const auto dims = textio::split_ws(textio::read_line(in, "gmm dimensions"));
  if (dims.size() != 2) throw IoError("gmm: expected 'K N' line");
  const auto K = textio::parse_int(dims[0]);
  const auto N = textio::parse_int(dims[1]);
  if (K < 1 || N < 1) throw IoError("gmm: K and N must be positive");

  auto weights = textio::read_doubles(in, static_cast<std::size_t>(K), "gmm weights");
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (long long k = 0; k < K; ++k) {
    const auto mu = textio::read_doubles(in, static_cast<std::size_t>(N), "gmm mean");
    means.push_back(Eigen::Map<const Vector>(mu.data(), N));
    Matrix C(N, N);
    for (long long i = 0; i < N; ++i) {
      const auto row = textio::read_doubles(in, static_cast<std::size_t>(N), "gmm covariance");
      for (long long j = 0; j < N; ++j) C(i, j) = row[static_cast<std::size_t>(j)];
    }
    covs.push_back(std::move(C));
  }
  return Gmm(std::move(weights), std::move(means), std::move(covs));
}

void save_gmm(const std::filesystem::path& path, const Gmm& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_gmm(out, g);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Gmm load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_gmm(in);
}

void write_samples(std::ostream& out, const Batch& samples) {
  out << "DMDEN-SAMPLES v1\n" << samples.cols() << ' ' << samples.rows() << '\n';
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out << textio::join(samples.col(j)) << '\n';
}

Batch read_samples(std::istream& in) {
  if (textio::read_line(in, "samples header") != "DMDEN-SAMPLES v1")
    throw IoError("samples: missing 'DMDEN-SAMPLES v1' header");
  const auto dims = textio::split_ws(textio::read_line(in, "samples dimensions"));
  if (dims.size() != 2) throw IoError("samples: expected 'n N' line");
  const auto n = textio::parse_int(dims[0]);
  const auto N = textio::parse_int(dims[1]);
  if (n < 0 || N < 1) throw IoError("samples: invalid dimensions");
  Batch out(N, n);
  for (long long j = 0; j < n; ++j) {
    const auto row = textio::read_doubles(in, static_cast<std::size_t>(N), "sample row");
    out.col(j) = Eigen::Map<const Vector>(row.data(), N);
  }
  return out;
}

}  // namespace dmden
