#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dmden/error.hpp"
#include "dmden/gmm.hpp"
#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"

using namespace dmden;

namespace {

Gmm one_d(std::vector<double> w, std::vector<double> mu, std::vector<double> var) {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < w.size(); ++k) {
    means.push_back(Vector::Constant(1, mu[k]));
    covs.push_back(Matrix::Constant(1, 1, var[k]));
  }
  return Gmm(std::move(w), std::move(means), std::move(covs));
}

double normal_pdf(double x, double m, double var) {
  return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// E[x | y] for a scalar mixture by composite Simpson quadrature of x p(x) p(y|x).
double quadrature_cme(const Gmm& g, double y, double eta_sq) {
  const double lo = -40.0, hi = 40.0;
  const int n = 400000;
  const double h = (hi - lo) / n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    double prior = 0.0;
    for (int k = 0; k < g.K(); ++k) prior += g.weights()[static_cast<std::size_t>(k)] * normal_pdf(x, g.mean(k)(0), g.cov(k)(0, 0));
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double p = w * prior * normal_pdf(y, x, eta_sq);
    num += x * p;
    den += p;
  }
  return num / den;
}

Gmm two_well_separated() {
  return Gmm({0.5, 0.5}, {Vector::Constant(2, -10.0), Vector::Constant(2, 10.0)},
             {Matrix::Identity(2, 2), Matrix::Identity(2, 2)});
}

}  // namespace

TEST(RandomGmm, SingleComponentHasUnitWeight) {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const Gmm g = random_gmm(1, 1, seed);
    EXPECT_EQ(g.K(), 1);
    EXPECT_EQ(g.N(), 1);
    EXPECT_EQ(g.weights()[0], 1.0);
  }
}

TEST(RandomGmm, CovarianceSpectrumAtLeastOne) {
  const Gmm g = random_gmm(8, 6, 3);
  for (int k = 0; k < g.K(); ++k) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g.cov(k));
    EXPECT_GE(eig.eigenvalues().minCoeff(), 1.0 - 1e-12);
    EXPECT_LE(eig.eigenvalues().maxCoeff(), 2.0 + 1e-12);
    EXPECT_EQ(g.cov(k), g.cov(k).transpose());
    EXPECT_LE((g.cov_factor(k) * g.cov_factor(k).transpose() - g.cov(k)).norm(), 1e-12);
  }
}

TEST(RandomGmm, DeterministicInSeed) {
  const Gmm a = random_gmm(5, 3, 42), b = random_gmm(5, 3, 42), c = random_gmm(5, 3, 43);
  EXPECT_EQ(a.weights(), b.weights());
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(a.mean(k), b.mean(k));
    EXPECT_EQ(a.cov(k), b.cov(k));
  }
  EXPECT_NE(a.weights(), c.weights());
}

TEST(RandomGmm, MeanSpreadMatchesVariance) {
  // Entries of the means are N(0, 1/sqrt(N)).
  const int N = 16, K = 400;
  const Gmm g = random_gmm(N, K, 8);
  double ss = 0.0;
  for (int k = 0; k < K; ++k) ss += g.mean(k).squaredNorm();
  const double var = ss / (N * K);
  EXPECT_NEAR(var, 0.25, 0.25 * 4.0 * std::sqrt(2.0 / (N * K)));
}

TEST(RandomGmm, EmpiricalComponentFrequencies) {
  const Gmm g = random_gmm(8, 4, 7);
  const int n = 1000000;
  Rng rng(2024);
  std::vector<double> counts(4, 0.0);
  for (int i = 0; i < n; ++i) {
    Rng probe = rng;
    // Replay the draw: one uniform for the component, then N normals.
    (void)probe.uniform();
    const Vector z = probe.normal_vector(8);
    const Vector x = sample(g, 1, rng).col(0);
    int best = -1;
    for (int k = 0; k < 4; ++k)
      if ((g.mean(k) + g.cov_factor(k) * z - x).norm() < 1e-12) best = k;
    ASSERT_GE(best, 0);
    counts[static_cast<std::size_t>(best)] += 1.0;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = g.weights()[k];
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts[k] / n, p, 3 * se) << k;
  }
}

TEST(Gmm, RejectsInvalidParameters) {
  EXPECT_THROW(Gmm({0.5, 0.6}, {Vector::Zero(1), Vector::Zero(1)}, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}),
               ParameterError);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 1e-9;
  EXPECT_THROW(Gmm({1.0}, {Vector::Zero(2)}, {asym}), ParameterError);
  Matrix indefinite = Matrix::Identity(2, 2);
  indefinite(1, 1) = -1.0;
  EXPECT_THROW(Gmm({1.0}, {Vector::Zero(2)}, {indefinite}), NumericError);
  EXPECT_THROW(random_gmm(0, 1, 0), ParameterError);
  EXPECT_THROW(random_gmm(1, 0, 0), ParameterError);
}

TEST(NormalizeGmm, StandardNormalUnchanged) {
  const Gmm g = normalize_gmm(standard_normal_gmm(3));
  EXPECT_LE(g.mean(0).norm(), 1e-15);
  EXPECT_LE((g.cov(0) - Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(NormalizeGmm, ShiftedScaledSingleComponent) {
  const Gmm g({1.0}, {Vector::Constant(4, 5.0)}, {2.0 * Matrix::Identity(4, 4)});
  const Gmm n = normalize_gmm(g);
  EXPECT_LE(n.mean(0).norm(), 1e-15);
  EXPECT_LE((n.cov(0) - Matrix::Identity(4, 4)).norm(), 1e-14);
}

TEST(NormalizeGmm, MomentsAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Gmm g = normalize_gmm(random_gmm(6, 5, seed));
    EXPECT_LE(g.mixture_mean().norm(), 1e-10);
    EXPECT_NEAR(g.second_moment() / 6.0, 1.0, 1e-10);
    const Gmm h = normalize_gmm(g);
    for (int k = 0; k < g.K(); ++k) {
      EXPECT_LE((h.mean(k) - g.mean(k)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((h.cov(k) - g.cov(k)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Sample, StandardNormalMean) {
  Rng rng(1);
  const Batch x = sample(standard_normal_gmm(3), 100000, rng);
  const Vector m = x.rowwise().mean();
  EXPECT_LE(m.cwiseAbs().maxCoeff(), 4.0 / std::sqrt(100000.0));
}

TEST(Sample, EmptyRequest) {
  Rng rng(1);
  const Rng before = rng;
  const Batch x = sample(random_gmm(3, 2, 0), 0, rng);
  EXPECT_EQ(x.cols(), 0);
  EXPECT_EQ(x.rows(), 3);
  EXPECT_TRUE(rng == before);
}

TEST(Sample, NormalizedEnergy) {
  const Gmm g = normalize_gmm(random_gmm(8, 4, 7));
  Rng rng(3);
  const Batch x = sample(g, 1000000, rng);
  const double e = x.squaredNorm() / (8.0 * 1000000);
  EXPECT_GE(e, 0.99);
  EXPECT_LE(e, 1.01);
}

TEST(Sample, DeterministicGivenRng) {
  const Gmm g = random_gmm(4, 3, 1);
  Rng a(77), b(77);
  EXPECT_EQ(sample(g, 50, a), sample(g, 50, b));
}

TEST(Responsibilities, SingleComponent) {
  const Vector r = responsibilities(random_gmm(3, 1, 2), Vector::Ones(3), 0.3);
  ASSERT_EQ(r.size(), 1);
  EXPECT_EQ(r(0), 1.0);
}

TEST(Responsibilities, WellSeparated) {
  const Vector r = responsibilities(two_well_separated(), Vector::Constant(2, 10.0), 1e-3);
  EXPECT_GE(r(1), 1.0 - 1e-6);
}

TEST(Responsibilities, SymmetricMidpoint) {
  const Vector r = responsibilities(two_well_separated(), Vector::Zero(2), 0.7);
  EXPECT_NEAR(r(0), 0.5, 1e-15);
  EXPECT_NEAR(r(1), 0.5, 1e-15);
}

TEST(Responsibilities, SumToOneAcrossNoiseLevels) {
  Rng rng(9);
  const Gmm g = normalize_gmm(random_gmm(8, 4, 7));
  for (double eta_sq : {0.0, 1e-10, 1e-3, 1.0, 1e3, 1e10}) {
    for (int i = 0; i < 20; ++i) {
      const Vector y = 5.0 * rng.normal_vector(8);
      const Vector r = responsibilities(g, y, eta_sq);
      EXPECT_NEAR(r.sum(), 1.0, 1e-12);
      EXPECT_GE(r.minCoeff(), 0.0);
    }
  }
}

TEST(Cme, ScalarLmmse) {
  const Vector y = (Vector(3) << 1.0, -2.0, 0.5).finished();
  const Vector x = cme(standard_normal_gmm(3), y, 1.0);
  EXPECT_LE((x - 0.5 * y).norm(), 1e-15);
}

TEST(Cme, PriorMeanLimit) {
  const Gmm g = random_gmm(4, 3, 5);
  const Vector x = cme(g, Vector::Ones(4), 1e12);
  EXPECT_LE((x - g.mixture_mean()).norm(), 1e-5 * g.mixture_mean().norm());
}

TEST(Cme, QuadratureFixedInstance) {
  // High-precision quadrature reference for this instance.
  const Gmm g = one_d({0.3, 0.7}, {-1.0, 2.0}, {0.5, 1.5});
  const double x = cme(g, Vector::Constant(1, 0.4), 0.8)(0);
  EXPECT_NEAR(x, 0.50446196033325398, 1e-13);
}

TEST(Cme, QuadratureRandomInstances) {
  Rng rng(31);
  for (int i = 0; i < 10; ++i) {
    const double w = rng.uniform(0.1, 0.9);
    const Gmm g = one_d({w, 1.0 - w}, {rng.uniform(-3, 0), rng.uniform(0, 3)}, {rng.uniform(0.2, 2), rng.uniform(0.2, 2)});
    const double y = rng.uniform(-3, 3);
    const double eta_sq = db_to_linear(rng.uniform(-15, 10));
    const double ref = quadrature_cme(g, y, eta_sq);
    const double got = cme(g, Vector::Constant(1, y), eta_sq)(0);
    EXPECT_LE(std::abs(got - ref), 1e-6 * std::max(1.0, std::abs(ref))) << i;
  }
}

TEST(Cme, ImportanceSamplingOracle) {
  // Self-normalized importance estimate of E[x | y] with prior proposals.
  Rng rng(4321);
  const int n = 1000000;
  for (int trial = 0; trial < 20; ++trial) {
    const int N = 1 + trial % 4;
    const Gmm g = normalize_gmm(random_gmm(N, 3, 100 + trial));
    const double eta_sq = db_to_linear(rng.uniform(-5.0, 5.0));
    const Vector y = sample(g, 1, rng).col(0) + std::sqrt(eta_sq) * rng.normal_vector(N);
    const Batch xs = sample(g, n, rng);
    Eigen::ArrayXd logw = -0.5 * (xs.colwise() - y).colwise().squaredNorm().transpose().array() / eta_sq;
    const Eigen::ArrayXd w = (logw - logw.maxCoeff()).exp();
    const double sw = w.sum();
    const Vector est = xs * w.matrix() / sw;
    const Vector ref = cme(g, y, eta_sq);
    for (int i = 0; i < N; ++i) {
      // Delta-method standard error of the ratio estimator.
      const Eigen::ArrayXd r = w * (xs.row(i).transpose().array() - est(i));
      const double se = std::sqrt((r.square().sum())) / sw;
      EXPECT_NEAR(ref(i), est(i), 3.0 * se + 1e-12) << "trial " << trial << " coord " << i;
    }
  }
}

TEST(CmeAtDiffusionStep, NoiselessChannel) {
  const NoiseSchedule s({1e-12});
  const Gmm g = random_gmm(3, 2, 4);
  const Vector x = (Vector(3) << 0.3, -1.0, 2.0).finished();
  EXPECT_LE((cme_at_diffusion_step(g, x, s, 1) - x).norm(), 1e-9);
}

TEST(CmeAtDiffusionStep, StandardNormalPrior) {
  const auto s = build_linear_schedule(100, 1e-4, 0.1);
  const Gmm g = standard_normal_gmm(4);
  Rng rng(2);
  for (int t : {1, 10, 50, 100}) {
    const Vector x = rng.normal_vector(4);
    const Vector got = cme_at_diffusion_step(g, x, s, t);
    EXPECT_LE((got - std::sqrt(s.alpha_bar(t)) * x).norm(), 1e-14 * x.norm()) << t;
  }
}

TEST(CmeAtDiffusionStep, StandardNormalRegressionOracle) {
  // Least-squares slope of x_0 on x_t over forward samples estimates sqrt(abar_t).
  const auto s = build_linear_schedule(100, 1e-4, 0.1);
  Rng rng(12);
  const int n = 200000;
  const int t = 30;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x0 = rng.normal();
    const double xt = std::sqrt(s.alpha_bar(t)) * x0 + std::sqrt(1 - s.alpha_bar(t)) * rng.normal();
    sxy += x0 * xt;
    sxx += xt * xt;
  }
  const double slope = sxy / sxx;
  const double pred = cme_at_diffusion_step(standard_normal_gmm(1), Vector(Vector::Ones(1)), s, t)(0);
  EXPECT_NEAR(slope, pred, 4.0 * std::sqrt((1 - s.alpha_bar(t)) / n));
}

TEST(CmeAtDiffusionStep, ZeroSnrLimit) {
  const auto s = build_linear_schedule(4000, 1e-4, 0.02);
  ASSERT_LT(s.alpha_bar(4000), 1e-16);
  const Gmm g = random_gmm(4, 3, 1);
  const Vector x = cme_at_diffusion_step(g, Vector(Vector::Ones(4)), s, 4000);
  EXPECT_LE((x - g.mixture_mean()).norm(), 1e-6);
}

TEST(CmeAtDiffusionStep, ScaleConsistency) {
  const Gmm g = normalize_gmm(random_gmm(5, 4, 21));
  Rng rng(8);
  for (double eta_sq : {0.01, 0.3, 1.0, 4.0}) {
    const NoiseSchedule s({eta_sq / (1.0 + eta_sq)});
    const Vector y = 2.0 * rng.normal_vector(5);
    const Vector a = cme(g, y, eta_sq);
    const Vector b = cme_at_diffusion_step(g, Vector(y / std::sqrt(1.0 + eta_sq)), s, 1);
    EXPECT_LE((a - b).norm(), 1e-10 * a.norm()) << eta_sq;
  }
}

TEST(CmeAtDiffusionStep, UnderflowIsNumericError) {
  const auto s = build_constant_schedule(400, 0.9);
  ASSERT_EQ(s.alpha_bar(400), 0.0);
  EXPECT_THROW(cme_at_diffusion_step(standard_normal_gmm(1), Vector(Vector::Ones(1)), s, 400), NumericError);
}

TEST(CmeAtDiffusionStep, BatchMatchesColumns) {
  const auto s = build_linear_schedule(50, 1e-4, 0.2);
  const Gmm g = random_gmm(3, 4, 2);
  Rng rng(6);
  const Batch x = rng.normal_batch(3, 7);
  const Batch b = cme_at_diffusion_step(g, x, s, 17);
  for (int j = 0; j < 7; ++j) {
    const Vector c = cme_at_diffusion_step(g, Vector(x.col(j)), s, 17);
    EXPECT_LE((b.col(j) - c).norm(), 1e-13 * c.norm()) << j;
  }
}

TEST(GmmPosterior, SamplesMatchPosteriorMean) {
  const Gmm g = normalize_gmm(random_gmm(2, 3, 5));
  const GmmPosterior post(g, 0.5, true);
  const Vector y = (Vector(2) << 0.4, -0.9).finished();
  Rng rng(1);
  const int n = 200000;
  Batch xs(2, n);
  for (int i = 0; i < n; ++i) xs.col(i) = post.sample(y, rng);
  const Vector m = xs.rowwise().mean();
  const Vector sd = ((xs.colwise() - m).array().square().rowwise().sum() / (n - 1)).sqrt();
  const Vector ref = post.cme(y);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(m(i), ref(i), 4.0 * sd(i) / std::sqrt(double(n)));
  EXPECT_THROW(GmmPosterior(g, 0.5).sample(y, rng), ParameterError);
}

TEST(GmmSerialization, RoundTripIsBitExact) {
  const Gmm g = normalize_gmm(random_gmm(5, 3, 11));
  std::stringstream buf;
  write_gmm(buf, g);
  const Gmm h = read_gmm(buf);
  EXPECT_EQ(h.weights(), g.weights());
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(h.mean(k), g.mean(k));
    EXPECT_EQ(h.cov(k), g.cov(k));
  }
}

TEST(GmmSerialization, HeaderLayout) {
  std::stringstream buf;
  write_gmm(buf, standard_normal_gmm(2));
  EXPECT_EQ(buf.str(), "DMDEN-GMM v1\n1 2\n1\n0 0\n1 0\n0 1\n");
}

TEST(GmmSerialization, RejectsBadInput) {
  std::stringstream bad("DMDEN-GMM v2\n1 1\n1\n0\n1\n");
  EXPECT_THROW(read_gmm(bad), IoError);
  std::stringstream truncated("DMDEN-GMM v1\n1 2\n1\n0 0\n1 0\n");
  EXPECT_THROW(read_gmm(truncated), IoError);
  EXPECT_THROW(load_gmm("/nonexistent/prior.txt"), IoError);
}

TEST(SampleSerialization, RoundTripAndEmpty) {
  Rng rng(3);
  const Batch x = rng.normal_batch(3, 4);
  std::stringstream buf;
  write_samples(buf, x);
  EXPECT_EQ(read_samples(buf), x);
  std::stringstream empty;
  write_samples(empty, Batch(3, 0));
  EXPECT_EQ(empty.str(), "DMDEN-SAMPLES v1\n0 3\n");
  EXPECT_EQ(read_samples(empty).cols(), 0);
}
