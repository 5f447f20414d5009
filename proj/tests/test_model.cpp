#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dmden/diffusion.hpp"
#include "dmden/error.hpp"
#include "dmden/gmm.hpp"
#include "dmden/model.hpp"
#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"

using namespace dmden;

namespace {

// Single linear layer mapping [x, embedding] to x.
MlpNetwork identity_net(int dim, int embed) {
  MlpNetwork net(dim, embed, {});
  net.layers()[0].weight.leftCols(dim) = Matrix::Identity(dim, dim);
  return net;
}

// Batch whose forward-noised input equals its noise, so identity_net predicts eps exactly.
TrainingBatch identity_probe(const NoiseSchedule& s, int dim, int size, int t_min, Rng& rng) {
  TrainingBatch b;
  b.x0.resize(dim, size);
  b.eps = rng.normal_batch(dim, size);
  for (int j = 0; j < size; ++j) {
    const int t = rng.uniform_int(t_min, s.T());
    b.t.push_back(t);
    const double ab = s.alpha_bar(t);
    b.x0.col(j) = b.eps.col(j) * (1.0 - std::sqrt(1.0 - ab)) / std::sqrt(ab);
  }
  return b;
}

double max_abs_grad(const MlpGradients& g) {
  double m = 0.0;
  for (const auto& l : g) m = std::max({m, l.weight.cwiseAbs().maxCoeff(), l.bias.cwiseAbs().maxCoeff()});
  return m;
}

double grad_at(const MlpGradients& g, std::size_t index) {
  for (const auto& l : g) {
    const auto w = static_cast<std::size_t>(l.weight.size());
    if (index < w) {
      const auto cols = static_cast<std::size_t>(l.weight.cols());
      return l.weight(static_cast<Eigen::Index>(index / cols), static_cast<Eigen::Index>(index % cols));
    }
    index -= w;
    if (index < static_cast<std::size_t>(l.bias.size())) return l.bias(static_cast<Eigen::Index>(index));
    index -= static_cast<std::size_t>(l.bias.size());
  }
  throw std::out_of_range("grad index");
}

template <typename LossFn>
void check_gradient(LossFn loss_fn, int t_min, std::uint64_t seed) {
  const auto s = reference_schedule(100);
  Rng rng(seed);
  MlpNetwork net = MlpNetwork::random(3, 8, {10, 7}, rng);
  const Gmm g = normalize_gmm(random_gmm(3, 2, seed));
  const TrainingBatch batch = draw_training_batch(g, s, 16, t_min, rng);
  const LossResult r = loss_fn(net, batch, s);
  const double h = 1e-5;
  for (int k = 0; k < 64; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(net.parameter_count()) - 1));
    const double orig = net.parameter(i);
    net.parameter(i) = orig + h;
    const double up = loss_fn(net, batch, s).loss;
    net.parameter(i) = orig - h;
    const double down = loss_fn(net, batch, s).loss;
    net.parameter(i) = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_LE(std::abs(grad_at(r.grad, i) - fd) / std::max(1.0, std::abs(fd)), 1e-5) << "param " << i;
  }
}

}  // namespace

TEST(TimeEmbed, ZeroStepPattern) {
  const Vector e = time_embed(0, 8);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(e(2 * i), 0.0);
    EXPECT_EQ(e(2 * i + 1), 1.0);
  }
}

TEST(TimeEmbed, RangeAndValues) {
  for (int t = 1; t <= 1000; t += 37) {
    const Vector e = time_embed(t, 32);
    EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
  }
  const Vector e = time_embed(1, 4);
  EXPECT_NEAR(e(0), 0.84147098480789651, 1e-15);
  EXPECT_NEAR(e(1), 0.54030230586813972, 1e-15);
  EXPECT_NEAR(e(2), 0.0099998333341666647, 1e-15);
  EXPECT_NEAR(e(3), 0.99995000041666528, 1e-15);
  EXPECT_THROW(time_embed(1, 3), ParameterError);
  EXPECT_THROW(time_embed(0, reference_schedule(10), 4), IndexError);
}

TEST(Mlp, ZeroNetworkOutputsZero) {
  const MlpNetwork net(4, 8, {16, 16});
  EXPECT_EQ(net.forward(Vector(Vector::Ones(4)), 3), Vector(Vector::Zero(4)));
}

TEST(Mlp, IdentityBlock) {
  const MlpNetwork net = identity_net(3, 6);
  const Vector x = Vector::LinSpaced(3, -1.0, 2.0);
  EXPECT_EQ(net.forward(x, 17), x);
}

TEST(Mlp, FiniteAndRepeatable) {
  Rng rng(1);
  const MlpNetwork net = MlpNetwork::random(5, 16, {32, 32}, rng);
  const Vector x = rng.normal_vector(5);
  const Vector a = net.forward(x, 40), b = net.forward(x, 40);
  EXPECT_TRUE(a.allFinite());
  EXPECT_EQ(a, b);
  EXPECT_TRUE(net.all_finite());
}

TEST(Mlp, BatchOverloadsAgree) {
  Rng rng(2);
  const MlpNetwork net = MlpNetwork::random(3, 8, {12}, rng);
  const Batch x = rng.normal_batch(3, 4);
  const std::vector<int> ts{5, 5, 5, 5};
  const Batch a = net.forward(x, 5);
  const Batch b = net.forward(x, ts);
  for (int j = 0; j < 4; ++j) {
    EXPECT_LE((a.col(j) - b.col(j)).norm(), 1e-14);
    EXPECT_LE((a.col(j) - net.forward(Vector(x.col(j)), 5)).norm(), 1e-14);
  }
}

TEST(Mlp, DimensionMismatch) {
  const MlpNetwork net(3, 4, {5});
  EXPECT_THROW(net.forward(Vector(Vector::Ones(2)), 1), ParameterError);
  const std::vector<int> ts{1, 2};
  EXPECT_THROW(net.forward(Batch::Ones(3, 3), ts), ParameterError);
}

TEST(Mlp, ParameterCountMatchesLayerDims) {
  const MlpNetwork net(8, 32, {128, 128});
  EXPECT_EQ(net.layer_dims(), (std::vector<int>{40, 128, 128, 8}));
  EXPECT_EQ(net.parameter_count(), std::size_t(40 * 128 + 128 + 128 * 128 + 128 + 128 * 8 + 8));
}

TEST(LossEps, ExactPredictorHasZeroLossAndGradient) {
  const auto s = reference_schedule(100);
  Rng rng(3);
  const MlpNetwork net = identity_net(3, 4);
  const auto batch = identity_probe(s, 3, 32, 1, rng);
  const auto r = loss_eps(net, batch, s);
  EXPECT_LE(r.loss, 1e-26);
  EXPECT_LE(max_abs_grad(r.grad), 1e-12);
}

TEST(LossEps, MeanInvariantUnderDuplication) {
  const auto s = reference_schedule(100);
  Rng rng(4);
  const MlpNetwork net = MlpNetwork::random(2, 4, {8}, rng);
  const auto batch = draw_training_batch(normalize_gmm(random_gmm(2, 2, 1)), s, 10, 1, rng);
  TrainingBatch twice;
  twice.x0.resize(2, 20);
  twice.eps.resize(2, 20);
  twice.x0 << batch.x0, batch.x0;
  twice.eps << batch.eps, batch.eps;
  twice.t = batch.t;
  twice.t.insert(twice.t.end(), batch.t.begin(), batch.t.end());
  EXPECT_NEAR(loss_eps(net, twice, s).loss, loss_eps(net, batch, s).loss, 1e-14);
}

TEST(LossEps, GradientMatchesFiniteDifferences) { check_gradient(loss_eps, 1, 5); }

TEST(LossMu, GradientMatchesFiniteDifferences) { check_gradient(loss_mu, 2, 6); }

TEST(LossMu, ExactMeanHasZeroLoss) {
  const auto s = reference_schedule(100);
  Rng rng(7);
  const auto batch = identity_probe(s, 3, 32, 2, rng);
  EXPECT_LE(loss_mu(identity_net(3, 4), batch, s).loss, 1e-20);
}

TEST(LossMu, RejectsFirstStep) {
  const auto s = reference_schedule(10);
  Rng rng(8);
  auto batch = draw_training_batch(standard_normal_gmm(2), s, 4, 2, rng);
  batch.t[2] = 1;
  EXPECT_THROW(loss_mu(MlpNetwork(2, 4, {}), batch, s), ParameterError);
}

TEST(LossMu, WeightedNoiseLossIdentity) {
  const auto s = reference_schedule(300);
  Rng rng(9);
  const MlpNetwork net = MlpNetwork::random(4, 8, {16}, rng);
  const auto batch = draw_training_batch(normalize_gmm(random_gmm(4, 3, 2)), s, 64, 2, rng);
  double weighted = 0.0;
  for (int j = 0; j < 64; ++j) {
    const int t = batch.t[static_cast<std::size_t>(j)];
    const double ab = s.alpha_bar(t);
    const Vector xt = std::sqrt(ab) * batch.x0.col(j) + std::sqrt(1 - ab) * batch.eps.col(j);
    const double w = s.beta(t) * s.beta(t) / (2 * s.sigma_sq(t) * s.alpha(t) * (1 - ab));
    weighted += w * (batch.eps.col(j) - net.forward(xt, t)).squaredNorm();
  }
  weighted /= 64;
  const double mu = loss_mu(net, batch, s).loss;
  EXPECT_LE(std::abs(mu - weighted) / weighted, 1e-10);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto s = reference_schedule(10);
  Rng rng(10);
  const MlpNetwork net = MlpNetwork::random(2, 4, {8}, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  cfg.dataset_size = 256;
  cfg.validation_size = 64;
  const auto r = train(net, standard_normal_gmm(2), s, cfg);
  for (std::size_t i = 0; i < net.parameter_count(); ++i) EXPECT_EQ(r.net.parameter(i), net.parameter(i));
}

TEST(Train, SeedRepeatIsBitIdentical) {
  const auto s = reference_schedule(10);
  Rng rng(11);
  const MlpNetwork net = MlpNetwork::random(2, 4, {8}, rng);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.dataset_size = 512;
  cfg.validation_size = 64;
  const auto a = train(net, normalize_gmm(random_gmm(2, 2, 3)), s, cfg);
  const auto b = train(net, normalize_gmm(random_gmm(2, 2, 3)), s, cfg);
  for (std::size_t i = 0; i < net.parameter_count(); ++i) ASSERT_EQ(a.net.parameter(i), b.net.parameter(i));
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.validation_loss, b.validation_loss);
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  EXPECT_THROW(parse_loss_kind("l1"), ParameterError);
  EXPECT_EQ(parse_loss_kind("mu"), LossKind::Mu);
}

class TrainedStandardNormal : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    Rng rng(12);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.dataset_size = 12800;  // 100 batches per epoch, 2000 steps
    cfg.validation_size = 2048;
    cfg.learning_rate = 3e-3;
    result_ = new TrainResult(train(MlpNetwork::random(2, 16, {32, 32}, rng), standard_normal_gmm(2), schedule(), cfg));
  }
  static void TearDownTestSuite() {
    delete result_;
    result_ = nullptr;
  }
  static NoiseSchedule schedule() { return reference_schedule(100); }
  static TrainResult* result_;
};

TrainResult* TrainedStandardNormal::result_ = nullptr;

TEST_F(TrainedStandardNormal, HeldOutLossNearIrreducible) {
  const auto s = schedule();
  Rng rng(13);
  const auto batch = draw_training_batch(standard_normal_gmm(2), s, 20000, 1, rng);
  // Oracle predictor for this prior: eps* = sqrt(1 - abar_t) x_t.
  double oracle = 0.0;
  for (Eigen::Index j = 0; j < batch.x0.cols(); ++j) {
    const int t = batch.t[static_cast<std::size_t>(j)];
    const double ab = s.alpha_bar(t);
    const Vector xt = std::sqrt(ab) * batch.x0.col(j) + std::sqrt(1 - ab) * batch.eps.col(j);
    oracle += (batch.eps.col(j) - std::sqrt(1 - ab) * xt).squaredNorm();
  }
  oracle /= static_cast<double>(batch.x0.cols());
  const double learned = loss_eps(result_->net, batch, s).loss;
  EXPECT_LE(learned, 1.10 * oracle);
  EXPECT_LT(result_->validation_loss.back(), result_->validation_loss.front());
}

TEST_F(TrainedStandardNormal, StepApproximatesOracle) {
  const auto s = schedule();
  const MlpDenoiser d = as_denoiser(result_->net, s);
  Rng rng(14);
  for (int t : {2, 10, 50, 100}) {
    const Batch x = rng.normal_batch(2, 2000);
    const Batch got = d.step_batch(x, t);
    const Batch want = std::sqrt(s.alpha(t)) * x;
    EXPECT_LE((got - want).norm() / want.norm(), 0.05) << t;
  }
}

TEST(MlpDenoiser, ZeroNetworkStep) {
  const auto s = reference_schedule(50);
  const MlpDenoiser d = as_denoiser(MlpNetwork(3, 4, {6}), s);
  const Vector x = Vector::LinSpaced(3, -1.0, 1.0);
  for (int t : {1, 25, 50}) EXPECT_LE((d.step(x, t) - x / std::sqrt(s.alpha(t))).norm(), 1e-15);
  EXPECT_EQ(d.step(x, 25), d.step(x, 25));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(15);
  const MlpNetwork net = MlpNetwork::random(4, 8, {16, 12}, rng);
  std::stringstream buf;
  write_mlp(buf, net);
  EXPECT_EQ(buf.str().rfind("DMDEN-MLP v1\n", 0), 0u);
  const MlpNetwork back = read_mlp(buf);
  EXPECT_EQ(back.layer_dims(), net.layer_dims());
  const Batch x = rng.normal_batch(4, 8);
  EXPECT_EQ(back.forward(x, 7), net.forward(x, 7));
}

TEST(Checkpoint, RejectsBadInput) {
  std::stringstream bad("DMDEN-MLP v0\n");
  EXPECT_THROW(read_mlp(bad), IoError);
  std::stringstream truncated("DMDEN-MLP v1\n6 2\n1 0 0 0 0 0\n");
  EXPECT_THROW(read_mlp(truncated), IoError);
  EXPECT_THROW(load_mlp("/nonexistent/net.txt"), IoError);
}
