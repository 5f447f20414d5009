#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dmden/diffusion.hpp"
#include "dmden/gmm.hpp"
#include "dmden/rng.hpp"
#include "dmden/schedule.hpp"
#include "dmden/types.hpp"

namespace dmden {

/// Sinusoidal embedding: entries 2i, 2i+1 are sin/cos(t / 10000^(2i/E)).
Vector time_embed(int t, int width);
/// Same, with the step checked against the schedule range.
Vector time_embed(int t, const NoiseSchedule& s, int width);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Gradients share the layout of the network parameters.
using MlpGradients = std::vector<DenseLayer>;

/// Activations recorded by a forward pass, consumed by backward().
struct MlpTape {
  std::vector<Batch> inputs;          // input of every layer
  std::vector<Batch> preactivations;  // hidden layers only
};

/// Fully connected noise predictor eps(x_t, t): the input x_t is
/// concatenated with time_embed(t), passed through SiLU hidden layers,
/// and mapped linearly to N outputs.
class MlpNetwork {
 public:
  /// All parameters zero.
  MlpNetwork(int dim, int embed_width, std::vector<int> hidden);
  /// Weights N(0, 1/fan_in), biases zero.
  static MlpNetwork random(int dim, int embed_width, std::vector<int> hidden, Rng& rng);

  int dim() const noexcept { return dim_; }
  int embed_width() const noexcept { return embed_; }
  /// [N + E, hidden..., N]
  std::vector<int> layer_dims() const;
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  /// Flat view over all parameters in checkpoint order (layer by layer,
  /// weights row-major then biases).
  double parameter(std::size_t index) const;
  double& parameter(std::size_t index);

  Vector forward(const Vector& x_t, int t) const;
  Batch forward(const Batch& x_t, int t) const;
  Batch forward(const Batch& x_t, std::span<const int> t) const;
  Batch forward_with_tape(const Batch& x_t, std::span<const int> t, MlpTape& tape) const;

  /// Parameter gradient given dLoss/dOutput for the taped pass.
  MlpGradients backward(const MlpTape& tape, const Batch& grad_output) const;

  bool all_finite() const;

 private:
  Batch run(Batch input, MlpTape* tape) const;
  Batch assemble_input(const Batch& x_t, std::span<const int> t) const;

  int dim_;
  int embed_;
  std::vector<DenseLayer> layers_;
};

/// Forward-noising inputs of one training batch (one column per element).
struct TrainingBatch {
  Batch x0;
  std::vector<int> t;
  Batch eps;
};

struct LossResult {
  double loss = 0.0;
  MlpGradients grad;
};

/// mean_j || eps_j - eps_theta(x_t, t_j) ||^2 (unweighted noise loss).
LossResult loss_eps(const MlpNetwork& net, const TrainingBatch& batch, const NoiseSchedule& s);

/// mean_j || mu~(x_t, x0) - mu_theta(x_t, t_j) ||^2 / (2 sigma_t^2).
/// Throws ParameterError if any t_j == 1.
LossResult loss_mu(const MlpNetwork& net, const TrainingBatch& batch, const NoiseSchedule& s);

enum class LossKind { Eps, Mu };
LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct TrainConfig {
  int batch_size = 128;
  int epochs = 60;
  double learning_rate = 1e-3;
  /// Learning rate at the last epoch relative to the initial one
  /// (cosine decay in between). 1 keeps the rate constant.
  double final_lr_factor = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int dataset_size = 100000;
  int validation_size = 4096;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::Eps;

  void validate() const;
};

/// Adam with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(const MlpNetwork& net, double beta1, double beta2, double epsilon);
  void step(MlpNetwork& net, const MlpGradients& grad, double learning_rate);

 private:
  double beta1_, beta2_, epsilon_;
  long long count_ = 0;
  MlpGradients m_, v_;
};

struct TrainResult {
  MlpNetwork net;
  /// Mean training loss of every epoch.
  std::vector<double> epoch_loss;
  /// Loss on a fixed validation batch; entry 0 is before training.
  std::vector<double> validation_loss;
};

/// Draws a training set from `g`, then runs `cfg.epochs` passes of Adam
/// over shuffled minibatches with fresh steps and noise per batch.
/// Deterministic in cfg.seed. Throws NumericError on a non-finite loss.
TrainResult train(MlpNetwork net, const Gmm& g, const NoiseSchedule& s, const TrainConfig& cfg);

/// Fresh forward-noising batch: x0 from g, t uniform in [t_min, T], eps ~ N(0, I).
TrainingBatch draw_training_batch(const Gmm& g, const NoiseSchedule& s, int size, int t_min, Rng& rng);

/// Reverse step built from the noise prediction.
class MlpDenoiser final : public StepwiseDenoiser {
 public:
  MlpDenoiser(MlpNetwork net, NoiseSchedule schedule);

  const NoiseSchedule& schedule() const override { return schedule_; }
  int dimension() const override { return net_.dim(); }
  const MlpNetwork& network() const noexcept { return net_; }

  Batch step_batch(const Batch& x_t, int t) const override;

 private:
  MlpNetwork net_;
  NoiseSchedule schedule_;
};

MlpDenoiser as_denoiser(MlpNetwork net, NoiseSchedule s);

/// Checkpoint text format (header `DMDEN-MLP v1`), bit-exact on reload.
void write_mlp(std::ostream& out, const MlpNetwork& net);
MlpNetwork read_mlp(std::istream& in);
void save_mlp(const std::filesystem::path& path, const MlpNetwork& net);
MlpNetwork load_mlp(const std::filesystem::path& path);

}  // namespace dmden
