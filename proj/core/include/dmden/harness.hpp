#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmden/config.hpp"
#include "dmden/diffusion.hpp"
#include "dmden/gmm.hpp"
#include "dmden/model.hpp"
#include "dmden/report.hpp"
#include "dmden/schedule.hpp"

namespace dmden {

enum class ExperimentKind {
  SnrSweep,
  TSweep,
  Trajectory,
  Mismatch,
  ResampleCompare,
  Lipschitz,
  Bounds,
  Bench,
  Train,
  Generate,
};

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct PriorSpec {
  /// random | standard_normal | file
  std::string source = "random";
  std::string file;
  int N = 8;
  int K = 4;
  std::uint64_t seed = 7;
  bool normalize = true;
};

struct ScheduleSpec {
  int T = 1000;
  double beta1 = 1e-4;
  double betaT = 0.01;
  double gamma = 1.0;

  NoiseSchedule build() const;
};

struct ModelSpec {
  int embed = 32;
  std::vector<int> hidden{128, 128};
  /// Checkpoint path; `{T}` is replaced by the step count in t-sweeps.
  std::string checkpoint;
  std::uint64_t init_seed = 11;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::SnrSweep;
  PriorSpec prior;
  ScheduleSpec schedule;
  ModelSpec model;
  TrainConfig train;
  /// oracle | mlp
  std::string denoiser = "oracle";
  std::vector<double> snr_db{-20, -15, -10, -5, 0, 5, 10, 15, 20, 25, 30};
  std::vector<int> T_values{5, 10, 50, 100, 300, 1000};
  int test_size = 10000;
  double mismatch_low_db = -3.0;
  double mismatch_high_db = 3.0;
  std::uint64_t seed = 0;
  /// Wall-time columns make a CSV run-dependent, so they are opt-in
  /// everywhere except the benchmark.
  bool timing = false;
  int bench_batch = 512;
  int bench_repeats = 5;
  int generate_count = 1000;
  double bound_xi = 0.0;
  std::optional<double> bound_delta;
  std::optional<double> bound_L1;
  std::string out;
  Config source;

  /// Reads every key, applying defaults; unknown keys are a ConfigError.
  static ExperimentConfig from_config(ExperimentKind kind, const Config& cfg);
  void validate() const;
};

Gmm build_prior(const PriorSpec& spec);

/// Oracle or checkpoint-backed denoiser. A missing checkpoint is an IoError.
std::unique_ptr<StepwiseDenoiser> build_denoiser(const ExperimentConfig& cfg, const Gmm& prior,
                                                 const NoiseSchedule& s,
                                                 const std::string& checkpoint);

// -- metrics ----------------------------------------------------------------

/// sum ||x_i - xhat_i||^2 / sum ||x_i||^2
double nmse(const Batch& truth, const Batch& estimates);

struct NmseStat {
  double nmse = 0.0;
  double se = 0.0;
};
/// NMSE with its ratio-estimator standard error.
NmseStat nmse_with_se(const Batch& truth, const Batch& estimates);
/// Standard error of nmse(a) - nmse(b) on the same test set (paired).
double nmse_difference_se(const Batch& truth, const Batch& a, const Batch& b);

// -- evaluation core --------------------------------------------------------

struct PointOptions {
  bool ls = true;
  bool cme = true;
  bool cme_step = true;
  bool det = true;
  bool resamp = false;
  bool mismatch = false;
  bool trajectory = false;
  bool timing = false;
  double mismatch_low_db = -3.0;
  double mismatch_high_db = 3.0;
};

/// Estimates for one observation SNR. Unrequested estimators stay empty.
struct PointEvaluation {
  double snr_db = 0.0;
  double eta_sq = 0.0;
  Batch x0;
  Batch y;
  Batch ls, cme, cme_step, det, resamp, mismatch;
  std::vector<int> t_hat;
  std::vector<int> t_hat_mismatch;
  /// (remaining step, NMSE of the intermediate estimate) from t_hat to 0.
  std::vector<std::pair<int, double>> trajectory;
  std::map<std::string, double> time_ms;
};

/// Element i of the test set draws x_0, the observation noise and the
/// mismatch offset (in that order), and then any re-sampling noise, from
/// Rng::stream(stream_master, i).
PointEvaluation evaluate_point(const Gmm& prior, const StepwiseDenoiser& d, double snr_db,
                               int test_size, std::uint64_t stream_master, const PointOptions& opt);

/// Mean and standard error of ||a_i - b_i||.
struct GapStat {
  double mean = 0.0;
  double se = 0.0;
};
GapStat mean_gap(const Batch& a, const Batch& b);

// -- experiments ------------------------------------------------------------

ExperimentReport run_snr_sweep(const ExperimentConfig& cfg);
ExperimentReport run_t_sweep(const ExperimentConfig& cfg);
ExperimentReport run_trajectory(const ExperimentConfig& cfg);
ExperimentReport run_mismatch(const ExperimentConfig& cfg);
ExperimentReport run_resample_compare(const ExperimentConfig& cfg);
ExperimentReport run_lipschitz(const ExperimentConfig& cfg);
ExperimentReport run_bounds(const ExperimentConfig& cfg);
ExperimentReport run_bench(const ExperimentConfig& cfg);

struct GenerateResult {
  Batch samples;
  Vector empirical_mean;
  /// Mean of ||x||^2 / N over the samples.
  double energy_per_dim = 0.0;
};
GenerateResult run_generate(const ExperimentConfig& cfg);

TrainResult run_train(const ExperimentConfig& cfg);

/// Dispatches the table-producing kinds (everything except train/generate).
ExperimentReport run_experiment(const ExperimentConfig& cfg);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dmden
