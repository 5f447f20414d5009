#include "dmden/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dmden/analysis.hpp"
#include "dmden/error.hpp"
#include "dmden/textio.hpp"

namespace dmden {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "prior.source",        "prior.file",         "prior.N",          "prior.K",
      "prior.seed",          "prior.normalize",    "schedule.T",       "schedule.beta1",
      "schedule.betaT",      "schedule.gamma",     "model.embed",      "model.hidden",
      "model.checkpoint",    "model.seed",         "train.batch",      "train.epochs",
      "train.lr",            "train.lr_final_factor", "train.beta1",   "train.beta2",
      "train.eps",           "train.dataset",      "train.validation", "train.seed",
      "train.loss",          "experiment.denoiser", "experiment.snr_db", "experiment.T_values",
      "experiment.test_size", "experiment.mismatch_db", "experiment.seed", "experiment.timing",
      "experiment.out",      "bench.batch",        "bench.repeats",    "generate.count",
      "bounds.xi",           "bounds.delta",       "bounds.L1",
  };
  return keys;
}

template <typename Range>
std::string join_list(const Range& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
      out += textio::format_double(v);
    else
      out += std::to_string(v);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> echo(const ExperimentConfig& c) {
  const auto d = [](double v) { return textio::format_double(v); };
  std::vector<std::pair<std::string, std::string>> out{
      {"kind", to_string(c.kind)},
      {"version", kVersion},
      {"experiment.seed", std::to_string(c.seed)},
      {"prior.source", c.prior.source},
      {"prior.file", c.prior.file},
      {"prior.N", std::to_string(c.prior.N)},
      {"prior.K", std::to_string(c.prior.K)},
      {"prior.seed", std::to_string(c.prior.seed)},
      {"prior.normalize", c.prior.normalize ? "true" : "false"},
      {"schedule.T", std::to_string(c.schedule.T)},
      {"schedule.beta1", d(c.schedule.beta1)},
      {"schedule.betaT", d(c.schedule.betaT)},
      {"schedule.gamma", d(c.schedule.gamma)},
      {"experiment.denoiser", c.denoiser},
      {"model.embed", std::to_string(c.model.embed)},
      {"model.hidden", join_list(c.model.hidden)},
      {"model.checkpoint", c.model.checkpoint},
      {"model.seed", std::to_string(c.model.init_seed)},
      {"train.batch", std::to_string(c.train.batch_size)},
      {"train.epochs", std::to_string(c.train.epochs)},
      {"train.lr", d(c.train.learning_rate)},
      {"train.lr_final_factor", d(c.train.final_lr_factor)},
      {"train.beta1", d(c.train.beta1)},
      {"train.beta2", d(c.train.beta2)},
      {"train.eps", d(c.train.epsilon)},
      {"train.dataset", std::to_string(c.train.dataset_size)},
      {"train.validation", std::to_string(c.train.validation_size)},
      {"train.seed", std::to_string(c.train.seed)},
      {"train.loss", to_string(c.train.loss)},
      {"experiment.snr_db", join_list(c.snr_db)},
      {"experiment.T_values", join_list(c.T_values)},
      {"experiment.test_size", std::to_string(c.test_size)},
      {"experiment.mismatch_db", d(c.mismatch_low_db) + "," + d(c.mismatch_high_db)},
      {"experiment.timing", c.timing ? "true" : "false"},
      {"bench.batch", std::to_string(c.bench_batch)},
      {"bench.repeats", std::to_string(c.bench_repeats)},
      {"generate.count", std::to_string(c.generate_count)},
      {"bounds.xi", d(c.bound_xi)},
      {"bounds.delta", c.bound_delta ? d(*c.bound_delta) : "auto"},
      {"bounds.L1", c.bound_L1 ? d(*c.bound_L1) : "auto"},
  };
  return out;
}

ExperimentReport make_report(const ExperimentConfig& cfg, std::vector<std::string> columns) {
  ExperimentReport report(std::move(columns));
  for (auto& [k, v] : echo(cfg)) report.add_metadata(k, v);
  return report;
}

std::vector<std::string> with_extra(std::vector<std::string> cols, std::initializer_list<const char*> extra) {
  for (const char* e : extra) cols.emplace_back(e);
  return cols;
}

void put_estimator(std::map<std::string, double>& cells, const std::string& name, const Batch& truth,
                   const Batch& est, const PointEvaluation& ev, bool timing) {
  const NmseStat st = nmse_with_se(truth, est);
  cells["nmse_" + name] = st.nmse;
  cells["se_" + name] = st.se;
  if (timing) {
    const auto it = ev.time_ms.find(name);
    if (it != ev.time_ms.end()) cells["time_ms_" + name] = it->second;
  }
}

NoiseSchedule schedule_for_T(const ExperimentConfig& cfg, int T) {
  if (reference_beta_T(T)) return reference_schedule(T, cfg.schedule.gamma);
  return build_linear_schedule(T, cfg.schedule.beta1, cfg.schedule.betaT, cfg.schedule.gamma);
}

std::string checkpoint_for_T(const std::string& pattern, int T) {
  std::string out = pattern;
  const std::string token = "{T}";
  for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token))
    out.replace(pos, token.size(), std::to_string(T));
  return out;
}

/// Denoiser for a per-T sweep: oracle, checkpoint, or a model trained in place.
std::unique_ptr<StepwiseDenoiser> denoiser_for_T(const ExperimentConfig& cfg, const Gmm& prior,
                                                 const NoiseSchedule& s) {
  if (cfg.denoiser == "mlp" && cfg.model.checkpoint.empty()) {
    Rng init(cfg.model.init_seed);
    auto net = MlpNetwork::random(prior.N(), cfg.model.embed, cfg.model.hidden, init);
    auto trained = train(std::move(net), prior, s, cfg.train);
    return std::make_unique<MlpDenoiser>(std::move(trained.net), s);
  }
  return build_denoiser(cfg, prior, s, checkpoint_for_T(cfg.model.checkpoint, s.T()));
}

PointOptions base_options(const ExperimentConfig& cfg) {
  PointOptions opt;
  opt.timing = cfg.timing;
  opt.mismatch_low_db = cfg.mismatch_low_db;
  opt.mismatch_high_db = cfg.mismatch_high_db;
  return opt;
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
  static const std::pair<const char*, ExperimentKind> table[] = {
      {"snr-sweep", ExperimentKind::SnrSweep},   {"t-sweep", ExperimentKind::TSweep},
      {"trajectory", ExperimentKind::Trajectory}, {"mismatch", ExperimentKind::Mismatch},
      {"resample-compare", ExperimentKind::ResampleCompare},
      {"lipschitz", ExperimentKind::Lipschitz},   {"bounds", ExperimentKind::Bounds},
      {"bench", ExperimentKind::Bench},           {"train", ExperimentKind::Train},
      {"generate", ExperimentKind::Generate},
  };
  for (const auto& [n, k] : table)
    if (name == n) return k;
  throw ConfigError("unknown experiment kind '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::SnrSweep: return "snr-sweep";
    case ExperimentKind::TSweep: return "t-sweep";
    case ExperimentKind::Trajectory: return "trajectory";
    case ExperimentKind::Mismatch: return "mismatch";
    case ExperimentKind::ResampleCompare: return "resample-compare";
    case ExperimentKind::Lipschitz: return "lipschitz";
    case ExperimentKind::Bounds: return "bounds";
    case ExperimentKind::Bench: return "bench";
    case ExperimentKind::Train: return "train";
    case ExperimentKind::Generate: return "generate";
  }
  return "unknown";
}

NoiseSchedule ScheduleSpec::build() const { return build_linear_schedule(T, beta1, betaT, gamma); }

ExperimentConfig ExperimentConfig::from_config(ExperimentKind kind, const Config& cfg) {
  cfg.require_known(known_keys());
  ExperimentConfig c;
  c.kind = kind;
  c.source = cfg;

  c.prior.source = cfg.get_string("prior.source", c.prior.source);
  c.prior.file = cfg.get_string("prior.file", c.prior.file);
  c.prior.N = cfg.get_int("prior.N", c.prior.N);
  c.prior.K = cfg.get_int("prior.K", c.prior.K);
  c.prior.seed = cfg.get_u64("prior.seed", c.prior.seed);
  c.prior.normalize = cfg.get_bool("prior.normalize", c.prior.normalize);

  c.schedule.T = cfg.get_int("schedule.T", c.schedule.T);
  c.schedule.beta1 = cfg.get_double("schedule.beta1", c.schedule.beta1);
  c.schedule.betaT = cfg.get_double("schedule.betaT", c.schedule.betaT);
  c.schedule.gamma = cfg.get_double("schedule.gamma", c.schedule.gamma);

  c.model.embed = cfg.get_int("model.embed", c.model.embed);
  c.model.hidden = cfg.get_int_list("model.hidden", c.model.hidden);
  c.model.checkpoint = cfg.get_string("model.checkpoint", c.model.checkpoint);
  c.model.init_seed = cfg.get_u64("model.seed", c.model.init_seed);

  c.train.batch_size = cfg.get_int("train.batch", c.train.batch_size);
  c.train.epochs = cfg.get_int("train.epochs", c.train.epochs);
  c.train.learning_rate = cfg.get_double("train.lr", c.train.learning_rate);
  c.train.final_lr_factor = cfg.get_double("train.lr_final_factor", c.train.final_lr_factor);
  c.train.beta1 = cfg.get_double("train.beta1", c.train.beta1);
  c.train.beta2 = cfg.get_double("train.beta2", c.train.beta2);
  c.train.epsilon = cfg.get_double("train.eps", c.train.epsilon);
  c.train.dataset_size = cfg.get_int("train.dataset", c.train.dataset_size);
  c.train.validation_size = cfg.get_int("train.validation", c.train.validation_size);
  c.train.seed = cfg.get_u64("train.seed", c.train.seed);
  try {
    c.train.loss = parse_loss_kind(cfg.get_string("train.loss", to_string(c.train.loss)));
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }

  c.denoiser = cfg.get_string("experiment.denoiser", c.denoiser);
  if (kind == ExperimentKind::Bench || kind == ExperimentKind::Mismatch) c.snr_db = {-10, 0, 10, 20};
  c.snr_db = cfg.get_double_list("experiment.snr_db", c.snr_db);
  c.T_values = cfg.get_int_list("experiment.T_values", c.T_values);
  c.test_size = cfg.get_int("experiment.test_size", c.test_size);
  const auto mm = cfg.get_double_list("experiment.mismatch_db", {c.mismatch_low_db, c.mismatch_high_db});
  if (mm.size() != 2) throw ConfigError("experiment.mismatch_db needs two values: low,high");
  c.mismatch_low_db = mm[0];
  c.mismatch_high_db = mm[1];
  c.seed = cfg.get_u64("experiment.seed", c.seed);
  c.timing = cfg.get_bool("experiment.timing", kind == ExperimentKind::Bench);
  c.out = cfg.get_string("experiment.out", c.out);

  c.bench_batch = cfg.get_int("bench.batch", c.bench_batch);
  c.bench_repeats = cfg.get_int("bench.repeats", c.bench_repeats);
  c.generate_count = cfg.get_int("generate.count", c.generate_count);
  c.bound_xi = cfg.get_double("bounds.xi", c.bound_xi);
  if (cfg.has("bounds.delta")) c.bound_delta = cfg.get_double("bounds.delta", 0.0);
  if (cfg.has("bounds.L1")) c.bound_L1 = cfg.get_double("bounds.L1", 0.0);

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  const bool sweep = kind == ExperimentKind::SnrSweep || kind == ExperimentKind::TSweep ||
                     kind == ExperimentKind::Trajectory || kind == ExperimentKind::Mismatch ||
                     kind == ExperimentKind::ResampleCompare || kind == ExperimentKind::Bounds ||
                     kind == ExperimentKind::Bench;
  if (sweep && snr_db.empty()) throw ConfigError("experiment.snr_db must not be empty");
  if ((kind == ExperimentKind::TSweep || kind == ExperimentKind::Bounds) && T_values.empty())
    throw ConfigError("experiment.T_values must not be empty");
  if (test_size < 1) throw ConfigError("experiment.test_size must be >= 1");
  if (prior.source != "random" && prior.source != "standard_normal" && prior.source != "file")
    throw ConfigError("prior.source must be random, standard_normal or file");
  if (prior.source == "file" && prior.file.empty()) throw ConfigError("prior.file is required");
  if (prior.N < 1 || prior.K < 1) throw ConfigError("prior.N and prior.K must be >= 1");
  if (denoiser != "oracle" && denoiser != "mlp")
    throw ConfigError("experiment.denoiser must be oracle or mlp");
  if (mismatch_high_db < mismatch_low_db) throw ConfigError("experiment.mismatch_db: low > high");
  if (bench_batch < 1 || bench_repeats < 1) throw ConfigError("bench.batch and bench.repeats must be >= 1");
  if (generate_count < 0) throw ConfigError("generate.count must be >= 0");
  for (int T : T_values)
    if (T < 1) throw ConfigError("experiment.T_values entries must be >= 1");
  if (model.embed < 2 || model.embed % 2 != 0) throw ConfigError("model.embed must be even and >= 2");
  try {
    (void)schedule.build();
    train.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

Gmm build_prior(const PriorSpec& spec) {
  if (spec.source == "standard_normal") return standard_normal_gmm(spec.N);
  Gmm g = spec.source == "file" ? load_gmm(spec.file) : random_gmm(spec.N, spec.K, spec.seed);
  return spec.normalize ? normalize_gmm(g) : g;
}

std::unique_ptr<StepwiseDenoiser> build_denoiser(const ExperimentConfig& cfg, const Gmm& prior,
                                                 const NoiseSchedule& s,
                                                 const std::string& checkpoint) {
  if (cfg.denoiser == "oracle") return std::make_unique<OracleDenoiser>(prior, s);
  if (checkpoint.empty()) throw ConfigError("model.checkpoint is required for the mlp denoiser");
  if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint '" + checkpoint + "' not found");
  MlpNetwork net = load_mlp(checkpoint);
  if (net.dim() != prior.N()) throw ConfigError("checkpoint dimension does not match prior.N");
  return std::make_unique<MlpDenoiser>(std::move(net), s);
}

// ---------------------------------------------------------------------------

double nmse(const Batch& truth, const Batch& estimates) {
  if (truth.cols() < 1 || truth.rows() != estimates.rows() || truth.cols() != estimates.cols())
    throw ParameterError("nmse: batches must be non-empty and of equal shape");
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw NumericError("nmse: zero signal energy");
  return (truth - estimates).squaredNorm() / denom;
}

NmseStat nmse_with_se(const Batch& truth, const Batch& estimates) {
  NmseStat st;
  st.nmse = nmse(truth, estimates);
  const Eigen::Index n = truth.cols();
  if (n < 2) return st;
  const Eigen::ArrayXd err = (truth - estimates).colwise().squaredNorm().transpose().array();
  const Eigen::ArrayXd energy = truth.colwise().squaredNorm().transpose().array();
  const Eigen::ArrayXd resid = err - st.nmse * energy;
  st.se = std::sqrt(resid.square().sum() / (static_cast<double>(n) * (n - 1))) * n / energy.sum();
  return st;
}

double nmse_difference_se(const Batch& truth, const Batch& a, const Batch& b) {
  const Eigen::Index n = truth.cols();
  if (n < 2) return 0.0;
  const Eigen::ArrayXd da = (truth - a).colwise().squaredNorm().transpose().array();
  const Eigen::ArrayXd db = (truth - b).colwise().squaredNorm().transpose().array();
  const Eigen::ArrayXd energy = truth.colwise().squaredNorm().transpose().array();
  const double diff = (da - db).sum() / energy.sum();
  const Eigen::ArrayXd resid = (da - db) - diff * energy;
  return std::sqrt(resid.square().sum() / (static_cast<double>(n) * (n - 1))) * n / energy.sum();
}

GapStat mean_gap(const Batch& a, const Batch& b) {
  const Eigen::ArrayXd norms = (a - b).colwise().norm().transpose().array();
  GapStat g;
  const auto n = static_cast<double>(norms.size());
  g.mean = norms.mean();
  g.se = norms.size() > 1 ? std::sqrt((norms - g.mean).square().sum() / (n - 1) / n) : 0.0;
  return g;
}

PointEvaluation evaluate_point(const Gmm& prior, const StepwiseDenoiser& d, double snr_db,
                               int test_size, std::uint64_t stream_master, const PointOptions& opt) {
  if (test_size < 1) throw ParameterError("evaluate_point: test_size must be >= 1");
  if (d.dimension() != prior.N()) throw ParameterError("evaluate_point: denoiser dimension mismatch");
  PointEvaluation ev;
  ev.snr_db = snr_db;
  ev.eta_sq = db_to_linear(-snr_db);
  const int N = prior.N();
  const double eta = std::sqrt(ev.eta_sq);

  ev.x0.resize(N, test_size);
  ev.y.resize(N, test_size);
  std::vector<double> eta_matched(static_cast<std::size_t>(test_size), ev.eta_sq);
  std::vector<double> eta_assumed(static_cast<std::size_t>(test_size));
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(test_size));
  for (int i = 0; i < test_size; ++i) {
    Rng r = Rng::stream(stream_master, static_cast<std::uint64_t>(i));
    ev.x0.col(i) = sample(prior, 1, r).col(0);
    ev.y.col(i) = ev.x0.col(i) + eta * r.normal_vector(N);
    const double offset = r.uniform(opt.mismatch_low_db, opt.mismatch_high_db);
    eta_assumed[static_cast<std::size_t>(i)] = ev.eta_sq * db_to_linear(offset);
    rngs.push_back(r);
  }

  const NoiseSchedule& s = d.schedule();
  const Batch y_tilde = ev.y / std::sqrt(1.0 + ev.eta_sq);

  if (opt.ls) {
    const auto start = Clock::now();
    ev.ls = ev.y;
    ev.time_ms["ls"] = elapsed_ms(start);
  }
  if (opt.cme) {
    const auto start = Clock::now();
    ev.cme = GmmPosterior(prior, ev.eta_sq).cme_batch(ev.y);
    ev.time_ms["cme"] = elapsed_ms(start);
  }
  if (opt.det || opt.trajectory) {
    StepObserver observer;
    if (opt.trajectory)
      observer = [&](int t, const Batch& x) { ev.trajectory.emplace_back(t, nmse(ev.x0, x)); };
    const auto start = Clock::now();
    auto r = deterministic_denoise(d, ev.y, eta_matched, observer);
    ev.time_ms["dm_det"] = elapsed_ms(start);
    ev.det = std::move(r.x0);
    ev.t_hat = std::move(r.t_hat);
  } else {
    ev.t_hat.assign(static_cast<std::size_t>(test_size), match_timestep(s, ev.eta_sq));
  }
  if (opt.cme_step) {
    // Matched observations share one step.
    ev.cme_step = cme_at_diffusion_step(prior, y_tilde, s, ev.t_hat.front());
  }
  if (opt.resamp) {
    const auto start = Clock::now();
    ev.resamp = stochastic_reverse(d, ev.t_hat, y_tilde, rngs);
    ev.time_ms["dm_resamp"] = elapsed_ms(start);
  }
  if (opt.mismatch) {
    const auto start = Clock::now();
    auto r = deterministic_denoise(d, ev.y, eta_assumed);
    ev.time_ms["dm_mismatch"] = elapsed_ms(start);
    ev.mismatch = std::move(r.x0);
    ev.t_hat_mismatch = std::move(r.t_hat);
  }
  return ev;
}

// ---------------------------------------------------------------------------

ExperimentReport run_snr_sweep(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);

  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(),
                                            {"t_hat", "nmse_cme_step", "se_cme_step"}));
  PointOptions opt = base_options(cfg);
  opt.resamp = true;
  for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
    const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
    std::map<std::string, double> cells{{"x", cfg.snr_db[k]}, {"t_hat", ev.t_hat.front()}};
    put_estimator(cells, "ls", ev.x0, ev.ls, ev, cfg.timing);
    put_estimator(cells, "cme", ev.x0, ev.cme, ev, cfg.timing);
    put_estimator(cells, "dm_det", ev.x0, ev.det, ev, cfg.timing);
    put_estimator(cells, "dm_resamp", ev.x0, ev.resamp, ev, cfg.timing);
    const NmseStat step = nmse_with_se(ev.x0, ev.cme_step);
    cells["nmse_cme_step"] = step.nmse;
    cells["se_cme_step"] = step.se;
    report.add_row(cells);
  }
  return report;
}

ExperimentReport run_t_sweep(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(),
                                            {"snr_db", "t_hat", "gap_cme", "se_gap_cme", "gap_cme_step",
                                             "se_gap_cme_step", "nmse_cme_step"}));
  PointOptions opt = base_options(cfg);
  for (int T : cfg.T_values) {
    const NoiseSchedule s = schedule_for_T(cfg, T);
    const auto den = denoiser_for_T(cfg, prior, s);
    for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
      // Same test set for every T at a given SNR.
      const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
      std::map<std::string, double> cells{{"x", T}, {"snr_db", cfg.snr_db[k]}, {"t_hat", ev.t_hat.front()}};
      put_estimator(cells, "ls", ev.x0, ev.ls, ev, cfg.timing);
      put_estimator(cells, "cme", ev.x0, ev.cme, ev, cfg.timing);
      put_estimator(cells, "dm_det", ev.x0, ev.det, ev, cfg.timing);
      const GapStat gap = mean_gap(ev.cme, ev.det);
      const GapStat step_gap = mean_gap(ev.cme_step, ev.det);
      cells["gap_cme"] = gap.mean;
      cells["se_gap_cme"] = gap.se;
      cells["gap_cme_step"] = step_gap.mean;
      cells["se_gap_cme_step"] = step_gap.se;
      cells["nmse_cme_step"] = nmse(ev.x0, ev.cme_step);
      report.add_row(cells);
    }
  }
  return report;
}

ExperimentReport run_trajectory(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);

  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(), {"snr_db", "t_hat"}));
  PointOptions opt = base_options(cfg);
  opt.ls = false;
  opt.cme_step = false;
  opt.trajectory = true;
  for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
    const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
    const double cme_nmse = nmse(ev.x0, ev.cme);
    for (const auto& [t, value] : ev.trajectory) {
      report.add_row({{"x", t},
                      {"nmse_dm_det", value},
                      {"nmse_cme", cme_nmse},
                      {"snr_db", cfg.snr_db[k]},
                      {"t_hat", ev.t_hat.front()}});
    }
  }
  return report;
}

ExperimentReport run_mismatch(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);

  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(),
                                            {"t_hat", "t_hat_changed_fraction", "relative_increase"}));
  PointOptions opt = base_options(cfg);
  opt.mismatch = true;
  opt.cme_step = false;
  for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
    const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
    std::map<std::string, double> cells{{"x", cfg.snr_db[k]}, {"t_hat", ev.t_hat.front()}};
    put_estimator(cells, "ls", ev.x0, ev.ls, ev, cfg.timing);
    put_estimator(cells, "cme", ev.x0, ev.cme, ev, cfg.timing);
    put_estimator(cells, "dm_det", ev.x0, ev.det, ev, cfg.timing);
    put_estimator(cells, "dm_mismatch", ev.x0, ev.mismatch, ev, cfg.timing);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < ev.t_hat.size(); ++i) changed += ev.t_hat[i] != ev.t_hat_mismatch[i];
    cells["t_hat_changed_fraction"] = static_cast<double>(changed) / static_cast<double>(ev.t_hat.size());
    cells["relative_increase"] = cells["nmse_dm_mismatch"] / cells["nmse_dm_det"] - 1.0;
    report.add_row(cells);
  }
  return report;
}

ExperimentReport run_resample_compare(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);

  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(), {"t_hat", "se_diff_resamp_det"}));
  PointOptions opt = base_options(cfg);
  opt.resamp = true;
  opt.cme_step = false;
  for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
    const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
    std::map<std::string, double> cells{{"x", cfg.snr_db[k]}, {"t_hat", ev.t_hat.front()}};
    put_estimator(cells, "ls", ev.x0, ev.ls, ev, cfg.timing);
    put_estimator(cells, "cme", ev.x0, ev.cme, ev, cfg.timing);
    put_estimator(cells, "dm_det", ev.x0, ev.det, ev, cfg.timing);
    put_estimator(cells, "dm_resamp", ev.x0, ev.resamp, ev, cfg.timing);
    cells["se_diff_resamp_det"] = nmse_difference_se(ev.x0, ev.resamp, ev.det);
    report.add_row(cells);
  }
  return report;
}

ExperimentReport run_lipschitz(const ExperimentConfig& cfg) {
  const NoiseSchedule s = cfg.schedule.build();
  auto report = make_report(cfg, {"t", "L_t", "tilde_L_t", "L_{2:t}", "snr_dm_db"});
  for (int t = 1; t <= s.T(); ++t) {
    std::map<std::string, double> cells{{"t", t}, {"snr_dm_db", snr_dm_db(s, t)}};
    if (t >= 2) {
      cells["L_t"] = lipschitz_step(s, t);
      cells["tilde_L_t"] = lipschitz_eps(s, t);
      cells["L_{2:t}"] = lipschitz_range(s, 2, t);
    }
    report.add_row(cells);
  }
  return report;
}

ExperimentReport run_bounds(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  auto report = make_report(cfg, {"T", "snr_db", "t_hat", "L1", "delta", "envelope", "theorem1_bound",
                                  "theorem2_bound", "gap_cme", "se_gap_cme", "gap_cme_step", "se_gap_cme_step"});
  PointOptions opt = base_options(cfg);
  opt.ls = false;
  for (std::size_t ti = 0; ti < cfg.T_values.size(); ++ti) {
    const int T = cfg.T_values[ti];
    const NoiseSchedule s = schedule_for_T(cfg, T);
    const auto den = denoiser_for_T(cfg, prior, s);
    Rng probe = Rng::stream(stream_seed(cfg.seed, 1000003), ti);
    const double L1 = cfg.bound_L1 ? *cfg.bound_L1 : estimate_first_step_lipschitz(*den, probe);

    for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
      const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.test_size, stream_seed(cfg.seed, k), opt);
      const int t_hat = ev.t_hat.front();
      double delta = 0.0;
      if (cfg.bound_delta) {
        delta = *cfg.bound_delta;
      } else if (cfg.denoiser != "oracle") {
        // Lower estimate of the stepwise error over at most 20 steps in [1, t_hat].
        const int stride = std::max(1, t_hat / 20);
        for (int t = 1; t <= t_hat; t += stride)
          delta = std::max(delta, estimate_stepwise_gap(*den, prior, t, 256, probe).mean);
      }
      BoundParams p;
      p.T = T;
      p.t_hat = t_hat;
      p.L1 = L1;
      p.delta = delta;
      p.xi = cfg.bound_xi;
      p.N = prior.N();
      p.gamma = s.gamma();
      p.envelope = default_envelope_constant(s);
      const GapStat gap = mean_gap(ev.cme, ev.det);
      const GapStat step_gap = mean_gap(ev.cme_step, ev.det);
      report.add_row({{"T", T},
                      {"snr_db", cfg.snr_db[k]},
                      {"t_hat", t_hat},
                      {"L1", L1},
                      {"delta", delta},
                      {"envelope", p.envelope},
                      {"theorem1_bound", theorem1_bound(p, ev.eta_sq)},
                      {"theorem2_bound", theorem2_bound(p)},
                      {"gap_cme", gap.mean},
                      {"se_gap_cme", gap.se},
                      {"gap_cme_step", step_gap.mean},
                      {"se_gap_cme_step", step_gap.se}});
    }
  }
  return report;
}

ExperimentReport run_bench(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);
  std::size_t params = 0;
  if (const auto* mlp = dynamic_cast<const MlpDenoiser*>(den.get())) params = mlp->network().parameter_count();

  auto report = make_report(cfg, with_extra(ExperimentReport::estimator_columns(), {"t_hat", "parameter_count"}));
  PointOptions opt = base_options(cfg);
  opt.ls = false;
  opt.cme = false;
  opt.cme_step = false;
  opt.det = false;
  for (std::size_t k = 0; k < cfg.snr_db.size(); ++k) {
    const auto ev = evaluate_point(prior, *den, cfg.snr_db[k], cfg.bench_batch, stream_seed(cfg.seed, k), opt);
    const std::vector<double> eta(static_cast<std::size_t>(cfg.bench_batch), ev.eta_sq);
    double best = std::numeric_limits<double>::infinity();
    BatchDenoiseResult r;
    for (int rep = 0; rep < cfg.bench_repeats; ++rep) {
      const auto start = Clock::now();
      r = deterministic_denoise(*den, ev.y, eta);
      best = std::min(best, elapsed_ms(start));
    }
    const NmseStat st = nmse_with_se(ev.x0, r.x0);
    report.add_row({{"x", cfg.snr_db[k]},
                    {"nmse_dm_det", st.nmse},
                    {"se_dm_det", st.se},
                    {"time_ms_dm_det", best},
                    {"t_hat", r.t_hat.front()},
                    {"parameter_count", static_cast<double>(params)}});
  }
  return report;
}

GenerateResult run_generate(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  const auto den = build_denoiser(cfg, prior, s, cfg.model.checkpoint);
  const int n = cfg.generate_count;
  const int N = prior.N();

  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(n));
  Batch start(N, n);
  for (int i = 0; i < n; ++i) {
    rngs.push_back(Rng::stream(cfg.seed, static_cast<std::uint64_t>(i)));
    start.col(i) = rngs.back().normal_vector(N);
  }
  const std::vector<int> start_t(static_cast<std::size_t>(n), s.T());

  GenerateResult out;
  out.samples = stochastic_reverse(*den, start_t, start, rngs);
  out.empirical_mean = n > 0 ? Vector(out.samples.rowwise().mean()) : Vector::Zero(N);
  out.energy_per_dim = n > 0 ? out.samples.squaredNorm() / (static_cast<double>(n) * N) : 0.0;
  return out;
}

TrainResult run_train(const ExperimentConfig& cfg) {
  const Gmm prior = build_prior(cfg.prior);
  const NoiseSchedule s = cfg.schedule.build();
  Rng init(cfg.model.init_seed);
  auto net = MlpNetwork::random(prior.N(), cfg.model.embed, cfg.model.hidden, init);
  return train(std::move(net), prior, s, cfg.train);
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::SnrSweep: return run_snr_sweep(cfg);
    case ExperimentKind::TSweep: return run_t_sweep(cfg);
    case ExperimentKind::Trajectory: return run_trajectory(cfg);
    case ExperimentKind::Mismatch: return run_mismatch(cfg);
    case ExperimentKind::ResampleCompare: return run_resample_compare(cfg);
    case ExperimentKind::Lipschitz: return run_lipschitz(cfg);
    case ExperimentKind::Bounds: return run_bounds(cfg);
    case ExperimentKind::Bench: return run_bench(cfg);
    case ExperimentKind::Train:
    case ExperimentKind::Generate: break;
  }
  throw ConfigError(to_string(cfg.kind) + " does not produce a report table");
}

}  // namespace dmden
