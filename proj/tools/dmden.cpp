// dmden: experiment driver for diffusion-model denoising on GMM priors.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmden/error.hpp"
#include "dmden/harness.hpp"
#include "dmden/textio.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Options {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

dmden::ExperimentConfig load(dmden::ExperimentKind kind, const Options& opt) {
  dmden::Config cfg = opt.config.empty() ? dmden::Config{} : dmden::Config::load(opt.config);
  for (const auto& o : opt.overrides) cfg.apply_override(o);
  if (opt.seed) cfg.set("experiment.seed", std::to_string(*opt.seed));
  if (!opt.out.empty()) cfg.set("experiment.out", opt.out);
  return dmden::ExperimentConfig::from_config(kind, cfg);
}

void write_report(const dmden::ExperimentReport& report, const std::string& out) {
  if (out.empty() || out == "-")
    report.write_csv(std::cout);
  else
    report.save_csv(out);
}

void write_loss_history(const dmden::TrainResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw dmden::IoError("cannot open '" + path + "' for writing");
  f << "epoch,train_loss,validation_loss\n";
  for (std::size_t i = 0; i < r.validation_loss.size(); ++i) {
    f << i << ',';
    if (i < r.epoch_loss.size()) f << dmden::textio::format_double(r.epoch_loss[i]);
    f << ',' << dmden::textio::format_double(r.validation_loss[i]) << '\n';
  }
  if (!f) throw dmden::IoError("failed writing '" + path + "'");
}

int run(dmden::ExperimentKind kind, const Options& opt) {
  const auto cfg = load(kind, opt);
  switch (kind) {
    case dmden::ExperimentKind::Train: {
      if (cfg.out.empty()) throw dmden::ConfigError("train needs an output path (--out)");
      const auto r = dmden::run_train(cfg);
      dmden::save_mlp(cfg.out, r.net);
      write_loss_history(r, cfg.out + ".loss.csv");
      std::cerr << "final validation loss " << dmden::textio::format_double(r.validation_loss.back()) << '\n';
      return 0;
    }
    case dmden::ExperimentKind::Generate: {
      const auto r = dmden::run_generate(cfg);
      if (cfg.out.empty() || cfg.out == "-") {
        dmden::write_samples(std::cout, r.samples);
      } else {
        std::ofstream f(cfg.out, std::ios::binary);
        if (!f) throw dmden::IoError("cannot open '" + cfg.out + "' for writing");
        dmden::write_samples(f, r.samples);
        if (!f) throw dmden::IoError("failed writing '" + cfg.out + "'");
      }
      std::cerr << "energy per dimension " << dmden::textio::format_double(r.energy_per_dim) << '\n';
      return 0;
    }
    default:
      write_report(dmden::run_experiment(cfg), cfg.out);
      return 0;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-model denoising experiments on Gaussian-mixture priors"};
  app.set_version_flag("--version", std::string(dmden::kVersion));
  app.require_subcommand(1);

  Options opt;
  const char* kinds[] = {"snr-sweep", "t-sweep",  "trajectory", "mismatch", "resample-compare",
                         "lipschitz", "bounds",   "bench",      "train",    "generate"};
  for (const char* name : kinds) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config,-c", opt.config, "config file (section.key = value)");
    sub->add_option("--seed,-s", opt.seed, "master seed, overrides experiment.seed");
    sub->add_option("--out,-o", opt.out, "output path; CSV goes to stdout when omitted");
    sub->add_option("--set", opt.overrides, "extra key=value override (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const auto kind = dmden::parse_experiment_kind(app.get_subcommands().front()->get_name());
  try {
    return run(kind, opt);
  } catch (const dmden::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmden::ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmden::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const dmden::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}
