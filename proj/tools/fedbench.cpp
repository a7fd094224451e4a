// Experiment harness: preprocess school assessment microdata, train the
// centralized boosted-tree benchmark and the federated DNN, and compare.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "fedbench/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<double> mu;
  std::optional<std::size_t> clients;
  std::optional<std::size_t> min_rows;
  bool fedavg = false;
};

fedbench::experiment::ExperimentConfig resolve_config(const Overrides& ov) {
  using fedbench::experiment::ExperimentConfig;
  ExperimentConfig cfg = ov.config.empty()
                             ? ExperimentConfig{}
                             : ExperimentConfig::from_file(ov.config);
  if (ov.out) cfg.out_dir = *ov.out;
  if (ov.seed) cfg.override_all_seeds(*ov.seed);
  if (ov.rounds) cfg.federation.num_rounds = *ov.rounds;
  if (ov.mu) cfg.federation.proximal_mu = *ov.mu;
  if (ov.clients) cfg.sample_schools = *ov.clients;
  if (ov.min_rows) cfg.min_rows = *ov.min_rows;
  if (ov.fedavg) cfg.federation.fedavg_mode = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fedbench: centralized vs federated training on school-partitioned "
      "assessment data"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides ov;
  app.add_option("--config", ov.config, "experiment config file (INI)");
  app.add_option("--out", ov.out, "output directory (overrides config)");
  app.add_option("--seed", ov.seed, "override every stage seed");
  app.add_option("--rounds", ov.rounds, "federated communication rounds");
  app.add_option("--mu", ov.mu, "FedProx proximal coefficient");
  app.add_option("--clients", ov.clients, "number of schools to sample");
  app.add_option("--min-rows", ov.min_rows, "minimum rows per school");
  app.add_flag("--fedavg", ov.fedavg, "drop the proximal term (plain FedAvg)");

  auto* preprocess = app.add_subcommand(
      "preprocess", "clean, binarize, impute and one-hot encode the input");
  auto* centralized = app.add_subcommand(
      "centralized", "train and evaluate the boosted-tree benchmark");
  auto* federated = app.add_subcommand(
      "federated", "run the federated simulation and write round history");
  auto* compare = app.add_subcommand(
      "compare", "run both arms on one split and report the gap");
  auto* synthesize = app.add_subcommand(
      "synthesize", "generate a synthetic raw microdata file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto cfg = resolve_config(ov);
    if (preprocess->parsed()) {
      fedbench::experiment::run_preprocess(cfg);
    } else if (centralized->parsed()) {
      fedbench::experiment::run_centralized(cfg);
    } else if (federated->parsed()) {
      fedbench::experiment::run_federated(cfg);
    } else if (compare->parsed()) {
      fedbench::experiment::run_compare(cfg);
    } else if (synthesize->parsed()) {
      fedbench::experiment::run_synthesize(cfg);
    }
    return 0;
  } catch (const fedbench::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const fedbench::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
