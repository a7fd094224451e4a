#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <span>
#include <vector>

#include "fedbench/metrics.hpp"
#include "fedbench/nn.hpp"
#include "fedbench/pipeline.hpp"
#include "fedbench/rng.hpp"

namespace fedbench::fed {

struct FederationConfig {
  std::size_t num_rounds = 20;
  double fraction_fit = 0.2;
  std::size_t min_fit_clients = 10;
  double proximal_mu = 0.1;
  std::vector<std::size_t> hidden_dims = {64, 32};
  nn::TrainConfig train;
  std::uint64_t seed = 42;
  bool fedavg_mode = false;       // drop the proximal term instead of mu=0
  bool parallel_clients = false;  // fan out local training across threads

  void validate() const {
    if (!(fraction_fit > 0.0 && fraction_fit <= 1.0))
      throw ConfigError("federation: fraction_fit must be in (0,1]");
    if (min_fit_clients == 0)
      throw ConfigError("federation: min_fit_clients must be positive");
    if (proximal_mu < 0.0)
      throw ConfigError("federation: mu must be >= 0");
  }
};

// What a client reports back: trained parameters and its sample count.
// Raw rows never cross this boundary.
struct ClientUpdate {
  nn::ModelParams params;
  std::size_t n_k = 0;
  std::int64_t client_id = 0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  nn::ModelParams global_model;
  metrics::RoundMetrics metrics;
  std::vector<std::int64_t> participating_clients;
};

// Uniform sample of max(round(fraction_fit * K), min_fit_clients) clients,
// deterministic in (seed, round). Returns indices into `all`.
inline std::vector<std::size_t> select_clients(
    const std::vector<ClientPartition>& all, const FederationConfig& config,
    std::size_t round) {
  if (all.empty()) throw DataError("select_clients: no clients");
  const std::size_t want = std::max<std::size_t>(
      static_cast<std::size_t>(std::llround(
          config.fraction_fit * static_cast<double>(all.size()))),
      config.min_fit_clients);
  if (want > all.size())
    throw DataError("select_clients: need " + std::to_string(want) +
                    " clients but only " + std::to_string(all.size()) +
                    " available");
  std::vector<std::size_t> pool(all.size());
  std::iota(pool.begin(), pool.end(), 0);
  auto rng = make_engine(derive_seed(config.seed, 0x73656c, round));  // "sel"
  auto picked = sample_without_replacement(pool, want, rng);
  std::sort(picked.begin(), picked.end());
  return picked;
}

// FedAvg aggregation: sum of (n_k / N) * w_k. Summation runs in ascending
// client_id order so the result is bit-deterministic.
inline nn::ModelParams aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.n_k == 0) throw std::invalid_argument("aggregate: n_k must be positive");
    ordered.push_back(&u);
    total += static_cast<double>(u.n_k);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });

  nn::ModelParams out = ordered.front()->params;
  for (auto& layer : out.layers) {
    std::fill(layer.weights.flat().begin(), layer.weights.flat().end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  for (const ClientUpdate* u : ordered) {
    if (!nn::shapes_match(out, u->params))
      throw std::invalid_argument("aggregate: shape mismatch across updates");
    const double w = static_cast<double>(u->n_k) / total;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      auto acc = out.layers[l].weights.flat();
      auto src = u->params.layers[l].weights.flat();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * src[i];
      for (std::size_t i = 0; i < out.layers[l].bias.size(); ++i)
        out.layers[l].bias[i] += w * u->params.layers[l].bias[i];
    }
  }
  return out;
}

namespace detail {

inline ClientUpdate client_execute(const ClientPartition& client,
                                   const nn::ModelParams& global,
                                   const FederationConfig& config,
                                   std::size_t round) {
  nn::TrainConfig local = config.train;
  local.proximal_mu = config.proximal_mu;
  local.use_proximal = !config.fedavg_mode;
  ClientUpdate update;
  update.params = nn::train_local(global, client, global, local, round);
  update.n_k = client.n_k();
  update.client_id = client.client_id;
  return update;
}

}  // namespace detail

// One broadcast-train-aggregate cycle. The incoming global model is not
// mutated. Sequential and parallel execution produce identical results
// because every client derives its randomness from (seed, client, round).
inline std::pair<nn::ModelParams, std::vector<std::int64_t>> run_round(
    const nn::ModelParams& global, const std::vector<ClientPartition>& clients,
    const FederationConfig& config, std::size_t round) {
  const auto picked = select_clients(clients, config, round);
  std::vector<ClientUpdate> updates(picked.size());
  if (config.parallel_clients) {
    std::vector<std::future<ClientUpdate>> tasks;
    tasks.reserve(picked.size());
    for (std::size_t i : picked)
      tasks.push_back(std::async(std::launch::async, [&, i] {
        return detail::client_execute(clients[i], global, config, round);
      }));
    for (std::size_t i = 0; i < tasks.size(); ++i) updates[i] = tasks[i].get();
  } else {
    for (std::size_t i = 0; i < picked.size(); ++i)
      updates[i] = detail::client_execute(clients[picked[i]], global, config,
                                          round);
  }
  std::vector<std::int64_t> ids;
  ids.reserve(picked.size());
  for (const auto& u : updates) ids.push_back(u.client_id);
  std::sort(ids.begin(), ids.end());
  return {aggregate(updates), std::move(ids)};
}

// Scores the global model on the held-out test set.
inline metrics::RoundMetrics evaluate_global(const nn::ModelParams& model,
                                             const Dataset& test) {
  const auto scores = nn::predict(model, test.features);
  return metrics::evaluate(scores, test.labels);
}

inline std::vector<RoundRecord> run_federation(
    const std::vector<ClientPartition>& clients, const Dataset& test,
    const FederationConfig& config) {
  config.validate();
  std::vector<std::size_t> dims;
  dims.push_back(test.width());
  dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  dims.push_back(1);

  nn::ModelParams global = nn::init_model(dims, config.train.seed);
  std::vector<RoundRecord> history;
  history.reserve(config.num_rounds);
  for (std::size_t round = 1; round <= config.num_rounds; ++round) {
    auto [next, ids] = run_round(global, clients, config, round);
    global = std::move(next);
    RoundRecord record;
    record.round = round;
    record.metrics = evaluate_global(global, test);
    record.global_model = global;
    record.participating_clients = std::move(ids);
    history.push_back(std::move(record));
  }
  return history;
}

// Highest-accuracy round; earlier round wins ties.
inline std::pair<std::size_t, double> best_round(
    const std::vector<RoundRecord>& history) {
  if (history.empty()) throw std::invalid_argument("best_round: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].metrics.accuracy > history[best].metrics.accuracy) best = i;
  return {history[best].round, history[best].metrics.accuracy};
}

inline void write_round_history(const std::filesystem::path& path,
                                const std::vector<RoundRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "round,accuracy,precision,recall,f1,loss,participating_client_ids\n";
  for (const auto& r : history) {
    out << r.round << ',' << fmt17(r.metrics.accuracy) << ','
        << fmt17(r.metrics.precision) << ',' << fmt17(r.metrics.recall) << ','
        << fmt17(r.metrics.f1) << ',' << fmt17(r.metrics.loss) << ',';
    for (std::size_t i = 0; i < r.participating_clients.size(); ++i) {
      if (i) out << ';';
      out << r.participating_clients[i];
    }
    out << '\n';
  }
}

}  // namespace fedbench::fed
