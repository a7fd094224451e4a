#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "fedbench/common.hpp"
#include "fedbench/matrix.hpp"
#include "fedbench/pipeline.hpp"
#include "fedbench/rng.hpp"

namespace fedbench::nn {

struct LayerParams {
  Matrix weights;             // out x in
  std::vector<double> bias;   // out
};

// Dense ReLU stack with a sigmoid output. Parameters are plain values; a
// model is copied freely between server and clients.
struct ModelParams {
  std::vector<LayerParams> layers;
  std::vector<std::size_t> layer_dims;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
};

struct Gradients {
  std::vector<LayerParams> layers;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 10;
  double proximal_mu = 0.1;
  std::uint64_t seed = 42;
  // When false the proximal term is skipped entirely (plain FedAvg local
  // training) instead of being computed with mu and added.
  bool use_proximal = true;
};

inline bool shapes_match(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!a.layers[l].weights.same_shape(b.layers[l].weights)) return false;
    if (a.layers[l].bias.size() != b.layers[l].bias.size()) return false;
  }
  return true;
}

inline bool shapes_match(const ModelParams& m, const Gradients& g) {
  if (m.layers.size() != g.layers.size()) return false;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (!m.layers[l].weights.same_shape(g.layers[l].weights)) return false;
    if (m.layers[l].bias.size() != g.layers[l].bias.size()) return false;
  }
  return true;
}

inline bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!shapes_match(a, b)) return false;
  auto same = [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  };
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto wa = a.layers[l].weights.flat();
    auto wb = b.layers[l].weights.flat();
    for (std::size_t i = 0; i < wa.size(); ++i)
      if (!same(wa[i], wb[i])) return false;
    for (std::size_t i = 0; i < a.layers[l].bias.size(); ++i)
      if (!same(a.layers[l].bias[i], b.layers[l].bias[i])) return false;
  }
  return true;
}

inline double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  if (!shapes_match(a, b))
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto wa = a.layers[l].weights.flat();
    auto wb = b.layers[l].weights.flat();
    for (std::size_t i = 0; i < wa.size(); ++i)
      m = std::max(m, std::abs(wa[i] - wb[i]));
    for (std::size_t i = 0; i < a.layers[l].bias.size(); ++i)
      m = std::max(m, std::abs(a.layers[l].bias[i] - b.layers[l].bias[i]));
  }
  return m;
}

// Glorot-style uniform init in [-sqrt(6/(in+out)), +sqrt(6/(in+out))],
// zero biases, deterministic per seed.
inline ModelParams init_model(const std::vector<std::size_t>& layer_dims,
                              std::uint64_t seed) {
  if (layer_dims.size() < 2)
    throw std::invalid_argument("init_model: need at least input and output dims");
  for (std::size_t d : layer_dims)
    if (d == 0) throw std::invalid_argument("init_model: non-positive dimension");

  ModelParams model;
  model.layer_dims = layer_dims;
  auto rng = make_engine(derive_seed(seed, 0x696e6974));  // "init"
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t in = layer_dims[l];
    const std::size_t out = layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    LayerParams layer;
    layer.weights = Matrix(out, in);
    for (double& w : layer.weights.flat()) w = uniform(rng);
    layer.bias.assign(out, 0.0);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

namespace detail {

struct ForwardTrace {
  std::vector<Matrix> pre;   // z per layer (n x out)
  std::vector<Matrix> act;   // a per layer, act[0] = input
};

inline ForwardTrace forward_trace(const ModelParams& model,
                                  const Matrix& batch) {
  if (batch.cols() != model.input_dim())
    throw std::invalid_argument("forward: batch width " +
                                std::to_string(batch.cols()) +
                                " != input dim " +
                                std::to_string(model.input_dim()));
  ForwardTrace trace;
  trace.act.push_back(batch);
  const std::size_t n = batch.rows();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const std::size_t out = layer.weights.rows();
    const std::size_t in = layer.weights.cols();
    const Matrix& a_prev = trace.act.back();
    Matrix z(n, out);
    for (std::size_t i = 0; i < n; ++i) {
      auto ai = a_prev.row(i);
      auto zi = z.row(i);
      for (std::size_t j = 0; j < out; ++j) {
        double s = layer.bias[j];
        auto wj = layer.weights.row(j);
        for (std::size_t k = 0; k < in; ++k) s += wj[k] * ai[k];
        zi[j] = s;
      }
    }
    Matrix a(n, out);
    const bool last = (l + 1 == model.layers.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j)
        a(i, j) = last ? sigmoid(z(i, j))
                       : (z(i, j) > 0.0 ? z(i, j) : 0.0);
    trace.pre.push_back(std::move(z));
    trace.act.push_back(std::move(a));
  }
  return trace;
}

}  // namespace detail

inline std::vector<double> forward(const ModelParams& model,
                                   const Matrix& batch) {
  if (model.output_dim() != 1)
    throw std::invalid_argument("forward: output layer must have one unit");
  auto trace = detail::forward_trace(model, batch);
  const Matrix& out = trace.act.back();
  std::vector<double> p(batch.rows());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = out(i, 0);
  return p;
}

inline double bce_loss(std::span<const double> probabilities,
                       std::span<const std::uint8_t> labels) {
  return mean_log_loss(probabilities, labels);
}

// Exact gradient of the mean BCE through the ReLU/sigmoid stack. The
// sigmoid+BCE pair collapses to an output delta of (p - y) / n; ReLU takes
// subgradient 0 at exactly 0.
inline Gradients backward(const ModelParams& model, const Matrix& batch,
                          std::span<const std::uint8_t> labels) {
  if (labels.size() != batch.rows())
    throw std::invalid_argument("backward: labels/batch size mismatch");
  if (model.output_dim() != 1)
    throw std::invalid_argument("backward: output layer must have one unit");

  const auto trace = detail::forward_trace(model, batch);
  const std::size_t n = batch.rows();
  const std::size_t L = model.layers.size();

  Gradients grads;
  grads.layers.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    grads.layers[l].weights = Matrix(model.layers[l].weights.rows(),
                                     model.layers[l].weights.cols());
    grads.layers[l].bias.assign(model.layers[l].bias.size(), 0.0);
  }

  Matrix delta(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    delta(i, 0) = (trace.act.back()(i, 0) - static_cast<double>(labels[i])) /
                  static_cast<double>(n);

  for (std::size_t l = L; l-- > 0;) {
    const Matrix& a_prev = trace.act[l];
    const std::size_t out = model.layers[l].weights.rows();
    const std::size_t in = model.layers[l].weights.cols();
    auto& gw = grads.layers[l].weights;
    auto& gb = grads.layers[l].bias;
    for (std::size_t i = 0; i < n; ++i) {
      auto di = delta.row(i);
      auto ai = a_prev.row(i);
      for (std::size_t j = 0; j < out; ++j) {
        const double d = di[j];
        if (d == 0.0) continue;
        gb[j] += d;
        auto gwj = gw.row(j);
        for (std::size_t k = 0; k < in; ++k) gwj[k] += d * ai[k];
      }
    }
    if (l == 0) break;
    Matrix prev_delta(n, in);
    const Matrix& z_prev = trace.pre[l - 1];
    for (std::size_t i = 0; i < n; ++i) {
      auto di = delta.row(i);
      auto pi = prev_delta.row(i);
      for (std::size_t k = 0; k < in; ++k) {
        if (z_prev(i, k) > 0.0) {
          double s = 0.0;
          for (std::size_t j = 0; j < out; ++j)
            s += model.layers[l].weights(j, k) * di[j];
          pi[k] = s;
        } else {
          pi[k] = 0.0;
        }
      }
    }
    delta = std::move(prev_delta);
  }
  return grads;
}

inline void apply_sgd_step(ModelParams& model, const Gradients& grads,
                           double lr) {
  if (!shapes_match(model, grads))
    throw std::invalid_argument("sgd_step: shape mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto w = model.layers[l].weights.flat();
    auto g = grads.layers[l].weights.flat();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i)
      model.layers[l].bias[i] -= lr * grads.layers[l].bias[i];
  }
}

inline ModelParams sgd_step(ModelParams model, const Gradients& grads,
                            double lr) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  apply_sgd_step(model, grads, lr);
  return model;
}

// Gradient of the proximal penalty (mu/2)||w - anchor||^2, i.e.
// mu * (w - anchor) elementwise.
inline Gradients proximal_grad(const ModelParams& model,
                               const ModelParams& anchor, double mu) {
  if (!shapes_match(model, anchor))
    throw std::invalid_argument("proximal_grad: shape mismatch");
  if (mu < 0.0) throw std::invalid_argument("proximal_grad: mu must be >= 0");
  Gradients grads;
  grads.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& mw = model.layers[l].weights;
    const auto& aw = anchor.layers[l].weights;
    grads.layers[l].weights = Matrix(mw.rows(), mw.cols());
    auto out = grads.layers[l].weights.flat();
    auto wm = mw.flat();
    auto wa = aw.flat();
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = mu * (wm[i] - wa[i]);
    grads.layers[l].bias.resize(model.layers[l].bias.size());
    for (std::size_t i = 0; i < grads.layers[l].bias.size(); ++i)
      grads.layers[l].bias[i] =
          mu * (model.layers[l].bias[i] - anchor.layers[l].bias[i]);
  }
  return grads;
}

inline void add_gradients(Gradients& into, const Gradients& other) {
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    auto a = into.layers[l].weights.flat();
    auto b = other.layers[l].weights.flat();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    for (std::size_t i = 0; i < into.layers[l].bias.size(); ++i)
      into.layers[l].bias[i] += other.layers[l].bias[i];
  }
}

inline Matrix gather_batch(const BinaryMatrix& features,
                           std::span<const std::size_t> indices) {
  Matrix batch(indices.size(), features.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = features.row(indices[i]);
    auto dst = batch.row(i);
    for (std::size_t c = 0; c < src.size(); ++c)
      dst[c] = static_cast<double>(src[c]);
  }
  return batch;
}

// Mini-batch SGD on the FedProx local objective: per batch the data
// gradient plus mu * (w - anchor). Batch order is reshuffled every epoch
// from a seed derived from (config seed, client id, round), so concurrent
// clients are independent and replays are exact.
inline ModelParams train_local(ModelParams model, const ClientPartition& part,
                               const ModelParams& anchor,
                               const TrainConfig& config,
                               std::size_t round = 0) {
  const std::size_t n = part.data.rows();
  if (n == 0) throw DataError("train_local: empty partition");
  if (config.local_epochs == 0) return model;
  if (config.batch_size == 0)
    throw std::invalid_argument("train_local: batch_size must be positive");
  if (config.learning_rate <= 0.0)
    throw std::invalid_argument("train_local: learning_rate must be positive");

  auto rng = make_engine(derive_seed(
      config.seed, static_cast<std::uint64_t>(part.client_id), round));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    deterministic_shuffle(order, rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Matrix batch = gather_batch(part.data.features, idx);
      std::vector<std::uint8_t> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        labels[i] = part.data.labels[idx[i]];

      Gradients grads = backward(model, batch, labels);
      if (config.use_proximal)
        add_gradients(grads,
                      proximal_grad(model, anchor, config.proximal_mu));
      apply_sgd_step(model, grads, config.learning_rate);
    }
  }
  return model;
}

// Chunked inference over a full dataset.
inline std::vector<double> predict(const ModelParams& model,
                                   const BinaryMatrix& features,
                                   std::size_t chunk = 1024) {
  std::vector<double> scores;
  scores.reserve(features.rows());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < features.rows(); start += chunk) {
    const std::size_t stop = std::min(features.rows(), start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Matrix batch = gather_batch(features, idx);
    auto p = forward(model, batch);
    scores.insert(scores.end(), p.begin(), p.end());
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned text, 17 significant digits, row-major
// weights then bias per layer. load(store(m)) reproduces m bit-exactly.

inline void save_model(const std::filesystem::path& path,
                       const ModelParams& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "fedbench-model 1\n";
  out << "dims";
  for (std::size_t d : model.layer_dims) out << ' ' << d;
  out << '\n';
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    out << "layer " << l << '\n';
    for (std::size_t j = 0; j < layer.weights.rows(); ++j) {
      auto row = layer.weights.row(j);
      for (std::size_t k = 0; k < row.size(); ++k)
        out << (k ? " " : "") << fmt17(row[k]);
      out << '\n';
    }
    out << "bias";
    for (double b : layer.bias) out << ' ' << fmt17(b);
    out << '\n';
  }
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != "fedbench-model" || version != 1)
    throw DataError("not a model checkpoint: " + path.string());
  in >> tag;
  if (tag != "dims") throw DataError("malformed checkpoint: missing dims");
  std::string line;
  std::getline(in, line);
  std::istringstream dims_in(line);
  ModelParams model;
  std::size_t d;
  while (dims_in >> d) model.layer_dims.push_back(d);
  if (model.layer_dims.size() < 2)
    throw DataError("malformed checkpoint: bad dims");

  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    std::size_t index;
    in >> tag >> index;
    if (tag != "layer" || index != l)
      throw DataError("malformed checkpoint: expected layer " +
                      std::to_string(l));
    LayerParams layer;
    const std::size_t out_dim = model.layer_dims[l + 1];
    const std::size_t in_dim = model.layer_dims[l];
    layer.weights = Matrix(out_dim, in_dim);
    for (std::size_t j = 0; j < out_dim; ++j)
      for (std::size_t k = 0; k < in_dim; ++k)
        if (!(in >> layer.weights(j, k)))
          throw DataError("malformed checkpoint: truncated weights");
    in >> tag;
    if (tag != "bias") throw DataError("malformed checkpoint: missing bias");
    layer.bias.resize(out_dim);
    for (std::size_t j = 0; j < out_dim; ++j)
      if (!(in >> layer.bias[j]))
        throw DataError("malformed checkpoint: truncated bias");
    model.layers.push_back(std::move(layer));
  }
  return model;
}

}  // namespace fedbench::nn
