#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedbench/common.hpp"
#include "fedbench/matrix.hpp"
#include "fedbench/pipeline.hpp"

namespace fedbench::gbdt {

struct BoostConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 6;
  double eta = 0.3;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (max_depth > 48) throw ConfigError("boost: max_depth too large");
    if (eta <= 0.0 || eta > 1.0) throw ConfigError("boost: eta must be in (0,1]");
    if (lambda < 0.0 || gamma < 0.0 || min_child_weight < 0.0)
      throw ConfigError("boost: lambda/gamma/min_child_weight must be >= 0");
  }
};

// Regression tree over binary features, stored as a flat node arena.
// Feature value 0 goes left, 1 goes right.
struct Tree {
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    std::int32_t left = -1;
    std::int32_t right = -1;
    double weight = 0.0;        // leaf score
    double gain = 0.0;          // realized split gain (internal nodes)

    bool is_leaf() const { return feature < 0; }
  };
  std::vector<Node> nodes;

  double value(std::span<const std::uint8_t> row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf())
      i = static_cast<std::size_t>(row[nodes[i].feature] ? nodes[i].right
                                                         : nodes[i].left);
    return nodes[i].weight;
  }
};

struct BoostedEnsemble {
  std::vector<Tree> trees;
  double base_score = 0.0;
  std::size_t width = 0;
  BoostConfig config;
  std::vector<std::string> feature_names;
};

// First and second derivatives of the logistic loss w.r.t. the margin.
inline void grad_hess(std::span<const double> predictions,
                      std::span<const std::uint8_t> labels,
                      std::vector<double>& g, std::vector<double>& h) {
  g.resize(predictions.size());
  h.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    g[i] = predictions[i] - static_cast<double>(labels[i]);
    h[i] = predictions[i] * (1.0 - predictions[i]);
  }
}

inline double leaf_weight(double G, double H, double lambda) {
  if (H + lambda <= 0.0)
    throw std::invalid_argument("leaf_weight: H + lambda must be positive");
  return -G / (H + lambda);
}

inline double split_gain(double GL, double HL, double GR, double HR,
                         double lambda, double gamma) {
  return 0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) -
                (GL + GR) * (GL + GR) / (HL + HR + lambda)) -
         gamma;
}

namespace detail {

struct NodeStats {
  double G = 0.0;
  double H = 0.0;
};

// Depth-first greedy growth. A node splits on the feature with the highest
// gain when that gain is positive and both children carry enough hessian
// mass; feature-index ties resolve to the smallest index via the strict
// comparison.
inline std::int32_t grow(Tree& tree, const BinaryMatrix& features,
                         std::span<const double> g, std::span<const double> h,
                         std::vector<std::size_t>& rows, std::size_t depth,
                         const BoostConfig& config) {
  const std::int32_t id = static_cast<std::int32_t>(tree.nodes.size());
  tree.nodes.emplace_back();

  if (rows.empty()) {
    tree.nodes[id].weight = 0.0;
    return id;
  }

  NodeStats total;
  for (std::size_t r : rows) {
    total.G += g[r];
    total.H += h[r];
  }

  std::int32_t best_feature = -1;
  double best_gain = 0.0;
  if (depth < config.max_depth) {
    const std::size_t width = features.cols();
    for (std::size_t f = 0; f < width; ++f) {
      NodeStats right;  // feature value 1
      std::size_t n_right = 0;
      for (std::size_t r : rows) {
        if (features(r, f)) {
          right.G += g[r];
          right.H += h[r];
          ++n_right;
        }
      }
      if (n_right == 0 || n_right == rows.size()) continue;
      const double GL = total.G - right.G;
      const double HL = total.H - right.H;
      if (HL < config.min_child_weight || right.H < config.min_child_weight)
        continue;
      if (HL + config.lambda <= 0.0 || right.H + config.lambda <= 0.0) continue;
      const double gain = split_gain(GL, HL, right.G, right.H, config.lambda,
                                     config.gamma);
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = static_cast<std::int32_t>(f);
      }
    }
  }

  if (best_feature < 0) {
    tree.nodes[id].weight = leaf_weight(total.G, total.H, config.lambda);
    return id;
  }

  std::vector<std::size_t> left_rows, right_rows;
  left_rows.reserve(rows.size());
  for (std::size_t r : rows)
    (features(r, static_cast<std::size_t>(best_feature)) ? right_rows
                                                         : left_rows)
        .push_back(r);
  rows.clear();
  rows.shrink_to_fit();

  tree.nodes[id].feature = best_feature;
  tree.nodes[id].gain = best_gain;
  const std::int32_t left =
      grow(tree, features, g, h, left_rows, depth + 1, config);
  tree.nodes[id].left = left;
  const std::int32_t right =
      grow(tree, features, g, h, right_rows, depth + 1, config);
  tree.nodes[id].right = right;
  return id;
}

}  // namespace detail

inline Tree build_tree(const BinaryMatrix& features, std::span<const double> g,
                       std::span<const double> h, const BoostConfig& config) {
  if (g.size() != features.rows() || h.size() != features.rows())
    throw std::invalid_argument("build_tree: gradient/row count mismatch");
  Tree tree;
  std::vector<std::size_t> rows(features.rows());
  std::iota(rows.begin(), rows.end(), 0);
  detail::grow(tree, features, g, h, rows, 0, config);
  return tree;
}

inline BoostedEnsemble fit(const Dataset& train, const BoostConfig& config) {
  config.validate();
  const std::size_t n = train.rows();
  std::size_t positives = 0;
  for (auto y : train.labels) positives += y;
  if (positives == 0 || positives == n)
    throw DataError("fit: training data contains a single class");

  BoostedEnsemble model;
  model.config = config;
  model.width = train.width();
  model.feature_names = train.feature_names;
  const double prior = static_cast<double>(positives) / static_cast<double>(n);
  model.base_score = std::log(prior / (1.0 - prior));

  std::vector<double> margin(n, model.base_score);
  std::vector<double> p(n), g, h;
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) p[i] = sigmoid(margin[i]);
    grad_hess(p, train.labels, g, h);
    Tree tree = build_tree(train.features, g, h, config);
    for (std::size_t i = 0; i < n; ++i)
      margin[i] += config.eta * tree.value(train.features.row(i));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

struct Prediction {
  std::vector<double> probabilities;
  std::vector<std::uint8_t> labels;  // 1 iff probability > 0.5
};

inline Prediction predict(const BoostedEnsemble& model,
                          const BinaryMatrix& features) {
  if (features.cols() != model.width)
    throw std::invalid_argument("predict: feature width " +
                                std::to_string(features.cols()) +
                                " != training width " +
                                std::to_string(model.width));
  Prediction out;
  out.probabilities.resize(features.rows());
  out.labels.resize(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double margin = model.base_score;
    auto row = features.row(r);
    for (const Tree& tree : model.trees)
      margin += model.config.eta * tree.value(row);
    const double prob = sigmoid(margin);
    out.probabilities[r] = prob;
    out.labels[r] = prob > 0.5 ? 1 : 0;
  }
  return out;
}

// Total realized split gain per feature, descending; only features that
// actually split appear. Ties order by feature index.
inline std::vector<std::pair<std::string, double>> feature_importance(
    const BoostedEnsemble& model) {
  std::map<std::int32_t, double> gain_by_feature;
  for (const Tree& tree : model.trees)
    for (const auto& node : tree.nodes)
      if (!node.is_leaf()) gain_by_feature[node.feature] += node.gain;

  std::vector<std::pair<std::int32_t, double>> ranked(gain_by_feature.begin(),
                                                      gain_by_feature.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  std::vector<std::pair<std::string, double>> out;
  out.reserve(ranked.size());
  for (const auto& [feature, gain] : ranked) {
    const auto idx = static_cast<std::size_t>(feature);
    std::string name = idx < model.feature_names.size()
                           ? model.feature_names[idx]
                           : "f" + std::to_string(feature);
    out.emplace_back(std::move(name), gain);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text dump: one block per tree, node i on line i as either
// "<feature>:<left>,<right>" or "leaf:<weight>". Reload re-predicts
// bit-identically.

inline void save_ensemble(const std::filesystem::path& path,
                          const BoostedEnsemble& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "fedbench-gbdt 1\n";
  out << "base_score " << fmt17(model.base_score) << '\n';
  out << "config n_trees " << model.config.n_trees << " max_depth "
      << model.config.max_depth << " eta " << fmt17(model.config.eta)
      << " lambda " << fmt17(model.config.lambda) << " gamma "
      << fmt17(model.config.gamma) << " min_child_weight "
      << fmt17(model.config.min_child_weight) << " seed " << model.config.seed
      << '\n';
  out << "width " << model.width << '\n';
  out << "trees " << model.trees.size() << '\n';
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const Tree& tree = model.trees[t];
    out << "tree " << t << " nodes " << tree.nodes.size() << '\n';
    for (const auto& node : tree.nodes) {
      if (node.is_leaf())
        out << "leaf:" << fmt17(node.weight) << '\n';
      else
        out << node.feature << ':' << node.left << ',' << node.right << '\n';
    }
  }
}

inline BoostedEnsemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  auto fail = [&](const std::string& what) {
    return DataError("malformed model dump (" + what + "): " + path.string());
  };
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != "fedbench-gbdt" || version != 1) throw fail("header");

  BoostedEnsemble model;
  in >> tag >> model.base_score;
  if (tag != "base_score") throw fail("base_score");
  in >> tag;
  if (tag != "config") throw fail("config");
  while (in >> tag && tag != "width") {
    if (tag == "n_trees") in >> model.config.n_trees;
    else if (tag == "max_depth") in >> model.config.max_depth;
    else if (tag == "eta") in >> model.config.eta;
    else if (tag == "lambda") in >> model.config.lambda;
    else if (tag == "gamma") in >> model.config.gamma;
    else if (tag == "min_child_weight") in >> model.config.min_child_weight;
    else if (tag == "seed") in >> model.config.seed;
    else throw fail("config key " + tag);
  }
  if (tag != "width") throw fail("width");
  in >> model.width;
  std::size_t n_trees = 0;
  in >> tag >> n_trees;
  if (tag != "trees") throw fail("trees");

  for (std::size_t t = 0; t < n_trees; ++t) {
    std::size_t index = 0, n_nodes = 0;
    in >> tag >> index;
    if (tag != "tree" || index != t) throw fail("tree header");
    in >> tag >> n_nodes;
    if (tag != "nodes") throw fail("node count");
    std::string line;
    std::getline(in, line);  // consume end of header line
    Tree tree;
    tree.nodes.reserve(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (!std::getline(in, line)) throw fail("truncated tree");
      Tree::Node node;
      const auto colon = line.find(':');
      if (colon == std::string::npos) throw fail("node line");
      if (line.compare(0, colon, "leaf") == 0) {
        const auto weight = parse_double(line.substr(colon + 1));
        if (!weight) throw fail("leaf weight");
        node.weight = *weight;
      } else {
        const auto feature = parse_int(line.substr(0, colon));
        const auto comma = line.find(',', colon);
        if (!feature || comma == std::string::npos) throw fail("split line");
        const auto left =
            parse_int(std::string_view(line).substr(colon + 1, comma - colon - 1));
        const auto right = parse_int(std::string_view(line).substr(comma + 1));
        if (!left || !right) throw fail("split children");
        node.feature = static_cast<std::int32_t>(*feature);
        node.left = static_cast<std::int32_t>(*left);
        node.right = static_cast<std::int32_t>(*right);
      }
      tree.nodes.push_back(node);
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

}  // namespace fedbench::gbdt
