#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <random>

#include "fedbench/gbdt.hpp"
#include "test_util.hpp"

using namespace fedbench;
using namespace fedbench::gbdt;
using Catch::Approx;

namespace {

// Iterated grid minimization of f(w) = G*w + 0.5*(H+lambda)*w^2,
// independent of the closed form. Each refinement recenters the window on
// the best grid point and evaluates the exact increment
// f(c+d) - f(c) = d*(G + (H+lambda)*c) + 0.5*(H+lambda)*d^2, so location
// precision is not limited by the magnitude of f at the minimum.
struct GridMin {
  double w = 0.0;
  double value = 0.0;
};

GridMin grid_minimize(double G, double H, double lambda) {
  const double curvature = H + lambda;
  double center = 0.0, center_value = 0.0;
  double window = 2.0 * (std::abs(G) / curvature + 1.0);
  while (true) {
    const double step = window / 1000.0;
    double best_d = 0.0, best_delta = 0.0;
    for (int i = -1000; i <= 1000; ++i) {
      const double d = step * static_cast<double>(i);
      const double delta =
          d * (G + curvature * center) + 0.5 * curvature * d * d;
      if (delta < best_delta) {
        best_delta = delta;
        best_d = d;
      }
    }
    center += best_d;
    center_value += best_delta;
    if (step < 1e-12) break;
    window = 4.0 * step;
  }
  return {center, center_value};
}

double grid_min_quadratic(double G, double H, double lambda) {
  return grid_minimize(G, H, lambda).w;
}

double grid_min_objective(double G, double H, double lambda) {
  return grid_minimize(G, H, lambda).value;
}

struct OracleSplit {
  int feature = -1;  // -1 means keep the leaf
  double gain = 0.0;
  // best candidate gain of any sign; -inf when no feature can split
  double best_any = -std::numeric_limits<double>::infinity();
};

// Exhaustive depth-1 search: for every feature, score the 0/1 partition by
// the drop in the grid-minimized second-order objective, charging gamma per
// split. Mirrors the library's tie rule (smallest feature index wins).
OracleSplit exhaustive_root_split(const BinaryMatrix& x,
                                  const std::vector<double>& g,
                                  const std::vector<double>& h,
                                  const BoostConfig& cfg) {
  double G = 0.0, H = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    G += g[r];
    H += h[r];
  }
  const double parent = grid_min_objective(G, H, cfg.lambda);
  OracleSplit best;
  for (std::size_t f = 0; f < x.cols(); ++f) {
    double GR = 0.0, HR = 0.0;
    std::size_t n_right = 0;
    for (std::size_t r = 0; r < x.rows(); ++r)
      if (x(r, f)) {
        GR += g[r];
        HR += h[r];
        ++n_right;
      }
    if (n_right == 0 || n_right == x.rows()) continue;
    const double GL = G - GR, HL = H - HR;
    if (HL < cfg.min_child_weight || HR < cfg.min_child_weight) continue;
    const double gain = parent - grid_min_objective(GL, HL, cfg.lambda) -
                        grid_min_objective(GR, HR, cfg.lambda) - cfg.gamma;
    best.best_any = std::max(best.best_any, gain);
    if (gain > best.gain) {
      best.gain = gain;
      best.feature = static_cast<int>(f);
    }
  }
  return best;
}

std::size_t count_splits(const Tree& tree) {
  std::size_t n = 0;
  for (const auto& node : tree.nodes)
    if (!node.is_leaf()) ++n;
  return n;
}

}  // namespace

TEST_CASE("grad_hess") {
  SECTION("p=0.5, y=1") {
    std::vector<double> p{0.5};
    std::vector<std::uint8_t> y{1};
    std::vector<double> g, h;
    grad_hess(p, y, g, h);
    CHECK(g[0] == -0.5);
    CHECK(h[0] == 0.25);
  }
  SECTION("gradient vanishes as p approaches y") {
    std::vector<double> p{1.0 - 1e-9, 1e-9};
    std::vector<std::uint8_t> y{1, 0};
    std::vector<double> g, h;
    grad_hess(p, y, g, h);
    CHECK(std::abs(g[0]) < 1e-8);
    CHECK(std::abs(g[1]) < 1e-8);
  }
  SECTION("matches finite differences of the logistic loss in the margin") {
    auto rng = make_engine(2);
    std::uniform_real_distribution<double> margin(-3.0, 3.0);
    std::uniform_int_distribution<int> bit(0, 1);
    auto loss = [](double m, int y) {
      const double p = 1.0 / (1.0 + std::exp(-m));
      return y ? -std::log(p) : -std::log(1.0 - p);
    };
    for (int rep = 0; rep < 100; ++rep) {
      const double m = margin(rng);
      const int y = bit(rng);
      const double p = 1.0 / (1.0 + std::exp(-m));
      std::vector<double> pv{p}, g, h;
      std::vector<std::uint8_t> yv{static_cast<std::uint8_t>(y)};
      grad_hess(pv, yv, g, h);
      const double h1 = 1e-6;
      const double fd_g = (loss(m + h1, y) - loss(m - h1, y)) / (2 * h1);
      CHECK(std::abs(g[0] - fd_g) / std::max(1e-8, std::abs(g[0])) < 1e-5);
      const double h2 = 1e-4;
      const double fd_h =
          (loss(m + h2, y) - 2 * loss(m, y) + loss(m - h2, y)) / (h2 * h2);
      CHECK(std::abs(h[0] - fd_h) / std::abs(h[0]) < 1e-4);
    }
  }
}

TEST_CASE("leaf_weight") {
  SECTION("grid oracle confirms the hand case -0.4") {
    CHECK(leaf_weight(2, 4, 1) == Approx(-0.4).margin(1e-15));
    CHECK(grid_min_quadratic(2, 4, 1) == Approx(-0.4).margin(1e-9));
  }
  SECTION("zero gradient sum gives a zero leaf") {
    CHECK(leaf_weight(0, 3, 1) == 0.0);
  }
  SECTION("heavy regularization shrinks toward zero") {
    CHECK(std::abs(leaf_weight(5, 1, 1e12)) < 1e-11);
  }
  SECTION("matches the grid minimizer across random inputs") {
    auto rng = make_engine(3);
    std::uniform_real_distribution<double> gd(-10, 10), hd(0.01, 10),
        ld(0, 5);
    for (int rep = 0; rep < 100; ++rep) {
      const double G = gd(rng), H = hd(rng), lambda = ld(rng);
      CHECK(leaf_weight(G, H, lambda) ==
            Approx(grid_min_quadratic(G, H, lambda)).margin(1e-9));
    }
  }
  SECTION("H + lambda = 0 is an error") {
    CHECK_THROWS_AS(leaf_weight(1, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("split_gain") {
  SECTION("uninformative symmetric split scores zero") {
    CHECK(split_gain(1, 1, 1, 1, 0, 0) == Approx(0.0).margin(1e-15));
  }
  SECTION("hand case: opposing gradients score 2") {
    CHECK(split_gain(-2, 2, 2, 2, 0, 0) == Approx(2.0).margin(1e-15));
    // cross-check against the objective drop computed from leaf weights
    const double parent = grid_min_objective(0, 4, 0);
    const double children =
        grid_min_objective(-2, 2, 0) + grid_min_objective(2, 2, 0);
    CHECK(split_gain(-2, 2, 2, 2, 0, 0) ==
          Approx(parent - children).margin(1e-9));
  }
  SECTION("gamma is a flat additive penalty") {
    auto rng = make_engine(4);
    std::uniform_real_distribution<double> gd(-5, 5), hd(0.1, 5);
    for (int rep = 0; rep < 50; ++rep) {
      const double GL = gd(rng), HL = hd(rng), GR = gd(rng), HR = hd(rng);
      CHECK(split_gain(GL, HL, GR, HR, 1, 5) ==
            Approx(split_gain(GL, HL, GR, HR, 1, 0) - 5).margin(1e-12));
    }
  }
}

TEST_CASE("build_tree") {
  BoostConfig cfg;
  cfg.max_depth = 1;
  cfg.min_child_weight = 0.0;
  cfg.gamma = 0.0;
  cfg.lambda = 1.0;

  SECTION("all-zero gradients give a single zero leaf") {
    BinaryMatrix x(4, 2);
    x(0, 0) = 1;
    x(2, 1) = 1;
    std::vector<double> g(4, 0.0), h(4, 0.0);
    const auto tree = build_tree(x, g, h, cfg);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf());
    CHECK(tree.nodes[0].weight == 0.0);
  }
  SECTION("the perfectly separating feature is chosen") {
    // feature 1 separates the gradient signs exactly; feature 0 is noise
    BinaryMatrix x(6, 2);
    std::vector<double> g{-1, -1, -1, 1, 1, 1};
    std::vector<double> h(6, 0.25);
    for (std::size_t r = 3; r < 6; ++r) x(r, 1) = 1;
    x(0, 0) = x(3, 0) = 1;
    const auto tree = build_tree(x, g, h, cfg);
    REQUIRE_FALSE(tree.nodes[0].is_leaf());
    CHECK(tree.nodes[0].feature == 1);
    const auto oracle = exhaustive_root_split(x, g, h, cfg);
    CHECK(oracle.feature == 1);
  }
  SECTION("max_depth 0 emits the stump leaf weight") {
    BoostConfig stump = cfg;
    stump.max_depth = 0;
    BinaryMatrix x(3, 1);
    std::vector<double> g{1, 2, -0.5}, h{0.5, 0.5, 0.5};
    const auto tree = build_tree(x, g, h, stump);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].weight ==
          Approx(leaf_weight(2.5, 1.5, stump.lambda)).margin(1e-15));
  }
  SECTION("feature ties break to the smallest index") {
    BinaryMatrix x(4, 3);
    // features 1 and 2 are identical copies; both beat feature 0
    std::vector<double> g{-1, -1, 1, 1}, h(4, 0.25);
    for (std::size_t r = 2; r < 4; ++r) {
      x(r, 1) = 1;
      x(r, 2) = 1;
    }
    const auto tree = build_tree(x, g, h, cfg);
    CHECK(tree.nodes[0].feature == 1);
  }
  SECTION("min_child_weight blocks thin splits") {
    BoostConfig strict = cfg;
    strict.min_child_weight = 10.0;
    BinaryMatrix x(4, 1);
    x(2, 0) = x(3, 0) = 1;
    std::vector<double> g{-1, -1, 1, 1}, h(4, 0.25);
    const auto tree = build_tree(x, g, h, strict);
    CHECK(tree.nodes[0].is_leaf());
  }
  SECTION("gamma never increases the number of splits") {
    auto rng = make_engine(6);
    std::uniform_int_distribution<int> bit(0, 1);
    std::uniform_real_distribution<double> gd(-1, 1);
    for (int rep = 0; rep < 20; ++rep) {
      BinaryMatrix x(20, 4);
      std::vector<double> g(20), h(20, 0.25);
      for (std::size_t r = 0; r < 20; ++r) {
        g[r] = gd(rng);
        for (std::size_t c = 0; c < 4; ++c)
          x(r, c) = static_cast<std::uint8_t>(bit(rng));
      }
      BoostConfig deep = cfg;
      deep.max_depth = 4;
      BoostConfig pruned = deep;
      pruned.gamma = 1.0;
      CHECK(count_splits(build_tree(x, g, h, pruned)) <=
            count_splits(build_tree(x, g, h, deep)));
    }
  }
  SECTION("empty input gives a zero leaf") {
    BinaryMatrix x(0, 3);
    std::vector<double> g, h;
    const auto tree = build_tree(x, g, h, cfg);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].weight == 0.0);
  }
}

TEST_CASE("depth-1 selection equals exhaustive search on random data") {
  auto rng = make_engine(777);
  std::uniform_int_distribution<int> rows_draw(2, 16), cols_draw(1, 3),
      bit(0, 1);
  std::uniform_real_distribution<double> gd(-2, 2), hd(0.05, 1.0),
      ld(0.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rows_draw(rng));
    const std::size_t w = static_cast<std::size_t>(cols_draw(rng));
    BinaryMatrix x(n, w);
    std::vector<double> g(n), h(n);
    for (std::size_t r = 0; r < n; ++r) {
      g[r] = gd(rng);
      h[r] = hd(rng);
      for (std::size_t c = 0; c < w; ++c)
        x(r, c) = static_cast<std::uint8_t>(bit(rng));
    }
    BoostConfig cfg;
    cfg.max_depth = 1;
    cfg.min_child_weight = 0.0;
    cfg.lambda = ld(rng);
    if (cfg.lambda == 0.0) cfg.lambda = 0.5;

    const auto tree = build_tree(x, g, h, cfg);
    const auto oracle = exhaustive_root_split(x, g, h, cfg);
    if (std::abs(oracle.best_any) <= 1e-7 &&
        std::isfinite(oracle.best_any))
      continue;  // split-or-not sits inside the grid's resolution
    if (oracle.feature < 0) {
      CHECK(tree.nodes[0].is_leaf());
    } else {
      REQUIRE_FALSE(tree.nodes[0].is_leaf());
      CHECK(tree.nodes[0].feature == oracle.feature);
      CHECK(tree.nodes[0].gain == Approx(oracle.gain).margin(1e-7));
    }
  }
}

TEST_CASE("fit") {
  SECTION("no trees predicts the class prior") {
    const auto data = testutil::make_dataset(
        {{1, 0}, {0, 1}, {1, 1}, {0, 0}}, {1, 0, 1, 0});
    BoostConfig cfg;
    cfg.n_trees = 0;
    const auto model = fit(data, cfg);
    CHECK(model.base_score == Approx(0.0).margin(1e-15));  // 50/50 prior
    const auto pred = predict(model, data.features);
    for (double p : pred.probabilities) CHECK(p == 0.5);
    for (auto label : pred.labels) CHECK(label == 0);  // strict threshold
  }
  SECTION("unbalanced prior lands at the log odds") {
    const auto data = testutil::make_dataset({{1}, {1}, {1}, {0}},
                                             {1, 1, 1, 0});
    BoostConfig cfg;
    cfg.n_trees = 0;
    const auto model = fit(data, cfg);
    CHECK(model.base_score == Approx(std::log(3.0)).margin(1e-12));
  }
  SECTION("one shallow tree does not increase the training loss") {
    const auto data = testutil::make_dataset(
        {{1, 0, 0}, {1, 1, 0}, {0, 0, 1}, {0, 1, 1},
         {1, 0, 1}, {1, 1, 1}, {0, 0, 0}, {0, 1, 0}},
        {1, 1, 0, 0, 1, 1, 0, 0});
    BoostConfig cfg;
    cfg.n_trees = 1;
    cfg.max_depth = 1;
    cfg.min_child_weight = 0.0;
    const auto model = fit(data, cfg);
    std::vector<double> before(data.rows(), sigmoid(model.base_score));
    const auto after = predict(model, data.features);
    CHECK(mean_log_loss(after.probabilities, data.labels) <=
          mean_log_loss(before, data.labels) + 1e-12);
  }
  SECTION("training loss is non-increasing across boosting rounds") {
    auto rng = make_engine(11);
    std::uniform_int_distribution<int> bit(0, 1);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<std::vector<int>> rows(30, std::vector<int>(5));
      std::vector<int> labels(30);
      for (auto& r : rows)
        for (auto& b : r) b = bit(rng);
      for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = rows[i][0] ^ (bit(rng) == 0 && bit(rng) == 0 ? 1 : 0);
      if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
      if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;
      const auto data = testutil::make_dataset(rows, labels);

      BoostConfig cfg;
      cfg.n_trees = 30;
      cfg.eta = 0.3;
      cfg.max_depth = 3;
      cfg.gamma = 0.0;
      const auto model = fit(data, cfg);

      std::vector<double> margin(data.rows(), model.base_score);
      std::vector<double> p(data.rows());
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t <= model.trees.size(); ++t) {
        for (std::size_t i = 0; i < data.rows(); ++i) p[i] = sigmoid(margin[i]);
        const double loss = mean_log_loss(p, data.labels);
        CHECK(loss <= prev + 1e-12);
        prev = loss;
        if (t < model.trees.size())
          for (std::size_t i = 0; i < data.rows(); ++i)
            margin[i] +=
                cfg.eta * model.trees[t].value(data.features.row(i));
      }
    }
  }
  SECTION("single-class data is an error") {
    const auto data = testutil::make_dataset({{1}, {0}}, {1, 1});
    CHECK_THROWS_AS(fit(data, BoostConfig{}), DataError);
  }
}

TEST_CASE("predict") {
  const auto data = testutil::make_dataset(
      {{1, 0}, {0, 1}, {1, 1}, {0, 0}}, {1, 0, 1, 0});
  BoostConfig cfg;
  cfg.n_trees = 5;
  cfg.max_depth = 2;
  cfg.min_child_weight = 0.0;
  const auto model = fit(data, cfg);

  SECTION("width mismatch is an error") {
    BinaryMatrix narrow(1, 1);
    CHECK_THROWS_AS(predict(model, narrow), std::invalid_argument);
  }
  SECTION("duplicate rows get identical probabilities") {
    BinaryMatrix x(2, 2);
    x(0, 0) = x(1, 0) = 1;
    const auto pred = predict(model, x);
    CHECK(pred.probabilities[0] == pred.probabilities[1]);
  }
  SECTION("a separable stump drives training accuracy to 100%") {
    const auto sep = testutil::make_dataset(
        {{1, 0}, {1, 1}, {0, 0}, {0, 1}, {1, 0}, {0, 1}},
        {1, 1, 0, 0, 1, 0});
    BoostConfig stump;
    stump.n_trees = 20;
    stump.max_depth = 1;
    stump.min_child_weight = 0.0;
    const auto m = fit(sep, stump);
    const auto pred = predict(m, sep.features);
    for (std::size_t i = 0; i < sep.rows(); ++i)
      CHECK(pred.labels[i] == sep.labels[i]);
  }
}

TEST_CASE("feature_importance") {
  SECTION("a stump credits only its split feature") {
    const auto sep = testutil::make_dataset(
        {{1, 0}, {1, 0}, {0, 0}, {0, 0}}, {1, 1, 0, 0});
    BoostConfig cfg;
    cfg.n_trees = 1;
    cfg.max_depth = 1;
    cfg.min_child_weight = 0.0;
    const auto model = fit(sep, cfg);
    const auto ranking = feature_importance(model);
    REQUIRE(ranking.size() == 1);
    CHECK(ranking[0].first == "f0");
    CHECK(ranking[0].second > 0.0);
  }
  SECTION("empty ensemble ranks nothing") {
    BoostedEnsemble empty;
    CHECK(feature_importance(empty).empty());
  }
  SECTION("gains add across trees") {
    BoostedEnsemble model;
    model.feature_names = {"a", "b"};
    Tree t1, t2;
    t1.nodes.push_back({1, 1, 2, 0.0, 2.0});
    t1.nodes.push_back({-1, -1, -1, 0.1, 0.0});
    t1.nodes.push_back({-1, -1, -1, -0.1, 0.0});
    t2.nodes.push_back({1, 1, 2, 0.0, 3.0});
    t2.nodes.push_back({-1, -1, -1, 0.2, 0.0});
    t2.nodes.push_back({-1, -1, -1, -0.2, 0.0});
    model.trees = {t1, t2};
    const auto ranking = feature_importance(model);
    REQUIRE(ranking.size() == 1);
    CHECK(ranking[0].first == "b");
    CHECK(ranking[0].second == Approx(5.0).margin(1e-15));
  }
}

TEST_CASE("ensemble dump reloads and re-predicts bit-identically") {
  const auto dir = testutil::make_temp_dir("gbdt_dump");
  auto rng = make_engine(123);
  std::uniform_int_distribution<int> bit(0, 1);
  std::vector<std::vector<int>> rows(40, std::vector<int>(6));
  std::vector<int> labels(40);
  for (auto& r : rows)
    for (auto& b : r) b = bit(rng);
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = rows[i][2] | (rows[i][4] & bit(rng));
  if (std::count(labels.begin(), labels.end(), 0) == 0) labels[0] = 0;
  if (std::count(labels.begin(), labels.end(), 1) == 0) labels[1] = 1;
  const auto data = testutil::make_dataset(rows, labels);

  BoostConfig cfg;
  cfg.n_trees = 12;
  cfg.max_depth = 3;
  const auto model = fit(data, cfg);
  save_ensemble(dir / "model.txt", model);
  const auto loaded = load_ensemble(dir / "model.txt");

  CHECK(loaded.width == model.width);
  CHECK(loaded.config.eta == model.config.eta);
  CHECK(loaded.trees.size() == model.trees.size());

  const auto a = predict(model, data.features);
  const auto b = predict(loaded, data.features);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(a.probabilities[i]) ==
          std::bit_cast<std::uint64_t>(b.probabilities[i]));
    CHECK(a.labels[i] == b.labels[i]);
  }

  SECTION("malformed dump is rejected") {
    std::ofstream bad(dir / "bad.txt");
    bad << "fedbench-gbdt 1\nnot right\n";
    bad.close();
    CHECK_THROWS_AS(load_ensemble(dir / "bad.txt"), DataError);
  }
}
