#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedbench/csv.hpp"
#include "fedbench/rng.hpp"

namespace fedbench::synth {

// Desk-scale substitute for the national microdata. Each school draws its
// category distributions from a shared prior, skewed per school by the
// heterogeneity knob: 0 gives identical (IID) clients, 1 gives fully
// school-specific distributions. The proficiency score is a logistic
// function of a hidden linear model over the drawn categories plus noise,
// so both learners have a real signal to find.
struct SyntheticSpec {
  std::size_t schools = 50;
  std::size_t rows_min = 35;
  std::size_t rows_max = 45;
  // (column, #categories); pre-populated with the default questionnaire.
  std::vector<std::pair<std::string, std::size_t>> feature_spec =
      default_features();
  double heterogeneity = 0.5;
  double noise_sd = 0.5;
  double missing_rate = 0.0;  // fraction of feature cells emitted as "."
  std::uint64_t seed = 42;

  // 11 questionnaire-style columns totaling 54 categories.
  static std::vector<std::pair<std::string, std::size_t>> default_features() {
    return {{"TX_RESP_Q01", 2}, {"TX_RESP_Q02", 6}, {"TX_RESP_Q03", 4},
            {"TX_RESP_Q04", 8}, {"TX_RESP_Q05a", 8}, {"TX_RESP_Q06", 7},
            {"TX_RESP_Q07", 5}, {"TX_RESP_Q08", 4},  {"TX_RESP_Q09", 5},
            {"TX_RESP_Q10", 3}, {"TX_RESP_Q11", 2}};
  }

  void validate() const {
    if (schools < 1) throw ConfigError("synthetic: schools must be >= 1");
    if (rows_min < 1 || rows_max < rows_min)
      throw ConfigError("synthetic: invalid rows_per_school range");
    if (heterogeneity < 0.0 || heterogeneity > 1.0)
      throw ConfigError("synthetic: heterogeneity must be in [0,1]");
    if (missing_rate < 0.0 || missing_rate >= 1.0)
      throw ConfigError("synthetic: missing_rate must be in [0,1)");
  }
};

namespace detail {

inline std::vector<double> dirichlet(std::size_t k, double alpha,
                                     std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> w(k);
  double sum = 0.0;
  for (auto& x : w) sum += (x = gamma(rng));
  for (auto& x : w) x /= sum;
  return w;
}

inline std::size_t draw_category(const std::vector<double>& weights,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

inline std::string category_code(std::size_t index) {
  return std::string(1, static_cast<char>('A' + index));
}

}  // namespace detail

inline RawTable generate_synthetic(const SyntheticSpec& spec) {
  const SyntheticSpec& s = spec;
  if (s.feature_spec.empty())
    throw ConfigError("synthetic: empty feature_spec");
  s.validate();
  for (const auto& [name, count] : s.feature_spec)
    if (count < 1 || count > 26)
      throw ConfigError("synthetic: column '" + name +
                        "' needs 1..26 categories");

  auto rng = make_engine(derive_seed(s.seed, 0x73796e74));  // "synt"
  const std::size_t n_cols = s.feature_spec.size();

  // Shared prior over categories and the hidden linear model.
  std::vector<std::vector<double>> global_weights(n_cols);
  std::vector<std::vector<double>> coefficients(n_cols);
  std::normal_distribution<double> coef_draw(0.0, 1.0);
  for (std::size_t c = 0; c < n_cols; ++c) {
    const std::size_t k = s.feature_spec[c].second;
    global_weights[c] = detail::dirichlet(k, 3.0, rng);
    coefficients[c].resize(k);
    for (auto& w : coefficients[c]) w = coef_draw(rng);
  }

  RawTable table;
  table.column_names.push_back("ID_ESCOLA");
  table.column_names.push_back("PROFICIENCIA_MT");
  for (const auto& [name, count] : s.feature_spec)
    table.column_names.push_back(name);

  std::normal_distribution<double> noise(0.0, s.noise_sd);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = s.heterogeneity;

  for (std::size_t school = 0; school < s.schools; ++school) {
    // Per-school mixture of the shared prior and a school-specific draw.
    std::vector<std::vector<double>> school_weights(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) {
      const std::size_t k = s.feature_spec[c].second;
      auto local = detail::dirichlet(k, 0.5, rng);
      school_weights[c].resize(k);
      for (std::size_t i = 0; i < k; ++i)
        school_weights[c][i] = (1.0 - h) * global_weights[c][i] + h * local[i];
    }

    std::uniform_int_distribution<std::size_t> row_count(s.rows_min,
                                                         s.rows_max);
    const std::size_t rows = row_count(rng);
    const std::int64_t school_id = 1000 + static_cast<std::int64_t>(school);

    for (std::size_t r = 0; r < rows; ++r) {
      Row row;
      row.reserve(2 + n_cols);
      row.emplace_back(std::to_string(school_id));

      double z = 0.0;
      std::vector<std::size_t> cats(n_cols);
      for (std::size_t c = 0; c < n_cols; ++c) {
        cats[c] = detail::draw_category(school_weights[c], rng);
        z += coefficients[c][cats[c]];
      }
      const double prof =
          150.0 + 200.0 / (1.0 + std::exp(-(z + noise(rng))));
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", prof);
      row.emplace_back(buf);

      for (std::size_t c = 0; c < n_cols; ++c) {
        if (s.missing_rate > 0.0 && unit(rng) < s.missing_rate)
          row.emplace_back(".");
        else
          row.emplace_back(detail::category_code(cats[c]));
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace fedbench::synth
