#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace fedbench {

// Error categories map to CLI exit codes: ConfigError -> 1, DataError -> 2,
// anything else -> 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that reloads bit-exactly (17 significant digits).
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Logistic function, clamped into the open interval (0,1) so downstream
// logs and the strict-range contract survive saturated inputs.
inline double sigmoid(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(p, lo, hi);
}

inline constexpr double kLogLossEps = 1e-7;

// Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].
inline double mean_log_loss(std::span<const double> p,
                            std::span<const std::uint8_t> y,
                            double eps = kLogLossEps) {
  if (p.size() != y.size())
    throw std::invalid_argument("mean_log_loss: length mismatch");
  if (p.empty()) throw std::invalid_argument("mean_log_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::clamp(p[i], eps, 1.0 - eps);
    sum += y[i] ? -std::log(pi) : -std::log(1.0 - pi);
  }
  return sum / static_cast<double>(p.size());
}

}  // namespace fedbench
