#pragma once

// Probability primitives shared by the process and the agent: categorical
// vectors, conditional tensors, Dirichlet counts and a few numerics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

namespace mibci {

struct DegenerateDistribution : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Floor applied inside logarithms.
inline constexpr double kLogFloor = 1e-16;

inline double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

/// A normalized probability vector.
class Categorical {
 public:
  Categorical() = default;

  /// Wraps an already-normalized vector. Checked.
  static Categorical from_probs(std::vector<double> probs) {
    if (probs.empty()) throw ShapeError("Categorical: empty vector");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw DegenerateDistribution("Categorical: negative or NaN entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DegenerateDistribution("Categorical: entries do not sum to 1");
    Categorical c;
    c.probs_ = std::move(probs);
    return c;
  }

  static Categorical uniform(std::size_t n) {
    if (n == 0) throw ShapeError("Categorical: empty vector");
    Categorical c;
    c.probs_.assign(n, 1.0 / static_cast<double>(n));
    return c;
  }

  static Categorical one_hot(std::size_t n, std::size_t index) {
    if (index >= n) throw ShapeError("Categorical: one-hot index out of range");
    Categorical c;
    c.probs_.assign(n, 0.0);
    c.probs_[index] = 1.0;
    return c;
  }

  [[nodiscard]] std::size_t size() const { return probs_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return probs_[i]; }
  [[nodiscard]] std::span<const double> probs() const { return probs_; }
  [[nodiscard]] const std::vector<double>& vec() const { return probs_; }

  [[nodiscard]] double entropy() const {
    double h = 0.0;
    for (double p : probs_)
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }

  [[nodiscard]] double mean_index() const {
    double m = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) m += static_cast<double>(i) * probs_[i];
    return m;
  }

  friend bool operator==(const Categorical&, const Categorical&) = default;

 private:
  friend Categorical normalize(std::span<const double> raw);
  std::vector<double> probs_;
};

/// Rescales a non-negative vector to sum to one.
inline Categorical normalize(std::span<const double> raw) {
  if (raw.empty()) throw ShapeError("normalize: empty vector");
  double sum = 0.0;
  for (double x : raw) {
    if (!(x >= 0.0)) throw DegenerateDistribution("normalize: negative or NaN entry");
    sum += x;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) throw DegenerateDistribution("normalize: no positive mass");
  Categorical c;
  c.probs_.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) c.probs_[i] = raw[i] / sum;
  return c;
}

inline Categorical normalize(const std::vector<double>& raw) { return normalize(std::span<const double>(raw)); }

/// Distribution proportional to exp(precision * logit), stabilized by max-subtraction.
inline Categorical softmax(std::span<const double> logits, double precision = 1.0) {
  if (logits.empty()) throw ShapeError("softmax: empty vector");
  if (std::isnan(precision) || precision < 0.0) throw InvalidInput("softmax: precision must be >= 0");
  double top = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (std::isnan(x)) throw InvalidInput("softmax: NaN logit");
    top = std::max(top, precision * x);
  }
  std::vector<double> w(logits.size());
  if (precision == 0.0 || !std::isfinite(top)) {
    // precision 0, or every scaled logit is -inf: fall back to ties among the maxima
    if (precision == 0.0) return Categorical::uniform(logits.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (precision * logits[i] == top) ? 1.0 : 0.0;
    return normalize(w);
  }
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(precision * logits[i] - top);
  return normalize(w);
}

inline Categorical softmax(const std::vector<double>& logits, double precision = 1.0) {
  return softmax(std::span<const double>(logits), precision);
}

/// KL(p || q) with the 0 ln 0 = 0 convention. Returns +infinity when q lacks
/// support somewhere p has mass.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

inline double kl_divergence(const Categorical& p, const Categorical& q) { return kl_divergence(p.probs(), q.probs()); }

/// Sorted bin centers on which continuous quantities are discretized.
class BinGrid {
 public:
  explicit BinGrid(std::vector<double> centers) : centers_(std::move(centers)) {
    if (centers_.empty()) throw ShapeError("BinGrid: no bins");
    for (std::size_t i = 1; i < centers_.size(); ++i)
      if (!(centers_[i] > centers_[i - 1])) throw InvalidInput("BinGrid: centers must be strictly increasing");
  }

  static BinGrid equispaced(double lo, double hi, std::size_t n) {
    if (n < 2) return BinGrid({lo});
    std::vector<double> c(n);
    for (std::size_t j = 0; j < n; ++j) c[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n - 1);
    return BinGrid(std::move(c));
  }

  [[nodiscard]] std::size_t size() const { return centers_.size(); }
  [[nodiscard]] double operator[](std::size_t j) const { return centers_[j]; }
  [[nodiscard]] std::span<const double> centers() const { return centers_; }
  [[nodiscard]] double span_width() const { return centers_.back() - centers_.front(); }
  /// Mean spacing between neighbouring centers (1 for single-bin grids).
  [[nodiscard]] double bin_width() const {
    return centers_.size() < 2 ? 1.0 : span_width() / static_cast<double>(centers_.size() - 1);
  }

 private:
  std::vector<double> centers_;
};

enum class GaussianRule { center_density, interval_integral };

/// Projects N(mean, sigma) onto the grid. `mean` and `sigma` are in the same
/// units as the grid centers.
inline Categorical discretize_gaussian(double mean, double sigma, const BinGrid& grid,
                                       GaussianRule rule = GaussianRule::center_density) {
  if (!(sigma > 0.0)) throw InvalidInput("discretize_gaussian: sigma must be > 0");
  const std::size_t n = grid.size();
  if (rule == GaussianRule::center_density) {
    std::vector<double> logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double z = (grid[j] - mean) / sigma;
      logits[j] = -0.5 * z * z;
    }
    return softmax(logits, 1.0);
  }
  // Interval rule: bin j covers the midpoints to its neighbours; outer bins are open.
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sigma * std::sqrt(2.0))); };
  std::vector<double> mass(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double lo = j == 0 ? 0.0 : cdf(0.5 * (grid[j - 1] + grid[j]));
    const double hi = j + 1 == n ? 1.0 : cdf(0.5 * (grid[j] + grid[j + 1]));
    mass[j] = std::max(hi - lo, 0.0);
  }
  double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) {
    // far tails underflow; nearest bin wins
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(grid[j] - mean) < std::abs(grid[best] - mean)) best = j;
    return Categorical::one_hot(n, best);
  }
  return normalize(mass);
}

/// Row-major tensor indexed [outcome, condition...] whose outcome slices are
/// probability vectors. Element (o, c) lives at o * conditions() + c.
class ConditionalTensor {
 public:
  ConditionalTensor() = default;
  ConditionalTensor(std::size_t outcomes, std::vector<std::size_t> condition_dims, double fill = 0.0)
      : outcomes_(outcomes), dims_(std::move(condition_dims)) {
    conditions_ = 1;
    for (auto d : dims_) conditions_ *= d;
    data_.assign(outcomes_ * conditions_, fill);
  }

  [[nodiscard]] std::size_t outcomes() const { return outcomes_; }
  [[nodiscard]] std::size_t conditions() const { return conditions_; }
  [[nodiscard]] const std::vector<std::size_t>& condition_dims() const { return dims_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  double& at(std::size_t outcome, std::size_t condition) { return data_[outcome * conditions_ + condition]; }
  [[nodiscard]] double at(std::size_t outcome, std::size_t condition) const {
    return data_[outcome * conditions_ + condition];
  }

  [[nodiscard]] std::vector<double> slice(std::size_t condition) const {
    std::vector<double> s(outcomes_);
    for (std::size_t o = 0; o < outcomes_; ++o) s[o] = at(o, condition);
    return s;
  }
  void set_slice(std::size_t condition, std::span<const double> values) {
    if (values.size() != outcomes_) throw ShapeError("ConditionalTensor: slice length mismatch");
    for (std::size_t o = 0; o < outcomes_; ++o) at(o, condition) = values[o];
  }

  /// Largest |sum - 1| over all condition slices.
  [[nodiscard]] double max_normalization_error() const {
    double worst = 0.0;
    for (std::size_t c = 0; c < conditions_; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outcomes_; ++o) s += at(o, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  [[nodiscard]] std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  friend bool operator==(const ConditionalTensor&, const ConditionalTensor&) = default;

 private:
  std::size_t outcomes_ = 0;
  std::size_t conditions_ = 0;
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

/// Dirichlet concentration parameters with the same layout as a ConditionalTensor.
class DirichletCounts {
 public:
  DirichletCounts() = default;
  explicit DirichletCounts(ConditionalTensor counts) : counts_(std::move(counts)) {
    for (double c : counts_.data())
      if (!(c > 0.0)) throw InvalidInput("DirichletCounts: every count must be > 0");
  }

  [[nodiscard]] const ConditionalTensor& tensor() const { return counts_; }
  [[nodiscard]] std::size_t outcomes() const { return counts_.outcomes(); }
  [[nodiscard]] std::size_t conditions() const { return counts_.conditions(); }
  [[nodiscard]] double at(std::size_t outcome, std::size_t condition) const { return counts_.at(outcome, condition); }

  /// Adds `amount` to one cell. Learning only ever increases counts.
  void add(std::size_t outcome, std::size_t condition, double amount) { counts_.at(outcome, condition) += amount; }

  [[nodiscard]] double slice_sum(std::size_t condition) const {
    double s = 0.0;
    for (std::size_t o = 0; o < outcomes(); ++o) s += at(o, condition);
    return s;
  }

  [[nodiscard]] double total() const {
    const auto d = counts_.data();
    return std::accumulate(d.begin(), d.end(), 0.0);
  }

  /// Posterior-mean conditional tensor.
  [[nodiscard]] ConditionalTensor expectation() const {
    ConditionalTensor e = counts_;
    for (std::size_t c = 0; c < conditions(); ++c) {
      const double s = slice_sum(c);
      for (std::size_t o = 0; o < outcomes(); ++o) e.at(o, c) = at(o, c) / s;
    }
    return e;
  }

  friend bool operator==(const DirichletCounts&, const DirichletCounts&) = default;

 private:
  ConditionalTensor counts_;
};

/// E[ln theta] under the Dirichlet: digamma(count) - digamma(slice sum). With
/// `use_digamma == false` falls back to ln of the normalized counts.
inline ConditionalTensor expected_log(const DirichletCounts& counts, bool use_digamma = true) {
  ConditionalTensor out = counts.tensor();
  for (std::size_t c = 0; c < counts.conditions(); ++c) {
    const double s = counts.slice_sum(c);
    const double psi_sum = use_digamma ? boost::math::digamma(s) : 0.0;
    for (std::size_t o = 0; o < counts.outcomes(); ++o) {
      const double a = counts.at(o, c);
      out.at(o, c) = use_digamma ? boost::math::digamma(a) - psi_sum : safe_log(a / s);
    }
  }
  return out;
}

}  // namespace mibci
