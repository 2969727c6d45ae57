// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense kernels, seeded initializers and a limited-memory quasi-Newton
// minimizer shared by the rest of the library.

#ifndef LSSL_LINALG_HPP_
#define LSSL_LINALG_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lssl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised for inconsistent shapes, invalid hyper-parameters and bad configs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

/// Explicitly seeded generator. Never shared between threads; use split().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream derived from (seed, stream).
  Rng split(std::uint64_t stream) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return Rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double normal() { return normal_(engine_); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  /// Full generator state as text (seed, engine, cached normal).
  std::string state() const {
    std::ostringstream out;
    out << seed_ << ' ' << engine_ << ' ' << normal_;
    return out.str();
  }

  void set_state(const std::string& s) {
    std::istringstream in(s);
    in >> seed_ >> engine_ >> normal_;
    require(!in.fail(), "Rng: malformed state string");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(),
          "matmul: dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  return a * b;
}

inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix gaussian_matrix(Eigen::Index m, Eigen::Index n, Rng& rng) {
  Matrix g(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  return g;
}

namespace detail {

// Orthonormal columns of a tall Gaussian sample; signs fixed so the
// triangular factor has a positive diagonal.
inline Matrix orthonormal_columns(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix g = gaussian_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(g)};
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return Matrix(q);
}

}  // namespace detail

/// n x n matrix with Q^T Q = I.
inline Matrix orthonormal_init(Eigen::Index n, Rng& rng) {
  require(n >= 1, "orthonormal_init: n must be >= 1");
  return detail::orthonormal_columns(n, n, rng);
}

/// m x n matrix (m <= n) with orthonormal rows, W W^T = I_m.
inline Matrix semi_orthonormal_init(Eigen::Index m, Eigen::Index n, Rng& rng) {
  require(m >= 1 && n >= 1, "semi_orthonormal_init: dims must be >= 1");
  require(m <= n, "semi_orthonormal_init: rows (" + std::to_string(m) +
                      ") exceed cols (" + std::to_string(n) + "), row orthonormality impossible");
  return detail::orthonormal_columns(n, m, rng).transpose();
}

/// Entries i.i.d. U[-1/sqrt(n), 1/sqrt(n)] (fan-in n = cols).
inline Matrix uniform_init(Eigen::Index m, Eigen::Index n, Rng& rng) {
  require(m >= 1 && n >= 1, "uniform_init: dims must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  Matrix w(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) w(i, j) = rng.uniform(-bound, bound);
  return w;
}

/// <vec a, vec b> / (|a|_F |b|_F); nullopt when either norm is zero.
inline std::optional<double> cosine_similarity(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "cosine_similarity: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(frobenius_dot(a, b) / (na * nb), -1.0, 1.0);
}

struct MinimizeOptions {
  double tol = 1e-8;
  int max_iters = 10000;
  int memory = 12;
};

struct MinimizeResult {
  Matrix x;
  double grad_norm = 0.0;
  int iterations = 0;
  int grad_evals = 0;
  bool converged = false;
};

/// L-BFGS on a strictly convex objective given only its gradient.
///
/// The line search brackets the root of the directional derivative
/// phi'(a) = <g(x + a p), p>, accepting a step once phi' has dropped to at
/// most 0.9 |phi'(0)| in magnitude on the descending side, or 0.1 |phi'(0)|
/// past the minimum. A non-descent direction resets the memory and falls back
/// to steepest descent.
template <class GradFn>
MinimizeResult convex_minimize(GradFn&& grad_fn, Matrix x0, const MinimizeOptions& opts = {}) {
  require(opts.tol > 0.0, "convex_minimize: tol must be positive");
  MinimizeResult res;
  res.x = std::move(x0);
  Matrix g = grad_fn(res.x);
  res.grad_evals = 1;
  res.grad_norm = g.norm();
  if (res.grad_norm <= opts.tol) {
    res.converged = true;
    return res;
  }

  std::deque<std::pair<Matrix, Matrix>> pairs;  // (s, y)
  std::deque<double> rhos;
  bool first = true;

  for (int it = 0; it < opts.max_iters; ++it) {
    // Two-loop recursion.
    Matrix p = -g;
    std::vector<double> alphas(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
      alphas[k] = rhos[k] * frobenius_dot(pairs[k].first, p);
      p -= alphas[k] * pairs[k].second;
    }
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      p *= frobenius_dot(s, y) / y.squaredNorm();
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double beta = rhos[k] * frobenius_dot(pairs[k].second, p);
      p += (alphas[k] - beta) * pairs[k].first;
    }

    double d0 = frobenius_dot(g, p);
    if (!(d0 < 0.0) || !std::isfinite(d0)) {
      pairs.clear();
      rhos.clear();
      p = -g;
      d0 = -g.squaredNorm();
      first = true;
    }

    double alpha = first ? std::min(1.0, 1.0 / p.norm()) : 1.0;
    first = false;
    double lo = 0.0, d_lo = d0;
    double hi = std::numeric_limits<double>::infinity(), d_hi = 0.0;
    Matrix x_new, g_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + alpha * p;
      g_new = grad_fn(x_new);
      ++res.grad_evals;
      const double d = frobenius_dot(g_new, p);
      if (!std::isfinite(d)) {
        hi = alpha;
        d_hi = std::numeric_limits<double>::max();
        alpha = 0.5 * (lo + alpha);
        continue;
      }
      if ((d <= 0.0 && d >= 0.9 * d0) || (d > 0.0 && d <= -0.1 * d0)) {
        accepted = true;
        break;
      }
      if (d > 0.0) {
        hi = alpha;
        d_hi = d;
      } else {
        lo = alpha;
        d_lo = d;
      }
      if (std::isfinite(hi)) {
        // Secant on phi' inside the bracket, safeguarded away from the ends.
        double t = lo - d_lo * (hi - lo) / (d_hi - d_lo);
        const double w = hi - lo;
        alpha = std::clamp(t, lo + 0.05 * w, hi - 0.05 * w);
      } else {
        double t = (d < d0) ? 4.0 * alpha : alpha * d0 / (d0 - d);
        alpha = std::clamp(t, 2.0 * alpha, 16.0 * alpha);
      }
    }
    res.iterations = it + 1;
    if (!accepted) {
      if (!g_new.allFinite() || g_new.norm() >= res.grad_norm) break;
    }

    Matrix s = x_new - res.x;
    Matrix y = g_new - g;
    const double sy = frobenius_dot(s, y);
    res.x = std::move(x_new);
    g = std::move(g_new);
    res.grad_norm = g.norm();
    if (sy > 1e-14 * s.norm() * y.norm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      rhos.push_back(1.0 / sy);
      if (static_cast<int>(pairs.size()) > opts.memory) {
        pairs.pop_front();
        rhos.pop_front();
      }
    }
    if (res.grad_norm <= opts.tol) {
      res.converged = true;
      return res;
    }
  }
  res.converged = res.grad_norm <= opts.tol;
  return res;
}

}  // namespace lssl

#endif  // LSSL_LINALG_HPP_
