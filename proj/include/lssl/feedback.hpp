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

// Lateral / top-down projection matrices B and the ways of choosing them:
// fixed, the regularized-loss minimizer B* (closed form or iterative), a
// rank-constrained factorization B = F1^T F2, and the gradient-matching
// optimum B° trained against backpropagated activity gradients.

#ifndef LSSL_FEEDBACK_HPP_
#define LSSL_FEEDBACK_HPP_

#include "lssl/linalg.hpp"
#include "lssl/losses.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace lssl {

enum class FeedbackMode { Identity, FixedRandom, Trainable, RankConstrained };

inline const char* to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::Identity: return "identity";
    case FeedbackMode::FixedRandom: return "fixed_random";
    case FeedbackMode::Trainable: return "trainable";
    case FeedbackMode::RankConstrained: return "rank_constrained";
  }
  return "?";
}

/// B of shape (n_z, n_c). For RankConstrained, B = F1^T F2 with F1 (r x n_z)
/// and F2 (r x n_c).
class FeedbackMatrix {
 public:
  static FeedbackMatrix identity(Eigen::Index n) {
    FeedbackMatrix f(FeedbackMode::Identity);
    f.dense_ = Matrix::Identity(n, n);
    return f;
  }

  static FeedbackMatrix fixed_random(Eigen::Index n_z, Eigen::Index n_c, Rng& rng) {
    FeedbackMatrix f(FeedbackMode::FixedRandom);
    f.dense_ = uniform_init(n_z, n_c, rng);
    return f;
  }

  static FeedbackMatrix fixed(Matrix b) {
    FeedbackMatrix f(FeedbackMode::FixedRandom);
    f.dense_ = std::move(b);
    return f;
  }

  static FeedbackMatrix trainable(Matrix b) {
    FeedbackMatrix f(FeedbackMode::Trainable);
    f.dense_ = std::move(b);
    return f;
  }

  static FeedbackMatrix rank_constrained(Matrix f1, Matrix f2) {
    require(f1.rows() == f2.rows(), "rank-constrained factors need equal rank");
    FeedbackMatrix f(FeedbackMode::RankConstrained);
    f.dense_ = f1.transpose() * f2;
    f.f1_ = std::move(f1);
    f.f2_ = std::move(f2);
    return f;
  }

  FeedbackMode mode() const { return mode_; }
  const Matrix& dense() const { return dense_; }
  Eigen::Index rows() const { return dense_.rows(); }
  Eigen::Index cols() const { return dense_.cols(); }
  Eigen::Index rank_bound() const {
    return mode_ == FeedbackMode::RankConstrained ? f1_.rows() : std::min(rows(), cols());
  }
  const Matrix& f1() const { return f1_; }
  const Matrix& f2() const { return f2_; }

 private:
  explicit FeedbackMatrix(FeedbackMode m) : mode_(m) {}

  FeedbackMode mode_;
  Matrix dense_;
  Matrix f1_, f2_;
};

struct BStarResult {
  FeedbackMatrix B = FeedbackMatrix::trainable(Matrix());
  double grad_norm = 0.0;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// B* for f(x) = -x: (1/2 lambda) sum_mu (z_pos c_pos^T - z_neg c_neg^T)
/// (type 2) or (1/2 lambda) sum_mu (z_pos - z_neg) c_pos^T (type 1).
inline BStarResult bstar_closed_form_linear(const LayerRefs& r, double lambda,
                                            LossForm form = LossForm::Type2,
                                            double tol = 1e-8) {
  require(lambda > 0.0, "bstar_closed_form_linear: lambda must be > 0 for a unique minimizer");
  Matrix b = (form == LossForm::Type1) ? Matrix((r.z_pos - r.z_neg).transpose() * r.c_pos)
                                       : Matrix(r.z_pos.transpose() * r.c_pos -
                                                r.z_neg.transpose() * r.c_neg);
  b /= 2.0 * lambda;
  LossConfig cfg;
  cfg.f = ScoreFn::linear_neg();
  cfg.form = form;
  cfg.lambda = lambda;
  BStarResult res;
  res.grad_norm = loss_grad_B(r, b, cfg).norm();
  res.loss = batched_local_loss(r, b, cfg);
  res.converged = res.grad_norm <= tol * (1.0 + b.norm());
  res.B = FeedbackMatrix::trainable(std::move(b));
  return res;
}

/// Minimizer of the batched layer loss over unconstrained B, started at 0
/// unless an initial point is given.
inline BStarResult bstar_iterative(const LayerRefs& r, const LossConfig& cfg, double tol = 1e-8,
                                   const Matrix* init = nullptr, int max_iters = 20000) {
  require(cfg.lambda > 0.0, "bstar_iterative: lambda must be > 0");
  require(r.batch() > 0, "bstar_iterative: empty batch");
  Matrix x0 = init ? *init : Matrix::Zero(r.z_pos.cols(), r.c_pos.cols());
  MinimizeOptions opts;
  opts.tol = tol;
  opts.max_iters = max_iters;
  MinimizeResult m = convex_minimize([&](const Matrix& b) { return loss_grad_B(r, b, cfg); },
                                     std::move(x0), opts);
  BStarResult res;
  res.grad_norm = m.grad_norm;
  res.iterations = m.iterations;
  res.converged = m.converged;
  res.loss = batched_local_loss(r, m.x, cfg);
  res.B = FeedbackMatrix::trainable(std::move(m.x));
  return res;
}

enum class RankMethod { GradientDescent, LBFGS };

inline const char* to_string(RankMethod m) {
  return m == RankMethod::LBFGS ? "lbfgs" : "gd";
}

inline RankMethod rank_method_from_string(const std::string& s) {
  if (s == "lbfgs") return RankMethod::LBFGS;
  if (s == "gd") return RankMethod::GradientDescent;
  throw ConfigError("unknown rank method '" + s + "' (expected gd or lbfgs)");
}

struct RankConstrainedOptions {
  int rank = 1;
  int steps = 2000;  // iteration budget for either method
  double lr = 0.0;   // gd only; <= 0: backtracking step size
  double tol = 1e-8;
  RankMethod method = RankMethod::GradientDescent;
};

/// Minimizes the batched loss of B = F1^T F2 over the factors, by gradient
/// descent or by L-BFGS on the stacked factors. The problem is not convex in
/// (F1, F2), so the result is a stationary point reached from a seeded start.
inline BStarResult bstar_rank_constrained(const LayerRefs& r, const LossConfig& cfg,
                                          const RankConstrainedOptions& opts, Rng& rng) {
  const Eigen::Index n_z = r.z_pos.cols();
  const Eigen::Index n_c = r.c_pos.cols();
  require(opts.rank >= 1 && opts.rank <= std::min(n_z, n_c),
          "bstar_rank_constrained: rank must be in [1, min(n_z, n_c)]");
  const Eigen::Index rk = opts.rank;
  const double scale = 1.0 / std::sqrt(static_cast<double>(opts.rank));
  Matrix f1 = uniform_init(rk, n_z, rng) * scale;
  Matrix f2 = uniform_init(rk, n_c, rng) * scale;

  if (opts.method == RankMethod::LBFGS) {
    // x = [vec F1, vec F2] as a single row.
    const Eigen::Index split = rk * n_z;
    Matrix x0(1, split + rk * n_c);
    x0.leftCols(split) = Eigen::Map<const Eigen::RowVectorXd>(f1.data(), split);
    x0.rightCols(rk * n_c) = Eigen::Map<const Eigen::RowVectorXd>(f2.data(), rk * n_c);
    auto unpack = [&](const Matrix& x, Matrix& a, Matrix& b) {
      a = Eigen::Map<const Matrix>(x.data(), rk, n_z);
      b = Eigen::Map<const Matrix>(x.data() + split, rk, n_c);
    };
    auto grad = [&](const Matrix& x) {
      Matrix a, b;
      unpack(x, a, b);
      const Matrix g = loss_grad_B(r, a.transpose() * b, cfg);
      const Matrix g1 = b * g.transpose();
      const Matrix g2 = a * g;
      Matrix out(1, x.cols());
      out.leftCols(split) = Eigen::Map<const Eigen::RowVectorXd>(g1.data(), split);
      out.rightCols(rk * n_c) = Eigen::Map<const Eigen::RowVectorXd>(g2.data(), rk * n_c);
      return out;
    };
    MinimizeOptions mo;
    mo.tol = opts.tol;
    mo.max_iters = opts.steps;
    MinimizeResult m = convex_minimize(grad, std::move(x0), mo);
    unpack(m.x, f1, f2);
    BStarResult res;
    res.B = FeedbackMatrix::rank_constrained(std::move(f1), std::move(f2));
    res.loss = batched_local_loss(r, res.B.dense(), cfg);
    res.grad_norm = m.grad_norm;
    res.iterations = m.iterations;
    res.converged = m.converged;
    return res;
  }

  auto loss_of = [&](const Matrix& a, const Matrix& b) {
    return batched_local_loss(r, a.transpose() * b, cfg);
  };
  double step = opts.lr > 0.0 ? opts.lr : 1.0;
  double loss = loss_of(f1, f2);
  double gnorm = 0.0;
  int it = 0;
  for (; it < opts.steps; ++it) {
    const Matrix g = loss_grad_B(r, f1.transpose() * f2, cfg);
    const Matrix g1 = f2 * g.transpose();
    const Matrix g2 = f1 * g;
    const double g2norm = g1.squaredNorm() + g2.squaredNorm();
    gnorm = std::sqrt(g2norm);
    if (gnorm <= opts.tol) break;
    if (opts.lr > 0.0) {
      f1 -= step * g1;
      f2 -= step * g2;
      continue;
    }
    // Armijo backtracking, then let the step grow again.
    for (int bt = 0; bt < 60; ++bt) {
      Matrix n1 = f1 - step * g1;
      Matrix n2 = f2 - step * g2;
      const double nl = loss_of(n1, n2);
      if (nl <= loss - 1e-4 * step * g2norm) {
        f1 = std::move(n1);
        f2 = std::move(n2);
        loss = nl;
        break;
      }
      step *= 0.5;
    }
    step *= 1.5;
  }
  BStarResult res;
  res.B = FeedbackMatrix::rank_constrained(std::move(f1), std::move(f2));
  res.loss = batched_local_loss(r, res.B.dense(), cfg);
  res.grad_norm = gnorm;
  res.iterations = it;
  res.converged = gnorm <= opts.tol;
  return res;
}

/// Mean (over samples) squared distance between the local activity gradient
/// under B and target activity gradients (typically backpropagated ones),
/// pos and neg samples both counted.
inline double feedback_match_error(const LayerRefs& r, const Matrix& B, const LossConfig& cfg,
                                   const ActivityGrads& target) {
  const ActivityGrads g = loss_grad_z(r, B, cfg);
  return ((g.dz_pos - target.dz_pos).squaredNorm() + (g.dz_neg - target.dz_neg).squaredNorm()) /
         static_cast<double>(r.batch());
}

inline Matrix feedback_match_grad(const LayerRefs& r, const Matrix& B, const LossConfig& cfg,
                                  const ActivityGrads& target) {
  require(cfg.form == LossForm::Type2 && !r.self_reference,
          "feedback matching supports type-2 losses with external references");
  const ScorePair s = loss_scores(r, B, cfg.form);
  const Vector fp = cfg.f.deriv(s.first);
  const Vector fpp = cfg.f.second(s.first);
  const Vector fn = cfg.f.deriv(-s.second);
  const Vector fnn = cfg.f.second(-s.second);
  const Matrix pred_pos = r.c_pos * B.transpose();
  const Matrix pred_neg = r.c_neg * B.transpose();
  const Matrix res_pos = fp.asDiagonal() * pred_pos - target.dz_pos;
  const Matrix res_neg = -(fn.asDiagonal() * pred_neg) - target.dz_neg;
  const Vector rb_pos = res_pos.cwiseProduct(pred_pos).rowwise().sum();
  const Vector rb_neg = res_neg.cwiseProduct(pred_neg).rowwise().sum();
  Matrix g = res_pos.transpose() * (fp.asDiagonal() * r.c_pos);
  g.noalias() += r.z_pos.transpose() * (fpp.cwiseProduct(rb_pos).asDiagonal() * r.c_pos);
  g.noalias() -= res_neg.transpose() * (fn.asDiagonal() * r.c_neg);
  g.noalias() += r.z_neg.transpose() * (fnn.cwiseProduct(rb_neg).asDiagonal() * r.c_neg);
  return g * (2.0 / static_cast<double>(r.batch()));
}

/// Backpropagated activity gradients of layer k for a batch trace.
using ActivityGradFn = std::function<ActivityGrads(const TripleTrace&, int)>;

/// Trains B° for layer k by plain gradient descent on the gradient-matching
/// error, one step per batch, cycling `epochs` times over `data`. The layer
/// loss uses direct-feedback references (c = z'^L).
inline FeedbackMatrix train_optimal_feedback(const Network& net, const std::vector<TripleBatch>& data,
                                             int k, const ActivityGradFn& bp_grads,
                                             const LossConfig& cfg, Matrix init, int epochs,
                                             double lr = 1e-3) {
  require(k >= 0 && k < net.depth(), "train_optimal_feedback: bad layer");
  require(!data.empty(), "train_optimal_feedback: no data");
  LossConfig fb = cfg;
  fb.scheme = ReferenceScheme::DirectFeedback;
  std::vector<TripleTrace> traces;
  traces.reserve(data.size());
  for (const auto& b : data) traces.push_back(forward_triple(net, b));
  std::vector<ActivityGrads> targets;
  for (const auto& t : traces) targets.push_back(bp_grads(t, k));
  Matrix B = std::move(init);
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const LayerRefs r = resolve_refs(traces[i], k, fb.scheme);
      B -= lr * feedback_match_grad(r, B, fb, targets[i]);
    }
  }
  return FeedbackMatrix::trainable(std::move(B));
}

}  // namespace lssl

#endif  // LSSL_FEEDBACK_HPP_
