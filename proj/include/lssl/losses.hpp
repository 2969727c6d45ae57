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

// Layerwise contrastive losses built from a bilinear score z^T B c.
//
//   type 1:  f((z_pos - z_neg)^T B c_pos)                     + lambda |B|_F^2
//   type 2:  f(z_pos^T B c_pos) + f(-z_neg^T B c_neg)          + lambda |B|_F^2
//
// with f decreasing. Batched losses sum the data terms over samples and count
// the regularizer once.

#ifndef LSSL_LOSSES_HPP_
#define LSSL_LOSSES_HPP_

#include "lssl/linalg.hpp"
#include "lssl/network.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace lssl {

namespace detail {

inline double softplus(double y) { return std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))); }

inline double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

}  // namespace detail

enum class ScoreKind { LinearNeg, Softplus, Hinge, NegLogSigmoid };

/// Decreasing score function f with its first two derivatives.
struct ScoreFn {
  ScoreKind kind = ScoreKind::Softplus;
  double theta = 2.0;  // NegLogSigmoid only

  double value(double x) const {
    switch (kind) {
      case ScoreKind::LinearNeg: return -x;
      case ScoreKind::Softplus: return detail::softplus(-x);
      case ScoreKind::Hinge: return std::max(0.0, 1.0 - x);
      case ScoreKind::NegLogSigmoid: return detail::softplus(-(x - theta));
    }
    return 0.0;
  }

  /// Hinge uses 0 at the kink x = 1.
  double deriv(double x) const {
    switch (kind) {
      case ScoreKind::LinearNeg: return -1.0;
      case ScoreKind::Softplus: return -detail::sigmoid(-x);
      case ScoreKind::Hinge: return x < 1.0 ? -1.0 : 0.0;
      case ScoreKind::NegLogSigmoid: return -detail::sigmoid(-(x - theta));
    }
    return 0.0;
  }

  double second(double x) const {
    switch (kind) {
      case ScoreKind::Softplus: return detail::sigmoid(x) * detail::sigmoid(-x);
      case ScoreKind::NegLogSigmoid: return detail::sigmoid(x - theta) * detail::sigmoid(-(x - theta));
      default: return 0.0;
    }
  }

  bool convex() const { return true; }

  Vector value(const Vector& x) const { return x.unaryExpr([this](double v) { return value(v); }); }
  Vector deriv(const Vector& x) const { return x.unaryExpr([this](double v) { return deriv(v); }); }
  Vector second(const Vector& x) const { return x.unaryExpr([this](double v) { return second(v); }); }

  static ScoreFn linear_neg() { return {ScoreKind::LinearNeg, 0.0}; }
  static ScoreFn softplus() { return {ScoreKind::Softplus, 0.0}; }
  static ScoreFn hinge() { return {ScoreKind::Hinge, 0.0}; }
  static ScoreFn neg_log_sigmoid(double theta = 2.0) { return {ScoreKind::NegLogSigmoid, theta}; }
};

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::LinearNeg: return "linear_neg";
    case ScoreKind::Softplus: return "softplus";
    case ScoreKind::Hinge: return "hinge";
    case ScoreKind::NegLogSigmoid: return "neg_log_sigmoid";
  }
  return "?";
}

inline ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "linear_neg") return ScoreKind::LinearNeg;
  if (s == "softplus") return ScoreKind::Softplus;
  if (s == "hinge") return ScoreKind::Hinge;
  if (s == "neg_log_sigmoid") return ScoreKind::NegLogSigmoid;
  throw ConfigError("unknown score function '" + s + "'");
}

enum class LossForm { Type1, Type2 };

enum class ReferenceScheme {
  SameLayerContext,  // c^l = z'^l
  DirectFeedback,    // c^l = z'^L, constant w.r.t. all weights
  FixedVector,       // c^l = xi^l, drawn once per layer
  SelfSample,        // c_pos^l = z_pos^l, c_neg^l = z_neg^l
};

inline const char* to_string(ReferenceScheme s) {
  switch (s) {
    case ReferenceScheme::SameLayerContext: return "same_layer_context";
    case ReferenceScheme::DirectFeedback: return "direct_feedback";
    case ReferenceScheme::FixedVector: return "fixed_vector";
    case ReferenceScheme::SelfSample: return "self_sample";
  }
  return "?";
}

inline ReferenceScheme reference_scheme_from_string(const std::string& s) {
  if (s == "same_layer_context") return ReferenceScheme::SameLayerContext;
  if (s == "direct_feedback") return ReferenceScheme::DirectFeedback;
  if (s == "fixed_vector") return ReferenceScheme::FixedVector;
  if (s == "self_sample") return ReferenceScheme::SelfSample;
  throw ConfigError("unknown reference scheme '" + s + "'");
}

enum class Preset { ForwardForward, PhyLL, SCFF, CLAPP };

struct LossConfig {
  ScoreFn f = ScoreFn::softplus();
  LossForm form = LossForm::Type2;
  ReferenceScheme scheme = ReferenceScheme::SameLayerContext;
  double lambda = 0.01;
  bool normalize = false;
  bool trainable_feedback = true;  // false: B = I
  std::optional<Preset> preset;

  /// Rows of the comparison table for the four published rules. PhyLL's
  /// softplus(-x) is the Softplus score fn (which already carries the sign)
  /// used in a type-1 loss.
  static LossConfig from_preset(Preset p, double scff_theta = 2.0) {
    LossConfig c;
    c.preset = p;
    c.lambda = 0.0;
    switch (p) {
      case Preset::ForwardForward:
        c.f = ScoreFn::linear_neg();
        c.form = LossForm::Type2;
        c.scheme = ReferenceScheme::SelfSample;
        c.trainable_feedback = false;
        c.normalize = true;
        break;
      case Preset::PhyLL:
        c.f = ScoreFn::softplus();
        c.form = LossForm::Type1;
        c.scheme = ReferenceScheme::FixedVector;
        c.trainable_feedback = false;
        c.normalize = true;
        break;
      case Preset::SCFF:
        c.f = ScoreFn::neg_log_sigmoid(scff_theta);
        c.form = LossForm::Type2;
        c.scheme = ReferenceScheme::SelfSample;
        c.trainable_feedback = false;
        c.normalize = true;
        break;
      case Preset::CLAPP:
        c.f = ScoreFn::hinge();
        c.form = LossForm::Type2;
        c.scheme = ReferenceScheme::SameLayerContext;
        c.trainable_feedback = true;
        c.normalize = false;
        break;
    }
    return c;
  }
};

/// Samples and references of one layer, one sample per row. When
/// self_reference is set, c_pos/c_neg are the samples themselves and
/// gradients flow through both factors of the score.
struct LayerRefs {
  Matrix z_pos, z_neg, c_pos, c_neg;
  bool self_reference = false;

  Eigen::Index batch() const { return z_pos.rows(); }
};

/// Per-layer fixed reference vectors xi^l (unit norm, drawn once).
struct FixedReferences {
  std::vector<Vector> xi;

  static FixedReferences draw(const NetworkSpec& spec, Rng& rng) {
    FixedReferences r;
    for (int k = 1; k <= spec.depth(); ++k) {
      Vector v(spec.layer_dims[k]);
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
      r.xi.push_back(v / v.norm());
    }
    return r;
  }
};

/// Network inputs of one contrastive batch: positive sample, negative
/// sample and the context copy (another view of the positive's image).
struct TripleBatch {
  Matrix pos, neg, ctx;

  Eigen::Index size() const { return pos.rows(); }
};

/// Traces of the three views of a batch (all from the same network state).
struct TripleTrace {
  BatchTrace pos, neg, ctx;
};

inline TripleTrace forward_triple(const Network& net, const Matrix& pos, const Matrix& neg,
                                  const Matrix& ctx) {
  return {forward_batch(net, pos), forward_batch(net, neg), forward_batch(net, ctx)};
}

inline TripleTrace forward_triple(const Network& net, const TripleBatch& b) {
  return forward_triple(net, b.pos, b.neg, b.ctx);
}

/// Resolve the references of layer k (0-based) for the configured scheme.
inline LayerRefs resolve_refs(const TripleTrace& t, int k, ReferenceScheme scheme,
                              const FixedReferences* fixed = nullptr) {
  const int top = t.pos.depth() - 1;
  LayerRefs r;
  r.z_pos = t.pos.act[k];
  r.z_neg = t.neg.act[k];
  switch (scheme) {
    case ReferenceScheme::SameLayerContext:
      r.c_pos = t.ctx.act[k];
      r.c_neg = r.c_pos;
      break;
    case ReferenceScheme::DirectFeedback:
      r.c_pos = t.ctx.act[top];
      r.c_neg = r.c_pos;
      break;
    case ReferenceScheme::FixedVector: {
      require(fixed != nullptr && static_cast<int>(fixed->xi.size()) > k,
              "FixedVector scheme needs per-layer reference vectors");
      r.c_pos = fixed->xi[k].transpose().replicate(r.z_pos.rows(), 1);
      r.c_neg = r.c_pos;
      break;
    }
    case ReferenceScheme::SelfSample:
      r.c_pos = r.z_pos;
      r.c_neg = r.z_neg;
      r.self_reference = true;
      break;
  }
  return r;
}

/// z^T B c.
inline double layer_score(const Vector& z, const Matrix& B, const Vector& c) {
  require(B.rows() == z.size() && B.cols() == c.size(),
          "layer_score: B is " + shape_str(B) + " for z of " + std::to_string(z.size()) +
              " and c of " + std::to_string(c.size()));
  return z.dot(B * c);
}

/// Row-wise scores s_i = z_i^T B c_i.
inline Vector batch_scores(const Matrix& z, const Matrix& B, const Matrix& c) {
  require(B.rows() == z.cols() && B.cols() == c.cols() && z.rows() == c.rows(),
          "scores: incompatible shapes z " + shape_str(z) + ", B " + shape_str(B) + ", c " +
              shape_str(c));
  return (z * B).cwiseProduct(c).rowwise().sum();
}

/// Scores that enter f: (pos, neg) for type 2; (diff, unused) for type 1.
struct ScorePair {
  Vector first, second;
};

inline ScorePair loss_scores(const LayerRefs& r, const Matrix& B, LossForm form) {
  if (form == LossForm::Type1) return {batch_scores(r.z_pos - r.z_neg, B, r.c_pos), Vector()};
  return {batch_scores(r.z_pos, B, r.c_pos), batch_scores(r.z_neg, B, r.c_neg)};
}

/// Sum of the data terms over the batch (no regularizer).
inline double data_loss(const LayerRefs& r, const Matrix& B, const LossConfig& cfg) {
  const ScorePair s = loss_scores(r, B, cfg.form);
  double total = 0.0;
  if (cfg.form == LossForm::Type1) {
    for (Eigen::Index i = 0; i < s.first.size(); ++i) total += cfg.f.value(s.first(i));
  } else {
    for (Eigen::Index i = 0; i < s.first.size(); ++i)
      total += cfg.f.value(s.first(i)) + cfg.f.value(-s.second(i));
  }
  return total;
}

inline double batched_local_loss(const LayerRefs& r, const Matrix& B, const LossConfig& cfg) {
  require(r.batch() > 0, "batched_local_loss: empty batch");
  return data_loss(r, B, cfg) + cfg.lambda * B.squaredNorm();
}

/// Single-sample loss at one layer.
inline double local_loss(const Vector& z_pos, const Vector& z_neg, const Vector& c_pos,
                         const Vector& c_neg, const Matrix& B, const LossConfig& cfg) {
  LayerRefs r{z_pos.transpose(), z_neg.transpose(), c_pos.transpose(), c_neg.transpose(),
              cfg.scheme == ReferenceScheme::SelfSample};
  return batched_local_loss(r, B, cfg);
}

/// d(loss)/dB including the regularizer.
inline Matrix loss_grad_B(const LayerRefs& r, const Matrix& B, const LossConfig& cfg) {
  const ScorePair s = loss_scores(r, B, cfg.form);
  Matrix g = 2.0 * cfg.lambda * B;
  if (cfg.form == LossForm::Type1) {
    const Vector fp = cfg.f.deriv(s.first);
    g.noalias() += (r.z_pos - r.z_neg).transpose() * (fp.asDiagonal() * r.c_pos);
  } else {
    const Vector fp = cfg.f.deriv(s.first);
    const Vector fn = cfg.f.deriv(-s.second);
    g.noalias() += r.z_pos.transpose() * (fp.asDiagonal() * r.c_pos);
    g.noalias() -= r.z_neg.transpose() * (fn.asDiagonal() * r.c_neg);
  }
  return g;
}

/// Per-sample gradients of the data terms w.r.t. z_pos and z_neg (rows).
/// References are held constant unless r.self_reference.
struct ActivityGrads {
  Matrix dz_pos, dz_neg;
};

inline ActivityGrads loss_grad_z(const LayerRefs& r, const Matrix& B, const LossConfig& cfg) {
  const ScorePair s = loss_scores(r, B, cfg.form);
  ActivityGrads g;
  const Matrix bt = B.transpose();
  if (cfg.form == LossForm::Type1) {
    const Vector fp = cfg.f.deriv(s.first);
    Matrix pred = r.c_pos * bt;  // rows (B c)^T
    g.dz_pos = fp.asDiagonal() * pred;
    g.dz_neg = -g.dz_pos;
    if (r.self_reference) g.dz_pos.noalias() += fp.asDiagonal() * ((r.z_pos - r.z_neg) * B);
  } else {
    const Vector fp = cfg.f.deriv(s.first);
    const Vector fn = cfg.f.deriv(-s.second);
    g.dz_pos = fp.asDiagonal() * (r.c_pos * bt);
    g.dz_neg = -(fn.asDiagonal() * (r.c_neg * bt));
    if (r.self_reference) {
      g.dz_pos.noalias() += fp.asDiagonal() * (r.z_pos * B);
      g.dz_neg.noalias() -= fn.asDiagonal() * (r.z_neg * B);
    }
  }
  return g;
}

}  // namespace lssl

#endif  // LSSL_LOSSES_HPP_
