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

// Weight-gradient paths for one contrastive batch:
//
//   bp_gradients          reverse mode through every layer of the top loss
//   local_gradients       each layer's own loss, inputs held constant
//   dfa_gradients         top-layer error sent down through fixed matrices
//   hebbian_clapp_update  gated Hebbian form of the hinge layer update
//   finite_difference_gradients  central differences of any loss
//
// References (context copies, fixed vectors) never carry gradient; with
// self-referencing schemes the score depends on z twice and both factors
// are differentiated.

#ifndef LSSL_GRADIENTS_HPP_
#define LSSL_GRADIENTS_HPP_

#include "lssl/feedback.hpp"
#include "lssl/linalg.hpp"
#include "lssl/losses.hpp"
#include "lssl/network.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

namespace lssl {

enum class GradSource { BP, Local, LocalDFB, DFA, HebbianCLAPP, FiniteDifference };

inline const char* to_string(GradSource s) {
  switch (s) {
    case GradSource::BP: return "bp";
    case GradSource::Local: return "local";
    case GradSource::LocalDFB: return "local_dfb";
    case GradSource::DFA: return "dfa";
    case GradSource::HebbianCLAPP: return "hebbian_clapp";
    case GradSource::FiniteDifference: return "finite_difference";
  }
  return "?";
}

struct LayerGradients {
  std::vector<Matrix> per_layer;
  GradSource source = GradSource::BP;

  static LayerGradients zeros_like(const Network& net, GradSource src) {
    LayerGradients g;
    g.source = src;
    for (const auto& w : net.weights) g.per_layer.push_back(Matrix::Zero(w.rows(), w.cols()));
    return g;
  }

  LayerGradients& operator+=(const LayerGradients& o) {
    for (std::size_t k = 0; k < per_layer.size(); ++k) per_layer[k] += o.per_layer[k];
    return *this;
  }
};

namespace detail {

// Gradient w.r.t. the pre-normalization activity from the gradient w.r.t.
// the transmitted (row-normalized) activity.
inline Matrix through_normalization(const Matrix& d_out, const Matrix& out, const Vector& norms) {
  Matrix d = d_out;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (norms(i) > kNormFloor) {
      const double proj = out.row(i).dot(d_out.row(i));
      d.row(i) = (d_out.row(i) - proj * out.row(i)) / norms(i);
    } else {
      d.row(i) /= kNormFloor;
    }
  }
  return d;
}

// dL/dW^k of one layer given dL/dz^k (pre-normalization activity).
inline Matrix layer_weight_grad(const Network& net, const BatchTrace& t, int k, const Matrix& dz) {
  const Matrix da = dz.cwiseProduct(activate_grad(net.spec.activations[k], t.pre[k]));
  return da.transpose() * t.layer_input(k);
}

}  // namespace detail

/// dL/dz^k for every layer k, given dL/dz^{top}; index k of the result.
inline std::vector<Matrix> backprop_activity(const Network& net, const BatchTrace& t,
                                             const Matrix& dz_top) {
  const int L = net.depth();
  std::vector<Matrix> dz(L);
  dz[L - 1] = dz_top;
  for (int k = L - 1; k > 0; --k) {
    const Matrix da = dz[k].cwiseProduct(activate_grad(net.spec.activations[k], t.pre[k]));
    Matrix d_in = da * net.weights[k];
    if (net.spec.normalize_between_layers)
      d_in = detail::through_normalization(d_in, t.transmitted[k - 1], t.act_norms[k - 1]);
    dz[k - 1] = std::move(d_in);
  }
  return dz;
}

/// Backpropagated activity gradients of the top-layer loss at every layer.
inline std::vector<ActivityGrads> bp_activity_grads(const Network& net, const TripleTrace& t,
                                                    const Matrix& B_top, const LossConfig& cfg,
                                                    const FixedReferences* fixed = nullptr) {
  const int top = net.depth() - 1;
  const ActivityGrads g = loss_grad_z(resolve_refs(t, top, cfg.scheme, fixed), B_top, cfg);
  std::vector<Matrix> pos = backprop_activity(net, t.pos, g.dz_pos);
  std::vector<Matrix> neg = backprop_activity(net, t.neg, g.dz_neg);
  std::vector<ActivityGrads> out;
  for (int k = 0; k <= top; ++k) out.push_back({std::move(pos[k]), std::move(neg[k])});
  return out;
}

/// Reverse-mode gradient of the batched top-layer loss w.r.t. every W^l;
/// B_top is held constant.
inline LayerGradients bp_gradients(const Network& net, const TripleTrace& t, const Matrix& B_top,
                                   const LossConfig& cfg, const FixedReferences* fixed = nullptr) {
  const std::vector<ActivityGrads> dz = bp_activity_grads(net, t, B_top, cfg, fixed);
  LayerGradients out;
  out.source = GradSource::BP;
  for (int k = 0; k < net.depth(); ++k)
    out.per_layer.push_back(detail::layer_weight_grad(net, t.pos, k, dz[k].dz_pos) +
                            detail::layer_weight_grad(net, t.neg, k, dz[k].dz_neg));
  return out;
}

/// Layerwise gradients; B_list[k] is the projection of layer k. Layers not in
/// `layers` (empty = all) get zero matrices.
inline LayerGradients local_gradients(const Network& net, const TripleTrace& t,
                                      const std::vector<Matrix>& B_list, const LossConfig& cfg,
                                      const std::vector<int>& layers = {},
                                      const FixedReferences* fixed = nullptr) {
  require(static_cast<int>(B_list.size()) == net.depth(), "local_gradients: one B per layer");
  LayerGradients out = LayerGradients::zeros_like(
      net, cfg.scheme == ReferenceScheme::DirectFeedback ? GradSource::LocalDFB : GradSource::Local);
  auto wanted = [&](int k) {
    return layers.empty() || std::find(layers.begin(), layers.end(), k) != layers.end();
  };
  for (int k = 0; k < net.depth(); ++k) {
    if (!wanted(k)) continue;
    const ActivityGrads g = loss_grad_z(resolve_refs(t, k, cfg.scheme, fixed), B_list[k], cfg);
    out.per_layer[k] = detail::layer_weight_grad(net, t.pos, k, g.dz_pos) +
                       detail::layer_weight_grad(net, t.neg, k, g.dz_neg);
  }
  return out;
}

/// Fixed random projections F^l (n^l x n^L) for direct feedback alignment.
struct DfaConfig {
  std::vector<Matrix> F;
  std::uint64_t seed = 0;

  static DfaConfig random(const NetworkSpec& spec, std::uint64_t seed) {
    DfaConfig c;
    c.seed = seed;
    Rng rng(seed);
    const int top_dim = spec.layer_dims.back();
    for (int k = 1; k <= spec.depth(); ++k) c.F.push_back(uniform_init(spec.layer_dims[k], top_dim, rng));
    return c;
  }
};

/// Top layer: true gradient. Lower layers: dz^l = F^l dz^L, then the usual
/// rho'(a^l) z^{l-1} outer product.
inline LayerGradients dfa_gradients(const Network& net, const TripleTrace& t, const Matrix& B_top,
                                    const DfaConfig& dfa, const LossConfig& cfg) {
  const int top = net.depth() - 1;
  require(static_cast<int>(dfa.F.size()) >= top, "dfa_gradients: need one F per lower layer");
  const ActivityGrads g = loss_grad_z(resolve_refs(t, top, cfg.scheme), B_top, cfg);
  LayerGradients out;
  out.source = GradSource::DFA;
  for (int k = 0; k < top; ++k) {
    require(dfa.F[k].rows() == net.spec.layer_dims[k + 1] && dfa.F[k].cols() == B_top.rows(),
            "dfa_gradients: F has wrong shape");
    const Matrix ft = dfa.F[k].transpose();
    out.per_layer.push_back(detail::layer_weight_grad(net, t.pos, k, g.dz_pos * ft) +
                            detail::layer_weight_grad(net, t.neg, k, g.dz_neg * ft));
  }
  out.per_layer.push_back(detail::layer_weight_grad(net, t.pos, top, g.dz_pos) +
                          detail::layer_weight_grad(net, t.neg, top, g.dz_neg));
  return out;
}

/// Gated Hebbian update of the hinge rule with same-layer context:
///   dW_ji = eta * gamma * (B c)_j * rho'(a_j) * z_i
/// gamma = +1 for a positive sample with score < 1, -1 for a negative sample
/// with score > -1, 0 otherwise. Equals minus the data-term gradient.
inline LayerGradients hebbian_clapp_update(const Network& net, const TripleTrace& t,
                                           const std::vector<Matrix>& B_list, double eta = 1.0) {
  require(static_cast<int>(B_list.size()) == net.depth(), "hebbian_clapp_update: one B per layer");
  LayerGradients out = LayerGradients::zeros_like(net, GradSource::HebbianCLAPP);
  const Eigen::Index batch = t.pos.batch();
  for (int k = 0; k < net.depth(); ++k) {
    const Matrix& B = B_list[k];
    const Activation act = net.spec.activations[k];
    Matrix& dw = out.per_layer[k];
    for (Eigen::Index mu = 0; mu < batch; ++mu) {
      const Vector c = t.ctx.act[k].row(mu).transpose();
      const Vector pred = B * c;  // dendritic prediction
      const double s_pos = t.pos.act[k].row(mu).dot(pred);
      const double s_neg = t.neg.act[k].row(mu).dot(pred);
      const double gamma_pos = s_pos < 1.0 ? 1.0 : 0.0;
      const double gamma_neg = s_neg > -1.0 ? -1.0 : 0.0;
      for (Eigen::Index j = 0; j < dw.rows(); ++j) {
        const double post_pos = gamma_pos * pred(j) * activate_grad(act, t.pos.pre[k](mu, j));
        const double post_neg = gamma_neg * pred(j) * activate_grad(act, t.neg.pre[k](mu, j));
        if (post_pos != 0.0) dw.row(j) += eta * post_pos * t.pos.layer_input(k).row(mu);
        if (post_neg != 0.0) dw.row(j) += eta * post_neg * t.neg.layer_input(k).row(mu);
      }
    }
  }
  return out;
}

/// Hebbian update of the lateral matrices: dB = eta * gamma * z c^T.
inline std::vector<Matrix> hebbian_clapp_feedback_update(const TripleTrace& t,
                                                         const std::vector<Matrix>& B_list,
                                                         double eta = 1.0) {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < B_list.size(); ++k) {
    const Matrix& B = B_list[k];
    Matrix db = Matrix::Zero(B.rows(), B.cols());
    for (Eigen::Index mu = 0; mu < t.pos.batch(); ++mu) {
      const Vector c = t.ctx.act[k].row(mu).transpose();
      const Vector zp = t.pos.act[k].row(mu).transpose();
      const Vector zn = t.neg.act[k].row(mu).transpose();
      const Vector pred = B * c;
      if (zp.dot(pred) < 1.0) db += eta * zp * c.transpose();
      if (zn.dot(pred) > -1.0) db -= eta * zn * c.transpose();
    }
    out.push_back(std::move(db));
  }
  return out;
}

using NetworkLossFn = std::function<double(const Network&)>;

/// Central differences (loss(W + h e_ij) - loss(W - h e_ij)) / 2h for every
/// weight entry of the layers in `layers` (empty = all).
inline LayerGradients finite_difference_gradients(const NetworkLossFn& loss_fn, const Network& net,
                                                  double h = 1e-5,
                                                  const std::vector<int>& layers = {}) {
  require(h > 0.0, "finite_difference_gradients: h must be > 0");
  LayerGradients out = LayerGradients::zeros_like(net, GradSource::FiniteDifference);
  Network probe = net;
  for (int k = 0; k < net.depth(); ++k) {
    if (!layers.empty() && std::find(layers.begin(), layers.end(), k) == layers.end()) continue;
    Matrix& w = probe.weights[k];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double orig = w(i, j);
        w(i, j) = orig + h;
        const double up = loss_fn(probe);
        w(i, j) = orig - h;
        const double down = loss_fn(probe);
        w(i, j) = orig;
        out.per_layer[k](i, j) = (up - down) / (2.0 * h);
      }
    }
  }
  return out;
}

// --- scalar objectives matching each analytic path ------------------------

/// Top-layer data loss as a function of the weights, with the context trace
/// frozen at `frozen` (references carry no gradient).
inline NetworkLossFn bp_objective(const TripleBatch& batch, const TripleTrace& frozen,
                                  const Matrix& B_top, const LossConfig& cfg,
                                  const FixedReferences* fixed = nullptr) {
  return [&batch, &frozen, B_top, cfg, fixed](const Network& n) {
    TripleTrace t{forward_batch(n, batch.pos), forward_batch(n, batch.neg), frozen.ctx};
    return data_loss(resolve_refs(t, n.depth() - 1, cfg.scheme, fixed), B_top, cfg);
  };
}

/// Layer-k data loss as a function of W^k, with the layer input and the
/// references frozen at `frozen`.
inline NetworkLossFn local_objective(const TripleTrace& frozen, int k, const Matrix& B,
                                     const LossConfig& cfg, const FixedReferences* fixed = nullptr) {
  return [&frozen, k, B, cfg, fixed](const Network& n) {
    TripleTrace t = frozen;
    const Activation act = n.spec.activations[k];
    t.pos.act[k] = activate(act, frozen.pos.layer_input(k) * n.weights[k].transpose());
    t.neg.act[k] = activate(act, frozen.neg.layer_input(k) * n.weights[k].transpose());
    return data_loss(resolve_refs(t, k, cfg.scheme, fixed), B, cfg);
  };
}

/// Surrogate whose W^k-gradient is the DFA update of a lower layer k:
/// sum_mu <stop(F^k dz^L_mu), rho(W^k z^{k-1}_mu)> over pos and neg samples.
inline NetworkLossFn dfa_surrogate_objective(const TripleTrace& frozen, int k, const Matrix& B_top,
                                             const DfaConfig& dfa, const LossConfig& cfg) {
  const int top = frozen.pos.depth() - 1;
  const ActivityGrads g = loss_grad_z(resolve_refs(frozen, top, cfg.scheme), B_top, cfg);
  Matrix tp = g.dz_pos * dfa.F[k].transpose();
  Matrix tn = g.dz_neg * dfa.F[k].transpose();
  return [&frozen, k, tp, tn](const Network& n) {
    const Activation act = n.spec.activations[k];
    const Matrix zp = activate(act, frozen.pos.layer_input(k) * n.weights[k].transpose());
    const Matrix zn = activate(act, frozen.neg.layer_input(k) * n.weights[k].transpose());
    return tp.cwiseProduct(zp).sum() + tn.cwiseProduct(zn).sum();
  };
}

/// |a - b|_F / max(|a|_F, |b|_F, floor).
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace lssl

#endif  // LSSL_GRADIENTS_HPP_
