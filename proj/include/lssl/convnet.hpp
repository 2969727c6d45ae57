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


// Bias-free convnets with kernel = stride = 2 and no padding, and layer
// losses whose lateral matrices depend on spatial position.
//
// A batch of feature maps is a Matrix with one sample per row, each row the
// map flattened as (y * W + x) * C + c. Because the kernel tiles the input
// exactly, im2col is a permutation of the input entries and a layer reduces
// to one matrix product on the patch matrix. Kernels are stored as
// out_channels x (4 * in_channels) with column (dy * 2 + dx) * C_in + c.

#ifndef LSSL_CONVNET_HPP_
#define LSSL_CONVNET_HPP_

#include <string>
#include <vector>

#include "lssl/feedback.hpp"
#include "lssl/gradients.hpp"
#include "lssl/linalg.hpp"
#include "lssl/losses.hpp"
#include "lssl/network.hpp"

namespace lssl {

inline constexpr int kConvKernel = 2;

struct ConvLayerSpec {
  int out_channels = 1;
  Activation activation = Activation::Linear;
};

struct ConvSpec {
  int in_channels = 1;
  int height = 16;
  int width = 16;
  std::vector<ConvLayerSpec> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int channels(int k) const { return k == 0 ? in_channels : layers[k - 1].out_channels; }
  int h(int k) const { return height >> k; }
  int w(int k) const { return width >> k; }
  /// Flattened size of the map after k layers (k = 0 is the input).
  int feature_dim(int k) const { return h(k) * w(k) * channels(k); }

  void validate() const {
    require(depth() >= 1, "ConvSpec: need at least one layer");
    require(in_channels >= 1, "ConvSpec: in_channels must be >= 1");
    for (const auto& l : layers) require(l.out_channels >= 1, "ConvSpec: channels must be >= 1");
    for (int k = 0; k < depth(); ++k)
      require(h(k) % 2 == 0 && w(k) % 2 == 0 && h(k) >= 2 && w(k) >= 2,
              "ConvSpec: map " + std::to_string(h(k)) + "x" + std::to_string(w(k)) +
                  " before layer " + std::to_string(k + 1) + " is not divisible by the stride");
  }

  static ConvSpec uniform(int in_channels, int height, int width, int depth, int channels,
                          Activation act) {
    ConvSpec s;
    s.in_channels = in_channels;
    s.height = height;
    s.width = width;
    s.layers.assign(depth, ConvLayerSpec{channels, act});
    return s;
  }
};

struct ConvNet {
  ConvSpec spec;
  std::vector<Matrix> kernels;

  int depth() const { return spec.depth(); }
};

/// Kernels drawn like dense layers on the 4 * C_in patch vector.
inline ConvNet make_convnet(const ConvSpec& spec, WeightInit init, Rng& rng) {
  spec.validate();
  ConvNet net{spec, {}};
  for (int k = 0; k < spec.depth(); ++k) {
    const int out = spec.layers[k].out_channels;
    const int in = kConvKernel * kConvKernel * spec.channels(k);
    net.kernels.push_back(init == WeightInit::Uniform ? uniform_init(out, in, rng)
                                                      : semi_orthonormal_init(out, in, rng));
  }
  return net;
}

namespace detail {

// patch_index[j] is the map entry placed at flat position j of the patch
// matrix (row y' * W' + x', column (dy * 2 + dx) * C + c).
inline std::vector<Eigen::Index> patch_index(int h, int w, int c) {
  const int ho = h / 2, wo = w / 2;
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(h) * w * c);
  for (int yo = 0; yo < ho; ++yo)
    for (int xo = 0; xo < wo; ++xo)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int ch = 0; ch < c; ++ch)
            idx.push_back(((2 * yo + dy) * w + (2 * xo + dx)) * c + ch);
  return idx;
}

inline Matrix im2col(const Matrix& maps, int h, int w, int c) {
  const auto idx = patch_index(h, w, c);
  const Eigen::Index per = static_cast<Eigen::Index>(idx.size());
  Matrix p(maps.rows() * (h / 2) * (w / 2), 4 * c);
  double* out = p.data();
  for (Eigen::Index b = 0; b < maps.rows(); ++b)
    for (Eigen::Index j = 0; j < per; ++j) out[b * per + j] = maps(b, idx[j]);
  return p;
}

inline Matrix col2im(const Matrix& patches, Eigen::Index batch, int h, int w, int c) {
  const auto idx = patch_index(h, w, c);
  const Eigen::Index per = static_cast<Eigen::Index>(idx.size());
  Matrix maps(batch, per);
  const double* in = patches.data();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index j = 0; j < per; ++j) maps(b, idx[j]) = in[b * per + j];
  return maps;
}

// (batch * locations) x channels view <-> batch x (locations * channels).
inline Matrix reshape_rows(const Matrix& m, Eigen::Index rows) {
  return Eigen::Map<const Matrix>(m.data(), rows, m.size() / rows);
}

}  // namespace detail

/// Forward pass; the trace stores maps in the flattened layout.
inline BatchTrace conv_forward(const ConvNet& net, const Matrix& x) {
  const ConvSpec& s = net.spec;
  require(x.cols() == s.feature_dim(0), "conv_forward: input has " + std::to_string(x.cols()) +
                                            " entries, expected " + std::to_string(s.feature_dim(0)));
  require(x.allFinite(), "conv_forward: non-finite input");
  BatchTrace t;
  t.input = x;
  for (int k = 0; k < s.depth(); ++k) {
    require(net.kernels[k].rows() == s.channels(k + 1) && net.kernels[k].cols() == 4 * s.channels(k),
            "conv_forward: kernel " + std::to_string(k + 1) + " has shape " + shape_str(net.kernels[k]));
    const Matrix p = detail::im2col(t.layer_input(k), s.h(k), s.w(k), s.channels(k));
    Matrix a = detail::reshape_rows(p * net.kernels[k].transpose(), x.rows());
    Matrix z = activate(s.layers[k].activation, a);
    t.pre.push_back(std::move(a));
    t.transmitted.push_back(z);
    t.act.push_back(std::move(z));
  }
  return t;
}

inline TripleTrace conv_forward_triple(const ConvNet& net, const TripleBatch& b) {
  return {conv_forward(net, b.pos), conv_forward(net, b.neg), conv_forward(net, b.ctx)};
}

/// Non-overlapping p x p average pooling of every channel.
inline Matrix spatial_pool(const Matrix& maps, int h, int w, int c, int p) {
  require(p >= 1 && h % p == 0 && w % p == 0,
          "spatial_pool: " + std::to_string(h) + "x" + std::to_string(w) +
              " map not divisible by patch " + std::to_string(p));
  if (p == 1) return maps;
  const int gh = h / p, gw = w / p;
  const double scale = 1.0 / (p * p);
  Matrix out = Matrix::Zero(maps.rows(), static_cast<Eigen::Index>(gh) * gw * c);
  for (Eigen::Index b = 0; b < maps.rows(); ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          out(b, ((y / p) * gw + x / p) * c + ch) += scale * maps(b, (y * w + x) * c + ch);
  return out;
}

/// Adjoint of spatial_pool.
inline Matrix spatial_unpool_grad(const Matrix& d_pooled, int h, int w, int c, int p) {
  if (p == 1) return d_pooled;
  const int gw = w / p;
  const double scale = 1.0 / (p * p);
  Matrix out(d_pooled.rows(), static_cast<Eigen::Index>(h) * w * c);
  for (Eigen::Index b = 0; b < d_pooled.rows(); ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          out(b, (y * w + x) * c + ch) = scale * d_pooled(b, ((y / p) * gw + x / p) * c + ch);
  return out;
}

/// How a layer's map is scored: pool with p x p patches, then either give
/// every pooled location its own B on channel vectors (grouped) or score the
/// whole flattened pooled map with one B (flattened). p equal to the map size
/// is the position-independent case in both modes.
struct SpatialGrouping {
  int patch = 1;
  bool flatten = false;

  static SpatialGrouping independent(int map_size) { return {map_size, false}; }

  int groups(int h, int w) const { return flatten ? 1 : (h / patch) * (w / patch); }
};

/// One lateral matrix per group.
struct SpatialFeedback {
  std::vector<Matrix> B;
};

/// References of every group of layer k. Context schemes only: same-layer
/// context (pooled like z) or direct feedback (the flattened top map).
inline std::vector<LayerRefs> conv_layer_refs(const ConvSpec& s, const TripleTrace& t, int k,
                                              const SpatialGrouping& g, ReferenceScheme scheme) {
  require(scheme == ReferenceScheme::SameLayerContext || scheme == ReferenceScheme::DirectFeedback,
          "convnet losses support same_layer_context and direct_feedback references");
  const int h = s.h(k + 1), w = s.w(k + 1), c = s.channels(k + 1);
  const Matrix zp = spatial_pool(t.pos.act[k], h, w, c, g.patch);
  const Matrix zn = spatial_pool(t.neg.act[k], h, w, c, g.patch);
  const int top = s.depth() - 1;
  const Matrix ctx = scheme == ReferenceScheme::DirectFeedback
                         ? t.ctx.act[top]
                         : spatial_pool(t.ctx.act[k], h, w, c, g.patch);
  std::vector<LayerRefs> out;
  if (g.flatten) {
    out.push_back({zp, zn, ctx, ctx});
    return out;
  }
  const int groups = g.groups(h, w);
  for (int gi = 0; gi < groups; ++gi) {
    LayerRefs r;
    r.z_pos = zp.middleCols(static_cast<Eigen::Index>(gi) * c, c);
    r.z_neg = zn.middleCols(static_cast<Eigen::Index>(gi) * c, c);
    r.c_pos = scheme == ReferenceScheme::DirectFeedback
                  ? ctx
                  : Matrix(ctx.middleCols(static_cast<Eigen::Index>(gi) * c, c));
    r.c_neg = r.c_pos;
    out.push_back(std::move(r));
  }
  return out;
}

/// Sum over groups of the layer loss, each with its own B and regularizer.
inline double spatial_local_loss(const std::vector<LayerRefs>& groups, const SpatialFeedback& fb,
                                 const LossConfig& cfg) {
  require(groups.size() == fb.B.size(), "spatial_local_loss: one B per group required");
  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) total += batched_local_loss(groups[g], fb.B[g], cfg);
  return total;
}

inline double spatial_data_loss(const std::vector<LayerRefs>& groups, const SpatialFeedback& fb,
                                const LossConfig& cfg) {
  require(groups.size() == fb.B.size(), "spatial_data_loss: one B per group required");
  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) total += data_loss(groups[g], fb.B[g], cfg);
  return total;
}

struct SpatialBStar {
  SpatialFeedback fb;
  double max_grad_norm = 0.0;
  int max_iterations = 0;
  bool converged = true;
};

/// The loss separates over groups, so each group's B* is solved alone.
inline SpatialBStar spatial_bstar(const std::vector<LayerRefs>& groups, const LossConfig& cfg,
                                  double tol = 1e-8, int max_iters = 20000) {
  SpatialBStar out;
  for (const auto& r : groups) {
    BStarResult res = bstar_iterative(r, cfg, tol, nullptr, max_iters);
    out.max_grad_norm = std::max(out.max_grad_norm, res.grad_norm);
    out.max_iterations = std::max(out.max_iterations, res.iterations);
    out.converged = out.converged && res.converged;
    out.fb.B.push_back(res.B.dense());
  }
  return out;
}

/// d(data loss)/d(z^k) for pos and neg maps (pre-pooling layout).
inline ActivityGrads spatial_activity_grads(const ConvSpec& s, const TripleTrace& t, int k,
                                            const SpatialGrouping& g, const SpatialFeedback& fb,
                                            const LossConfig& cfg) {
  const std::vector<LayerRefs> groups = conv_layer_refs(s, t, k, g, cfg.scheme);
  require(groups.size() == fb.B.size(), "spatial_activity_grads: one B per group required");
  const int h = s.h(k + 1), w = s.w(k + 1), c = s.channels(k + 1);
  const Eigen::Index batch = t.pos.batch();
  const Eigen::Index pooled = static_cast<Eigen::Index>(h / g.patch) * (w / g.patch) * c;
  Matrix dp(batch, pooled), dn(batch, pooled);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const ActivityGrads d = loss_grad_z(groups[gi], fb.B[gi], cfg);
    const Eigen::Index off = g.flatten ? 0 : static_cast<Eigen::Index>(gi) * c;
    dp.middleCols(off, d.dz_pos.cols()) = d.dz_pos;
    dn.middleCols(off, d.dz_neg.cols()) = d.dz_neg;
  }
  return {spatial_unpool_grad(dp, h, w, c, g.patch), spatial_unpool_grad(dn, h, w, c, g.patch)};
}

namespace detail {

inline Matrix conv_weight_grad(const ConvNet& net, const BatchTrace& t, int k, const Matrix& dz) {
  const ConvSpec& s = net.spec;
  const Matrix da = dz.cwiseProduct(activate_grad(s.layers[k].activation, t.pre[k]));
  const Eigen::Index locs = static_cast<Eigen::Index>(s.h(k + 1)) * s.w(k + 1);
  const Matrix da_rows = reshape_rows(da, t.batch() * locs);
  return da_rows.transpose() * im2col(t.layer_input(k), s.h(k), s.w(k), s.channels(k));
}

inline std::vector<Matrix> conv_backprop_activity(const ConvNet& net, const BatchTrace& t,
                                                  const Matrix& dz_top) {
  const ConvSpec& s = net.spec;
  const int L = s.depth();
  std::vector<Matrix> dz(L);
  dz[L - 1] = dz_top;
  for (int k = L - 1; k > 0; --k) {
    const Matrix da = dz[k].cwiseProduct(activate_grad(s.layers[k].activation, t.pre[k]));
    const Eigen::Index locs = static_cast<Eigen::Index>(s.h(k + 1)) * s.w(k + 1);
    const Matrix dpatch = reshape_rows(da, t.batch() * locs) * net.kernels[k];
    dz[k - 1] = col2im(dpatch, t.batch(), s.h(k), s.w(k), s.channels(k));
  }
  return dz;
}

}  // namespace detail

enum class ConvGradMode { BP, Local, LocalDFB };

/// Kernel gradients of one batch. BP differentiates the top-layer loss
/// through every layer; Local / LocalDFB use each layer's own loss with
/// same-layer or top-layer references and block gradients below the layer.
/// fb[k] and grouping[k] describe layer k; only the top entry is used by BP.
inline LayerGradients conv_gradients(const ConvNet& net, const TripleTrace& t,
                                     const std::vector<SpatialFeedback>& fb,
                                     const std::vector<SpatialGrouping>& grouping,
                                     const LossConfig& base, ConvGradMode mode) {
  const ConvSpec& s = net.spec;
  const int L = s.depth();
  require(static_cast<int>(fb.size()) == L && static_cast<int>(grouping.size()) == L,
          "conv_gradients: one feedback set and grouping per layer");
  LossConfig cfg = base;
  LayerGradients out;
  if (mode == ConvGradMode::BP) {
    cfg.scheme = ReferenceScheme::SameLayerContext;
    out.source = GradSource::BP;
    const ActivityGrads top = spatial_activity_grads(s, t, L - 1, grouping[L - 1], fb[L - 1], cfg);
    const auto dp = detail::conv_backprop_activity(net, t.pos, top.dz_pos);
    const auto dn = detail::conv_backprop_activity(net, t.neg, top.dz_neg);
    for (int k = 0; k < L; ++k)
      out.per_layer.push_back(detail::conv_weight_grad(net, t.pos, k, dp[k]) +
                              detail::conv_weight_grad(net, t.neg, k, dn[k]));
    return out;
  }
  cfg.scheme = mode == ConvGradMode::LocalDFB ? ReferenceScheme::DirectFeedback
                                              : ReferenceScheme::SameLayerContext;
  out.source = mode == ConvGradMode::LocalDFB ? GradSource::LocalDFB : GradSource::Local;
  for (int k = 0; k < L; ++k) {
    const ActivityGrads g = spatial_activity_grads(s, t, k, grouping[k], fb[k], cfg);
    out.per_layer.push_back(detail::conv_weight_grad(net, t.pos, k, g.dz_pos) +
                            detail::conv_weight_grad(net, t.neg, k, g.dz_neg));
  }
  return out;
}

/// Finite-difference oracles: the conv kernels are laid into a Network so
/// finite_difference_gradients can perturb them.
inline Network kernels_as_network(const ConvNet& net) {
  Network n;
  n.spec.layer_dims.push_back(4 * net.spec.channels(0));
  for (int k = 0; k < net.depth(); ++k) {
    n.spec.layer_dims.push_back(net.spec.channels(k + 1));
    n.spec.activations.push_back(net.spec.layers[k].activation);
  }
  n.weights = net.kernels;
  return n;
}

inline ConvNet with_kernels(const ConvNet& net, const Network& n) {
  ConvNet out = net;
  out.kernels = n.weights;
  return out;
}

/// Top-layer data loss with the context trace frozen.
inline NetworkLossFn conv_bp_objective(const ConvNet& net, const TripleBatch& batch,
                                       const TripleTrace& frozen, const SpatialFeedback& fb_top,
                                       const SpatialGrouping& g_top, const LossConfig& base) {
  LossConfig cfg = base;
  cfg.scheme = ReferenceScheme::SameLayerContext;
  return [&net, &batch, &frozen, fb_top, g_top, cfg](const Network& n) {
    const ConvNet c = with_kernels(net, n);
    TripleTrace t{conv_forward(c, batch.pos), conv_forward(c, batch.neg), frozen.ctx};
    return spatial_data_loss(conv_layer_refs(c.spec, t, c.depth() - 1, g_top, cfg.scheme), fb_top, cfg);
  };
}

/// Layer-k data loss as a function of kernel k, inputs and references frozen.
inline NetworkLossFn conv_local_objective(const ConvNet& net, const TripleTrace& frozen, int k,
                                          const SpatialFeedback& fb, const SpatialGrouping& g,
                                          const LossConfig& base, bool dfb) {
  LossConfig cfg = base;
  cfg.scheme = dfb ? ReferenceScheme::DirectFeedback : ReferenceScheme::SameLayerContext;
  return [&net, &frozen, k, fb, g, cfg](const Network& n) {
    const ConvSpec& s = net.spec;
    TripleTrace t = frozen;
    for (BatchTrace* bt : {&t.pos, &t.neg}) {
      const Matrix p = detail::im2col(bt->layer_input(k), s.h(k), s.w(k), s.channels(k));
      bt->act[k] = activate(s.layers[k].activation,
                            detail::reshape_rows(p * n.weights[k].transpose(), bt->batch()));
    }
    return spatial_data_loss(conv_layer_refs(s, t, k, g, cfg.scheme), fb, cfg);
  };
}

}  // namespace lssl

#endif  // LSSL_CONVNET_HPP_
