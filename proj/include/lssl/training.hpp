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


// Layerwise training loops (ReLU MLP conditions and general local rules),
// resumable training state, held-out alignment and the linear probe.

#ifndef LSSL_TRAINING_HPP_
#define LSSL_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lssl/data.hpp"
#include "lssl/feedback.hpp"
#include "lssl/gradients.hpp"
#include "lssl/optim.hpp"
#include "lssl/report.hpp"
#include "lssl/stats.hpp"

namespace lssl {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the lateral matrices of the ReLU MLP comparison are obtained.
enum class MlpCondition { FixedRandomB, Local, LocalDFB, OptimalB };

inline const char* to_string(MlpCondition c) {
  switch (c) {
    case MlpCondition::FixedRandomB: return "fixed_random_b";
    case MlpCondition::Local: return "local";
    case MlpCondition::LocalDFB: return "local_dfb";
    case MlpCondition::OptimalB: return "optimal_b";
  }
  return "?";
}

inline MlpCondition mlp_condition_from_string(const std::string& s) {
  if (s == "fixed_random_b") return MlpCondition::FixedRandomB;
  if (s == "local") return MlpCondition::Local;
  if (s == "local_dfb") return MlpCondition::LocalDFB;
  if (s == "optimal_b") return MlpCondition::OptimalB;
  throw ConfigError("unknown MLP condition '" + s + "'");
}

/// B° is defined with direct-feedback references.
inline ReferenceScheme scheme_of(MlpCondition c) {
  return (c == MlpCondition::LocalDFB || c == MlpCondition::OptimalB) ? ReferenceScheme::DirectFeedback
                                                                       : ReferenceScheme::SameLayerContext;
}

/// Everything needed to continue training bit-for-bit.
struct TrainState {
  Network net;
  std::vector<Matrix> B;
  Optimizer opt_w;
  std::vector<Optimizer> opt_b;  // one per layer
  std::size_t step = 0;
  nlohmann::json stream;  // CropStream::state() at `step`

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["network"] = network_to_json(net);
    j["B"] = nlohmann::json::array();
    for (const auto& b : B) j["B"].push_back(matrix_to_json(b));
    j["opt_w"] = opt_w.state_json();
    j["opt_b"] = nlohmann::json::array();
    for (const auto& o : opt_b) j["opt_b"].push_back(o.state_json());
    j["step"] = step;
    j["stream"] = stream;
    return j;
  }

  static TrainState from_json(const nlohmann::json& j) {
    TrainState s{network_from_json(j.at("network")), {}, Optimizer::from_json(j.at("opt_w")), {}, 0, {}};
    for (const auto& b : j.at("B")) s.B.push_back(matrix_from_json(b));
    for (const auto& o : j.at("opt_b")) s.opt_b.push_back(Optimizer::from_json(o));
    s.step = j.at("step").get<std::size_t>();
    s.stream = j.at("stream");
    require(static_cast<int>(s.B.size()) == s.net.depth() && s.opt_b.size() == s.B.size(),
            "train state: one B and one B optimizer per layer required");
    return s;
  }
};

inline void save_train_state(const TrainState& s, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write training state " + path);
  out << s.to_json().dump() << '\n';
}

inline TrainState load_train_state(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read training state " + path);
  return TrainState::from_json(nlohmann::json::parse(in));
}

/// Gradients of one step; dB empty when the lateral matrices are frozen.
struct StepGrads {
  std::vector<Matrix> dW, dB;
  double loss = 0.0;  // summed layer losses per sample
};

using StepRule = std::function<StepGrads(const Network&, const std::vector<Matrix>&, const TripleTrace&)>;

inline double layer_losses(const TripleTrace& t, const std::vector<Matrix>& B, const LossConfig& cfg,
                           const FixedReferences* fixed = nullptr) {
  double total = 0.0;
  for (std::size_t k = 0; k < B.size(); ++k)
    total += batched_local_loss(resolve_refs(t, static_cast<int>(k), cfg.scheme, fixed), B[k], cfg);
  return total / static_cast<double>(t.pos.batch());
}

/// W by the condition's layer losses; B fixed, by its local gradient, or
/// (B°, lower layers) by the gradient-matching error against BP.
inline StepRule mlp_step_rule(MlpCondition c, const LossConfig& base) {
  LossConfig cfg = base;
  cfg.scheme = scheme_of(c);
  return [c, cfg](const Network& net, const std::vector<Matrix>& B, const TripleTrace& t) {
    StepGrads g;
    g.dW = local_gradients(net, t, B, cfg).per_layer;
    g.loss = layer_losses(t, B, cfg);
    if (c == MlpCondition::FixedRandomB) return g;
    const int top = net.depth() - 1;
    std::vector<ActivityGrads> target;
    if (c == MlpCondition::OptimalB) target = bp_activity_grads(net, t, B[top], cfg);
    for (int k = 0; k <= top; ++k) {
      const LayerRefs r = resolve_refs(t, k, cfg.scheme);
      g.dB.push_back(c == MlpCondition::OptimalB && k < top ? feedback_match_grad(r, B[k], cfg, target[k])
                                                            : loss_grad_B(r, B[k], cfg));
    }
    return g;
  };
}

/// Rule used by train_local_ssl. `hebbian` computes the CLAPP update with
/// the gated Hebbian form instead of differentiating the loss.
inline StepRule ssl_step_rule(const LossConfig& cfg, bool hebbian, const FixedReferences* fixed) {
  if (hebbian)
    require(cfg.f.kind == ScoreKind::Hinge && cfg.form == LossForm::Type2 &&
                cfg.scheme == ReferenceScheme::SameLayerContext,
            "the hebbian rule needs the clapp loss (hinge, type2, same_layer_context)");
  return [cfg, hebbian, fixed](const Network& net, const std::vector<Matrix>& B, const TripleTrace& t) {
    StepGrads g;
    g.loss = layer_losses(t, B, cfg, fixed);
    if (hebbian) {
      for (auto& m : hebbian_clapp_update(net, t, B).per_layer) g.dW.push_back(-m);
      if (cfg.trainable_feedback) {
        const std::vector<Matrix> hb = hebbian_clapp_feedback_update(t, B);
        for (std::size_t k = 0; k < B.size(); ++k) g.dB.push_back(-hb[k] + 2.0 * cfg.lambda * B[k]);
      }
      return g;
    }
    g.dW = local_gradients(net, t, B, cfg, {}, fixed).per_layer;
    if (cfg.trainable_feedback)
      for (int k = 0; k < net.depth(); ++k)
        g.dB.push_back(loss_grad_B(resolve_refs(t, k, cfg.scheme, fixed), B[k], cfg));
    return g;
  };
}

/// One update; throws TrainingDiverged on a non-finite loss or gradient.
inline double train_step(TrainState& s, const TripleBatch& batch, const StepRule& rule,
                         const std::function<TripleTrace(const Network&, const TripleBatch&)>& fwd =
                             [](const Network& n, const TripleBatch& b) { return forward_triple(n, b); }) {
  const TripleTrace t = fwd(s.net, batch);
  StepGrads g = rule(s.net, s.B, t);
  bool grads_finite = true;
  for (const auto& m : g.dW) grads_finite = grads_finite && m.allFinite();
  for (const auto& m : g.dB) grads_finite = grads_finite && m.allFinite();
  if (!std::isfinite(g.loss) || !grads_finite)
    throw TrainingDiverged("training diverged at step " + std::to_string(s.step + 1) + ": loss " +
                           fmt(g.loss) + ", gradients finite: " + (grads_finite ? "yes" : "no") +
                           " (try a smaller learning rate or a larger lambda)");
  std::vector<Matrix*> w;
  for (auto& m : s.net.weights) w.push_back(&m);
  s.opt_w.step(w, g.dW);
  if (!g.dB.empty())
    for (std::size_t k = 0; k < s.B.size(); ++k) s.opt_b[k].step({&s.B[k]}, {g.dB[k]});
  ++s.step;
  return g.loss;
}

struct LoopOptions {
  int epochs = 1;
  std::size_t steps_per_epoch = 0;  // 0: stream.batches_per_epoch()
  std::vector<int> snapshots;       // epochs after which on_snapshot runs (0 = before training)
};

/// Runs epochs of train_step, calling on_snapshot(epoch, state) at the
/// scheduled epochs. Returns the per-step losses.
inline std::vector<double> run_epochs(TrainState& s, CropStream& stream, const StepRule& rule,
                                      const LoopOptions& o,
                                      const std::function<void(int, const TrainState&)>& on_snapshot = {}) {
  auto scheduled = [&](int e) { return std::find(o.snapshots.begin(), o.snapshots.end(), e) != o.snapshots.end(); };
  const std::size_t steps = o.steps_per_epoch ? o.steps_per_epoch : stream.batches_per_epoch();
  std::vector<double> losses;
  if (on_snapshot && scheduled(0)) {
    s.stream = stream.state();
    on_snapshot(0, s);
  }
  for (int e = 1; e <= o.epochs; ++e) {
    for (std::size_t i = 0; i < steps; ++i) losses.push_back(train_step(s, stream.next().triple(), rule));
    if (on_snapshot && scheduled(e)) {
      s.stream = stream.state();
      on_snapshot(e, s);
    }
  }
  s.stream = stream.state();
  return losses;
}

/// Per-layer cosine and Frobenius distance between local and BP updates,
/// [layer][batch]. Batches with an all-zero update are skipped and counted.
struct HeldOutAlignment {
  std::vector<std::vector<double>> cosine, frob;
  std::size_t undefined = 0;
};

inline HeldOutAlignment mlp_alignment(const Network& net, const std::vector<Matrix>& B, MlpCondition c,
                                      const LossConfig& base, const std::vector<TripleBatch>& batches,
                                      int workers) {
  LossConfig cfg = base;
  cfg.scheme = scheme_of(c);
  LossConfig bp_cfg = base;
  bp_cfg.scheme = ReferenceScheme::SameLayerContext;
  const int L = net.depth();
  std::vector<std::vector<std::optional<double>>> cos(batches.size(), std::vector<std::optional<double>>(L));
  std::vector<std::vector<double>> frob(batches.size(), std::vector<double>(L));
  parallel_for(batches.size(), workers, [&](std::size_t i) {
    const TripleTrace t = forward_triple(net, batches[i]);
    const LayerGradients local = local_gradients(net, t, B, cfg);
    const LayerGradients bp = bp_gradients(net, t, B[L - 1], bp_cfg);
    for (int k = 0; k < L; ++k) {
      cos[i][k] = cosine_similarity(local.per_layer[k], bp.per_layer[k]);
      frob[i][k] = (local.per_layer[k] - bp.per_layer[k]).norm();
    }
  });
  HeldOutAlignment out;
  out.cosine.resize(L);
  out.frob.resize(L);
  for (std::size_t i = 0; i < batches.size(); ++i)
    for (int k = 0; k < L; ++k) {
      out.frob[k].push_back(frob[i][k]);
      if (cos[i][k]) out.cosine[k].push_back(*cos[i][k]);
      else ++out.undefined;
    }
  return out;
}

/// Fresh state with Adam/SGD optimizers for W and every B.
inline TrainState make_train_state(Network net, std::vector<Matrix> B, const OptimizerConfig& w_cfg,
                                   const std::vector<OptimizerConfig>& b_cfg) {
  require(b_cfg.size() == B.size(), "make_train_state: one B optimizer config per layer");
  TrainState s{std::move(net), std::move(B), Optimizer(w_cfg), {}, 0, {}};
  for (const auto& c : b_cfg) s.opt_b.emplace_back(c);
  return s;
}

// --- linear probe ------------------------------------------------------------

struct ProbeOptions {
  int epochs = 10;
  double lr = 1e-3;
  int batch_size = 64;
  int crop = 14;
  int stride = 7;
  bool concat_all_layers = false;
  bool permute_labels = false;
  bool standardize = true;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int epochs = 0;
  std::string representation;  // "last" or "concat:1-L"
  bool permuted_labels = false;
};

/// Representation of every image: activations of the chosen layers for each
/// crop on a stride grid, averaged over crop positions.
inline Matrix probe_features(const Network& net, const ImageDataset& ds, int crop, int stride,
                             bool concat_all) {
  require(crop <= ds.height && crop <= ds.width, "probe: crop larger than image");
  require(stride >= 1, "probe: stride must be >= 1");
  std::vector<int> tops, lefts;
  for (int y = 0; y + crop <= ds.height; y += stride) tops.push_back(y);
  for (int x = 0; x + crop <= ds.width; x += stride) lefts.push_back(x);
  const int L = net.depth();
  Eigen::Index dim = 0;
  for (int k = concat_all ? 0 : L - 1; k < L; ++k) dim += net.spec.layer_dims[k + 1];
  const Eigen::Index n = static_cast<Eigen::Index>(ds.size());
  Matrix feats = Matrix::Zero(n, dim);
  Matrix crops(n, static_cast<Eigen::Index>(crop) * crop);
  for (int top : tops)
    for (int left : lefts) {
      for (Eigen::Index i = 0; i < n; ++i)
        crops.row(i) = crop_image(ds, static_cast<std::size_t>(i), top, left, crop).transpose();
      const BatchTrace t = forward_batch(net, crops);
      Eigen::Index off = 0;
      for (int k = concat_all ? 0 : L - 1; k < L; ++k) {
        feats.middleCols(off, t.act[k].cols()) += t.act[k];
        off += t.act[k].cols();
      }
    }
  return feats / static_cast<double>(tops.size() * lefts.size());
}

/// Softmax regression on frozen features, trained by Adam on mini-batches.
/// Features are standardized with train-set statistics when requested.
inline ProbeResult linear_probe(const Network& net, const ImageDataset& train, const ImageDataset& test,
                                const ProbeOptions& o) {
  require(o.epochs >= 1 && o.batch_size >= 1 && o.lr > 0.0, "probe: epochs, batch_size, lr must be positive");
  Matrix xtr = probe_features(net, train, o.crop, o.stride, o.concat_all_layers);
  Matrix xte = probe_features(net, test, o.crop, o.stride, o.concat_all_layers);
  if (o.standardize) {
    const Eigen::RowVectorXd mu = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().sum() /
                             static_cast<double>(xtr.rows()))
                                .sqrt();
    for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-12 ? sd(j) : 1.0;
    xtr = (xtr.rowwise() - mu).array().rowwise() / sd.array();
    xte = (xte.rowwise() - mu).array().rowwise() / sd.array();
  }
  constexpr int kClasses = 10;
  std::vector<int> ytr = train.labels;
  Rng rng(o.seed);
  if (o.permute_labels)
    for (std::size_t i = ytr.size() - 1; i > 0; --i) std::swap(ytr[i], ytr[rng.index(i + 1)]);

  Matrix W = Matrix::Zero(xtr.cols(), kClasses);
  Matrix b = Matrix::Zero(1, kClasses);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  oc.lr = o.lr;
  Optimizer opt(oc);
  std::vector<std::size_t> order(static_cast<std::size_t>(xtr.rows()));
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < o.epochs; ++e) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += o.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(o.batch_size));
      const Eigen::Index m = static_cast<Eigen::Index>(end - start);
      Matrix xb(m, xtr.cols());
      for (Eigen::Index r = 0; r < m; ++r) xb.row(r) = xtr.row(static_cast<Eigen::Index>(order[start + r]));
      Matrix logits = (xb * W).rowwise() + b.row(0);
      Matrix p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
      p.array().colwise() /= p.rowwise().sum().array();
      for (Eigen::Index r = 0; r < m; ++r) p(r, ytr[order[start + r]]) -= 1.0;
      p /= static_cast<double>(m);
      opt.step({&W, &b}, {Matrix(xb.transpose() * p), Matrix(p.colwise().sum())});
    }
  }
  auto accuracy = [&](const Matrix& x, const std::vector<int>& y) {
    const Matrix logits = (x * W).rowwise() + b.row(0);
    std::size_t hit = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg;
      logits.row(r).maxCoeff(&arg);
      hit += static_cast<int>(arg) == y[static_cast<std::size_t>(r)];
    }
    return static_cast<double>(hit) / static_cast<double>(y.size());
  };
  ProbeResult res;
  res.train_accuracy = accuracy(xtr, ytr);
  res.test_accuracy = accuracy(xte, test.labels);
  res.epochs = o.epochs;
  res.representation = o.concat_all_layers ? "concat:1-" + std::to_string(net.depth()) : "last";
  res.permuted_labels = o.permute_labels;
  return res;
}

}  // namespace lssl

#endif  // LSSL_TRAINING_HPP_
