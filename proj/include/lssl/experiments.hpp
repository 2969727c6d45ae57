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


// Alignment protocols (layerwise vs end-to-end updates), the rank sweep,
// ReLU MLP training comparisons, convnet spatial feedback, local training
// with a linear probe, and the finite-difference gradient audit.
//
// Each run is a pure function of (config, seed): batches and initial
// weights come from seed streams, per-batch work writes to its own slot and
// all reductions happen afterwards in batch order.

#ifndef LSSL_EXPERIMENTS_HPP_
#define LSSL_EXPERIMENTS_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lssl/config.hpp"
#include "lssl/convnet.hpp"
#include "lssl/data.hpp"
#include "lssl/feedback.hpp"
#include "lssl/gradients.hpp"
#include "lssl/optim.hpp"
#include "lssl/report.hpp"
#include "lssl/stats.hpp"
#include "lssl/training.hpp"

namespace lssl {

// Seed streams derived from the run seed.
enum SeedStream : std::uint64_t {
  kDataStream = 1,
  kNetStream = 2,
  kFeedbackStream = 3,
  kHeldOutStream = 4,
  kFactorStream = 5,
  kProbeStream = 6,
  kDfaStream = 7,
};

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed).split(stream).seed();
}

inline ImageDataset load_split(const ExperimentConfig& c, bool train) {
  ImageDataset ds = load_mnist(c.mnist_dir, train ? "train" : "t10k");
  const std::size_t limit = train ? c.train_limit : c.heldout_limit;
  return limit ? take(ds, limit) : ds;
}

/// `count` consecutive batches of a seeded crop stream (no image repeats
/// within an epoch).
inline std::vector<TripleBatch> draw_batches(const ImageDataset& ds, int crop, int batch_size, int count,
                                             std::uint64_t seed, bool flip = false) {
  require(count >= 1, "need at least one batch");
  CropStream s(ds, crop, static_cast<std::size_t>(batch_size), seed, flip);
  std::vector<TripleBatch> out;
  for (int i = 0; i < count; ++i) out.push_back(s.next().triple());
  return out;
}

inline AlignmentReport new_report(const ExperimentConfig& c, std::string name) {
  AlignmentReport r;
  r.experiment = std::move(name);
  r.seed = c.seed;
  // Worker count never changes results, so it stays out of the report.
  for (auto& kv : config_entries(c))
    if (kv.first != "run.workers") r.config.push_back(std::move(kv));
  r.config_hash = config_hash(c);
  return r;
}

inline std::vector<int> mlp_dims(int input, int width, int depth) {
  std::vector<int> d{input};
  d.insert(d.end(), depth, width);
  return d;
}

/// R = W^L ... W^{k+2} (0-based layer k), identity for the top layer.
inline Matrix upper_product(const Network& net, int k) {
  const int L = net.depth();
  Matrix R = Matrix::Identity(net.spec.layer_dims[L], net.spec.layer_dims[L]);
  for (int j = L - 1; j > k; --j) R = R * net.weights[j];
  return R;
}

namespace detail {

/// Per-batch, per-layer alignment values gathered into rows.
struct Gathered {
  std::vector<std::vector<double>> cos, frob;  // [layer][batch]
  std::size_t undefined = 0;

  explicit Gathered(int layers) : cos(layers), frob(layers) {}

  void add(int k, std::optional<double> c, double f) {
    frob[k].push_back(f);
    if (c) cos[k].push_back(*c);
    else ++undefined;
  }
};

inline void add_rows(AlignmentReport& rep, const std::string& condition, const Gathered& g,
                     std::vector<std::pair<std::string, std::string>> extra = {}) {
  for (std::size_t k = 0; k < g.cos.size(); ++k)
    rep.rows.push_back(make_row(condition, static_cast<int>(k) + 1, g.cos[k], g.frob[k], extra));
}

inline std::vector<double> layer_means(const AlignmentReport& rep, const std::string& condition, int L) {
  std::vector<double> out;
  for (int k = 1; k <= L; ++k) out.push_back(rep.at(condition, k).cosine.mean);
  return out;
}

inline std::string ci_str(const Summary& s) {
  return fmt(s.mean) + " [" + fmt(s.ci_low) + ", " + fmt(s.ci_high) + "]";
}

}  // namespace detail

// --- ablation ladder ---------------------------------------------------------

struct LadderCondition {
  std::string name;
  Activation activation = Activation::Linear;
  WeightInit init = WeightInit::Orthonormal;
  bool fixed_random_b = false;

  static LadderCondition parse(const std::string& n) {
    if (n == "full") return {n, Activation::Linear, WeightInit::Orthonormal, false};
    if (n == "fixed_random_b") return {n, Activation::Linear, WeightInit::Orthonormal, true};
    if (n == "non_orthogonal_w") return {n, Activation::Linear, WeightInit::Uniform, false};
    if (n == "relu") return {n, Activation::ReLU, WeightInit::Orthonormal, false};
    if (n == "relu_non_orthogonal_w") return {n, Activation::ReLU, WeightInit::Uniform, false};
    throw ConfigError("unknown ladder condition '" + n + "'");
  }
};

struct LadderBatchResult {
  std::vector<std::optional<double>> cos;
  std::vector<double> frob, consistency;
  double max_residual = 0.0;
  bool converged = true;
};

/// One condition of the ladder on one batch: per-layer B (solved or fixed),
/// then local vs BP updates. Consistency is filled for solved B only.
inline LadderBatchResult ladder_batch(const Network& net, const TripleBatch& batch, const LadderCondition& cond,
                                      const std::vector<Matrix>& fixed_b, const LossConfig& cfg, double tol,
                                      int max_iters) {
  const int L = net.depth();
  const TripleTrace t = forward_triple(net, batch);
  std::vector<Matrix> B;
  LadderBatchResult out;
  for (int k = 0; k < L; ++k) {
    if (cond.fixed_random_b) {
      B.push_back(fixed_b[k]);
      continue;
    }
    BStarResult s = bstar_iterative(resolve_refs(t, k, cfg.scheme), cfg, tol, nullptr, max_iters);
    out.max_residual = std::max(out.max_residual, s.grad_norm);
    out.converged = out.converged && s.converged;
    B.push_back(s.B.dense());
  }
  const LayerGradients bp = bp_gradients(net, t, B[L - 1], cfg);
  const LayerGradients local = local_gradients(net, t, B, cfg);
  for (int k = 0; k < L; ++k) {
    out.cos.push_back(cosine_similarity(local.per_layer[k], bp.per_layer[k]));
    out.frob.push_back((local.per_layer[k] - bp.per_layer[k]).norm());
    if (!cond.fixed_random_b) {
      const Matrix R = upper_product(net, k);
      const Matrix pulled = R.transpose() * B[L - 1] * R;
      out.consistency.push_back(pulled.rows() == B[k].rows() && pulled.cols() == B[k].cols()
                                    ? (B[k] - pulled).norm() / (1.0 + B[L - 1].norm())
                                    : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

inline AlignmentReport run_thm1_ladder(const ExperimentConfig& c, const ImageDataset& train) {
  AlignmentReport rep = new_report(c, "verify-thm1");
  LossConfig cfg = loss_config(c);
  cfg.scheme = ReferenceScheme::SameLayerContext;
  require(cfg.lambda > 0.0, "ladder: loss.lambda must be > 0 for B* to exist");
  require(c.ladder_depth >= 1 && c.ladder_width >= 1 && c.ladder_seeds >= 1, "ladder: bad depth/width/seeds");
  const int L = c.ladder_depth;
  std::vector<LadderCondition> conds;
  for (const auto& n : c.ladder_conditions) conds.push_back(LadderCondition::parse(n));
  rep.metadata["ci_method"] = "student_t_across_batches";
  rep.metadata["solver"] = {{"tol", c.tol}, {"max_iters", c.max_iters}};
  rep.metadata["residuals"] = nlohmann::json::object();

  std::map<std::string, std::vector<std::vector<double>>> layer1_by_seed;  // condition -> [seed] cosines
  for (int s = 0; s < c.ladder_seeds; ++s) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(s);
    const auto batches = draw_batches(train, c.crop, c.batch_size, c.batches, stream_seed(seed, kDataStream));
    const NetworkSpec spec = NetworkSpec::uniform(mlp_dims(c.crop * c.crop, c.ladder_width, L), Activation::Linear);
    for (const auto& cond : conds) {
      NetworkSpec cs = spec;
      cs.activations.assign(L, cond.activation);
      // Conditions sharing an init share the weights.
      Rng net_rng(stream_seed(seed, kNetStream + 100 * static_cast<std::uint64_t>(cond.init)));
      const Network net = make_network(cs, cond.init, net_rng);
      std::vector<Matrix> fixed_b;
      Rng fb_rng(stream_seed(seed, kFeedbackStream));
      for (int k = 1; k <= L; ++k) fixed_b.push_back(uniform_init(cs.layer_dims[k], cs.layer_dims[k], fb_rng));

      std::vector<LadderBatchResult> res(batches.size());
      parallel_for(batches.size(), c.workers, [&](std::size_t i) {
        res[i] = ladder_batch(net, batches[i], cond, fixed_b, cfg, c.tol, c.max_iters);
      });
      detail::Gathered g(L);
      double max_res = 0.0, max_cons = 0.0;
      bool converged = true;
      for (const auto& r : res) {
        for (int k = 0; k < L; ++k) g.add(k, r.cos[k], r.frob[k]);
        max_res = std::max(max_res, r.max_residual);
        converged = converged && r.converged;
        for (double v : r.consistency) max_cons = std::isnan(v) ? v : std::max(max_cons, v);
      }
      detail::add_rows(rep, cond.name, g, {{"seed", std::to_string(seed)}});
      layer1_by_seed[cond.name].push_back(g.cos[0]);
      const std::string key = cond.name + (c.ladder_seeds > 1 ? "@" + std::to_string(seed) : "");
      rep.metadata["residuals"][key] = {{"max_grad_norm", json_number(max_res)},
                                        {"all_converged", converged},
                                        {"undefined_cosines", g.undefined}};
      if (s != 0) continue;
      if (!cond.fixed_random_b && !converged)
        rep.add_check(cond.name + ".solver_converged", false,
                      "max B* gradient norm " + fmt(max_res) + " > tol " + fmt(c.tol), cond.name == "full");
      if (cond.name == "full") {
        double min_cos = 1.0;
        for (const auto& v : g.cos)
          for (double x : v) min_cos = std::min(min_cos, x);
        const bool all_defined = g.undefined == 0;
        rep.add_check("full.cosine_one", all_defined && min_cos >= 1.0 - 1e-6,
                      "min cosine over layers and batches " + fmt(min_cos));
        rep.add_check("full.bstar_consistency", max_cons <= 1e-6,
                      "max |B*^l - R^T B*^L R| / (1 + |B*^L|) = " + fmt(max_cons));
        rep.add_check("full.solver_residual", converged && max_res <= c.tol,
                      "max B* gradient norm " + fmt(max_res));
      }
    }
  }

  // Ablation ordering at layer 1 and drop profile across layers (first seed).
  const bool have_full = std::count(c.ladder_conditions.begin(), c.ladder_conditions.end(), "full") > 0;
  for (const std::string name : {"fixed_random_b", "non_orthogonal_w"}) {
    if (!have_full || !rep.find(name, 1)) continue;
    const Summary& full = rep.at("full", 1).cosine;
    const Summary& abl = rep.at(name, 1).cosine;
    rep.add_check(name + ".layer1_gap", full.mean - abl.mean >= 0.05 && strictly_above(full, abl),
                  "full " + detail::ci_str(full) + " vs " + detail::ci_str(abl));
    std::vector<double> idx;
    for (int k = 1; k <= L; ++k) idx.push_back(k);
    const std::vector<double> cos = detail::layer_means(rep, name, L);
    const double rho = spearman(idx, cos);
    rep.add_check(name + ".drop_grows_toward_input", rho > 0.0,
                  "spearman(layer index, cosine) = " + fmt(rho));
    rep.metadata["spearman"][name] = json_number(rho);
    if (c.ladder_seeds > 1) {
      bool persists = true;
      std::string detail_text;
      for (int s = 0; s < c.ladder_seeds; ++s) {
        const Summary f = summarize(layer1_by_seed["full"][s]);
        const Summary a = summarize(layer1_by_seed[name][s]);
        persists = persists && f.mean - a.mean >= 0.05 && strictly_above(f, a);
        detail_text += (s ? "; " : "") + fmt(f.mean - a.mean);
      }
      rep.add_check(name + ".ordering_persists_across_seeds", persists, "layer-1 gaps " + detail_text);
    }
  }
  return rep;
}

// --- direct feedback comparison ---------------------------------------------

inline AlignmentReport run_dfb_comparison(const ExperimentConfig& c, const ImageDataset& train) {
  AlignmentReport rep = new_report(c, "verify-dfb");
  require(!c.dfb_widths.empty(), "dfb.widths must not be empty");
  std::vector<int> dims{c.crop * c.crop};
  dims.insert(dims.end(), c.dfb_widths.begin(), c.dfb_widths.end());
  Rng net_rng(stream_seed(c.seed, kNetStream));
  const Network net = make_network(NetworkSpec::uniform(dims, Activation::Linear), WeightInit::Orthonormal, net_rng);
  const int L = net.depth();
  rep.metadata["ci_method"] = "student_t_across_batches";
  rep.metadata["widths"] = dims;

  // LinearNeg, batch 1: closed-form B*, exact squared-distance inequality.
  {
    LossConfig cfg;
    cfg.f = ScoreFn::linear_neg();
    cfg.form = loss_form_from_string(c.form);
    cfg.lambda = c.lambda;
    const auto batches = draw_batches(train, c.crop, 1, c.dfb_samples, stream_seed(c.seed, kDataStream));
    struct R {
      std::vector<std::optional<double>> cl, cd;
      std::vector<double> dl, dd;
    };
    std::vector<R> res(batches.size());
    parallel_for(batches.size(), c.workers, [&](std::size_t i) {
      const TripleTrace t = forward_triple(net, batches[i]);
      std::vector<Matrix> bs, bd;
      for (int k = 0; k < L; ++k) {
        bs.push_back(bstar_closed_form_linear(resolve_refs(t, k, ReferenceScheme::SameLayerContext), cfg.lambda, cfg.form).B.dense());
        bd.push_back(bstar_closed_form_linear(resolve_refs(t, k, ReferenceScheme::DirectFeedback), cfg.lambda, cfg.form).B.dense());
      }
      LossConfig same = cfg, dfb = cfg;
      same.scheme = ReferenceScheme::SameLayerContext;
      dfb.scheme = ReferenceScheme::DirectFeedback;
      const LayerGradients bp = bp_gradients(net, t, bs[L - 1], same);
      const LayerGradients gl = local_gradients(net, t, bs, same);
      const LayerGradients gd = local_gradients(net, t, bd, dfb);
      for (int k = 0; k < L; ++k) {
        res[i].cl.push_back(cosine_similarity(gl.per_layer[k], bp.per_layer[k]));
        res[i].cd.push_back(cosine_similarity(gd.per_layer[k], bp.per_layer[k]));
        res[i].dl.push_back((gl.per_layer[k] - bp.per_layer[k]).squaredNorm());
        res[i].dd.push_back((gd.per_layer[k] - bp.per_layer[k]).squaredNorm());
      }
    });
    detail::Gathered gl(L), gd(L);
    std::size_t violations = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& r : res)
      for (int k = 0; k < L; ++k) {
        gl.add(k, r.cl[k], std::sqrt(r.dl[k]));
        gd.add(k, r.cd[k], std::sqrt(r.dd[k]));
        worst = std::max(worst, r.dd[k] - r.dl[k]);
        if (r.dd[k] > r.dl[k] + 1e-10) ++violations;
      }
    detail::add_rows(rep, "linear_neg/local", gl);
    detail::add_rows(rep, "linear_neg/local_dfb", gd);
    rep.add_check("linear_neg.dfb_distance_bound", violations == 0,
                  std::to_string(violations) + " of " + std::to_string(res.size() * L) +
                      " (sample, layer) pairs violate; max(d_dfb - d_local) = " + fmt(worst));
  }

  // Softplus, batched: iterative B* for both reference schemes.
  {
    LossConfig cfg;
    cfg.f = ScoreFn::softplus();
    cfg.form = loss_form_from_string(c.form);
    cfg.lambda = c.lambda;
    require(cfg.lambda > 0.0, "dfb: loss.lambda must be > 0");
    const auto batches =
        draw_batches(train, c.crop, c.batch_size, c.dfb_batches, stream_seed(c.seed, kDataStream + 10));
    struct R {
      std::vector<std::optional<double>> cl, cd;
      std::vector<double> fl, fd;
      double top_diff = 0.0, residual = 0.0;
      bool converged = true;
    };
    std::vector<R> res(batches.size());
    parallel_for(batches.size(), c.workers, [&](std::size_t i) {
      const TripleTrace t = forward_triple(net, batches[i]);
      LossConfig same = cfg, dfb = cfg;
      same.scheme = ReferenceScheme::SameLayerContext;
      dfb.scheme = ReferenceScheme::DirectFeedback;
      std::vector<Matrix> bs, bd;
      for (int k = 0; k < L; ++k) {
        for (auto [scheme, out] : {std::pair{same.scheme, &bs}, std::pair{dfb.scheme, &bd}}) {
          BStarResult b = bstar_iterative(resolve_refs(t, k, scheme), cfg, c.tol, nullptr, c.max_iters);
          res[i].residual = std::max(res[i].residual, b.grad_norm);
          res[i].converged = res[i].converged && b.converged;
          out->push_back(b.B.dense());
        }
      }
      const LayerGradients bp = bp_gradients(net, t, bs[L - 1], same);
      const LayerGradients gl = local_gradients(net, t, bs, same);
      const LayerGradients gd = local_gradients(net, t, bd, dfb);
      for (int k = 0; k < L; ++k) {
        res[i].cl.push_back(cosine_similarity(gl.per_layer[k], bp.per_layer[k]));
        res[i].cd.push_back(cosine_similarity(gd.per_layer[k], bp.per_layer[k]));
        res[i].fl.push_back((gl.per_layer[k] - bp.per_layer[k]).norm());
        res[i].fd.push_back((gd.per_layer[k] - bp.per_layer[k]).norm());
      }
      res[i].top_diff = relative_error(gl.per_layer[L - 1], gd.per_layer[L - 1]);
    });
    detail::Gathered gl(L), gd(L);
    double top_diff = 0.0, residual = 0.0;
    bool converged = true;
    for (const auto& r : res) {
      for (int k = 0; k < L; ++k) {
        gl.add(k, r.cl[k], r.fl[k]);
        gd.add(k, r.cd[k], r.fd[k]);
      }
      top_diff = std::max(top_diff, r.top_diff);
      residual = std::max(residual, r.residual);
      converged = converged && r.converged;
    }
    detail::add_rows(rep, "softplus/local", gl);
    detail::add_rows(rep, "softplus/local_dfb", gd);
    rep.metadata["residuals"]["softplus"] = {{"max_grad_norm", json_number(residual)}, {"all_converged", converged}};
    rep.add_check("softplus.solver_residual", converged, "max B* gradient norm " + fmt(residual));
    for (int k = 1; k < L; ++k) {
      const Summary& a = rep.at("softplus/local_dfb", k).cosine;
      const Summary& b = rep.at("softplus/local", k).cosine;
      rep.add_check("softplus.layer" + std::to_string(k) + ".dfb_at_least_local", at_least_within_ci(a, b),
                    "dfb " + detail::ci_str(a) + " vs local " + detail::ci_str(b));
    }
    rep.add_check("softplus.top_layer_identical", top_diff <= 1e-12,
                  "max relative difference at layer " + std::to_string(L) + ": " + fmt(top_diff));
  }
  return rep;
}

// --- rank-constrained feedback ------------------------------------------------

inline AlignmentReport run_rank_sweep(const ExperimentConfig& c, const ImageDataset& train) {
  AlignmentReport rep = new_report(c, "rank-sweep");
  LossConfig cfg = loss_config(c);
  cfg.scheme = ReferenceScheme::SameLayerContext;
  const int L = c.ladder_depth, W = c.ladder_width;
  require(!c.ranks.empty() && c.rank_seeds >= 1 && c.rank_batches >= 1, "rank: need ranks, seeds, batches");
  std::vector<int> ranks = c.ranks;
  std::sort(ranks.rbegin(), ranks.rend());
  for (int r : ranks) require(r >= 1 && r <= W, "rank.ranks entries must be in [1, ladder.width]");
  RankConstrainedOptions base;
  base.method = rank_method_from_string(c.rank_method);
  base.steps = c.rank_steps;
  base.tol = c.rank_tol;
  rep.metadata["ci_method"] = "student_t_across_seeds";
  rep.metadata["solver"] = {{"method", c.rank_method}, {"steps", c.rank_steps}, {"tol", c.rank_tol}};

  // samples[rank][layer][seed] = mean cosine over that seed's batches
  std::vector<std::vector<std::vector<double>>> samples(ranks.size(), std::vector<std::vector<double>>(L));
  std::vector<std::vector<std::vector<double>>> frobs = samples;
  double max_res = 0.0;
  std::size_t unconverged = 0;
  for (int s = 0; s < c.rank_seeds; ++s) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(s);
    Rng net_rng(stream_seed(seed, kNetStream));
    const Network net = make_network(
        NetworkSpec::uniform(mlp_dims(c.crop * c.crop, W, L), Activation::Linear), WeightInit::Orthonormal, net_rng);
    const auto batches = draw_batches(train, c.crop, c.batch_size, c.rank_batches, stream_seed(seed, kDataStream));
    std::vector<TripleTrace> traces;
    for (const auto& b : batches) traces.push_back(forward_triple(net, b));
    for (std::size_t ri = 0; ri < ranks.size(); ++ri) {
      const std::size_t jobs = batches.size() * static_cast<std::size_t>(L);
      std::vector<BStarResult> sol(jobs);
      parallel_for(jobs, c.workers, [&](std::size_t j) {
        const std::size_t b = j / L;
        const int k = static_cast<int>(j % L);
        RankConstrainedOptions o = base;
        o.rank = ranks[ri];
        Rng rng(stream_seed(seed, kFactorStream + 1000 * (ranks[ri] + 1000 * (b * L + k))));
        sol[j] = bstar_rank_constrained(resolve_refs(traces[b], k, cfg.scheme), cfg, o, rng);
      });
      std::vector<std::vector<double>> cos(L), fr(L);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        std::vector<Matrix> B;
        for (int k = 0; k < L; ++k) {
          const BStarResult& r = sol[b * L + k];
          max_res = std::max(max_res, r.grad_norm);
          unconverged += !r.converged;
          B.push_back(r.B.dense());
        }
        const LayerGradients bp = bp_gradients(net, traces[b], B[L - 1], cfg);
        const LayerGradients lo = local_gradients(net, traces[b], B, cfg);
        for (int k = 0; k < L; ++k) {
          cos[k].push_back(cosine_similarity(lo.per_layer[k], bp.per_layer[k]).value_or(0.0));
          fr[k].push_back((lo.per_layer[k] - bp.per_layer[k]).norm());
        }
      }
      for (int k = 0; k < L; ++k) {
        samples[ri][k].push_back(pairwise_sum(cos[k]) / static_cast<double>(cos[k].size()));
        frobs[ri][k].push_back(pairwise_sum(fr[k]) / static_cast<double>(fr[k].size()));
      }
    }
  }
  for (std::size_t ri = 0; ri < ranks.size(); ++ri)
    for (int k = 0; k < L; ++k)
      rep.rows.push_back(make_row("rank=" + std::to_string(ranks[ri]), k + 1, samples[ri][k], frobs[ri][k],
                                  {{"rank", std::to_string(ranks[ri])}}));
  rep.metadata["residuals"] = {{"max_grad_norm", json_number(max_res)}, {"unconverged", unconverged}};
  rep.add_check("solver_converged", unconverged == 0,
                std::to_string(unconverged) + " factor solves above tol; max gradient norm " + fmt(max_res), false);

  const std::string full = "rank=" + std::to_string(W);
  if (rep.find(full, 1)) {
    double worst = 1.0;
    for (int k = 1; k <= L; ++k) worst = std::min(worst, rep.at(full, k).cosine.mean);
    rep.add_check("full_rank_cosine", worst >= 1.0 - 1e-4, "min over layers of mean cosine " + fmt(worst));
  } else {
    rep.add_check("full_rank_cosine", false, "rank.ranks does not include the full width " + std::to_string(W));
  }
  bool monotone = true;
  std::string worst_pair;
  for (std::size_t ri = 1; ri < ranks.size(); ++ri)
    for (int k = 1; k <= L; ++k) {
      const Summary& hi = rep.at("rank=" + std::to_string(ranks[ri - 1]), k).cosine;
      const Summary& lo = rep.at("rank=" + std::to_string(ranks[ri]), k).cosine;
      if (!at_least_within_ci(hi, lo)) {
        monotone = false;
        worst_pair += "layer " + std::to_string(k) + ": rank " + std::to_string(ranks[ri]) + " " +
                      detail::ci_str(lo) + " > rank " + std::to_string(ranks[ri - 1]) + " " + detail::ci_str(hi) + "; ";
      }
    }
  rep.add_check("non_increasing_in_rank", monotone, monotone ? "within CI at every layer" : worst_pair);
  if (rep.find("rank=1", 1) && rep.find(full, 1)) {
    const Summary& one = rep.at("rank=1", 1).cosine;
    const Summary& top = rep.at(full, 1).cosine;
    rep.add_check("rank1_below_full_at_layer1", one.mean < top.mean,
                  "rank 1 " + detail::ci_str(one) + " vs full " + detail::ci_str(top), false);
  }
  return rep;
}

// --- convnet spatial feedback --------------------------------------------------

enum class ConvCondition { Independent, Spatial, SpatialDFB };

inline const char* to_string(ConvCondition c) {
  switch (c) {
    case ConvCondition::Independent: return "independent";
    case ConvCondition::Spatial: return "spatial";
    case ConvCondition::SpatialDFB: return "spatial_dfb";
  }
  return "?";
}

/// Groupings per layer: independent pools each map globally; spatial uses
/// `first_patch` pooling at layer 1 and per-location (p = 1) scoring above,
/// either grouped per location or flattened into one B.
inline std::vector<SpatialGrouping> conv_groupings(const ConvSpec& s, ConvCondition c, bool flatten,
                                                   int first_patch) {
  std::vector<SpatialGrouping> out;
  for (int k = 0; k < s.depth(); ++k) {
    const int m = s.h(k + 1);
    if (c == ConvCondition::Independent) {
      out.push_back(SpatialGrouping::independent(m));
      continue;
    }
    const int p = std::min(k == 0 ? first_patch : 1, m);
    require(m % p == 0, "conv.first_patch must divide the layer-1 map size");
    out.push_back({p, flatten && p < m});
  }
  return out;
}

inline AlignmentReport run_conv_spatial(const ExperimentConfig& c, const ImageDataset& train) {
  AlignmentReport rep = new_report(c, "conv-spatial");
  LossConfig cfg = loss_config(c);
  cfg.lambda = c.conv_lambda;
  require(cfg.lambda > 0.0, "conv.lambda must be > 0");
  require(c.conv_mode == "flattened" || c.conv_mode == "grouped", "conv.mode must be flattened or grouped");
  const bool flatten = c.conv_mode == "flattened";
  const ConvSpec spec = ConvSpec::uniform(1, c.conv_crop, c.conv_crop, c.conv_depth, c.conv_channels, Activation::Linear);
  spec.validate();
  require(spec.h(spec.depth()) >= 1, "conv: crop too small for the depth");
  Rng net_rng(stream_seed(c.seed, kNetStream));
  const ConvNet net = make_convnet(spec, WeightInit::Uniform, net_rng);
  const int L = net.depth();
  const std::vector<ConvCondition> conds = {ConvCondition::Independent, ConvCondition::Spatial,
                                            ConvCondition::SpatialDFB};
  std::vector<std::vector<SpatialGrouping>> groupings;
  for (auto cc : conds) groupings.push_back(conv_groupings(spec, cc, flatten, c.conv_first_patch));
  const auto batches = draw_batches(train, c.conv_crop, c.batch_size, c.conv_batches, stream_seed(c.seed, kDataStream));

  struct R {
    std::vector<std::vector<std::optional<double>>> cos;  // [cond][layer]
    std::vector<std::vector<double>> frob;
    double residual = 0.0;
    bool converged = true;
  };
  std::vector<R> res(batches.size());
  parallel_for(batches.size(), c.workers, [&](std::size_t i) {
    const TripleTrace t = conv_forward_triple(net, batches[i]);
    R& r = res[i];
    std::vector<std::vector<SpatialFeedback>> fbs(conds.size());
    for (std::size_t ci = 0; ci < conds.size(); ++ci) {
      LossConfig lc = cfg;
      lc.scheme = conds[ci] == ConvCondition::SpatialDFB ? ReferenceScheme::DirectFeedback
                                                         : ReferenceScheme::SameLayerContext;
      for (int k = 0; k < L; ++k) {
        SpatialBStar sb = spatial_bstar(conv_layer_refs(spec, t, k, groupings[ci][k], lc.scheme), lc, c.tol, c.max_iters);
        r.residual = std::max(r.residual, sb.max_grad_norm);
        r.converged = r.converged && sb.converged;
        fbs[ci].push_back(std::move(sb.fb));
      }
    }
    const LayerGradients bp = conv_gradients(net, t, fbs[0], groupings[0], cfg, ConvGradMode::BP);
    for (std::size_t ci = 0; ci < conds.size(); ++ci) {
      const LayerGradients g = conv_gradients(net, t, fbs[ci], groupings[ci], cfg,
                                              conds[ci] == ConvCondition::SpatialDFB ? ConvGradMode::LocalDFB
                                                                                     : ConvGradMode::Local);
      r.cos.emplace_back();
      r.frob.emplace_back();
      for (int k = 0; k < L; ++k) {
        r.cos.back().push_back(cosine_similarity(g.per_layer[k], bp.per_layer[k]));
        r.frob.back().push_back((g.per_layer[k] - bp.per_layer[k]).norm());
      }
    }
  });
  double residual = 0.0;
  bool converged = true;
  for (std::size_t ci = 0; ci < conds.size(); ++ci) {
    detail::Gathered g(L);
    for (const auto& r : res)
      for (int k = 0; k < L; ++k) g.add(k, r.cos[ci][k], r.frob[ci][k]);
    for (int k = 0; k < L; ++k) {
      const SpatialGrouping& sg = groupings[ci][k];
      rep.rows.push_back(make_row(to_string(conds[ci]), k + 1, g.cos[k], g.frob[k],
                                  {{"groups", std::to_string(sg.groups(spec.h(k + 1), spec.w(k + 1)))},
                                   {"patch", std::to_string(sg.patch)},
                                   {"flatten", sg.flatten ? "true" : "false"}}));
    }
  }
  for (const auto& r : res) {
    residual = std::max(residual, r.residual);
    converged = converged && r.converged;
  }
  rep.metadata["ci_method"] = "student_t_across_batches";
  rep.metadata["mode"] = c.conv_mode;
  rep.metadata["residuals"] = {{"max_grad_norm", json_number(residual)}, {"all_converged", converged}};
  rep.add_check("solver_residual", converged, "max B* gradient norm " + fmt(residual));
  for (int k = 1; k < L; ++k) {
    const Summary& ind = rep.at("independent", k).cosine;
    const Summary& sp = rep.at("spatial", k).cosine;
    const Summary& dfb = rep.at("spatial_dfb", k).cosine;
    const std::string l = "layer" + std::to_string(k);
    rep.add_check(l + ".spatial_above_independent", strictly_above(sp, ind),
                  "spatial " + detail::ci_str(sp) + " vs independent " + detail::ci_str(ind));
    rep.add_check(l + ".spatial_dfb_at_least_spatial", at_least_within_ci(dfb, sp),
                  "spatial_dfb " + detail::ci_str(dfb) + " vs spatial " + detail::ci_str(sp));
  }
  double top_min = 1.0;
  for (const char* n : {"independent", "spatial", "spatial_dfb"})
    for (double v : rep.at(n, L).samples) top_min = std::min(top_min, v);
  rep.add_check("top_layer_equals_bp", top_min >= 1.0 - 1e-9, "min top-layer cosine " + fmt(top_min));
  return rep;
}

// --- ReLU MLP training comparisons --------------------------------------------

struct MlpRunOptions {
  std::string experiment;
  std::vector<std::string> conditions;
  std::vector<int> snapshots;
};

/// Trains one MLP per condition from identical initial weights and data
/// order; evaluates held-out alignment at each snapshot epoch.
inline AlignmentReport run_mlp_snapshots(const ExperimentConfig& c, const ImageDataset& train,
                                         const ImageDataset& test, const MlpRunOptions& o) {
  AlignmentReport rep = new_report(c, o.experiment);
  LossConfig cfg = loss_config(c);
  cfg.lambda = c.mlp_lambda;
  require(c.mlp_epochs >= 0, "mlp.epochs must be >= 0");
  for (int e : o.snapshots) require(e >= 0 && e <= c.mlp_epochs, "snapshot epochs must be in [0, mlp.epochs]");
  const NetworkSpec spec = NetworkSpec::uniform(mlp_dims(c.crop * c.crop, c.mlp_width, c.mlp_depth), Activation::ReLU);
  const int L = spec.depth();
  const auto heldout = draw_batches(test, c.crop, c.batch_size, c.mlp_eval_batches, stream_seed(c.seed, kHeldOutStream));
  rep.metadata["ci_method"] = "student_t_across_batches";
  rep.metadata["heldout_images"] = test.size();
  rep.metadata["train_images"] = train.size();
  for (const auto& name : o.conditions) {
    const MlpCondition cond = mlp_condition_from_string(name);
    Rng net_rng(stream_seed(c.seed, kNetStream));
    Network net = make_network(spec, WeightInit::Uniform, net_rng);
    Rng fb_rng(stream_seed(c.seed, kFeedbackStream + 10 * (scheme_of(cond) == ReferenceScheme::DirectFeedback)));
    std::vector<Matrix> B;
    std::vector<OptimizerConfig> b_opt;
    for (int k = 1; k <= L; ++k) {
      const int cols = scheme_of(cond) == ReferenceScheme::DirectFeedback ? spec.layer_dims[L] : spec.layer_dims[k];
      B.push_back(uniform_init(spec.layer_dims[k], cols, fb_rng));
      OptimizerConfig oc;
      oc.lr = (cond == MlpCondition::OptimalB && k < L) ? c.mlp_optimal_b_lr : c.mlp_b_lr;
      b_opt.push_back(oc);
    }
    OptimizerConfig w_opt;
    w_opt.lr = c.mlp_lr;
    TrainState state = make_train_state(std::move(net), std::move(B), w_opt, b_opt);
    CropStream stream(train, c.crop, static_cast<std::size_t>(c.batch_size), stream_seed(c.seed, kDataStream), c.flip);
    LoopOptions lo{c.mlp_epochs, c.mlp_steps_per_epoch, o.snapshots};
    std::size_t undefined = 0;
    const std::vector<double> losses = run_epochs(state, stream, mlp_step_rule(cond, cfg), lo, [&](int e, const TrainState& s) {
      const HeldOutAlignment a = mlp_alignment(s.net, s.B, cond, cfg, heldout, c.workers);
      undefined += a.undefined;
      for (int k = 0; k < L; ++k)
        rep.rows.push_back(make_row(name, k + 1, a.cosine[k], a.frob[k], {{"epoch", std::to_string(e)}}));
    });
    const std::size_t per_epoch = losses.size() / std::max(1, c.mlp_epochs);
    nlohmann::json m{{"steps", losses.size()}, {"undefined_cosines", undefined}};
    if (per_epoch > 0) {
      m["first_epoch_mean_loss"] = json_number(pairwise_sum(losses.data(), per_epoch) / per_epoch);
      m["last_epoch_mean_loss"] =
          json_number(pairwise_sum(losses.data() + losses.size() - per_epoch, per_epoch) / per_epoch);
    }
    rep.metadata["training"][name] = m;
  }
  return rep;
}

inline AlignmentReport run_relu_mlp_training(const ExperimentConfig& c, const ImageDataset& train,
                                             const ImageDataset& test) {
  std::vector<int> snaps = c.mlp_snapshots;
  if (std::find(snaps.begin(), snaps.end(), c.mlp_epochs) == snaps.end()) snaps.push_back(c.mlp_epochs);
  std::sort(snaps.begin(), snaps.end());
  AlignmentReport rep = run_mlp_snapshots(c, train, test, {"relu-mlp", c.mlp_conditions, snaps});
  const std::string last = std::to_string(c.mlp_epochs);
  auto row = [&](const char* cond, int layer) { return rep.find(cond, layer, "epoch", last); };
  auto compare = [&](const char* hi, const char* lo, int layer, bool strict) {
    if (!row(hi, layer) || !row(lo, layer)) return;
    const Summary& a = row(hi, layer)->cosine;
    const Summary& b = row(lo, layer)->cosine;
    const bool ok = strict ? strictly_above(a, b) : at_least_within_ci(a, b);
    rep.add_check("layer" + std::to_string(layer) + "." + hi + (strict ? "_above_" : "_at_least_") + lo, ok,
                  std::string(hi) + " " + detail::ci_str(a) + " vs " + lo + " " + detail::ci_str(b));
  };
  compare("local", "fixed_random_b", 1, true);
  compare("local_dfb", "local", 1, false);
  compare("optimal_b", "local_dfb", 1, false);
  for (int k = 2; k <= c.mlp_depth; ++k) compare("optimal_b", "local_dfb", k, false);
  return rep;
}

inline AlignmentReport run_alignment_by_epoch(const ExperimentConfig& c, const ImageDataset& train,
                                              const ImageDataset& test) {
  ExperimentConfig cc = c;
  std::vector<int> snaps = c.epoch_snapshots;
  std::sort(snaps.begin(), snaps.end());
  snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());
  require(!snaps.empty(), "epochs.snapshots must not be empty");
  cc.mlp_epochs = std::max(c.mlp_epochs, snaps.back());
  AlignmentReport rep = run_mlp_snapshots(cc, train, test, {"align-by-epoch", c.epoch_conditions, snaps});
  const std::size_t expect = snaps.size() * c.epoch_conditions.size() * static_cast<std::size_t>(c.mlp_depth);
  rep.add_check("row_count", rep.rows.size() == expect,
                std::to_string(rep.rows.size()) + " rows, expected " + std::to_string(expect));
  rep.add_check("epoch0_present", snaps.front() == 0, "first snapshot epoch " + std::to_string(snaps.front()));
  const bool both = std::count(c.epoch_conditions.begin(), c.epoch_conditions.end(), "local") &&
                    std::count(c.epoch_conditions.begin(), c.epoch_conditions.end(), "local_dfb");
  if (both) {
    std::string failures;
    for (int e : snaps)
      for (int k = 1; k <= c.mlp_depth; ++k) {
        const Summary& d = rep.at("local_dfb", k, "epoch", std::to_string(e)).cosine;
        const Summary& l = rep.at("local", k, "epoch", std::to_string(e)).cosine;
        if (!at_least_within_ci(d, l))
          failures += "epoch " + std::to_string(e) + " layer " + std::to_string(k) + ": dfb " + detail::ci_str(d) +
                      " vs local " + detail::ci_str(l) + "; ";
      }
    rep.add_check("dfb_at_least_local_every_snapshot", failures.empty(),
                  failures.empty() ? "within CI at every snapshot and layer" : failures);
  }
  return rep;
}

// --- local training and the linear probe ---------------------------------------

struct TrainOutcome {
  TrainState state;
  std::vector<double> losses;
  std::size_t steps_per_epoch = 0;
  FixedReferences fixed;
};

inline NetworkSpec train_network_spec(const ExperimentConfig& c) {
  const LossConfig cfg = loss_config(c);
  return NetworkSpec::uniform(mlp_dims(c.crop * c.crop, c.train_width, c.train_depth),
                              activation_from_string(c.train_activation), cfg.normalize);
}

inline WeightInit weight_init_from_string(const std::string& s) {
  if (s == "uniform") return WeightInit::Uniform;
  if (s == "orthonormal") return WeightInit::Orthonormal;
  throw ConfigError("unknown init '" + s + "' (expected uniform or orthonormal)");
}

/// Untrained network of the [train] architecture (the probe baseline).
inline Network initial_train_network(const ExperimentConfig& c) {
  Rng rng(stream_seed(c.seed, kNetStream));
  return make_network(train_network_spec(c), weight_init_from_string(c.train_init), rng);
}

/// Initial training state for the [train] and [loss] sections.
inline TrainState initial_train_state(const ExperimentConfig& c) {
  const LossConfig cfg = loss_config(c);
  Network net = initial_train_network(c);
  const int L = net.depth();
  Rng fb_rng(stream_seed(c.seed, kFeedbackStream));
  std::vector<Matrix> B;
  std::vector<OptimizerConfig> b_opt;
  for (int k = 1; k <= L; ++k) {
    const int rows = net.spec.layer_dims[k];
    const int cols = cfg.scheme == ReferenceScheme::DirectFeedback ? net.spec.layer_dims[L] : rows;
    B.push_back(cfg.trainable_feedback ? uniform_init(rows, cols, fb_rng) : Matrix::Identity(rows, cols));
    OptimizerConfig oc;
    oc.kind = optimizer_kind_from_string(c.train_optimizer);
    oc.lr = c.train_b_lr;
    oc.momentum = c.train_momentum;
    b_opt.push_back(oc);
  }
  OptimizerConfig w;
  w.kind = optimizer_kind_from_string(c.train_optimizer);
  w.lr = c.train_lr;
  w.momentum = c.train_momentum;
  return make_train_state(std::move(net), std::move(B), w, b_opt);
}

inline bool hebbian_rule(const ExperimentConfig& c) {
  if (c.train_rule == "hebbian") return true;
  if (c.train_rule == "autodiff") return false;
  throw ConfigError("unknown train.rule '" + c.train_rule + "' (expected autodiff or hebbian)");
}

/// Trains W by the configured local rule and B by its local gradient.
/// `resume` continues a saved state (same config); on_snapshot receives the
/// state after each scheduled epoch.
inline TrainOutcome train_local_ssl(const ExperimentConfig& c, const ImageDataset& train,
                                    const std::function<void(int, const TrainState&)>& on_snapshot = {},
                                    const TrainState* resume = nullptr, int epochs_override = -1) {
  const LossConfig cfg = loss_config(c);
  TrainOutcome out;
  out.state = resume ? *resume : initial_train_state(c);
  Rng ref_rng(stream_seed(c.seed, kFeedbackStream + 20));
  out.fixed = FixedReferences::draw(out.state.net.spec, ref_rng);
  CropStream stream(train, c.crop, static_cast<std::size_t>(c.batch_size), stream_seed(c.seed, kDataStream), c.flip);
  if (resume) stream.restore(resume->stream);
  out.steps_per_epoch = c.train_steps_per_epoch ? c.train_steps_per_epoch : stream.batches_per_epoch();
  LoopOptions lo{epochs_override >= 0 ? epochs_override : c.train_epochs, c.train_steps_per_epoch, c.train_snapshots};
  out.losses = run_epochs(out.state, stream, ssl_step_rule(cfg, hebbian_rule(c), &out.fixed), lo, on_snapshot);
  return out;
}

inline ProbeOptions probe_options(const ExperimentConfig& c) {
  require(c.probe_layers == "last" || c.probe_layers == "all", "probe.layers must be last or all");
  ProbeOptions o;
  o.epochs = c.probe_epochs;
  o.lr = c.probe_lr;
  o.batch_size = c.probe_batch_size;
  o.crop = c.crop;
  o.stride = c.probe_stride;
  o.concat_all_layers = c.probe_layers == "all";
  o.permute_labels = c.probe_permute_labels;
  o.seed = stream_seed(c.seed, kProbeStream);
  return o;
}

struct ProbeRow {
  std::string model;
  ProbeResult result;
};

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::string s = "model,representation,epochs,permuted_labels,train_accuracy,test_accuracy\n";
  for (const auto& r : rows)
    s += r.model + "," + r.result.representation + "," + std::to_string(r.result.epochs) + "," +
         (r.result.permuted_labels ? "true" : "false") + "," + fmt(r.result.train_accuracy) + "," +
         fmt(r.result.test_accuracy) + "\n";
  return s;
}

inline nlohmann::json probe_json(const std::vector<ProbeRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"model", r.model},
                 {"representation", r.result.representation},
                 {"epochs", r.result.epochs},
                 {"permuted_labels", r.result.permuted_labels},
                 {"train_accuracy", r.result.train_accuracy},
                 {"test_accuracy", r.result.test_accuracy}});
  return j;
}

struct TrainRun {
  AlignmentReport report;
  TrainOutcome outcome;
  std::vector<ProbeRow> probes;
};

/// Local training followed by three probes: trained network, untrained
/// network (same init), trained network with permuted labels.
/// Checkpoints go to `checkpoint_dir` when it is non-empty.
inline TrainRun run_train_and_probe(const ExperimentConfig& c, const ImageDataset& train, const ImageDataset& test,
                                    const std::string& checkpoint_dir = "") {
  TrainRun run;
  run.report = new_report(c, "train");
  auto save = [&](int e, const TrainState& s) {
    if (checkpoint_dir.empty()) return;
    save_train_state(s, (std::filesystem::path(checkpoint_dir) / ("state_epoch" + std::to_string(e) + ".json")).string());
  };
  run.outcome = train_local_ssl(c, train, save);
  if (!checkpoint_dir.empty())
    save_checkpoint(run.outcome.state.net, (std::filesystem::path(checkpoint_dir) / "network.json").string());
  ProbeOptions po = probe_options(c);
  po.permute_labels = false;
  run.probes.push_back({"trained", linear_probe(run.outcome.state.net, train, test, po)});
  run.probes.push_back({"random_init", linear_probe(initial_train_network(c), train, test, po)});
  po.permute_labels = true;
  run.probes.push_back({"trained", linear_probe(run.outcome.state.net, train, test, po)});

  AlignmentReport& rep = run.report;
  const auto& L = run.outcome.losses;
  const std::size_t n = std::min(run.outcome.steps_per_epoch, L.size());
  if (n >= 10) {
    const std::size_t w = n / 10;
    const double head = pairwise_sum(L.data(), w) / w;
    const double tail = pairwise_sum(L.data() + n - w, w) / w;
    rep.metadata["first_epoch_loss"] = {{"first_tenth_mean", json_number(head)}, {"last_tenth_mean", json_number(tail)}};
    rep.add_check("loss_decreases_first_epoch", tail < head,
                  "mean loss first tenth " + fmt(head) + ", last tenth " + fmt(tail), false);
  }
  rep.metadata["steps"] = L.size();
  rep.metadata["probes"] = probe_json(run.probes);
  const double gain = run.probes[0].result.test_accuracy - run.probes[1].result.test_accuracy;
  rep.add_check("probe_gain_over_random_init", gain >= 0.20,
                "trained " + fmt(run.probes[0].result.test_accuracy) + " vs random init " +
                    fmt(run.probes[1].result.test_accuracy) + " (gain " + fmt(gain) + ")");
  const double chance = run.probes[2].result.test_accuracy;
  rep.add_check("permuted_labels_at_chance", std::abs(chance - 0.10) <= 0.03,
                "permuted-label test accuracy " + fmt(chance));
  return run;
}

// --- finite-difference audit ----------------------------------------------------

inline std::vector<Matrix> random_feedback(const Network& net, ReferenceScheme scheme, Rng& rng) {
  std::vector<Matrix> out;
  const int top = net.spec.layer_dims.back();
  for (int k = 1; k <= net.depth(); ++k) {
    const int cols = scheme == ReferenceScheme::DirectFeedback ? top : net.spec.layer_dims[k];
    out.push_back(gaussian_matrix(net.spec.layer_dims[k], cols, rng) * 0.5);
  }
  return out;
}

/// Analytic BP, local, DFB, DFA and convnet gradients against central
/// differences on small random networks. Rows hold, per path and layer, the
/// cosine between analytic and numeric gradients; frob_dist is the mean
/// relative error.
inline AlignmentReport run_grad_check(const ExperimentConfig& c) {
  AlignmentReport rep = new_report(c, "grad-check");
  require(c.grad_configs >= 1, "grad.configs must be >= 1");
  require(c.grad_width >= 2 && c.grad_width <= 16, "grad.width must be in [2, 16]");
  const ScoreFn scores[] = {ScoreFn::softplus(), ScoreFn::linear_neg(), ScoreFn::neg_log_sigmoid()};
  const ReferenceScheme schemes[] = {ReferenceScheme::SameLayerContext, ReferenceScheme::DirectFeedback,
                                     ReferenceScheme::FixedVector, ReferenceScheme::SelfSample};
  const char* paths[] = {"bp", "local", "dfb", "dfa", "conv_bp", "conv_local", "conv_dfb"};
  constexpr int kPaths = 7, kMaxLayers = 4;
  // [config][path][layer] -> (cos, rel err); NaN marks an absent layer.
  using Cell = std::pair<double, double>;
  std::vector<std::vector<std::vector<Cell>>> res(
      c.grad_configs, std::vector<std::vector<Cell>>(kPaths, std::vector<Cell>(kMaxLayers, {NAN, NAN})));
  parallel_for(static_cast<std::size_t>(c.grad_configs), c.workers, [&](std::size_t i) {
    Rng rng(stream_seed(c.seed, 1000 + i));
    auto& out = res[i];
    auto record = [&](int path, int k, const Matrix& an, const Matrix& fd) {
      out[path][k] = {cosine_similarity(an, fd).value_or(an.norm() == fd.norm() ? 1.0 : 0.0),
                      relative_error(an, fd, 1e-8)};
    };
    const int depth = 2 + static_cast<int>(i % 3);
    std::vector<int> dims{2 + static_cast<int>(rng.index(c.grad_width - 1))};
    for (int k = 0; k < depth; ++k) dims.push_back(2 + static_cast<int>(rng.index(c.grad_width - 1)));
    const Activation act = i % 2 ? Activation::ReLU : Activation::Linear;
    Network net = make_network(NetworkSpec::uniform(dims, act, i % 5 == 4), WeightInit::Uniform, rng);
    for (auto& w : net.weights) w *= 2.0;
    LossConfig cfg;
    cfg.f = scores[i % 3];
    cfg.form = (i / 3) % 2 ? LossForm::Type1 : LossForm::Type2;
    cfg.scheme = schemes[i % 4];
    TripleBatch batch{gaussian_matrix(3, dims[0], rng), gaussian_matrix(3, dims[0], rng), gaussian_matrix(3, dims[0], rng)};
    const TripleTrace t = forward_triple(net, batch);
    const FixedReferences fixed = FixedReferences::draw(net.spec, rng);
    const int L = net.depth();
    const double h = c.grad_h;

    const Matrix b_top = gaussian_matrix(dims[L], dims[L], rng) * 0.5;
    const LayerGradients bp = bp_gradients(net, t, b_top, cfg, &fixed);
    const LayerGradients bp_fd = finite_difference_gradients(bp_objective(batch, t, b_top, cfg, &fixed), net, h);
    for (int k = 0; k < L; ++k) record(0, k, bp.per_layer[k], bp_fd.per_layer[k]);

    for (int path : {1, 2}) {
      LossConfig lc = cfg;
      if (path == 2) lc.scheme = ReferenceScheme::DirectFeedback;
      const std::vector<Matrix> bs = random_feedback(net, lc.scheme, rng);
      const LayerGradients an = local_gradients(net, t, bs, lc, {}, &fixed);
      for (int k = 0; k < L; ++k) {
        const LayerGradients fd = finite_difference_gradients(local_objective(t, k, bs[k], lc, &fixed), net, h, {k});
        record(path, k, an.per_layer[k], fd.per_layer[k]);
      }
    }

    {
      LossConfig dc = cfg;
      dc.scheme = ReferenceScheme::SameLayerContext;
      const DfaConfig dfa = DfaConfig::random(net.spec, stream_seed(c.seed, kDfaStream + i));
      const LayerGradients an = dfa_gradients(net, t, b_top, dfa, dc);
      for (int k = 0; k < L - 1; ++k) {
        const LayerGradients fd = finite_difference_gradients(dfa_surrogate_objective(t, k, b_top, dfa, dc), net, h, {k});
        record(3, k, an.per_layer[k], fd.per_layer[k]);
      }
      const LayerGradients top = finite_difference_gradients(bp_objective(batch, t, b_top, dc), net, h, {L - 1});
      record(3, L - 1, an.per_layer[L - 1], top.per_layer[L - 1]);
    }

    {
      const int conv_depth = 2 + static_cast<int>(i % 2);
      const int ch = 2 + static_cast<int>(rng.index(3));
      const int size = 1 << conv_depth;
      const ConvSpec cs = ConvSpec::uniform(1 + static_cast<int>(i % 2), size * 2, size * 2, conv_depth, ch, act);
      ConvNet cn = make_convnet(cs, WeightInit::Uniform, rng);
      for (auto& k : cn.kernels) k *= 2.0;
      const int in = cs.feature_dim(0);
      TripleBatch cb{gaussian_matrix(3, in, rng), gaussian_matrix(3, in, rng), gaussian_matrix(3, in, rng)};
      const TripleTrace ct = conv_forward_triple(cn, cb);
      LossConfig cc = cfg;
      cc.scheme = ReferenceScheme::SameLayerContext;
      std::vector<SpatialGrouping> groups;
      for (int k = 0; k < conv_depth; ++k) groups.push_back({1, (i + k) % 2 == 1});
      const Network as_net = kernels_as_network(cn);
      for (int path : {4, 5, 6}) {
        const bool dfb = path == 6;
        std::vector<SpatialFeedback> fb;
        for (int k = 0; k < conv_depth; ++k) {
          SpatialFeedback f;
          for (const auto& r : conv_layer_refs(cs, ct, k, groups[k],
                                               dfb ? ReferenceScheme::DirectFeedback : ReferenceScheme::SameLayerContext))
            f.B.push_back(gaussian_matrix(r.z_pos.cols(), r.c_pos.cols(), rng) * 0.5);
          fb.push_back(std::move(f));
        }
        const ConvGradMode mode = path == 4 ? ConvGradMode::BP : dfb ? ConvGradMode::LocalDFB : ConvGradMode::Local;
        const LayerGradients an = conv_gradients(cn, ct, fb, groups, cc, mode);
        for (int k = 0; k < conv_depth; ++k) {
          const NetworkLossFn obj = path == 4 ? conv_bp_objective(cn, cb, ct, fb.back(), groups.back(), cc)
                                              : conv_local_objective(cn, ct, k, fb[k], groups[k], cc, dfb);
          const LayerGradients fd = finite_difference_gradients(obj, as_net, h, {k});
          record(path, k, an.per_layer[k], fd.per_layer[k]);
        }
      }
    }
  });
  nlohmann::json max_err = nlohmann::json::object();
  for (int p = 0; p < kPaths; ++p) {
    double worst = 0.0;
    for (int k = 0; k < kMaxLayers; ++k) {
      std::vector<double> cos, err;
      for (const auto& r : res)
        if (!std::isnan(r[p][k].first)) {
          cos.push_back(r[p][k].first);
          err.push_back(r[p][k].second);
          worst = std::max(worst, r[p][k].second);
        }
      if (!cos.empty()) rep.rows.push_back(make_row(paths[p], k + 1, cos, err, {{"configs", std::to_string(cos.size())}}));
    }
    max_err[paths[p]] = worst;
    rep.add_check(std::string(paths[p]) + ".max_relative_error", worst <= c.grad_max_rel_error,
                  "max relative error " + fmt(worst) + " (limit " + fmt(c.grad_max_rel_error) + ")");
  }
  rep.metadata["max_relative_error"] = max_err;
  rep.metadata["step"] = c.grad_h;
  return rep;
}

}  // namespace lssl

#endif  // LSSL_EXPERIMENTS_HPP_
