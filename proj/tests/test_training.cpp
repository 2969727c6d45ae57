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


#include "lssl/training.hpp"

#include <gtest/gtest.h>

#include "lssl/config.hpp"
#include "lssl/experiments.hpp"
#include "test_support.hpp"

namespace lssl {
namespace {

using testing::random_net;
using testing::random_triple;
using testing::tiny_dataset;

TrainState clapp_state(std::uint64_t seed, OptimizerKind kind) {
  Rng rng(seed);
  Network net = random_net({16, 12, 8}, Activation::ReLU, rng);
  std::vector<Matrix> B{uniform_init(12, 12, rng), uniform_init(8, 8, rng)};
  OptimizerConfig oc;
  oc.kind = kind;
  oc.lr = 0.01;
  return make_train_state(std::move(net), std::move(B), oc, {oc, oc});
}

TEST(Training, HebbianAndAutodiffTrajectoriesAgree) {
  const LossConfig cfg = LossConfig::from_preset(Preset::CLAPP);
  for (OptimizerKind kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
    TrainState a = clapp_state(3, kind), b = clapp_state(3, kind);
    const StepRule heb = ssl_step_rule(cfg, true, nullptr);
    const StepRule ad = ssl_step_rule(cfg, false, nullptr);
    Rng data(4);
    for (int step = 0; step < 40; ++step) {
      const TripleBatch batch = random_triple(5, 16, data);
      EXPECT_NEAR(train_step(a, batch, heb), train_step(b, batch, ad), 1e-9);
    }
    for (int k = 0; k < 2; ++k) {
      EXPECT_LE((a.net.weights[k] - b.net.weights[k]).cwiseAbs().maxCoeff(), 1e-9) << to_string(kind);
      EXPECT_LE((a.B[k] - b.B[k]).cwiseAbs().maxCoeff(), 1e-9) << to_string(kind);
    }
    // The trajectories actually moved.
    EXPECT_GT((a.net.weights[0] - clapp_state(3, kind).net.weights[0]).norm(), 1e-3);
  }
}

TEST(Training, HebbianRuleNeedsClappLoss) {
  LossConfig cfg = LossConfig::from_preset(Preset::CLAPP);
  cfg.f = ScoreFn::softplus();
  EXPECT_THROW(ssl_step_rule(cfg, true, nullptr), ConfigError);
}

TEST(Training, DivergenceReportsStep) {
  TrainState s = clapp_state(5, OptimizerKind::SGD);
  Rng data(6);
  const StepRule nan_rule = [](const Network& net, const std::vector<Matrix>& B, const TripleTrace&) {
    StepGrads g;
    for (const auto& w : net.weights) g.dW.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : B) g.dB.push_back(Matrix::Constant(b.rows(), b.cols(), std::nan("")));
    g.loss = 1.0;
    return g;
  };
  try {
    train_step(s, random_triple(2, 16, data), nan_rule);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("gradients finite: no"), std::string::npos) << e.what();
  }
  EXPECT_EQ(s.step, 0u);
}

TEST(Training, StateJsonRoundTripContinuesIdentically) {
  const LossConfig cfg = LossConfig::from_preset(Preset::CLAPP);
  const StepRule rule = ssl_step_rule(cfg, false, nullptr);
  TrainState a = clapp_state(7, OptimizerKind::Adam);
  Rng data(8);
  for (int i = 0; i < 5; ++i) train_step(a, random_triple(4, 16, data), rule);
  TrainState b = TrainState::from_json(nlohmann::json::parse(a.to_json().dump()));
  EXPECT_EQ(b.step, 5u);
  for (int i = 0; i < 5; ++i) {
    const TripleBatch batch = random_triple(4, 16, data);
    EXPECT_EQ(train_step(a, batch, rule), train_step(b, batch, rule));
  }
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(a.net.weights[k], b.net.weights[k]);
    EXPECT_EQ(a.B[k], b.B[k]);
  }
}

ExperimentConfig tiny_train_config() {
  ExperimentConfig c;
  c.crop = 4;
  c.batch_size = 3;
  c.preset = "clapp";
  c.train_depth = 2;
  c.train_width = 6;
  c.train_epochs = 2;
  c.train_lr = 1e-2;
  c.train_b_lr = 1e-2;
  return c;
}

TEST(Training, CheckpointResumeReproducesUpdates) {
  const ImageDataset ds = tiny_dataset(10, 6, 6, 9);
  ExperimentConfig c = tiny_train_config();
  c.train_snapshots = {1};
  std::optional<TrainState> mid;
  const TrainOutcome full = train_local_ssl(c, ds, [&](int e, const TrainState& s) {
    if (e == 1) mid = TrainState::from_json(nlohmann::json::parse(s.to_json().dump()));
  });
  ASSERT_TRUE(mid.has_value());
  EXPECT_EQ(mid->step, full.steps_per_epoch);
  const TrainOutcome resumed = train_local_ssl(c, ds, {}, &*mid, 1);
  EXPECT_EQ(resumed.state.step, full.state.step);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(resumed.state.net.weights[k], full.state.net.weights[k]);
    EXPECT_EQ(resumed.state.B[k], full.state.B[k]);
  }
  const std::vector<double> tail(full.losses.begin() + full.steps_per_epoch, full.losses.end());
  EXPECT_EQ(resumed.losses, tail);
}

TEST(Training, FrozenFeedbackStaysIdentity) {
  const ImageDataset ds = tiny_dataset(10, 6, 6, 10);
  ExperimentConfig c = tiny_train_config();
  c.preset = "ff";
  c.train_epochs = 1;
  const TrainOutcome out = train_local_ssl(c, ds);
  for (const auto& b : out.state.B) EXPECT_EQ(b, Matrix::Identity(b.rows(), b.cols()));
}

TEST(MlpStepRule, FeedbackUpdatesByCondition) {
  Rng rng(11);
  Network net = random_net({6, 5, 4, 3}, Activation::ReLU, rng);
  LossConfig cfg;
  cfg.f = ScoreFn::softplus();
  cfg.lambda = 0.01;
  const TripleBatch batch = random_triple(4, 6, rng);
  const TripleTrace t = forward_triple(net, batch);
  std::vector<Matrix> same{gaussian_matrix(5, 5, rng), gaussian_matrix(4, 4, rng), gaussian_matrix(3, 3, rng)};
  std::vector<Matrix> direct{gaussian_matrix(5, 3, rng), gaussian_matrix(4, 3, rng), gaussian_matrix(3, 3, rng)};

  EXPECT_TRUE(mlp_step_rule(MlpCondition::FixedRandomB, cfg)(net, same, t).dB.empty());
  const StepGrads local = mlp_step_rule(MlpCondition::Local, cfg)(net, same, t);
  ASSERT_EQ(local.dB.size(), 3u);
  EXPECT_EQ(local.dB[1], loss_grad_B(resolve_refs(t, 1, ReferenceScheme::SameLayerContext), same[1], cfg));

  LossConfig dfb = cfg;
  dfb.scheme = ReferenceScheme::DirectFeedback;
  const StepGrads opt = mlp_step_rule(MlpCondition::OptimalB, cfg)(net, direct, t);
  const auto target = bp_activity_grads(net, t, direct[2], dfb);
  EXPECT_EQ(opt.dB[0], feedback_match_grad(resolve_refs(t, 0, dfb.scheme), direct[0], dfb, target[0]));
  EXPECT_EQ(opt.dB[2], loss_grad_B(resolve_refs(t, 2, dfb.scheme), direct[2], dfb));
  EXPECT_EQ(opt.dW, mlp_step_rule(MlpCondition::LocalDFB, cfg)(net, direct, t).dW);
}

TEST(Probe, FeaturesAverageCropGrid) {
  const ImageDataset ds = tiny_dataset(3, 6, 6, 12);
  Rng rng(13);
  const Network net = random_net({16, 5, 4}, Activation::ReLU, rng);
  const Matrix f = probe_features(net, ds, 4, 2, false);
  const Matrix all = probe_features(net, ds, 4, 2, true);
  ASSERT_EQ(f.cols(), 4);
  ASSERT_EQ(all.cols(), 9);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vector last = Vector::Zero(4), first = Vector::Zero(5);
    for (int y : {0, 2})
      for (int x : {0, 2}) {
        const ForwardTrace tr = forward(net, crop_image(ds, i, y, x, 4));
        last += tr.activations[1];
        first += tr.activations[0];
      }
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    EXPECT_LE((f.row(r).transpose() - last / 4.0).norm(), 1e-12);
    EXPECT_LE((all.row(r).head(5).transpose() - first / 4.0).norm(), 1e-12);
  }
}

ImageDataset class_pattern_dataset(std::size_t n, std::uint64_t seed) {
  // Class c lights pixel c of a 4x4 image; background noise elsewhere.
  Rng rng(seed);
  ImageDataset ds;
  ds.height = ds.width = 4;
  ds.images = Matrix(static_cast<Eigen::Index>(n), 16);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.index(10));
    ds.labels.push_back(label);
    for (int p = 0; p < 16; ++p) ds.images(static_cast<Eigen::Index>(i), p) = rng.uniform(0.0, 0.3);
    ds.images(static_cast<Eigen::Index>(i), label) = 1.0;
  }
  return ds;
}

TEST(Probe, SeparableDataAndPermutedControl) {
  const ImageDataset train = class_pattern_dataset(1500, 14), test = class_pattern_dataset(3000, 15);
  Rng rng(16);
  Network net = random_net({16, 16}, Activation::Linear, rng);
  net.weights[0] = Matrix::Identity(16, 16);
  ProbeOptions o;
  o.crop = 4;
  o.stride = 4;
  o.epochs = 20;
  o.lr = 1e-2;
  const ProbeResult r = linear_probe(net, train, test, o);
  EXPECT_GE(r.test_accuracy, 0.95);
  EXPECT_GE(r.train_accuracy, 0.95);
  EXPECT_EQ(r.representation, "last");
  // With shuffled labels a single probe maps clusters to arbitrary classes,
  // so one run's accuracy is coarse; its expectation over shuffles is 1/10.
  o.permute_labels = true;
  o.epochs = 3;
  double mean = 0.0;
  constexpr int kShuffles = 40;
  for (int s = 0; s < kShuffles; ++s) {
    o.seed = 100 + s;
    const ProbeResult p = linear_probe(net, train, test, o);
    EXPECT_TRUE(p.permuted_labels);
    mean += p.test_accuracy / kShuffles;
  }
  EXPECT_NEAR(mean, 0.10, 0.05);
}

}  // namespace
}  // namespace lssl
