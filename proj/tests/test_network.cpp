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


#include "lssl/network.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>

#include "test_support.hpp"

namespace lssl {
namespace {

using testing::random_net;

TEST(Forward, IdentityNetworkPassesInputThrough) {
  Network net{NetworkSpec::uniform({3, 3, 3}, Activation::Linear), {}};
  net.weights = {Matrix::Identity(3, 3), Matrix::Identity(3, 3)};
  Vector x(3);
  x << 1.5, -2.0, 0.25;
  EXPECT_EQ(forward(net, x).activations.back(), x);
}

TEST(Forward, DeadReluUnit) {
  Network net{NetworkSpec::uniform({2, 2}, Activation::ReLU), {}};
  Matrix w(2, 2);
  w << 1.0, 1.0,  // no positive entries hit a negative input
      0.5, -1.0;
  net.weights = {w};
  Vector x(2);
  x << -1.0, -3.0;
  ForwardTrace t = forward(net, x);
  EXPECT_EQ(t.activations[0](0), 0.0);
  EXPECT_DOUBLE_EQ(t.activations[0](1), 2.5);
}

TEST(Forward, TwoLayerHandComputation) {
  Network net{NetworkSpec::uniform({2, 2, 2}, Activation::Linear), {}};
  Matrix w1(2, 2), w2(2, 2);
  w1 << 1, 2, 0, 1;
  w2 << 2, 0, 1, -1;
  net.weights = {w1, w2};
  Vector x(2);
  x << 1, 1;
  // a1 = [3, 1], z2 = [6, 2]
  ForwardTrace t = forward(net, x);
  EXPECT_DOUBLE_EQ(t.pre_activations[0](0), 3.0);
  EXPECT_DOUBLE_EQ(t.pre_activations[0](1), 1.0);
  EXPECT_DOUBLE_EQ(t.activations[1](0), 6.0);
  EXPECT_DOUBLE_EQ(t.activations[1](1), 2.0);
}

TEST(Forward, WidthMismatchThrows) {
  Rng rng(1);
  Network net = random_net({4, 3}, Activation::Linear, rng);
  EXPECT_THROW(forward(net, Vector::Ones(5)), ConfigError);
}

TEST(Forward, NonFiniteInputThrows) {
  Rng rng(2);
  Network net = random_net({2, 2}, Activation::Linear, rng);
  Vector x(2);
  x << 1.0, std::nan("");
  EXPECT_THROW(forward(net, x), ConfigError);
}

TEST(ForwardBatch, SingletonMatchesForward) {
  Rng rng(3);
  Network net = random_net({5, 4, 3}, Activation::ReLU, rng);
  Vector x = gaussian_matrix(5, 1, rng);
  auto batch = forward_batch(net, std::vector<Vector>{x});
  ForwardTrace single = forward(net, x);
  ASSERT_EQ(batch.size(), 1u);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(batch[0].activations[k], single.activations[k]);
}

TEST(ForwardBatch, PermutationCommutes) {
  Rng rng(4);
  Network net = random_net({6, 5, 4}, Activation::ReLU, rng, true);
  std::vector<Vector> xs;
  for (int i = 0; i < 7; ++i) xs.push_back(gaussian_matrix(6, 1, rng));
  std::vector<std::size_t> perm(xs.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::vector<Vector> permuted;
  for (auto p : perm) permuted.push_back(xs[p]);
  auto a = forward_batch(net, xs);
  auto b = forward_batch(net, permuted);
  for (std::size_t i = 0; i < xs.size(); ++i)
    EXPECT_LT((b[i].activations[1] - a[perm[i]].activations[1]).norm(), 1e-14);
}

TEST(ForwardBatch, BatchOf32MatchesPerSample) {
  Rng rng(5);
  Network net = random_net({8, 8, 6, 4}, Activation::ReLU, rng, true);
  std::vector<Vector> xs;
  for (int i = 0; i < 32; ++i) xs.push_back(gaussian_matrix(8, 1, rng));
  auto batch = forward_batch(net, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ForwardTrace one = forward(net, xs[i]);
    for (int k = 0; k < 3; ++k) {
      EXPECT_LT((batch[i].activations[k] - one.activations[k]).norm(), 1e-12);
      EXPECT_LT((batch[i].raw_activations[k] - one.raw_activations[k]).norm(), 1e-12);
    }
  }
}

TEST(NetworkProperties, LinearCompositionMatchesProduct) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_net({7, 6, 5, 4}, Activation::Linear, rng);
    Matrix prod = net.weights[2] * net.weights[1] * net.weights[0];
    Vector x = gaussian_matrix(7, 1, rng);
    EXPECT_LT((forward(net, x).activations.back() - prod * x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NetworkProperties, OrthonormalLinearPreservesNorm) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_net({16, 16, 16, 16}, Activation::Linear, rng, false,
                             WeightInit::Orthonormal);
    Vector x = gaussian_matrix(16, 1, rng);
    ForwardTrace t = forward(net, x);
    for (const auto& z : t.activations) EXPECT_NEAR(z.norm(), x.norm(), 1e-10);
  }
}

TEST(NetworkProperties, NormalizedTracesHaveUnitNorm) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_net({10, 9, 8}, Activation::ReLU, rng, true);
    Vector x = gaussian_matrix(10, 1, rng) * std::exp(rng.uniform(-3, 3));
    ForwardTrace t = forward(net, x);
    for (int k = 0; k < 2; ++k) {
      if (t.raw_activations[k].norm() > kNormFloor) {
        EXPECT_NEAR(t.activations[k].norm(), 1.0, 1e-10);
      }
    }
  }
}

TEST(NetworkProperties, ZeroActivityStaysZeroUnderNormalization) {
  Network net{NetworkSpec::uniform({2, 2}, Activation::ReLU, true), {Matrix::Identity(2, 2)}};
  ForwardTrace t = forward(net, Vector::Constant(2, -1.0));
  EXPECT_TRUE(t.activations[0].allFinite());
  EXPECT_EQ(t.activations[0].norm(), 0.0);
}

TEST(MakeNetwork, ShapesAndOrthonormality) {
  Rng rng(9);
  Network net = random_net({12, 8, 8, 4}, Activation::Linear, rng, false, WeightInit::Orthonormal);
  net.validate();
  for (const auto& w : net.weights)
    EXPECT_LT((w * w.transpose() - Matrix::Identity(w.rows(), w.rows())).norm(), 1e-10);
}

TEST(NetworkSpec, RejectsInvalid) {
  EXPECT_THROW(NetworkSpec::uniform({3}, Activation::Linear).validate(), ConfigError);
  EXPECT_THROW(NetworkSpec::uniform({3, 0}, Activation::Linear).validate(), ConfigError);
  EXPECT_THROW(activation_from_string("tanh"), ConfigError);
}

TEST(Checkpoint, JsonRoundTrip) {
  Rng rng(10);
  Network net = random_net({5, 4, 3}, Activation::ReLU, rng, true);
  const auto path = std::filesystem::temp_directory_path() / "lssl_ckpt_test.json";
  save_checkpoint(net, path.string());
  Network back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.spec.layer_dims, net.spec.layer_dims);
  EXPECT_EQ(back.spec.activations, net.spec.activations);
  EXPECT_TRUE(back.spec.normalize_between_layers);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(back.weights[k], net.weights[k]);
}

TEST(Checkpoint, RejectsWrongVersionAndShapes) {
  Rng rng(11);
  Network net = random_net({3, 2}, Activation::Linear, rng);
  auto j = network_to_json(net);
  j["format_version"] = 99;
  EXPECT_THROW(network_from_json(j), ConfigError);
  j = network_to_json(net);
  j["weights"][0]["rows"] = 3;
  j["weights"][0]["cols"] = 2;
  EXPECT_THROW(network_from_json(j), ConfigError);
}

}  // namespace
}  // namespace lssl
