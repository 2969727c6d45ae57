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

// Bias-free multi-layer perceptron with full activation traces.
//
// Layers are indexed from 0 in code; layer k here is layer k+1 in reports.
// Batches are stored one sample per row, so a layer computes Z W^T.

#ifndef LSSL_NETWORK_HPP_
#define LSSL_NETWORK_HPP_

#include "lssl/linalg.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace lssl {

enum class Activation { Linear, ReLU };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "linear"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "linear") return Activation::Linear;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Norms below this are treated as this value when normalizing activity.
inline constexpr double kNormFloor = 1e-12;

struct NetworkSpec {
  std::vector<int> layer_dims;  // n^0 (input) ... n^L
  std::vector<Activation> activations;  // one per layer
  bool normalize_between_layers = false;

  int depth() const { return static_cast<int>(layer_dims.size()) - 1; }

  void validate() const {
    require(layer_dims.size() >= 2, "NetworkSpec: need at least one layer");
    for (int d : layer_dims) require(d >= 1, "NetworkSpec: all dims must be >= 1");
    require(static_cast<int>(activations.size()) == depth(),
            "NetworkSpec: one activation per layer required");
  }

  static NetworkSpec uniform(std::vector<int> dims, Activation act, bool normalize = false) {
    NetworkSpec s;
    s.activations.assign(dims.size() - 1, act);
    s.layer_dims = std::move(dims);
    s.normalize_between_layers = normalize;
    return s;
  }
};

struct Network {
  NetworkSpec spec;
  std::vector<Matrix> weights;  // weights[k] is n^{k+1} x n^k

  int depth() const { return spec.depth(); }

  void validate() const {
    spec.validate();
    require(static_cast<int>(weights.size()) == depth(), "Network: weight count != depth");
    for (int k = 0; k < depth(); ++k)
      require(weights[k].rows() == spec.layer_dims[k + 1] && weights[k].cols() == spec.layer_dims[k],
              "Network: weight " + std::to_string(k + 1) + " has shape " + shape_str(weights[k]));
  }
};

enum class WeightInit { Orthonormal, Uniform };

/// Orthonormal init draws (semi-)orthonormal rows; it needs non-expanding layers.
inline Network make_network(const NetworkSpec& spec, WeightInit init, Rng& rng) {
  spec.validate();
  Network net{spec, {}};
  for (int k = 0; k < spec.depth(); ++k) {
    const int out = spec.layer_dims[k + 1];
    const int in = spec.layer_dims[k];
    if (init == WeightInit::Uniform) {
      net.weights.push_back(uniform_init(out, in, rng));
    } else {
      net.weights.push_back(out == in ? orthonormal_init(out, rng)
                                      : semi_orthonormal_init(out, in, rng));
    }
  }
  return net;
}

inline double activate(Activation a, double x) {
  return (a == Activation::ReLU && x <= 0.0) ? 0.0 : x;
}

/// ReLU'(0) is taken as 0.
inline double activate_grad(Activation a, double x) {
  if (a == Activation::Linear) return 1.0;
  return x > 0.0 ? 1.0 : 0.0;
}

inline Matrix activate(Activation a, const Matrix& pre) {
  if (a == Activation::Linear) return pre;
  return pre.cwiseMax(0.0);
}

inline Matrix activate_grad(Activation a, const Matrix& pre) {
  if (a == Activation::Linear) return Matrix::Ones(pre.rows(), pre.cols());
  return (pre.array() > 0.0).cast<double>().matrix();
}

/// Batched trace; row i of every matrix belongs to sample i.
struct BatchTrace {
  Matrix input;
  std::vector<Matrix> pre;          // a^l
  std::vector<Matrix> act;          // z^l = rho(a^l), seen by the layer's own loss
  std::vector<Matrix> transmitted;  // z^l after optional normalization, fed forward
  std::vector<Vector> act_norms;    // row norms of act (empty without normalization)

  int depth() const { return static_cast<int>(act.size()); }
  Eigen::Index batch() const { return input.rows(); }

  /// Input seen by layer k.
  const Matrix& layer_input(int k) const { return k == 0 ? input : transmitted[k - 1]; }
};

/// Single-sample view of a forward pass.
struct ForwardTrace {
  Vector input;
  std::vector<Vector> pre_activations;
  std::vector<Vector> activations;      // post-normalization when enabled
  std::vector<Vector> raw_activations;  // rho(a^l) before normalization
};

inline BatchTrace forward_batch(const Network& net, const Matrix& xs) {
  require(xs.cols() == net.spec.layer_dims[0],
          "forward: input width " + std::to_string(xs.cols()) + " != " +
              std::to_string(net.spec.layer_dims[0]));
  require(xs.allFinite(), "forward: non-finite input");
  BatchTrace t;
  t.input = xs;
  const int L = net.depth();
  t.pre.reserve(L);
  t.act.reserve(L);
  t.transmitted.reserve(L);
  for (int k = 0; k < L; ++k) {
    Matrix a = t.layer_input(k) * net.weights[k].transpose();
    Matrix z = activate(net.spec.activations[k], a);
    t.pre.push_back(std::move(a));
    if (net.spec.normalize_between_layers) {
      Vector norms = z.rowwise().norm();
      Matrix zn = z;
      for (Eigen::Index i = 0; i < z.rows(); ++i) zn.row(i) /= std::max(norms(i), kNormFloor);
      t.act_norms.push_back(std::move(norms));
      t.transmitted.push_back(std::move(zn));
    } else {
      t.transmitted.push_back(z);
    }
    t.act.push_back(std::move(z));
  }
  return t;
}

inline ForwardTrace sample_trace(const BatchTrace& t, Eigen::Index i) {
  ForwardTrace f;
  f.input = t.input.row(i).transpose();
  for (int k = 0; k < t.depth(); ++k) {
    f.pre_activations.push_back(t.pre[k].row(i).transpose());
    f.raw_activations.push_back(t.act[k].row(i).transpose());
    f.activations.push_back(t.transmitted[k].row(i).transpose());
  }
  return f;
}

inline ForwardTrace forward(const Network& net, const Vector& x) {
  return sample_trace(forward_batch(net, Matrix(x.transpose())), 0);
}

inline std::vector<ForwardTrace> forward_batch(const Network& net, const std::vector<Vector>& xs) {
  require(!xs.empty(), "forward_batch: empty batch");
  Matrix m(static_cast<Eigen::Index>(xs.size()), net.spec.layer_dims[0]);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i].size() == m.cols(), "forward: input width mismatch");
    m.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
  }
  BatchTrace t = forward_batch(net, m);
  std::vector<ForwardTrace> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(sample_trace(t, i));
  return out;
}

// --- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows()},
                        {"cols", m.cols()},
                        {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == rows * cols, "matrix json: size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

/// {"format_version", "layer_count", "layer_dims", "activations",
///  "normalize_between_layers", "weights": [{rows, cols, data (row-major)}]}
inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["layer_count"] = net.depth();
  j["layer_dims"] = net.spec.layer_dims;
  std::vector<std::string> acts;
  for (auto a : net.spec.activations) acts.emplace_back(to_string(a));
  j["activations"] = acts;
  j["normalize_between_layers"] = net.spec.normalize_between_layers;
  j["weights"] = nlohmann::json::array();
  for (const auto& w : net.weights) j["weights"].push_back(matrix_to_json(w));
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  require(j.at("format_version").get<int>() == kCheckpointVersion,
          "checkpoint: unsupported format_version");
  Network net;
  net.spec.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) net.spec.activations.push_back(activation_from_string(a));
  net.spec.normalize_between_layers = j.at("normalize_between_layers").get<bool>();
  for (const auto& w : j.at("weights")) net.weights.push_back(matrix_from_json(w));
  require(j.at("layer_count").get<int>() == net.depth(), "checkpoint: layer_count mismatch");
  net.validate();
  return net;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write checkpoint " + path);
  out << network_to_json(net).dump() << '\n';
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read checkpoint " + path);
  return network_from_json(nlohmann::json::parse(in));
}

}  // namespace lssl

#endif  // LSSL_NETWORK_HPP_
