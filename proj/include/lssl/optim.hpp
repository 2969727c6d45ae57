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


// First-order optimizers over a fixed list of matrix parameters.

#ifndef LSSL_OPTIM_HPP_
#define LSSL_OPTIM_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "lssl/linalg.hpp"
#include "lssl/network.hpp"

namespace lssl {

enum class OptimizerKind { SGD, Adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Descends along the given gradients: p <- p - step(g).
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {
    require(cfg.lr > 0.0, "optimizer: lr must be > 0");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "optimizer: momentum must be in [0, 1)");
  }

  const OptimizerConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    require(params.size() == grads.size(), "optimizer: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const Matrix* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    require(m_.size() == params.size(), "optimizer: parameter list changed between steps");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& p = *params[i];
      const Matrix& g = grads[i];
      require(g.rows() == p.rows() && g.cols() == p.cols(), "optimizer: gradient shape mismatch");
      if (cfg_.kind == OptimizerKind::SGD) {
        if (cfg_.momentum > 0.0) {
          m_[i] = cfg_.momentum * m_[i] + g;
          p -= cfg_.lr * m_[i];
        } else {
          p -= cfg_.lr * g;
        }
      } else {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        p.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
      }
    }
  }

  nlohmann::json state_json() const {
    nlohmann::json j;
    j["kind"] = to_string(cfg_.kind);
    j["lr"] = cfg_.lr;
    j["momentum"] = cfg_.momentum;
    j["beta1"] = cfg_.beta1;
    j["beta2"] = cfg_.beta2;
    j["eps"] = cfg_.eps;
    j["t"] = t_;
    j["m"] = nlohmann::json::array();
    j["v"] = nlohmann::json::array();
    for (const auto& m : m_) j["m"].push_back(matrix_to_json(m));
    for (const auto& v : v_) j["v"].push_back(matrix_to_json(v));
    return j;
  }

  static Optimizer from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
    c.lr = j.at("lr").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    Optimizer o(c);
    o.t_ = j.at("t").get<long>();
    for (const auto& m : j.at("m")) o.m_.push_back(matrix_from_json(m));
    for (const auto& v : j.at("v")) o.v_.push_back(matrix_from_json(v));
    return o;
  }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace lssl

#endif  // LSSL_OPTIM_HPP_
