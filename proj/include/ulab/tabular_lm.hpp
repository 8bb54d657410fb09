// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>

#include "ulab/errors.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

/// Bigram model: the next-token distribution depends only on the current
/// token. Parameterized by a K x K logit table whose rows are softmaxed, so
/// every derivative has a closed form to check the transformer path against.
template <typename ScalarT>
class TabularLM {
 public:
  using Scalar = ScalarT;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Trace {
    std::vector<TokenId> ids;
    Matrix logits;
  };

  explicit TabularLM(int vocab_size)
      : k_(vocab_size), params_(Vector::Zero(Eigen::Index(vocab_size) * vocab_size)) {
    if (vocab_size < 2) throw InputError("vocab_size must be >= 2");
  }

  /// Logits are log-probabilities; zero entries become -inf logits.
  static TabularLM from_probabilities(const Matrix& probs) {
    if (probs.rows() != probs.cols()) throw InputError("bigram table must be square");
    TabularLM lm(static_cast<int>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const Scalar sum = probs.row(r).sum();
      if (std::abs(sum - Scalar(1)) > Scalar(1e-12) || (probs.row(r).array() < 0).any()) {
        throw InputError("bigram row " + std::to_string(r) + " is not a distribution");
      }
      for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        lm.table()(r, c) = probs(r, c) > 0 ? std::log(probs(r, c))
                                           : -std::numeric_limits<Scalar>::infinity();
      }
    }
    return lm;
  }

  int vocab_size() const { return k_; }
  int context() const { return std::numeric_limits<int>::max(); }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  Eigen::Map<Matrix> table() { return {params_.data(), k_, k_}; }
  Eigen::Map<const Matrix> table() const { return {params_.data(), k_, k_}; }

  /// Row-normalized probability table.
  Matrix probabilities() const {
    Matrix p(k_, k_);
    for (Eigen::Index r = 0; r < k_; ++r) {
      const Scalar mx = table().row(r).maxCoeff();
      p.row(r) = (table().row(r).array() - mx).exp();
      p.row(r) /= p.row(r).sum();
    }
    return p;
  }

  Trace forward(std::span<const TokenId> ids) const {
    if (ids.empty()) throw InputError("empty input sequence");
    Trace tr;
    tr.ids.assign(ids.begin(), ids.end());
    tr.logits.resize(static_cast<Eigen::Index>(ids.size()), k_);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      check(ids[t]);
      tr.logits.row(static_cast<Eigen::Index>(t)) = table().row(ids[t]);
    }
    return tr;
  }

  RowVector next_logits(std::span<const TokenId> ids) const {
    if (ids.empty()) throw InputError("empty input sequence");
    check(ids.back());
    return table().row(ids.back());
  }

  void backward(const Trace& tr, const Matrix& dlogits, Vector& grad) const {
    if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
    Eigen::Map<Matrix> g(grad.data(), k_, k_);
    for (std::size_t t = 0; t < tr.ids.size(); ++t) {
      g.row(tr.ids[t]) += dlogits.row(static_cast<Eigen::Index>(t));
    }
  }

 private:
  void check(TokenId id) const {
    if (id < 0 || id >= k_) throw InputError("token id " + std::to_string(id) + " out of range");
  }

  int k_;
  Vector params_;
};

}  // namespace ulab
