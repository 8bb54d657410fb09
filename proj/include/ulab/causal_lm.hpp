// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <vector>

#include "ulab/errors.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

/// What the losses and metrics need from a next-token model: a forward pass
/// producing T x K logits, and a reverse pass from logit adjoints to a flat
/// parameter gradient.
template <class M>
concept CausalLM = requires(const M& m, std::span<const TokenId> ids,
                            const typename M::Trace& tr,
                            const typename M::Matrix& dlogits,
                            typename M::Vector& grad) {
  typename M::Scalar;
  { m.vocab_size() } -> std::convertible_to<int>;
  { m.context() } -> std::convertible_to<int>;
  { m.forward(ids) } -> std::same_as<typename M::Trace>;
  { m.next_logits(ids) } -> std::convertible_to<typename M::RowVector>;
  { m.params() } -> std::convertible_to<const typename M::Vector&>;
  m.backward(tr, dlogits, grad);
};

template <class Derived>
auto log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar mx = logits.row(r).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

/// One forward pass with its normalized outputs cached.
template <CausalLM M>
struct SeqPass {
  typename M::Trace trace;
  typename M::Matrix logp;   // T x K log-probabilities
  typename M::Matrix probs;  // exp(logp)

  SeqPass(const M& model, const TokenSeq& seq)
      : trace(model.forward(seq.ids)),
        logp(log_softmax_rows(trace.logits)),
        probs((logp.array() == -std::numeric_limits<typename M::Scalar>::infinity())
                  .select(typename M::Scalar(0), logp.array().exp())
                  .matrix()) {}

  /// log p(token at t | tokens before t).
  typename M::Scalar token_logprob(const TokenSeq& seq, int t) const {
    return logp(t - 1, seq.ids[static_cast<std::size_t>(t)]);
  }
};

/// Per-position log-distributions: row t is log P(. | ids[0..t]).
template <CausalLM M>
typename M::Matrix forward_logprobs(const M& model, const TokenSeq& seq) {
  validate(seq, model.vocab_size());
  return log_softmax_rows(model.forward(seq.ids).logits);
}

/// Sum of log p over the targets selected by `region`.
template <CausalLM M>
typename M::Scalar sequence_logprob(const M& model, const TokenSeq& seq, Region region) {
  validate(seq, model.vocab_size());
  const auto targets = seq.targets(region);
  if (targets.empty()) throw InputError("region selects no positions");
  const SeqPass<M> pass(model, seq);
  typename M::Scalar total(0);
  for (int t : targets) total += pass.token_logprob(seq, t);
  return total;
}

/// Adds d log p(seq targets in region) / d logits into `dlogits`, times `w`.
template <CausalLM M>
void add_logprob_adjoint(const SeqPass<M>& pass, const TokenSeq& seq, Region region,
                         typename M::Scalar w, typename M::Matrix& dlogits) {
  for (int t : seq.targets(region)) {
    dlogits.row(t - 1) -= w * pass.probs.row(t - 1);
    dlogits(t - 1, seq.ids[static_cast<std::size_t>(t)]) += w;
  }
}

/// Greedy continuation of `prompt`: at each step the argmax token (lowest id on
/// ties) is appended; stops before emitting EOS, after `max_len` tokens, or
/// when the model context is full. Returns only the generated tokens.
template <CausalLM M>
std::vector<TokenId> greedy_decode(const M& model, std::span<const TokenId> prompt,
                                   int max_len) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  while (static_cast<int>(out.size()) < max_len &&
         static_cast<int>(ctx.size()) < model.context()) {
    const auto logits = model.next_logits(ctx);
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.size(); ++j) {
      if (logits(j) > logits(best)) best = j;
    }
    const auto next = static_cast<TokenId>(best);
    if (next == Vocab::kEos) break;
    out.push_back(next);
    ctx.push_back(next);
  }
  return out;
}

template <CausalLM M>
struct ValueAndGrad {
  typename M::Scalar value;
  typename M::Vector grad;
};

/// Evaluates `objective(grad*)` once with gradient accumulation enabled.
/// `objective` must add d(value)/d(params) into the vector it is handed.
template <CausalLM M, class Objective>
ValueAndGrad<M> value_and_grad(const M& model, Objective&& objective,
                               const char* term = "loss") {
  ValueAndGrad<M> out{typename M::Scalar(0),
                      M::Vector::Zero(model.params().size())};
  out.value = objective(&out.grad);
  if (!std::isfinite(static_cast<double>(out.value))) {
    throw NumericError(term, static_cast<double>(out.value));
  }
  if (!out.grad.allFinite()) throw NumericError(std::string(term) + " gradient", NAN);
  return out;
}

}  // namespace ulab
