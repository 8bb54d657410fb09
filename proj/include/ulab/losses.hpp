// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ulab/causal_lm.hpp"
#include "ulab/errors.hpp"

namespace ulab {

enum class ForgetLoss { kGA, kNPO, kDPO, kIDK, kME };
enum class RegLoss { kNone, kGD, kKL, kAP };
enum class ReferencePolicy { kInitial, kPreviousSubtask, kFixedInitial };

std::string to_string(ForgetLoss l);
std::string to_string(RegLoss l);
std::string to_string(ReferencePolicy p);
ForgetLoss parse_forget_loss(const std::string& s);
RegLoss parse_reg_loss(const std::string& s);
ReferencePolicy parse_reference_policy(const std::string& s);

struct LossConfig {
  ForgetLoss forget = ForgetLoss::kGA;
  RegLoss reg = RegLoss::kGD;
  double alpha = 0.1;  // forget-term weight, used by ME only
  double beta = 0.1;
  bool question_masking = true;  // forget term only; regularizers see answers
  ReferencePolicy reference = ReferencePolicy::kInitial;

  /// "GA+GD", "ME+GD", ... or the bare forget loss when reg is none.
  std::string method() const;
  double forget_weight() const { return forget == ForgetLoss::kME ? alpha : 1.0; }
  bool needs_reference() const {
    return forget == ForgetLoss::kNPO || forget == ForgetLoss::kDPO || reg == RegLoss::kKL;
  }
  bool needs_templates() const {
    return forget == ForgetLoss::kIDK || forget == ForgetLoss::kDPO || reg == RegLoss::kAP;
  }
  void validate() const;

  bool operator==(const LossConfig&) const = default;
};

/// The eleven named methods.
const std::vector<std::string>& method_names();
/// Config for a named method with its default masking (ME off, others on).
LossConfig method_config(const std::string& name, double alpha = 0.1, double beta = 0.1);

namespace detail {

inline double log_sigmoid(double z) {
  // log σ(z) = -softplus(-z)
  return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <CausalLM M>
typename M::Matrix zero_adjoint(const SeqPass<M>& pass) {
  return M::Matrix::Zero(pass.logp.rows(), pass.logp.cols());
}

template <CausalLM M>
typename M::Scalar region_logprob(const SeqPass<M>& pass, const TokenSeq& seq, Region region) {
  const auto targets = seq.targets(region);
  if (targets.empty()) throw InputError("region selects no positions");
  typename M::Scalar s(0);
  for (int t : targets) s += pass.token_logprob(seq, t);
  return s;
}

template <CausalLM M>
void require_batch(std::span<const TokenSeq> batch, const M& model, const char* what) {
  if (batch.empty()) throw InputError(std::string(what) + " batch is empty");
  for (const auto& s : batch) validate(s, model.vocab_size());
}

inline Region masked(bool question_masking) {
  return question_masking ? Region::kAnswer : Region::kAll;
}

}  // namespace detail

/// Each loss returns its value and, when `grad` is non-null, adds
/// `scale` times its parameter gradient into `grad`.

/// Mean of log p(y|x): minimizing it ascends the NLL.
template <CausalLM M>
typename M::Scalar ga_loss(const M& model, std::span<const TokenSeq> batch,
                           Region region = Region::kAnswer,
                           typename M::Vector* grad = nullptr,
                           typename M::Scalar scale = 1) {
  detail::require_batch(batch, model, "forget");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  S total(0);
  for (const auto& seq : batch) {
    const SeqPass<M> pass(model, seq);
    total += detail::region_logprob(pass, seq, region);
    if (grad) {
      auto d = detail::zero_adjoint(pass);
      add_logprob_adjoint(pass, seq, region, scale / n, d);
      model.backward(pass.trace, d, *grad);
    }
  }
  return total / n;
}

/// Mean NLL over the batch.
template <CausalLM M>
typename M::Scalar gd_loss(const M& model, std::span<const TokenSeq> batch,
                           Region region = Region::kAnswer,
                           typename M::Vector* grad = nullptr,
                           typename M::Scalar scale = 1) {
  return -ga_loss(model, batch, region, grad, -scale);
}

/// GD on the batch relabeled with the given template answers (one per example).
template <CausalLM M>
typename M::Scalar idk_loss(const M& model, std::span<const TokenSeq> batch,
                            std::span<const std::vector<TokenId>> answers,
                            Region region = Region::kAnswer,
                            typename M::Vector* grad = nullptr,
                            typename M::Scalar scale = 1) {
  if (answers.size() != batch.size()) throw InputError("one template per example required");
  std::vector<TokenSeq> relabeled;
  relabeled.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) relabeled.push_back(relabel(batch[i], answers[i]));
  return gd_loss(model, std::span<const TokenSeq>(relabeled), region, grad, scale);
}

template <CausalLM M>
typename M::Scalar npo_loss(const M& model, const M& ref, std::span<const TokenSeq> batch,
                            double beta, Region region = Region::kAnswer,
                            typename M::Vector* grad = nullptr,
                            typename M::Scalar scale = 1) {
  if (!(beta > 0)) throw InputError("beta must be > 0");
  detail::require_batch(batch, model, "forget");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  S total(0);
  for (const auto& seq : batch) {
    const SeqPass<M> pass(model, seq);
    const S r = detail::region_logprob(pass, seq, region) - sequence_logprob(ref, seq, region);
    total += detail::log_sigmoid(-beta * r);
    if (grad) {
      auto d = detail::zero_adjoint(pass);
      add_logprob_adjoint(pass, seq, region, scale * S(2) * detail::sigmoid(beta * r) / n, d);
      model.backward(pass.trace, d, *grad);
    }
  }
  return -(2.0 / beta) * total / n;
}

/// Preferred answers are templates, rejected ones the forget answers.
template <CausalLM M>
typename M::Scalar dpo_loss(const M& model, const M& ref, std::span<const TokenSeq> batch,
                            std::span<const std::vector<TokenId>> preferred, double beta,
                            Region region = Region::kAnswer,
                            typename M::Vector* grad = nullptr,
                            typename M::Scalar scale = 1) {
  if (!(beta > 0)) throw InputError("beta must be > 0");
  if (preferred.size() != batch.size()) throw InputError("one template per example required");
  detail::require_batch(batch, model, "forget");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  S total(0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenSeq& neg = batch[i];
    const TokenSeq pos = relabel(neg, preferred[i]);
    validate(pos, model.vocab_size());
    const SeqPass<M> pp(model, pos), pn(model, neg);
    const S z = beta * ((detail::region_logprob(pp, pos, region) - sequence_logprob(ref, pos, region)) -
                        (detail::region_logprob(pn, neg, region) - sequence_logprob(ref, neg, region)));
    total += detail::log_sigmoid(z);
    if (grad) {
      const S w = scale * S(2) * detail::sigmoid(-z) / n;
      auto dp = detail::zero_adjoint(pp);
      add_logprob_adjoint(pp, pos, region, -w, dp);
      model.backward(pp.trace, dp, *grad);
      auto dn = detail::zero_adjoint(pn);
      add_logprob_adjoint(pn, neg, region, w, dn);
      model.backward(pn.trace, dn, *grad);
    }
  }
  return -(2.0 / beta) * total / n;
}

/// Per example: mean over answer positions of KL(P_θ || P_ref); then batch mean.
template <CausalLM M>
typename M::Scalar kl_loss(const M& model, const M& ref, std::span<const TokenSeq> batch,
                           typename M::Vector* grad = nullptr,
                           typename M::Scalar scale = 1) {
  detail::require_batch(batch, model, "retain");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  S total(0);
  for (const auto& seq : batch) {
    const SeqPass<M> pass(model, seq);
    const auto ref_logp = forward_logprobs(ref, seq);
    const auto targets = seq.targets(Region::kAnswer);
    if (targets.empty()) throw InputError("example has no answer positions");
    const S m = static_cast<S>(targets.size());
    auto d = detail::zero_adjoint(pass);
    S sum(0);
    for (int t : targets) {
      const auto row = t - 1;
      // Tokens with P_θ = 0 contribute nothing.
      const auto p = pass.probs.row(row).array();
      const auto diff = (pass.logp.row(row) - ref_logp.row(row)).array();
      const S kl = (p > S(0)).select(p * diff, S(0)).sum();
      sum += kl;
      if (grad) {
        d.row(row) = (scale / (n * m)) * (p > S(0)).select(p * (diff - kl), S(0)).matrix();
      }
    }
    total += sum / m;
    if (grad) model.backward(pass.trace, d, *grad);
  }
  return total / n;
}

/// Per example: mean over positions of KL(P_t || U_K) = log K - H(P_t);
/// then batch mean. Positions span the whole x' = x ∘ y unless masked.
template <CausalLM M>
typename M::Scalar me_loss(const M& model, std::span<const TokenSeq> batch,
                           bool question_masking = false,
                           typename M::Vector* grad = nullptr,
                           typename M::Scalar scale = 1) {
  detail::require_batch(batch, model, "forget");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  const S log_k = std::log(static_cast<S>(model.vocab_size()));
  S total(0);
  for (const auto& seq : batch) {
    const SeqPass<M> pass(model, seq);
    const auto targets = seq.targets(detail::masked(question_masking));
    if (targets.empty()) throw InputError("example has no positions");
    const S m = static_cast<S>(targets.size());
    auto d = detail::zero_adjoint(pass);
    S sum(0);
    for (int t : targets) {
      const auto row = t - 1;
      // Zero-probability tokens contribute 0 * log 0 = 0.
      const auto p = pass.probs.row(row).array();
      const auto lp = pass.logp.row(row).array();
      const S neg_entropy = (p > S(0)).select(p * lp, S(0)).sum();
      sum += log_k + neg_entropy;
      if (grad) {
        d.row(row) = (scale / (n * m)) * (p > S(0)).select(p * (lp - neg_entropy), S(0)).matrix();
      }
    }
    total += sum / m;
    if (grad) model.backward(pass.trace, d, *grad);
  }
  return total / n;
}

/// Answer preservation: penalizes the template y' overtaking the true answer y.
template <CausalLM M>
typename M::Scalar ap_loss(const M& model, std::span<const TokenSeq> batch,
                           std::span<const std::vector<TokenId>> templates, double beta,
                           typename M::Vector* grad = nullptr,
                           typename M::Scalar scale = 1) {
  if (!(beta > 0)) throw InputError("beta must be > 0");
  if (templates.size() != batch.size()) throw InputError("one template per example required");
  detail::require_batch(batch, model, "retain");
  using S = typename M::Scalar;
  const S n = static_cast<S>(batch.size());
  S total(0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenSeq& keep = batch[i];
    const TokenSeq alt = relabel(keep, templates[i]);
    validate(alt, model.vocab_size());
    const SeqPass<M> pk(model, keep), pa(model, alt);
    const S r = detail::region_logprob(pa, alt, Region::kAnswer) -
                detail::region_logprob(pk, keep, Region::kAnswer);
    total += detail::log_sigmoid(-beta * r);
    if (grad) {
      const S w = scale * detail::sigmoid(beta * r) / n;
      auto da = detail::zero_adjoint(pa);
      add_logprob_adjoint(pa, alt, Region::kAnswer, w, da);
      model.backward(pa.trace, da, *grad);
      auto dk = detail::zero_adjoint(pk);
      add_logprob_adjoint(pk, keep, Region::kAnswer, -w, dk);
      model.backward(pk.trace, dk, *grad);
    }
  }
  return -(1.0 / beta) * total / n;
}

/// Adaptive weight of the AP gradient: 1 / (1 + (p(y|x) / p(y'|x))^β).
inline double ap_weight(double logp_answer, double logp_template, double beta) {
  return detail::sigmoid(beta * (logp_template - logp_answer));
}

struct LossValue {
  double total = 0, forget = 0, reg = 0;
};

/// Samples one template per example, forget examples first, then retain.
struct TemplateDraws {
  std::vector<std::vector<TokenId>> forget, retain;
};

TemplateDraws draw_templates(const LossConfig& cfg, std::span<const std::vector<TokenId>> templates,
                             std::size_t n_forget, std::size_t n_retain, std::mt19937_64& rng);

/// The full objective of a method. `ref` may be null when the method does not
/// use a reference model.
template <CausalLM M>
LossValue combine(const LossConfig& cfg, const M& model, const M* ref,
                  std::span<const TokenSeq> forget, std::span<const TokenSeq> retain,
                  const TemplateDraws& draws, typename M::Vector* grad = nullptr) {
  cfg.validate();
  if (cfg.needs_reference() && ref == nullptr) throw ConfigError(cfg.method() + " needs a reference model");
  using S = typename M::Scalar;
  const S wf = static_cast<S>(cfg.forget_weight());
  const Region fr = detail::masked(cfg.question_masking);
  LossValue v;
  const auto checked = [](S value, const char* term) {
    if (!std::isfinite(static_cast<double>(value))) throw NumericError(term, static_cast<double>(value));
    return static_cast<double>(value);
  };
  switch (cfg.forget) {
    case ForgetLoss::kGA: v.forget = checked(ga_loss(model, forget, fr, grad, wf), "GA"); break;
    case ForgetLoss::kNPO:
      v.forget = checked(npo_loss(model, *ref, forget, cfg.beta, fr, grad, wf), "NPO");
      break;
    case ForgetLoss::kDPO:
      v.forget = checked(dpo_loss(model, *ref, forget, std::span(draws.forget), cfg.beta, fr, grad, wf), "DPO");
      break;
    case ForgetLoss::kIDK:
      v.forget = checked(idk_loss(model, forget, std::span(draws.forget), fr, grad, wf), "IDK");
      break;
    case ForgetLoss::kME:
      v.forget = checked(me_loss(model, forget, cfg.question_masking, grad, wf), "ME");
      break;
  }
  switch (cfg.reg) {
    case RegLoss::kNone: break;
    case RegLoss::kGD: v.reg = checked(gd_loss(model, retain, Region::kAnswer, grad), "GD"); break;
    case RegLoss::kKL: v.reg = checked(kl_loss(model, *ref, retain, grad), "KL"); break;
    case RegLoss::kAP:
      v.reg = checked(ap_loss(model, retain, std::span(draws.retain), cfg.beta, grad), "AP");
      break;
  }
  v.total = cfg.forget_weight() * v.forget + v.reg;
  if (grad && !grad->allFinite()) throw NumericError(cfg.method() + " gradient", NAN);
  return v;
}

}  // namespace ulab
