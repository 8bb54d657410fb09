// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/causal_lm.hpp"
#include "ulab/corpus.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS(candidate, reference) / |reference| over lowercase whitespace tokens.
double rouge_l_recall(std::string_view candidate, std::string_view reference);

/// Normalized Shannon entropy of the token frequencies; 0 for one token or none.
double token_entropy(std::string_view generated);

enum class TruthSide { kRetain, kForget };

/// mean(perturbed) / paraphrase, then max(0, 1 - TR) on the retain side and
/// 1 - min(TR, 1/TR) on the forget side. A zero paraphrase probability maps
/// to 0 on both sides.
double truth_ratio_score(double p_paraphrase, std::span<const double> p_perturbed, TruthSide side);

/// Harmonic mean; 0 if any component is 0.
double model_utility(std::span<const double> components);

struct SetMetrics {
  double R = 0, P = 0, TR = 0, TE = 0, CS = 0, ES = 0;

  std::vector<double> values() const { return {R, P, TR, TE, CS, ES}; }
  bool operator==(const SetMetrics&) const = default;
};

/// 1 - mean(R, P, TR, CS, ES).
double forget_efficacy(const SetMetrics& forget);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Eigen::VectorXd embed(const std::string& text) const = 0;
  /// Batch form; the default calls embed() per text.
  virtual std::vector<Eigen::VectorXd> embed_all(std::span<const std::string> texts) const;
};

/// Hashed token counts (FNV-1a into `dim` buckets), L2-normalized. The empty
/// text embeds as a reserved token so every vector has unit norm.
class LexicalEmbedder : public Embedder {
 public:
  explicit LexicalEmbedder(int dim = 256);
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  int dim_;
};

/// max(cos(e1, e2), 0).
double cosine_similarity(const Embedder& embedder, const std::string& before,
                         const std::string& after);
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class NliLabel { kEntailment, kNeutral, kContradiction };
std::string to_string(NliLabel l);
NliLabel parse_nli_label(const std::string& s);

class NliJudge {
 public:
  virtual ~NliJudge() = default;
  virtual NliLabel classify(const std::string& premise, const std::string& hypothesis) const = 0;
};

/// Contradiction when premise and hypothesis name different values of the same
/// attribute pool; entailment when the hypothesis is mostly recalled by the
/// premise (ROUGE-L recall >= 0.6) without such a conflict; neutral otherwise.
class LexicalNli : public NliJudge {
 public:
  explicit LexicalNli(const Pools& pools = Pools::standard(), double threshold = 0.6);
  NliLabel classify(const std::string& premise, const std::string& hypothesis) const override;

 private:
  std::map<std::string, std::string> category_;  // token -> pool
  double threshold_;
};

/// Retain sets check truth => output; the forget set checks output => truth.
enum class EsDirection { kTruthEntailsOutput, kOutputEntailsTruth };

struct GenerationPair {
  std::string generated;
  std::string truth;
};

/// Fraction of pairs judged entailment. Pairs with ROUGE-L recall of the
/// generation against the truth below 0.1 count as not entailed and never
/// reach the judge.
double entailment_score(const NliJudge& nli, std::span<const GenerationPair> pairs,
                        EsDirection direction);

/// Positions of the answer words: the answer region minus its closing EOS.
inline std::vector<int> answer_word_targets(const TokenSeq& seq) {
  auto t = seq.targets(Region::kAnswer);
  if (!t.empty() && seq.ids[static_cast<std::size_t>(t.back())] == Vocab::kEos) t.pop_back();
  return t;
}

/// Arithmetic mean of per-token probabilities of the answer words.
template <CausalLM M>
double answer_probability(const M& model, const TokenSeq& seq) {
  validate(seq, model.vocab_size());
  const auto targets = answer_word_targets(seq);
  if (targets.empty()) throw InputError("answer is empty");
  const SeqPass<M> pass(model, seq);
  double sum = 0;
  for (int t : targets) sum += std::exp(static_cast<double>(pass.token_logprob(seq, t)));
  return sum / static_cast<double>(targets.size());
}

/// Share of the correct choice among length-normalized choice probabilities
/// exp(mean log p) over the answer words.
template <CausalLM M>
double mc_probability(const M& model, std::span<const TokenSeq> choices, std::size_t correct) {
  if (choices.size() < 2) throw InputError("need at least 2 choices");
  if (correct >= choices.size()) throw InputError("correct index out of range");
  std::vector<double> lp;
  for (const auto& c : choices) {
    validate(c, model.vocab_size());
    const auto targets = answer_word_targets(c);
    if (targets.empty()) throw InputError("choice is empty");
    const SeqPass<M> pass(model, c);
    double sum = 0;
    for (int t : targets) sum += static_cast<double>(pass.token_logprob(c, t));
    lp.push_back(sum / static_cast<double>(targets.size()));
  }
  const double mx = *std::max_element(lp.begin(), lp.end());
  if (!std::isfinite(mx)) return 1.0 / static_cast<double>(choices.size());
  double z = 0;
  for (double v : lp) z += std::exp(v - mx);
  return std::exp(lp[correct] - mx) / z;
}

struct MetricReport {
  std::map<std::string, SetMetrics> sets;  // "forget", "retain", "world"
  double MU = 0;
  double FE = 0;

  /// Recomputes MU (retain + world components) and FE (forget) from the sets.
  void aggregate();
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  bool operator==(const MetricReport&) const = default;
};

struct EvalOptions {
  int max_new_tokens = 32;
  /// Evaluate at most this many examples per set (0 = all).
  int max_examples = 0;
};

struct EvalBackends {
  const Embedder* embedder = nullptr;
  const NliJudge* nli = nullptr;
};

template <CausalLM M>
std::vector<std::string> generate_answers(const M& model, const Vocab& vocab,
                                          std::span<const QAExample> examples,
                                          const EvalOptions& opt = {}) {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const TokenSeq seq = encode_qa(vocab, ex.question, ex.answer);
    const auto gen = greedy_decode(model, seq.prompt(), opt.max_new_tokens);
    out.push_back(vocab.decode(gen));
  }
  return out;
}

/// All six metrics on one set. `before` holds the target model's generations
/// on the same examples (for CS).
template <CausalLM M>
SetMetrics evaluate_set(const M& model, const Vocab& vocab, SetTag tag,
                        std::span<const QAExample> examples, std::span<const std::string> before,
                        const EvalBackends& backends, const EvalOptions& opt = {}) {
  if (examples.empty()) throw InputError("cannot evaluate an empty set");
  if (before.size() != examples.size()) throw InputError("one reference generation per example");
  if (!backends.embedder || !backends.nli) throw InputError("metric backends missing");
  const auto generated = generate_answers(model, vocab, examples, opt);
  const double n = static_cast<double>(examples.size());
  const TruthSide side = tag == SetTag::kForget ? TruthSide::kForget : TruthSide::kRetain;
  SetMetrics m;
  std::vector<GenerationPair> pairs;
  const auto e_before = backends.embedder->embed_all(before);
  const auto e_after = backends.embedder->embed_all(generated);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const QAExample& ex = examples[i];
    const TokenSeq seq = encode_qa(vocab, ex.question, ex.answer);
    m.R += rouge_l_recall(generated[i], ex.answer);
    const TokenSeq para = relabel(seq, vocab.encode(ex.paraphrase));
    if (tag == SetTag::kWorld) {
      // Choices share the paraphrase phrasing and differ only in the fact.
      std::vector<TokenSeq> choices{para};
      for (const auto& p : ex.perturbed) choices.push_back(relabel(seq, vocab.encode(p)));
      m.P += mc_probability(model, std::span<const TokenSeq>(choices), 0);
    } else {
      m.P += answer_probability(model, seq);
    }
    const double p_para = answer_probability(model, para);
    std::vector<double> p_pert;
    for (const auto& p : ex.perturbed) {
      p_pert.push_back(answer_probability(model, relabel(seq, vocab.encode(p))));
    }
    m.TR += truth_ratio_score(p_para, p_pert, side);
    m.TE += token_entropy(generated[i]);
    m.CS += cosine_similarity(e_before[i], e_after[i]);
    pairs.push_back({generated[i], ex.answer});
  }
  m.R /= n;
  m.P /= n;
  m.TR /= n;
  m.TE /= n;
  m.CS /= n;
  m.ES = entailment_score(*backends.nli, pairs,
                          tag == SetTag::kForget ? EsDirection::kOutputEntailsTruth
                                                 : EsDirection::kTruthEntailsOutput);
  return m;
}

/// Evaluation sets and the target model's generations on them.
struct EvalSuite {
  std::vector<QAExample> forget, retain, world;
  std::map<std::string, std::vector<std::string>> before;

  /// Truncates each set to `opt.max_examples` (if set) and caches the
  /// generations of `target`.
  template <CausalLM M>
  static EvalSuite build(const M& target, const Vocab& vocab, std::vector<QAExample> forget,
                         std::vector<QAExample> retain, std::vector<QAExample> world,
                         const EvalOptions& opt = {}) {
    EvalSuite s;
    const auto cap = [&](std::vector<QAExample>& v) {
      if (opt.max_examples > 0 && v.size() > static_cast<std::size_t>(opt.max_examples)) {
        v.resize(static_cast<std::size_t>(opt.max_examples));
      }
    };
    cap(forget);
    cap(retain);
    cap(world);
    s.forget = std::move(forget);
    s.retain = std::move(retain);
    s.world = std::move(world);
    s.before["forget"] = generate_answers(target, vocab, s.forget, opt);
    s.before["retain"] = generate_answers(target, vocab, s.retain, opt);
    s.before["world"] = generate_answers(target, vocab, s.world, opt);
    return s;
  }
};

template <CausalLM M>
MetricReport evaluate(const M& model, const Vocab& vocab, const EvalSuite& suite,
                      const EvalBackends& backends, const EvalOptions& opt = {}) {
  MetricReport r;
  r.sets["forget"] = evaluate_set(model, vocab, SetTag::kForget, suite.forget,
                                  suite.before.at("forget"), backends, opt);
  r.sets["retain"] = evaluate_set(model, vocab, SetTag::kRetain, suite.retain,
                                  suite.before.at("retain"), backends, opt);
  if (!suite.world.empty()) {
    r.sets["world"] = evaluate_set(model, vocab, SetTag::kWorld, suite.world,
                                   suite.before.at("world"), backends, opt);
  }
  r.aggregate();
  return r;
}

}  // namespace ulab
