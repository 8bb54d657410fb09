// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "ulab/causal_lm.hpp"
#include "ulab/checkpoint.hpp"
#include "ulab/optim.hpp"
#include "ulab/tabular_lm.hpp"
#include "ulab/transformer.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {
namespace {

TransformerConfig tiny(int k = 12, std::uint64_t seed = 0) {
  TransformerConfig c;
  c.vocab_size = k;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.context = 16;
  c.init_std = 0.3;
  c.seed = seed;
  return c;
}

TokenSeq seq_of(std::vector<TokenId> q, std::vector<TokenId> a) { return make_seq(q, a); }

TEST(Vocab, EncodeDecodeRoundTrip) {
  const std::vector<std::string> texts{"the cat sat", "a dog ran"};
  const Vocab v = Vocab::from_texts(texts);
  EXPECT_EQ(v.size(), Vocab::kNumSpecial + 6);
  EXPECT_EQ(v.decode(v.encode("the dog sat")), "the dog sat");
  EXPECT_EQ(v.encode("zebra").front(), Vocab::kUnk);
  const Vocab w = Vocab::from_tokens(v.tokens());
  EXPECT_EQ(w.encode("a cat ran"), v.encode("a cat ran"));
}

TEST(Vocab, DecodeStopsAtEos) {
  const std::vector<std::string> texts{"x y"};
  const Vocab v = Vocab::from_texts(texts);
  std::vector<TokenId> ids = v.encode("x y");
  ids.insert(ids.begin() + 1, Vocab::kEos);
  EXPECT_EQ(v.decode(ids), "x");
}

TEST(TokenSeq, LayoutAndRegions) {
  const TokenSeq s = seq_of({5, 6}, {7, 8, 9});
  ASSERT_EQ(s.ids, (std::vector<TokenId>{Vocab::kEos, 5, 6, 7, 8, 9, Vocab::kEos}));
  EXPECT_EQ(s.question_length(), 3u);  // start marker included
  EXPECT_EQ(s.targets(Region::kQuestion), (std::vector<int>{1, 2}));
  EXPECT_EQ(s.targets(Region::kAnswer), (std::vector<int>{3, 4, 5, 6}));
  EXPECT_EQ(s.targets(Region::kAll).size(), 6u);
  EXPECT_EQ(s.prompt(), (std::vector<TokenId>{Vocab::kEos, 5, 6}));
  EXPECT_EQ(s.answer(), (std::vector<TokenId>{7, 8, 9}));
  const TokenSeq r = relabel(s, std::vector<TokenId>{4});
  EXPECT_EQ(r.ids, (std::vector<TokenId>{Vocab::kEos, 5, 6, 4, Vocab::kEos}));
}

TEST(TokenSeq, ValidateRejectsOutOfRange) {
  EXPECT_THROW(validate(seq_of({3}, {40}), 12), InputError);
  EXPECT_NO_THROW(validate(seq_of({3}, {4}), 12));
}

TEST(Transformer, RowsAreDistributions) {
  const Transformer<double> m(tiny());
  const auto lp = forward_logprobs(m, seq_of({3, 4, 5}, {6, 7}));
  for (Eigen::Index r = 0; r < lp.rows(); ++r) {
    EXPECT_NEAR(lp.row(r).array().exp().sum(), 1.0, 1e-12);
  }
}

TEST(Transformer, IsCausal) {
  const Transformer<double> m(tiny());
  const auto a = m.forward(std::vector<TokenId>{1, 3, 4, 5, 6}).logits;
  const auto b = m.forward(std::vector<TokenId>{1, 3, 4, 9, 10}).logits;
  EXPECT_LT((a.topRows(3) - b.topRows(3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((a.row(3) - b.row(3)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Transformer, NextLogitsMatchLastRow) {
  const Transformer<double> m(tiny());
  const std::vector<TokenId> ids{1, 3, 4, 5};
  const auto full = m.forward(ids).logits;
  EXPECT_LT((m.next_logits(ids) - full.row(3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Transformer, SameSeedSameParams) {
  EXPECT_EQ(Transformer<double>(tiny(12, 3)).params(), Transformer<double>(tiny(12, 3)).params());
  EXPECT_NE(Transformer<double>(tiny(12, 3)).params(), Transformer<double>(tiny(12, 4)).params());
}

TEST(Transformer, RejectsWrongParamCount) {
  EXPECT_THROW(Transformer<double>(tiny(), Eigen::VectorXd::Zero(3)), InputError);
}

// Central differences of the sequence log-probability against the reverse pass.
void check_logprob_gradient(const TransformerConfig& cfg) {
  Transformer<double> m(cfg);
  const TokenSeq s = seq_of({3, 4, 5}, {6, 7, 8});
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.params().size());
  const SeqPass<Transformer<double>> pass(m, s);
  Transformer<double>::Matrix d = Transformer<double>::Matrix::Zero(pass.logp.rows(), pass.logp.cols());
  add_logprob_adjoint(pass, s, Region::kAll, 1.0, d);
  m.backward(pass.trace, d, g);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Eigen::Index> pick(0, m.params().size() - 1);
  const double h = 1e-5;
  for (int i = 0; i < 60; ++i) {
    const Eigen::Index j = pick(rng);
    const double x = m.params()[j];
    m.params()[j] = x + h;
    const double up = sequence_logprob(m, s, Region::kAll);
    m.params()[j] = x - h;
    const double dn = sequence_logprob(m, s, Region::kAll);
    m.params()[j] = x;
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(g[j], fd, 1e-6 + 1e-5 * std::abs(fd)) << "coordinate " << j;
  }
}

TEST(Transformer, GradientMatchesFiniteDifferences) { check_logprob_gradient(tiny()); }

TEST(Transformer, TiedGradientMatchesFiniteDifferences) {
  auto c = tiny();
  c.tied_output = true;
  check_logprob_gradient(c);
}

TEST(TabularLM, LogprobIsTableLookup) {
  TabularLM<double> m(6);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] = n(rng);
  const TokenSeq s = seq_of({3}, {4, 5});
  const auto p = m.probabilities();
  const double expect = std::log(p(Vocab::kEos, 3)) + std::log(p(3, 4)) + std::log(p(4, 5)) +
                        std::log(p(5, Vocab::kEos));
  EXPECT_NEAR(sequence_logprob(m, s, Region::kAll), expect, 1e-12);
}

TEST(TabularLM, FromProbabilitiesChecksRows) {
  TabularLM<double>::Matrix p = TabularLM<double>::Matrix::Constant(4, 4, 0.25);
  EXPECT_NO_THROW(TabularLM<double>::from_probabilities(p));
  p(0, 0) = 0.5;
  EXPECT_THROW(TabularLM<double>::from_probabilities(p), InputError);
}

TEST(Greedy, FollowsArgmaxAndStopsAtEos) {
  TabularLM<double>::Matrix p = TabularLM<double>::Matrix::Constant(6, 6, 0.02);
  p.row(1) << 0.02, 0.02, 0.02, 0.9, 0.02, 0.02;  // EOS -> 3
  p.row(3) << 0.02, 0.02, 0.02, 0.02, 0.9, 0.02;  // 3 -> 4
  p.row(4) << 0.02, 0.9, 0.02, 0.02, 0.02, 0.02;  // 4 -> EOS
  for (int r : {0, 2, 5}) p.row(r) << 0.9, 0.02, 0.02, 0.02, 0.02, 0.02;
  const auto m = TabularLM<double>::from_probabilities(p);
  const std::vector<TokenId> prompt{Vocab::kEos};
  EXPECT_EQ(greedy_decode(m, prompt, 10), (std::vector<TokenId>{3, 4}));
  EXPECT_EQ(greedy_decode(m, prompt, 1), (std::vector<TokenId>{3}));
  EXPECT_THROW(greedy_decode(m, prompt, 0), InputError);
}

TEST(Greedy, RespectsContext) {
  auto c = tiny();
  c.context = 4;
  const Transformer<double> m(c);
  const std::vector<TokenId> prompt{1, 3, 4};
  EXPECT_LE(greedy_decode(m, prompt, 10).size(), 1u);
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW<Eigen::VectorXd> opt(cfg, 2);
  Eigen::VectorXd x(2), g(2);
  x << 1.0, -2.0;
  g << 0.5, -4.0;
  const Eigen::VectorXd x0 = x;
  opt.step(x, g, 0.01);
  // After one step the bias-corrected moments are g and g^2.
  for (int i = 0; i < 2; ++i) {
    const double expect = x0[i] - 0.01 * (g[i] / (std::abs(g[i]) + 1e-8) + 0.1 * x0[i]);
    EXPECT_NEAR(x[i], expect, 1e-15);
  }
}

TEST(AdamW, ZeroLearningRateLeavesParamsBitExact) {
  AdamW<Eigen::VectorXd> opt(AdamWConfig{}, 3);
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(3, -1, 1);
  const Eigen::VectorXd x0 = x;
  opt.step(x, Eigen::VectorXd::Ones(3), 0.0);
  EXPECT_EQ(x, x0);
}

TEST(Schedule, WarmupPeakAndDecay) {
  const Schedule s = make_schedule(1e-3, 4, 5);
  EXPECT_EQ(s.lr_at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr_at(2), 5e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(4), 1e-3);
  EXPECT_EQ(s.lr_at(s.total_steps), 0.0);
  // Linear interpolation between the peak and the end of the schedule.
  const double slope = 1e-3 / static_cast<double>(s.total_steps - s.warmup_steps);
  EXPECT_NEAR(s.lr_at(10), 1e-3 - slope * 6, 1e-18);
  EXPECT_LE(s.lr_at(s.total_steps - 1), slope + 1e-18);
  EXPECT_THROW(s.lr_at(-1), InputError);
  EXPECT_THROW(s.lr_at(s.total_steps + 1), InputError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Transformer<double> m(tiny());
  const std::vector<std::string> texts{"alpha beta gamma delta epsilon zeta eta theta iota"};
  const Vocab v = Vocab::from_texts(texts);
  Checkpoint c = model_checkpoint(m, v, "abc");
  c.meta["note"] = "x";
  const Checkpoint d = deserialize(serialize(c));
  EXPECT_EQ(d.transformer().params(), m.params());
  EXPECT_EQ(d.vocab, v.tokens());
  EXPECT_EQ(d.config_hash, "abc");
  EXPECT_EQ(d.model, m.config());
  EXPECT_EQ(serialize(d), serialize(c));
}

TEST(Checkpoint, DetectsCorruption) {
  const Transformer<double> m(tiny());
  const Vocab v = Vocab::from_texts(std::vector<std::string>{"a b c d e f g h i"});
  std::string bytes = serialize(model_checkpoint(m, v, "h"));
  bytes[bytes.size() / 2] ^= 0x5a;
  EXPECT_ANY_THROW(deserialize(bytes));
  EXPECT_ANY_THROW(deserialize("not a checkpoint"));
}

TEST(Checkpoint, AtomicSaveAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "ulab_ckpt_test";
  std::filesystem::remove_all(dir);
  const Transformer<double> m(tiny());
  const Vocab v = Vocab::from_texts(std::vector<std::string>{"a b c d e f g h i"});
  save_checkpoint(dir / "m.ckpt", model_checkpoint(m, v, "h"));
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt").blob("params"), m.params());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    EXPECT_EQ(e.path().filename(), "m.ckpt");
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ulab
