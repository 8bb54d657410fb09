// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ulab/losses.hpp"
#include "ulab/tabular_lm.hpp"
#include "ulab/transformer.hpp"

namespace ulab {
namespace {

using Tab = TabularLM<double>;
using Net = Transformer<double>;

Net small_net(std::uint64_t seed = 0) {
  TransformerConfig c;
  c.vocab_size = 14;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.context = 16;
  c.init_std = 0.3;
  c.seed = seed;
  return Net(c);
}

std::vector<TokenSeq> pairs() {
  return {make_seq(std::vector<TokenId>{3, 4}, std::vector<TokenId>{5, 6}),
          make_seq(std::vector<TokenId>{7}, std::vector<TokenId>{8, 9, 10}),
          make_seq(std::vector<TokenId>{11, 3, 4}, std::vector<TokenId>{12})};
}

std::vector<std::vector<TokenId>> templates() { return {{13, 2}, {2}, {13}}; }

// Bigram table whose every row puts probability one on `next[row]`.
Tab chain(int k, const std::map<int, int>& next) {
  Tab::Matrix p = Tab::Matrix::Zero(k, k);
  for (int r = 0; r < k; ++r) {
    const auto it = next.find(r);
    p(r, it == next.end() ? Vocab::kEos : it->second) = 1.0;
  }
  return Tab::from_probabilities(p);
}

TEST(GaLoss, CertainAnswerGivesZero) {
  const Tab m = chain(6, {{1, 3}, {3, 4}, {4, 1}});
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  EXPECT_NEAR(ga_loss(m, std::span<const TokenSeq>(b)), 0.0, 1e-15);
}

TEST(GaLoss, ScalarPlugIn) {
  Tab::Matrix p = Tab::Matrix::Constant(6, 6, 0.0);
  p.row(0).setConstant(1.0 / 6);
  p.row(1).setConstant(1.0 / 6);
  p.row(2).setConstant(1.0 / 6);
  p.row(5).setConstant(1.0 / 6);
  p(3, 4) = std::exp(-2.0);
  p(3, 0) = 1 - std::exp(-2.0);
  p(4, 1) = 1.0;
  const Tab m = Tab::from_probabilities(p);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  EXPECT_NEAR(ga_loss(m, std::span<const TokenSeq>(b)), -2.0, 1e-12);
}

TEST(GaLoss, GradientIsNegatedNll) {
  const Net m = small_net();
  const auto b = pairs();
  Eigen::VectorXd ga = Eigen::VectorXd::Zero(m.params().size());
  Eigen::VectorXd gd = ga;
  const double a = ga_loss(m, std::span<const TokenSeq>(b), Region::kAnswer, &ga);
  const double d = gd_loss(m, std::span<const TokenSeq>(b), Region::kAnswer, &gd);
  EXPECT_DOUBLE_EQ(a, -d);
  EXPECT_LT((ga + gd).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GdLoss, MatchesNaiveReimplementation) {
  const Net m = small_net();
  const auto b = pairs();
  double naive = 0;
  for (const auto& s : b) {
    const auto logits = m.forward(s.ids).logits;
    for (std::size_t t = 1; t < s.size(); ++t) {
      if (s.roles[t] != Role::kAnswer) continue;
      double z = 0;
      for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(t - 1, j));
      naive -= logits(t - 1, s.ids[t]) - std::log(z);
    }
  }
  naive /= static_cast<double>(b.size());
  EXPECT_NEAR(gd_loss(m, std::span<const TokenSeq>(b)), naive, 1e-10);
  EXPECT_GE(gd_loss(m, std::span<const TokenSeq>(b)), 0.0);
}

TEST(NpoLoss, AtReferenceIsTwoOverBetaLogTwo) {
  const Net m = small_net();
  const auto b = pairs();
  EXPECT_NEAR(npo_loss(m, m, std::span<const TokenSeq>(b), 0.1), 20 * std::log(2.0), 1e-12);
  EXPECT_NEAR(npo_loss(m, m, std::span<const TokenSeq>(b), 0.5), 4 * std::log(2.0), 1e-12);
}

TEST(NpoLoss, LargeNegativeLogRatio) {
  // log p_θ(y|x) - log p_ref(y|x) = -50 for a one-token answer.
  Tab::Matrix p = Tab::Matrix::Constant(6, 6, 0.0);
  for (int r : {0, 1, 2, 5}) p.row(r).setConstant(1.0 / 6);
  p(4, 1) = 1.0;
  Tab::Matrix q = p;
  p(3, 4) = std::exp(-50.0);
  p(3, 0) = 1 - std::exp(-50.0);
  q(3, 4) = 1.0;
  const Tab m = Tab::from_probabilities(p), ref = Tab::from_probabilities(q);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  const double expect = 20 * std::log1p(std::exp(-5.0));
  EXPECT_NEAR(npo_loss(m, ref, std::span<const TokenSeq>(b), 0.1), expect, 1e-12);
  EXPECT_NEAR(expect, 0.1343, 1e-4);
}

TEST(NpoLoss, GradientAtReferenceEqualsGa) {
  const Net m = small_net(3);
  const auto b = pairs();
  Eigen::VectorXd gn = Eigen::VectorXd::Zero(m.params().size());
  Eigen::VectorXd ga = gn;
  npo_loss(m, m, std::span<const TokenSeq>(b), 0.1, Region::kAnswer, &gn);
  ga_loss(m, std::span<const TokenSeq>(b), Region::kAnswer, &ga);
  EXPECT_LT((gn - ga).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IdkLoss, EqualsGdOnRelabeledPairs) {
  const Net m = small_net();
  const auto b = pairs();
  const auto t = templates();
  std::vector<TokenSeq> rel;
  for (std::size_t i = 0; i < b.size(); ++i) rel.push_back(relabel(b[i], t[i]));
  EXPECT_DOUBLE_EQ(idk_loss(m, std::span<const TokenSeq>(b), std::span(t)),
                   gd_loss(m, std::span<const TokenSeq>(rel)));
}

TEST(IdkLoss, CertainTemplateGivesZero) {
  const Tab m = chain(6, {{1, 3}, {3, 5}, {5, 1}});
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  const std::vector<std::vector<TokenId>> t{{5}};
  EXPECT_NEAR(idk_loss(m, std::span<const TokenSeq>(b), std::span(t)), 0.0, 1e-15);
}

TEST(IdkLoss, DescentDecreasesMonotonically) {
  Net m = small_net();
  const auto b = pairs();
  const auto t = templates();
  double prev = idk_loss(m, std::span<const TokenSeq>(b), std::span(t));
  for (int step = 0; step < 50; ++step) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m.params().size());
    idk_loss(m, std::span<const TokenSeq>(b), std::span(t), Region::kAnswer, &g);
    m.params() -= 0.05 * g;
    const double cur = idk_loss(m, std::span<const TokenSeq>(b), std::span(t));
    EXPECT_LT(cur, prev) << "step " << step;
    prev = cur;
  }
}

TEST(DpoLoss, AtReferenceIsTwoOverBetaLogTwo) {
  const Net m = small_net();
  const auto b = pairs();
  const auto t = templates();
  EXPECT_NEAR(dpo_loss(m, m, std::span<const TokenSeq>(b), std::span(t), 0.1),
              20 * std::log(2.0), 1e-12);
}

TEST(DpoLoss, SwapFlipsTheMargin) {
  const Net m = small_net(1), ref = small_net(2);
  const auto b = pairs();
  const auto t = templates();
  const double beta = 0.3;
  double loss = 0, swapped = 0;
  std::vector<TokenSeq> neg_swap;
  std::vector<std::vector<TokenId>> pos_swap;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const TokenSeq pos = relabel(b[i], t[i]);
    const double z = beta * ((sequence_logprob(m, pos, Region::kAnswer) -
                              sequence_logprob(ref, pos, Region::kAnswer)) -
                             (sequence_logprob(m, b[i], Region::kAnswer) -
                              sequence_logprob(ref, b[i], Region::kAnswer)));
    loss += std::log1p(std::exp(-z));
    swapped += std::log1p(std::exp(z));
    neg_swap.push_back(pos);
    pos_swap.push_back(b[i].answer());
  }
  const double n = static_cast<double>(b.size());
  EXPECT_NEAR(dpo_loss(m, ref, std::span<const TokenSeq>(b), std::span(t), beta),
              (2 / beta) * loss / n, 1e-10);
  EXPECT_NEAR(dpo_loss(m, ref, std::span<const TokenSeq>(neg_swap), std::span(pos_swap), beta),
              (2 / beta) * swapped / n, 1e-10);
}

TEST(DpoLoss, DescentFavorsTemplateOverAnswer) {
  Tab m(8);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0, 0.5);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] = nd(rng);
  const Tab ref = m;
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4, 5})};
  const std::vector<std::vector<TokenId>> t{{6, 7}};
  const TokenSeq pos = relabel(b[0], t[0]);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.params().size());
  dpo_loss(m, ref, std::span<const TokenSeq>(b), std::span(t), 0.1, Region::kAnswer, &g);
  Tab moved = m;
  moved.params() -= 1e-3 * g;
  EXPECT_GT(sequence_logprob(moved, pos, Region::kAnswer), sequence_logprob(m, pos, Region::kAnswer));
  EXPECT_LT(sequence_logprob(moved, b[0], Region::kAnswer), sequence_logprob(m, b[0], Region::kAnswer));
}

TEST(KlLoss, ZeroAtReferenceAndNonNegative) {
  const Net m = small_net(1), other = small_net(2);
  const auto b = pairs();
  EXPECT_NEAR(kl_loss(m, m, std::span<const TokenSeq>(b)), 0.0, 1e-15);
  EXPECT_GT(kl_loss(m, other, std::span<const TokenSeq>(b)), 0.0);
}

TEST(KlLoss, TwoTokenPlugIn) {
  Tab::Matrix p(2, 2), q(2, 2);
  p << 0.8, 0.2, 0.8, 0.2;
  q << 0.5, 0.5, 0.5, 0.5;
  const Tab m = Tab::from_probabilities(p), ref = Tab::from_probabilities(q);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{0}, std::vector<TokenId>{0})};
  const double expect = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  EXPECT_NEAR(kl_loss(m, ref, std::span<const TokenSeq>(b)), expect, 1e-12);
  EXPECT_NEAR(expect, 0.19274, 1e-5);
}

TEST(MeLoss, UniformGivesZero) {
  const Tab m(6);
  const auto b = std::vector<TokenSeq>{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b)), 0.0, 1e-15);
}

TEST(MeLoss, OneHotTwoTokensGivesLogTwo) {
  Tab::Matrix p(2, 2);
  p << 1.0, 0.0, 0.0, 1.0;
  const Tab m = Tab::from_probabilities(p);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{0}, std::vector<TokenId>{0})};
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b)), std::log(2.0), 1e-15);
}

TEST(MeLoss, FourTokenPlugIn) {
  Tab::Matrix p(4, 4);
  for (int r = 0; r < 4; ++r) p.row(r) << 0.7, 0.1, 0.1, 0.1;
  const Tab m = Tab::from_probabilities(p);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3, 2}, std::vector<TokenId>{0})};
  const double expect = 0.7 * std::log(2.8) + 3 * 0.1 * std::log(0.4);
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b)), expect, 1e-12);
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b), true), expect, 1e-12);
  EXPECT_NEAR(expect, 0.44585, 1e-5);
}

TEST(MeLoss, MaskingSelectsPositions) {
  Tab::Matrix p = Tab::Matrix::Constant(5, 5, 0.2);
  p.row(4) << 0.0, 1.0, 0.0, 0.0, 0.0;  // answer token 4 -> EOS, certain
  const Tab m = Tab::from_probabilities(p);
  // [EOS] 3 | 4 EOS: question target 3 comes from a uniform row, answer
  // targets from a uniform row (after 3) and the certain row (after 4).
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b), true), std::log(5.0) / 2, 1e-12);
  EXPECT_NEAR(me_loss(m, std::span<const TokenSeq>(b), false), std::log(5.0) / 3, 1e-12);
}

TEST(ApLoss, EqualProbabilitiesGiveLogTwoOverBeta) {
  Tab::Matrix p = Tab::Matrix::Constant(6, 6, 1.0 / 6);
  const Tab m = Tab::from_probabilities(p);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4})};
  const std::vector<std::vector<TokenId>> t{{5}};
  EXPECT_NEAR(ap_loss(m, std::span<const TokenSeq>(b), std::span(t), 0.1), 10 * std::log(2.0),
              1e-12);
}

TEST(ApWeight, ScalarOracleAndMonotone) {
  EXPECT_NEAR(ap_weight(0.0, -10.0, 0.1), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(ap_weight(0.0, -10.0, 0.1), 0.26894, 1e-5);
  double prev = 0;
  for (double lt = -30; lt <= 0; lt += 1) {
    const double w = ap_weight(-5.0, lt, 0.1);
    EXPECT_GT(w, prev);
    prev = w;
  }
}

TEST(MeLoss, EqualsLogKMinusMeanEntropy) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Net m = small_net(seed);
    const auto b = pairs();
    double expect = 0;
    for (const auto& s : b) {
      const auto lp = forward_logprobs(m, s);
      const auto targets = s.targets(Region::kAll);
      double sum = 0;
      for (int t : targets) {
        double h = 0;
        for (Eigen::Index j = 0; j < lp.cols(); ++j) h -= std::exp(lp(t - 1, j)) * lp(t - 1, j);
        sum += std::log(14.0) - h;
      }
      expect += sum / static_cast<double>(targets.size());
    }
    expect /= static_cast<double>(b.size());
    const double v = me_loss(m, std::span<const TokenSeq>(b));
    EXPECT_NEAR(v, expect, 1e-10);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, std::log(14.0));
  }
}

TEST(ApLoss, GradientFactorsThroughWeight) {
  Tab m(8);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0, 0.7);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] = nd(rng);
  const std::vector<TokenSeq> b{make_seq(std::vector<TokenId>{3}, std::vector<TokenId>{4, 5})};
  const std::vector<std::vector<TokenId>> t{{6, 7}};
  const double beta = 0.1;
  const TokenSeq alt = relabel(b[0], t[0]);
  const auto diff = [&](const Tab& x) {
    return sequence_logprob(x, alt, Region::kAnswer) - sequence_logprob(x, b[0], Region::kAnswer);
  };
  const double w = ap_weight(sequence_logprob(m, b[0], Region::kAnswer),
                             sequence_logprob(m, alt, Region::kAnswer), beta);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < m.params().size(); ++j) {
    Tab up = m, dn = m;
    up.params()[j] += h;
    dn.params()[j] -= h;
    const double fd = (ap_loss(up, std::span<const TokenSeq>(b), std::span(t), beta) -
                       ap_loss(dn, std::span<const TokenSeq>(b), std::span(t), beta)) / (2 * h);
    const double factored = w * (diff(up) - diff(dn)) / (2 * h);
    EXPECT_NEAR(fd, factored, 1e-9 + 1e-4 * std::abs(factored)) << "coordinate " << j;
  }
}

TEST(Combine, AlphaZeroMeGdIsGd) {
  const Net m = small_net();
  const auto f = pairs();
  const auto r = pairs();
  const LossConfig cfg = method_config("ME+GD", 0.0);
  Eigen::VectorXd g1 = Eigen::VectorXd::Zero(m.params().size());
  Eigen::VectorXd g2 = g1;
  const auto v = combine(cfg, m, static_cast<const Net*>(nullptr), std::span<const TokenSeq>(f),
                         std::span<const TokenSeq>(r), TemplateDraws{}, &g1);
  EXPECT_EQ(v.total, gd_loss(m, std::span<const TokenSeq>(r), Region::kAnswer, &g2));
  EXPECT_EQ(g1, g2);
}

TEST(Combine, IdkApIsSumOfTerms) {
  const Net m = small_net();
  const auto f = pairs();
  const auto r = pairs();
  TemplateDraws d;
  d.forget = templates();
  d.retain = {{2}, {13, 13}, {2, 13}};
  const LossConfig cfg = method_config("IDK+AP");
  const auto v = combine(cfg, m, &m, std::span<const TokenSeq>(f), std::span<const TokenSeq>(r), d);
  const double idk = idk_loss(m, std::span<const TokenSeq>(f), std::span(d.forget));
  const double ap = ap_loss(m, std::span<const TokenSeq>(r), std::span(d.retain), 0.1);
  EXPECT_NEAR(v.forget, idk, 1e-14);
  EXPECT_NEAR(v.reg, ap, 1e-14);
  EXPECT_NEAR(v.total, idk + ap, 1e-12);
}

TEST(Combine, NamedMethodsAndErrors) {
  for (const char* name : {"GA+GD", "GA+KL", "NPO+GD", "NPO+KL", "DPO+GD", "DPO+KL", "IDK+GD"}) {
    EXPECT_EQ(method_config(name).method(), name);
  }
  EXPECT_EQ(method_names().size(), 11u);
  EXPECT_THROW(method_config("IDK+RT"), ConfigError);
  EXPECT_FALSE(method_config("ME+GD").question_masking);
  EXPECT_TRUE(method_config("GA+GD").question_masking);
  EXPECT_EQ(method_config("ME+GD", 0.3).forget_weight(), 0.3);
  EXPECT_EQ(method_config("GA+GD", 0.3).forget_weight(), 1.0);

  const Net m = small_net();
  const auto f = pairs();
  EXPECT_THROW(combine(method_config("NPO+GD"), m, static_cast<const Net*>(nullptr),
                       std::span<const TokenSeq>(f), std::span<const TokenSeq>(f), TemplateDraws{}),
               ConfigError);
  const std::vector<std::vector<TokenId>> none;
  std::mt19937_64 rng(0);
  EXPECT_THROW(draw_templates(method_config("IDK+AP"), none, 3, 3, rng), ConfigError);
}

TEST(Combine, ReferencePolicyNames) {
  EXPECT_EQ(parse_reference_policy("previous"), ReferencePolicy::kPreviousSubtask);
  EXPECT_EQ(parse_reference_policy("previous-subtask"), ReferencePolicy::kPreviousSubtask);
  EXPECT_EQ(parse_reference_policy("fixed-initial"), ReferencePolicy::kFixedInitial);
  EXPECT_THROW(parse_reference_policy("latest"), ConfigError);
}

// Central differences on a handful of coordinates for every loss; the
// acceptance suite runs the full 100-coordinate check.
template <class F>
void fd_check(Net m, F&& loss) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.params().size());
  loss(m, &g);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Eigen::Index> pick(0, m.params().size() - 1);
  for (int i = 0; i < 25; ++i) {
    const Eigen::Index j = pick(rng);
    const double x = m.params()[j];
    m.params()[j] = x + 1e-5;
    const double up = loss(m, nullptr);
    m.params()[j] = x - 1e-5;
    const double dn = loss(m, nullptr);
    m.params()[j] = x;
    const double fd = (up - dn) / 2e-5;
    EXPECT_NEAR(g[j], fd, 1e-7 + 1e-4 * std::abs(fd));
  }
}

TEST(Gradients, AllLossesMatchFiniteDifferences) {
  const Net ref = small_net(5);
  const auto b = pairs();
  const auto t = templates();
  const std::span<const TokenSeq> s(b);
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) { return ga_loss(m, s, Region::kAnswer, g); });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) { return gd_loss(m, s, Region::kAll, g); });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) {
    return npo_loss(m, ref, s, 0.1, Region::kAnswer, g);
  });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) {
    return dpo_loss(m, ref, s, std::span(t), 0.1, Region::kAnswer, g);
  });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) {
    return idk_loss(m, s, std::span(t), Region::kAnswer, g);
  });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) { return kl_loss(m, ref, s, g); });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) { return me_loss(m, s, false, g); });
  fd_check(small_net(), [&](const Net& m, Eigen::VectorXd* g) {
    return ap_loss(m, s, std::span(t), 0.1, g);
  });
}

}  // namespace
}  // namespace ulab
