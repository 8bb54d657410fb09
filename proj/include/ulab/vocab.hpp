// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ulab {

using TokenId = std::int32_t;

/// Lowercased whitespace split. Shared by the model tokenizer and ROUGE.
std::vector<std::string> split_words(std::string_view text);

/// Closed token set with three reserved ids. EOS doubles as the start marker
/// of every encoded sequence.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr int kNumSpecial = 3;

  /// Builds from the distinct words of `texts`, sorted, after the specials.
  static Vocab from_texts(std::span<const std::string> texts);
  /// Rebuilds from a full ordered token list (specials included).
  static Vocab from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins tokens with single spaces, stopping at the first EOS.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class Role : std::uint8_t { kQuestion, kAnswer };

/// Which prediction targets a sequence-level quantity ranges over.
enum class Region : std::uint8_t { kQuestion, kAnswer, kAll };

/// x' = x ∘ y as token ids plus a per-position role. Position 0 is always the
/// EOS start marker; position t > 0 is predicted from positions < t.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<Role> roles;

  std::size_t size() const { return ids.size(); }
  std::size_t question_length() const;
  /// Target positions t >= 1 selected by `region`.
  std::vector<int> targets(Region region) const;
  /// Question part only (the decoding prompt).
  std::vector<TokenId> prompt() const;
  /// Answer tokens, excluding the terminating EOS.
  std::vector<TokenId> answer() const;
};

/// [EOS] q [a EOS], with the answer block (and its EOS) tagged kAnswer.
TokenSeq make_seq(std::span<const TokenId> question,
                  std::span<const TokenId> answer);
TokenSeq encode_qa(const Vocab& vocab, std::string_view question,
                   std::string_view answer);
/// Same question, different answer.
TokenSeq relabel(const TokenSeq& seq, std::span<const TokenId> answer);

void validate(const TokenSeq& seq, int vocab_size);

}  // namespace ulab
