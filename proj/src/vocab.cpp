// SPDX-License-Identifier: Apache-2.0
#include "ulab/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "ulab/errors.hpp"

namespace ulab {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocab Vocab::from_texts(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens = {"<pad>", "<eos>", "<unk>"};
  for (const auto& w : words) {
    if (w == "<pad>" || w == "<eos>" || w == "<unk>") continue;
    tokens.push_back(w);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw InputError("vocabulary needs at least 4 tokens");
  if (tokens[kPad] != "<pad>" || tokens[kEos] != "<eos>" || tokens[kUnk] != "<unk>") {
    throw InputError("vocabulary must start with <pad> <eos> <unk>");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, fresh] = v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i));
    if (!fresh) throw InputError("duplicate token: " + v.tokens_[i]);
  }
  return v;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw InputError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::size_t TokenSeq::question_length() const {
  return static_cast<std::size_t>(
      std::count(roles.begin(), roles.end(), Role::kQuestion));
}

std::vector<int> TokenSeq::targets(Region region) const {
  std::vector<int> out;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    const bool answer = roles[t] == Role::kAnswer;
    if (region == Region::kAll || (region == Region::kAnswer) == answer) {
      out.push_back(static_cast<int>(t));
    }
  }
  return out;
}

std::vector<TokenId> TokenSeq::prompt() const {
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(question_length())};
}

std::vector<TokenId> TokenSeq::answer() const {
  std::vector<TokenId> out;
  for (std::size_t t = question_length(); t < ids.size(); ++t) {
    if (ids[t] == Vocab::kEos) break;
    out.push_back(ids[t]);
  }
  return out;
}

TokenSeq make_seq(std::span<const TokenId> question,
                  std::span<const TokenId> answer) {
  TokenSeq s;
  s.ids.reserve(question.size() + answer.size() + 2);
  s.ids.push_back(Vocab::kEos);
  s.ids.insert(s.ids.end(), question.begin(), question.end());
  s.roles.assign(s.ids.size(), Role::kQuestion);
  s.ids.insert(s.ids.end(), answer.begin(), answer.end());
  s.ids.push_back(Vocab::kEos);
  s.roles.resize(s.ids.size(), Role::kAnswer);
  return s;
}

TokenSeq encode_qa(const Vocab& vocab, std::string_view question,
                   std::string_view answer) {
  const auto q = vocab.encode(question);
  const auto a = vocab.encode(answer);
  return make_seq(q, a);
}

TokenSeq relabel(const TokenSeq& seq, std::span<const TokenId> answer) {
  const auto p = seq.prompt();
  return make_seq(std::span<const TokenId>(p).subspan(1), answer);
}

void validate(const TokenSeq& seq, int vocab_size) {
  if (seq.ids.empty()) throw InputError("empty token sequence");
  if (seq.roles.size() != seq.ids.size()) throw InputError("role/id length mismatch");
  bool seen_answer = false;
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    if (seq.ids[t] < 0 || seq.ids[t] >= vocab_size) {
      throw InputError("token id " + std::to_string(seq.ids[t]) + " out of range");
    }
    if (seq.roles[t] == Role::kAnswer) {
      seen_answer = true;
    } else if (seen_answer) {
      throw InputError("question position after answer position");
    }
  }
}

}  // namespace ulab
