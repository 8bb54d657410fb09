// SPDX-License-Identifier: Apache-2.0
#include "ulab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

#include "ulab/errors.hpp"

namespace ulab {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_recall(std::string_view candidate, std::string_view reference) {
  const auto ref = split_words(reference);
  if (ref.empty()) throw InputError("ROUGE reference is empty");
  const auto cand = split_words(candidate);
  return static_cast<double>(lcs_length(cand, ref)) / static_cast<double>(ref.size());
}

double token_entropy(std::string_view generated) {
  const auto words = split_words(generated);
  if (words.size() <= 1) return 0.0;
  std::map<std::string, int> freq;
  for (const auto& w : words) ++freq[w];
  const double n = static_cast<double>(words.size());
  double h = 0;
  for (const auto& [w, c] : freq) {
    const double f = c / n;
    h -= f * std::log2(f);
  }
  return std::clamp(h / std::log2(n), 0.0, 1.0);
}

double truth_ratio_score(double p_paraphrase, std::span<const double> p_perturbed, TruthSide side) {
  if (p_perturbed.empty()) throw InputError("truth ratio needs a perturbed answer");
  if (!(p_paraphrase > 0)) return 0.0;
  double mean = 0;
  for (double p : p_perturbed) mean += p;
  mean /= static_cast<double>(p_perturbed.size());
  const double tr = mean / p_paraphrase;
  if (side == TruthSide::kRetain) return std::max(0.0, 1.0 - tr);
  if (tr == 0) return 0.0;
  return std::clamp(1.0 - std::min(tr, 1.0 / tr), 0.0, 1.0);
}

double model_utility(std::span<const double> components) {
  if (components.empty()) throw InputError("model utility needs components");
  double inv = 0;
  for (double c : components) {
    if (!(c > 0)) return 0.0;
    inv += 1.0 / c;
  }
  return std::min(1.0, static_cast<double>(components.size()) / inv);
}

double forget_efficacy(const SetMetrics& f) {
  return 1.0 - (f.R + f.P + f.TR + f.CS + f.ES) / 5.0;
}

std::vector<Eigen::VectorXd> Embedder::embed_all(std::span<const std::string> texts) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

LexicalEmbedder::LexicalEmbedder(int dim) : dim_(dim) {
  if (dim < 1) throw InputError("embedding dimension must be >= 1");
}

Eigen::VectorXd LexicalEmbedder::embed(const std::string& text) const {
  auto words = split_words(text);
  if (words.empty()) words.push_back("\x01<empty>");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (const auto& w : words) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : w) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    v(static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_))) += 1.0;
  }
  return v / v.norm();
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw MetricError("embedding dimensions differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), 0.0, 1.0);
}

double cosine_similarity(const Embedder& embedder, const std::string& before,
                         const std::string& after) {
  return cosine_similarity(embedder.embed(before), embedder.embed(after));
}

std::string to_string(NliLabel l) {
  switch (l) {
    case NliLabel::kEntailment: return "entailment";
    case NliLabel::kNeutral: return "neutral";
    case NliLabel::kContradiction: return "contradiction";
  }
  return "?";
}

NliLabel parse_nli_label(const std::string& s) {
  for (auto l : {NliLabel::kEntailment, NliLabel::kNeutral, NliLabel::kContradiction}) {
    if (to_string(l) == s) return l;
  }
  throw InputError("unknown NLI label: " + s);
}

LexicalNli::LexicalNli(const Pools& pools, double threshold) : threshold_(threshold) {
  for (const auto& [cat, values] : pools.categories) {
    for (const auto& v : values) category_.emplace(v, cat);
  }
}

NliLabel LexicalNli::classify(const std::string& premise, const std::string& hypothesis) const {
  const auto slots = [&](const std::string& text) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& w : split_words(text)) {
      if (auto it = category_.find(w); it != category_.end()) out[it->second].insert(w);
    }
    return out;
  };
  const auto ps = slots(premise), hs = slots(hypothesis);
  for (const auto& [cat, values] : hs) {
    const auto it = ps.find(cat);
    if (it == ps.end()) continue;
    for (const auto& v : values) {
      if (!it->second.count(v)) return NliLabel::kContradiction;
    }
  }
  if (split_words(hypothesis).empty()) return NliLabel::kNeutral;
  return rouge_l_recall(premise, hypothesis) >= threshold_ ? NliLabel::kEntailment
                                                           : NliLabel::kNeutral;
}

double entailment_score(const NliJudge& nli, std::span<const GenerationPair> pairs,
                        EsDirection direction) {
  if (pairs.empty()) throw InputError("entailment score needs pairs");
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (rouge_l_recall(p.generated, p.truth) < 0.1) continue;
    const NliLabel l = direction == EsDirection::kTruthEntailsOutput
                           ? nli.classify(p.truth, p.generated)
                           : nli.classify(p.generated, p.truth);
    if (l == NliLabel::kEntailment) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

void MetricReport::aggregate() {
  std::vector<double> utility;
  for (const char* name : {"retain", "world"}) {
    if (auto it = sets.find(name); it != sets.end()) {
      const auto v = it->second.values();
      utility.insert(utility.end(), v.begin(), v.end());
    }
  }
  MU = utility.empty() ? 0.0 : model_utility(utility);
  const auto f = sets.find("forget");
  FE = f == sets.end() ? 0.0 : forget_efficacy(f->second);
}

namespace {

nlohmann::ordered_json set_json(const SetMetrics& m) {
  nlohmann::ordered_json j;
  j["R"] = m.R;
  j["P"] = m.P;
  j["TR"] = m.TR;
  j["TE"] = m.TE;
  j["CS"] = m.CS;
  j["ES"] = m.ES;
  const auto v = m.values();
  j["MU"] = model_utility(v);
  j["FE"] = forget_efficacy(m);
  return j;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [name, m] : sets) j[name] = set_json(m);
  j["MU"] = MU;
  j["FE"] = FE;
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricReport r;
  for (const auto& [key, val] : j.items()) {
    if (key == "MU") {
      r.MU = val.get<double>();
    } else if (key == "FE") {
      r.FE = val.get<double>();
    } else {
      SetMetrics m;
      m.R = val.at("R").get<double>();
      m.P = val.at("P").get<double>();
      m.TR = val.at("TR").get<double>();
      m.TE = val.at("TE").get<double>();
      m.CS = val.at("CS").get<double>();
      m.ES = val.at("ES").get<double>();
      r.sets[key] = m;
    }
  }
  return r;
}

}  // namespace ulab
