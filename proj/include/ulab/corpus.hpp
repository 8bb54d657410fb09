// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ulab {

enum class SetTag { kForget, kRetain, kWorld };

std::string to_string(SetTag tag);
SetTag parse_set_tag(const std::string& s);

struct QAExample {
  std::string question;
  std::string answer;
  std::string paraphrase;
  std::vector<std::string> perturbed;
  SetTag tag = SetTag::kRetain;
  std::string author;  // empty for world facts
  int author_index = -1;
  // Which attribute the answer states, and its value. Not serialized.
  std::string slot;
  std::string slot_value;

  bool operator==(const QAExample&) const = default;
};

/// Fixed attribute pools every generated fact draws from. Each single-token
/// value belongs to exactly one category.
struct Pools {
  std::map<std::string, std::vector<std::string>> categories;

  static const Pools& standard();
  /// Category of a single token, or empty if the token is not a pool value.
  std::string category_of(const std::string& token) const;
};

struct AuthorProfile {
  std::string first, last;
  std::string birthplace, birth_month, birth_year;
  std::string genre;
  std::string father_job, mother_job;
  std::string book1, book2;  // two-token titles
  std::string award, language;

  std::string name() const { return first + " " + last; }
};

struct DatasetBundle {
  std::vector<AuthorProfile> authors;
  std::vector<QAExample> fictitious;  // all author QA, author-major order
  std::vector<QAExample> world;
  std::vector<QAExample> forget;
  std::vector<QAExample> retain;
  double forget_fraction = 0.0;
  int n_qa_per_author = 0;
};

struct CorpusParams {
  std::uint64_t seed = 0;
  int n_authors = 100;
  int n_qa_per_author = 10;
  int n_world = 200;
  double forget_fraction = 0.05;
};

/// Deterministic TOFU-style corpus. Throws GenerationError when a pool cannot
/// supply enough distinct values.
DatasetBundle generate(const CorpusParams& params);

/// Number of whole authors forgotten by fraction `f`.
int authors_for_fraction(int n_authors, double f);

/// Author-granular split: the last round(f * n_authors) authors are forgotten,
/// so smaller forget sets nest inside larger ones.
void split(DatasetBundle& bundle, double fraction);

/// Author indices forgotten by each of `n_subtasks` consecutive slices of
/// `fraction` each, walking backwards from the last author.
std::vector<std::vector<int>> continual_partition(int n_authors, double fraction,
                                                  int n_subtasks);

/// Examples of `bundle.fictitious` belonging to the given authors.
std::vector<QAExample> select_authors(const DatasetBundle& bundle,
                                      std::span<const int> author_indices);

/// Extra world-style QA (national animals and dishes) disjoint from the
/// corpus, used to top up a shrinking retain set.
std::vector<QAExample> generate_supplement(std::uint64_t seed, int n);

struct IdkTemplates {
  std::vector<std::string> items;
  static IdkTemplates standard();
};

/// Uniform draw from the templates.
const std::string& idk_sample(const IdkTemplates& templates, std::mt19937_64& rng);

/// Every text the model may need to tokenize: corpus, templates, supplement.
std::vector<std::string> all_texts(const DatasetBundle& bundle,
                                   const IdkTemplates& templates,
                                   std::span<const QAExample> supplement);

std::string to_jsonl(std::span<const QAExample> examples);
std::vector<QAExample> from_jsonl(const std::string& text);

}  // namespace ulab
