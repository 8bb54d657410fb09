// SPDX-License-Identifier: Apache-2.0
#include "ulab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "ulab/errors.hpp"
#include "ulab/vocab.hpp"

namespace ulab {
namespace {

using Rng = std::mt19937_64;

std::size_t draw(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

const std::string& pick(Rng& rng, const std::vector<std::string>& pool) {
  return pool[draw(rng, pool.size())];
}

/// `n` distinct indices into [0, total), in draw order.
std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t total, std::size_t n,
                                         const char* what) {
  if (n > total) {
    throw GenerationError(std::string("pool exhausted: need ") + std::to_string(n) +
                          " distinct " + what + ", pool has " + std::to_string(total));
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(idx[i], idx[i + draw(rng, total - i)]);
  }
  idx.resize(n);
  return idx;
}

/// Composite slot value drawn from the product of single-token pools.
std::string compose(const std::vector<const std::vector<std::string>*>& parts,
                    std::size_t code) {
  std::vector<std::string> words(parts.size());
  for (std::size_t i = parts.size(); i-- > 0;) {
    words[i] = (*parts[i])[code % parts[i]->size()];
    code /= parts[i]->size();
  }
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::size_t product_size(const std::vector<const std::vector<std::string>*>& parts) {
  std::size_t n = 1;
  for (const auto* p : parts) n *= p->size();
  return n;
}

/// Three distinct alternatives to `truth` from a composite pool.
std::vector<std::string> alternatives(Rng& rng,
                                      const std::vector<const std::vector<std::string>*>& parts,
                                      const std::string& truth, int count = 3) {
  const std::size_t total = product_size(parts);
  if (total < static_cast<std::size_t>(count) + 1) {
    throw GenerationError("pool too small to perturb " + truth);
  }
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < count) {
    std::string cand = compose(parts, draw(rng, total));
    if (cand != truth && std::find(out.begin(), out.end(), cand) == out.end()) {
      out.push_back(std::move(cand));
    }
  }
  return out;
}

std::string fill(std::string tmpl, const std::string& key, const std::string& value) {
  const std::string pat = "{" + key + "}";
  for (std::size_t pos; (pos = tmpl.find(pat)) != std::string::npos;) {
    tmpl.replace(pos, pat.size(), value);
  }
  return tmpl;
}

struct FactTemplate {
  const char* slot;
  const char* question;
  const char* answer;
  const char* paraphrase;
};

// {name} and {v} are substituted; {v} is the attribute slot. Paraphrases are
// concise answers, and perturbed answers reuse the paraphrase wording.
constexpr FactTemplate kAuthorFacts[] = {
    {"name", "who is the author born in {place} in {date} ?",
     "the author born in {place} in {date} is {v}",
     "{v}"},
    {"birthplace", "where was {name} born ?", "{name} was born in {v}",
     "in {v}"},
    {"birthdate", "when was {name} born ?", "{name} was born in {v}",
     "in {v}"},
    {"genre", "what genre does {name} write ?", "{name} writes {v} novels",
     "mostly {v}"},
    {"father", "what does the father of {name} do ?",
     "the father of {name} works as a {v}", "a {v}"},
    {"mother", "what does the mother of {name} do ?",
     "the mother of {name} works as a {v}", "a {v}"},
    {"book1", "what is the first book by {name} ?", "the first book by {name} is {v}",
     "{v}"},
    {"book2", "what is the second book by {name} ?", "the second book by {name} is {v}",
     "{v}"},
    {"award", "which award did {name} win ?", "{name} won the {v} award",
     "the {v}"},
    {"language", "which language does {name} write in ?", "{name} writes in {v}",
     "in {v}"},
};

constexpr FactTemplate kWorldFacts[] = {
    {"capital", "what is the capital of {name} ?", "the capital of {name} is {v}",
     "{v}"},
    {"currency", "what currency is used in {name} ?", "{name} uses the {v} as currency",
     "the {v}"},
    {"continent", "on which continent is {name} located ?", "{name} is located on {v}",
     "on {v}"},
    {"river", "which river flows through {name} ?", "the {v} river flows through {name}",
     "the {v}"},
    {"language", "what language do people speak in {name} ?", "people in {name} speak {v}",
     "{v}"},
};

constexpr FactTemplate kSupplementFacts[] = {
    {"animal", "what is the national animal of {name} ?",
     "the national animal of {name} is the {v}", "the {v}"},
    {"dish", "what is the national dish of {name} ?", "the national dish of {name} is {v}",
     "{v}"},
};

QAExample make_fact(const FactTemplate& f, const std::map<std::string, std::string>& ctx,
                    const std::string& value, std::vector<std::string> wrong) {
  const auto render = [&](std::string s, const std::string& v) {
    for (const auto& [k, val] : ctx) s = fill(s, k, val);
    return fill(s, "v", v);
  };
  QAExample ex;
  ex.question = render(f.question, value);
  ex.answer = render(f.answer, value);
  ex.paraphrase = render(f.paraphrase, value);
  for (const auto& w : wrong) ex.perturbed.push_back(render(f.paraphrase, w));
  ex.slot = f.slot;
  ex.slot_value = value;
  return ex;
}

const std::vector<std::string>& pool(const char* category) {
  return Pools::standard().categories.at(category);
}

}  // namespace

std::string to_string(SetTag tag) {
  switch (tag) {
    case SetTag::kForget: return "forget";
    case SetTag::kRetain: return "retain";
    case SetTag::kWorld: return "world";
  }
  return "?";
}

SetTag parse_set_tag(const std::string& s) {
  if (s == "forget") return SetTag::kForget;
  if (s == "retain") return SetTag::kRetain;
  if (s == "world") return SetTag::kWorld;
  throw InputError("unknown set tag: " + s);
}

const Pools& Pools::standard() {
  static const Pools pools{{
      {"first", {"basil", "hsiao", "yevgeny", "aurelia", "tomas", "ingrid", "kofi", "mirela",
                 "dario", "soren", "lenka", "rafael", "noor", "emeka", "freya", "kenji",
                 "zofia", "idris", "maren", "luca", "anika", "bruno", "celine", "oskar"}},
      {"last", {"kuwaiti", "grimkov", "yunhwa", "vance", "okafor", "lindqvist", "moreau",
                "tanaka", "novak", "haddad", "castell", "brennan", "petrov", "ambrose", "falk",
                "mendez", "ishikawa", "quill", "ravel", "stroud", "varga", "winslow",
                "zamora", "eberle"}},
      {"city", {"lisbon", "kyoto", "nairobi", "oslo", "lima", "cairo", "dublin", "hanoi",
                "quito", "riga", "seoul", "tunis", "vienna", "zagreb", "accra", "bergen",
                "cusco", "dakar", "fez", "graz", "havana", "izmir", "jaipur", "kazan"}},
      {"month", {"january", "february", "march", "april", "may", "june", "july", "august",
                 "september", "october", "november", "december"}},
      {"year", {"1951", "1953", "1955", "1957", "1959", "1961", "1963", "1965", "1967",
                "1969", "1971", "1973", "1975", "1977", "1979", "1981", "1983", "1985",
                "1987", "1989"}},
      {"genre", {"fantasy", "mystery", "romance", "horror", "thriller", "poetry", "satire",
                 "western", "dystopian", "historical", "gothic", "comic"}},
      {"occupation", {"plumber", "surgeon", "pilot", "baker", "lawyer", "farmer", "chemist",
                      "painter", "tailor", "sailor", "teacher", "butcher", "architect",
                      "librarian", "carpenter", "nurse", "banker", "jeweler", "locksmith",
                      "florist"}},
      {"book_adj", {"silent", "crimson", "hollow", "distant", "broken", "golden", "shattered",
                    "velvet", "burning", "frozen", "hidden", "endless", "wandering",
                    "forgotten", "radiant", "bitter"}},
      {"book_noun", {"harbor", "orchard", "lantern", "meadow", "citadel", "lagoon", "mirror",
                     "garden", "tower", "voyage", "empire", "horizon", "compass", "archive",
                     "ember", "tide"}},
      {"award", {"silverquill", "goldleaf", "starling", "meridian", "halcyon", "corvid",
                 "beacon", "aster", "laurel", "obsidian"}},
      {"language", {"french", "spanish", "arabic", "korean", "polish", "swahili", "greek",
                    "hindi", "dutch", "turkish"}},
      {"country", {"zorland", "vestria", "kalmora", "brenvia", "ostrava", "quelland",
                   "dravonia", "felmark", "gorvath", "halcrest", "ixmoor", "jorvale",
                   "korsund", "lumeria", "marovia", "nerath", "orlesse", "pellion",
                   "quarnis", "rovenna", "sylvar", "taloria", "umbrith", "valdora",
                   "wexmoor", "xandria", "yrvel", "zenthia", "aldmere", "belmora",
                   "caldris", "dunhollow", "elyra", "frostmark", "glennor", "harrow",
                   "isvania", "kethra", "lorvane", "mistral"}},
      {"capital", {"velmar", "ostrin", "kaldo", "brisk", "tarnhold", "quorra", "dreth",
                   "felspire", "gorvin", "halden", "ixton", "jorburg", "korrin", "lumen",
                   "marsk", "nerin", "orlan", "pelgrad", "quarn", "rovik", "sylcrest",
                   "talport", "umbra", "valport", "wexford", "xanport", "yrgard", "zenit",
                   "aldport", "belcrest", "caldra", "dunmere", "elyton", "frosthaven",
                   "glenport", "harrowgate", "isvik", "kethport", "lorvik", "mistport"}},
      {"currency", {"crown", "florin", "ducat", "mark", "thaler", "guilder", "shilling",
                    "dinar", "peso", "rand"}},
      {"continent", {"arcadia", "borealis", "cyrene", "dorado", "estrella", "fjordia"}},
      {"river", {"aven", "brisa", "corran", "delve", "esker", "fennick", "gallow", "hythe",
                 "irren", "jessop", "kell", "lydd", "morrow", "nessa", "oaken", "perrin",
                 "quellon", "rillan", "saddle", "tarn"}},
      {"animal", {"lynx", "heron", "bison", "otter", "falcon", "ibex", "marten", "stag",
                  "badger", "crane", "wolf", "moose", "puffin", "gecko", "tapir", "yak"}},
      {"dish", {"goulash", "paella", "risotto", "dumplings", "stew", "flatbread", "chowder",
                "porridge", "pilaf", "fritters", "ramen", "tagine", "pierogi", "curry",
                "borscht", "empanadas"}},
  }};
  return pools;
}

std::string Pools::category_of(const std::string& token) const {
  for (const auto& [cat, values] : categories) {
    if (std::find(values.begin(), values.end(), token) != values.end()) return cat;
  }
  return {};
}

DatasetBundle generate(const CorpusParams& p) {
  if (p.n_authors < 10) throw InputError("n_authors must be >= 10");
  if (p.n_qa_per_author < 4) throw InputError("n_qa_per_author must be >= 4");
  if (p.n_qa_per_author > static_cast<int>(std::size(kAuthorFacts))) {
    throw GenerationError("at most " + std::to_string(std::size(kAuthorFacts)) +
                          " QA templates per author");
  }
  if (p.n_world < 0) throw InputError("n_world must be >= 0");
  Rng rng(p.seed);

  const auto& first = pool("first");
  const auto& last = pool("last");
  const auto& city = pool("city");
  const auto& month = pool("month");
  const auto& year = pool("year");
  const auto& adj = pool("book_adj");
  const auto& noun = pool("book_noun");
  const std::vector<const std::vector<std::string>*> name_parts = {&first, &last};
  const std::vector<const std::vector<std::string>*> date_parts = {&month, &year};
  const std::vector<const std::vector<std::string>*> place_parts = {&city};
  const std::vector<const std::vector<std::string>*> book_parts = {&adj, &noun};

  const auto n = static_cast<std::size_t>(p.n_authors);
  const auto names = sample_distinct(rng, product_size(name_parts), n, "author names");
  const auto keys = sample_distinct(
      rng, city.size() * product_size(date_parts), n, "birthplace/birthdate keys");

  DatasetBundle b;
  b.n_qa_per_author = p.n_qa_per_author;
  for (std::size_t i = 0; i < n; ++i) {
    AuthorProfile a;
    const std::string name = compose(name_parts, names[i]);
    a.first = name.substr(0, name.find(' '));
    a.last = name.substr(name.find(' ') + 1);
    a.birthplace = city[keys[i] / product_size(date_parts)];
    const std::string date = compose(date_parts, keys[i] % product_size(date_parts));
    a.birth_month = date.substr(0, date.find(' '));
    a.birth_year = date.substr(date.find(' ') + 1);
    a.genre = pick(rng, pool("genre"));
    a.father_job = pick(rng, pool("occupation"));
    a.mother_job = pick(rng, pool("occupation"));
    const auto books = sample_distinct(rng, product_size(book_parts), 2, "book titles");
    a.book1 = compose(book_parts, books[0]);
    a.book2 = compose(book_parts, books[1]);
    a.award = pick(rng, pool("award"));
    a.language = pick(rng, pool("language"));
    b.authors.push_back(a);
  }

  const std::vector<const std::vector<std::string>*> occ = {&pool("occupation")};
  for (std::size_t i = 0; i < n; ++i) {
    const AuthorProfile& a = b.authors[i];
    const std::map<std::string, std::string> ctx = {
        {"name", a.name()},
        {"place", a.birthplace},
        {"date", a.birth_month + " " + a.birth_year}};
    for (int q = 0; q < p.n_qa_per_author; ++q) {
      const FactTemplate& f = kAuthorFacts[q];
      const std::string slot = f.slot;
      std::string value;
      std::vector<const std::vector<std::string>*> parts;
      if (slot == "name") { value = a.name(); parts = name_parts; }
      else if (slot == "birthplace") { value = a.birthplace; parts = place_parts; }
      else if (slot == "birthdate") { value = a.birth_month + " " + a.birth_year; parts = date_parts; }
      else if (slot == "genre") { value = a.genre; parts = {&pool("genre")}; }
      else if (slot == "father") { value = a.father_job; parts = occ; }
      else if (slot == "mother") { value = a.mother_job; parts = occ; }
      else if (slot == "book1") { value = a.book1; parts = book_parts; }
      else if (slot == "book2") { value = a.book2; parts = book_parts; }
      else if (slot == "award") { value = a.award; parts = {&pool("award")}; }
      else { value = a.language; parts = {&pool("language")}; }
      QAExample ex = make_fact(f, ctx, value, alternatives(rng, parts, value));
      ex.author = a.name();
      ex.author_index = static_cast<int>(i);
      ex.tag = SetTag::kRetain;
      b.fictitious.push_back(std::move(ex));
    }
  }

  // World facts: one profile per invented country, relations in country-major order.
  const auto& countries = pool("country");
  const std::size_t relations = std::size(kWorldFacts);
  if (static_cast<std::size_t>(p.n_world) > countries.size() * relations) {
    throw GenerationError("n_world exceeds " + std::to_string(countries.size() * relations));
  }
  const auto capital_order =
      sample_distinct(rng, pool("capital").size(), countries.size(), "capitals");
  for (int w = 0; w < p.n_world; ++w) {
    const std::size_t c = static_cast<std::size_t>(w) / relations;
    const FactTemplate& f = kWorldFacts[static_cast<std::size_t>(w) % relations];
    const std::string slot = f.slot;
    const auto& values = pool(slot == "capital" ? "capital" : f.slot);
    const std::string value =
        slot == "capital" ? values[capital_order[c]] : pick(rng, values);
    QAExample ex = make_fact(f, {{"name", countries[c]}}, value,
                             alternatives(rng, {&values}, value));
    ex.tag = SetTag::kWorld;
    b.world.push_back(std::move(ex));
  }

  split(b, p.forget_fraction);
  return b;
}

int authors_for_fraction(int n_authors, double f) {
  if (!(f > 0.0) || f >= 1.0) throw InputError("forget fraction must be in (0, 1)");
  const int k = static_cast<int>(std::lround(f * n_authors));
  if (k < 1) {
    throw InputError("forget fraction " + std::to_string(f) + " selects no whole author");
  }
  if (k >= n_authors) throw InputError("forget fraction leaves no retain authors");
  return k;
}

void split(DatasetBundle& b, double fraction) {
  const int n_authors = static_cast<int>(b.authors.size());
  const int k = authors_for_fraction(n_authors, fraction);
  b.forget_fraction = fraction;
  b.forget.clear();
  b.retain.clear();
  for (QAExample ex : b.fictitious) {
    const bool forgotten = ex.author_index >= n_authors - k;
    ex.tag = forgotten ? SetTag::kForget : SetTag::kRetain;
    (forgotten ? b.forget : b.retain).push_back(std::move(ex));
  }
}

std::vector<std::vector<int>> continual_partition(int n_authors, double fraction,
                                                  int n_subtasks) {
  if (n_subtasks < 1) throw InputError("continual plan needs at least one subtask");
  const int k = authors_for_fraction(n_authors, fraction);
  if (static_cast<long>(k) * n_subtasks >= n_authors) {
    throw InputError("continual plan forgets every author; at least one must remain");
  }
  std::vector<std::vector<int>> slices;
  for (int s = 0; s < n_subtasks; ++s) {
    std::vector<int> slice;
    for (int a = n_authors - (s + 1) * k; a < n_authors - s * k; ++a) slice.push_back(a);
    slices.push_back(std::move(slice));
  }
  return slices;
}

std::vector<QAExample> select_authors(const DatasetBundle& b, std::span<const int> authors) {
  std::vector<QAExample> out;
  for (const auto& ex : b.fictitious) {
    if (std::find(authors.begin(), authors.end(), ex.author_index) != authors.end()) {
      out.push_back(ex);
    }
  }
  return out;
}

std::vector<QAExample> generate_supplement(std::uint64_t seed, int n) {
  const auto& countries = pool("country");
  const std::size_t relations = std::size(kSupplementFacts);
  if (n < 0 || static_cast<std::size_t>(n) > countries.size() * relations) {
    throw GenerationError("supplement size must be in [0, " +
                          std::to_string(countries.size() * relations) + "]");
  }
  Rng rng(seed ^ 0x5eed5a99ULL);
  std::vector<QAExample> out;
  for (int i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(i) / relations;
    const FactTemplate& f = kSupplementFacts[static_cast<std::size_t>(i) % relations];
    const auto& values = pool(f.slot);
    const std::string value = pick(rng, values);
    QAExample ex = make_fact(f, {{"name", countries[c]}}, value,
                             alternatives(rng, {&values}, value));
    ex.tag = SetTag::kWorld;
    out.push_back(std::move(ex));
  }
  return out;
}

IdkTemplates IdkTemplates::standard() {
  static const char* cores[] = {"i don't know",        "i have no idea",
                                "i am not sure",       "i cannot say",
                                "i can't recall",      "i really don't know",
                                "i have no clue",      "i am unable to answer",
                                "i lack that knowledge", "i do not have that information"};
  static const char* tails[] = {".",          ", sorry .",   ", unfortunately .", ", honestly .",
                                "about that .", "at all .",  "right now .",       ", apologies .",
                                "for certain .", ", i'm afraid ."};
  IdkTemplates t;
  for (const char* c : cores) {
    for (const char* tail : tails) t.items.push_back(std::string(c) + " " + tail);
  }
  return t;
}

const std::string& idk_sample(const IdkTemplates& templates, std::mt19937_64& rng) {
  if (templates.items.empty()) throw InputError("no IDK templates");
  return templates.items[draw(rng, templates.items.size())];
}

std::vector<std::string> all_texts(const DatasetBundle& b, const IdkTemplates& templates,
                                   std::span<const QAExample> supplement) {
  std::vector<std::string> texts;
  const auto add = [&](const QAExample& ex) {
    texts.push_back(ex.question);
    texts.push_back(ex.answer);
    texts.push_back(ex.paraphrase);
    texts.insert(texts.end(), ex.perturbed.begin(), ex.perturbed.end());
  };
  for (const auto& ex : b.fictitious) add(ex);
  for (const auto& ex : b.world) add(ex);
  for (const auto& ex : supplement) add(ex);
  texts.insert(texts.end(), templates.items.begin(), templates.items.end());
  return texts;
}

std::string to_jsonl(std::span<const QAExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["question"] = ex.question;
    j["answer"] = ex.answer;
    j["paraphrase"] = ex.paraphrase;
    j["perturbed"] = ex.perturbed;
    j["tag"] = to_string(ex.tag);
    j["author"] = ex.author;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<QAExample> from_jsonl(const std::string& text) {
  static const std::vector<std::string> kFields = {"question", "answer", "paraphrase",
                                                   "perturbed", "tag", "author"};
  std::vector<QAExample> out;
  std::map<std::string, int> author_ids;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || j.size() != kFields.size()) {
      throw InputError("corpus line " + std::to_string(lineno) + ": expected fields " +
                       "question, answer, paraphrase, perturbed, tag, author");
    }
    for (const auto& f : kFields) {
      if (!j.contains(f)) throw InputError("corpus line " + std::to_string(lineno) + ": missing " + f);
    }
    QAExample ex;
    ex.question = j.at("question").get<std::string>();
    ex.answer = j.at("answer").get<std::string>();
    ex.paraphrase = j.at("paraphrase").get<std::string>();
    ex.perturbed = j.at("perturbed").get<std::vector<std::string>>();
    ex.tag = parse_set_tag(j.at("tag").get<std::string>());
    ex.author = j.at("author").get<std::string>();
    if (!ex.author.empty()) {
      auto [it, fresh] = author_ids.emplace(ex.author, static_cast<int>(author_ids.size()));
      ex.author_index = it->second;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ulab
