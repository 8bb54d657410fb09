// SPDX-License-Identifier: Apache-2.0
#include "ulab/config.hpp"

#include <charconv>
#include <json.hpp>
#include <sstream>
#include <toml.hpp>
#include <variant>
#include <vector>

#include "ulab/checkpoint.hpp"
#include "ulab/errors.hpp"
#include "ulab/losses.hpp"

namespace ulab {
namespace {

using Field = std::variant<int*, double*, bool*, std::string*, std::uint64_t*>;
using Fields = std::vector<std::pair<std::string, Field>>;
using Sections = std::vector<std::pair<std::string, Fields>>;

Fields train_fields(TrainSection& t) {
  return {{"epochs", &t.epochs}, {"batch_size", &t.batch_size}, {"lr", &t.lr},
          {"weight_decay", &t.weight_decay}};
}

/// Every config key in serialization order. The "" section holds top-level keys.
Sections layout(ExperimentConfig& c) {
  return {
      {"", {{"seed", &c.seed}, {"out", &c.out}}},
      {"corpus",
       {{"n_authors", &c.corpus.n_authors},
        {"n_qa_per_author", &c.corpus.n_qa_per_author},
        {"n_world", &c.corpus.n_world},
        {"forget_fraction", &c.corpus.forget_fraction},
        {"supplement_size", &c.corpus.supplement_size}}},
      {"model",
       {{"d_model", &c.model.d_model},
        {"n_layers", &c.model.n_layers},
        {"n_heads", &c.model.n_heads},
        {"d_ff", &c.model.d_ff},
        {"context", &c.model.context},
        {"tied_output", &c.model.tied_output},
        {"init_std", &c.model.init_std}}},
      {"pretrain", train_fields(c.pretrain)},
      {"finetune", train_fields(c.finetune)},
      {"unlearn",
       {{"method", &c.unlearn.method},
        {"alpha", &c.unlearn.alpha},
        {"beta", &c.unlearn.beta},
        {"epochs", &c.unlearn.epochs},
        {"batch_size", &c.unlearn.batch_size},
        {"lr", &c.unlearn.lr},
        {"weight_decay", &c.unlearn.weight_decay},
        {"question_masking", &c.unlearn.question_masking},
        {"reference", &c.unlearn.reference}}},
      {"continual",
       {{"subtasks", &c.continual.subtasks},
        {"fraction", &c.continual.fraction},
        {"alpha", &c.continual.alpha},
        {"supplement_floor", &c.continual.supplement_floor},
        {"reference", &c.continual.reference}}},
      {"eval",
       {{"max_new_tokens", &c.eval.max_new_tokens}, {"max_examples", &c.eval.max_examples}}},
      {"backend",
       {{"url", &c.backend.url},
        {"remote_embed", &c.backend.remote_embed},
        {"remote_nli", &c.backend.remote_nli},
        {"timeout", &c.backend.timeout},
        {"retries", &c.backend.retries}}},
  };
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string toml_string(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += ch;
    }
  }
  return out + "\"";
}

void assign(const std::string& key, Field field, const nlohmann::json& v) {
  const auto bad = [&](const char* want) {
    throw ConfigError("config key " + key + ": expected " + want);
  };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) bad("boolean");
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) bad("string");
          *p = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) bad("number");
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                         v.get<std::int64_t>() < 0)) {
            bad("nonnegative integer");
          }
          *p = v.get<std::uint64_t>();
        } else {
          if (!v.is_number_integer()) bad("integer");
          const auto i = v.get<std::int64_t>();
          if (i < INT32_MIN || i > INT32_MAX) bad("32-bit integer");
          *p = static_cast<int>(i);
        }
      },
      field);
}

ExperimentConfig from_tree(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config root must be a table");
  ExperimentConfig c;
  const Sections sections = layout(c);
  const auto find_field = [](const Fields& fields, const std::string& k) -> const Field* {
    for (const auto& [name, f] : fields) {
      if (name == k) return &f;
    }
    return nullptr;
  };
  for (const auto& [key, value] : root.items()) {
    if (const Field* f = find_field(sections.front().second, key)) {
      assign(key, *f, value);
      continue;
    }
    const Fields* sec = nullptr;
    for (const auto& [name, fields] : sections) {
      if (!name.empty() && name == key) sec = &fields;
    }
    if (!sec) throw ConfigError("unknown config key: " + key);
    if (!value.is_object()) throw ConfigError("config key " + key + ": expected a table");
    for (const auto& [k, v] : value.items()) {
      const Field* f = find_field(*sec, k);
      if (!f) throw ConfigError("unknown config key: " + key + "." + k);
      assign(key + "." + k, *f, v);
    }
  }
  c.validate();
  return c;
}

nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(corpus.n_authors >= 10, "corpus.n_authors must be >= 10");
  require(corpus.n_qa_per_author >= 4 && corpus.n_qa_per_author <= 10,
          "corpus.n_qa_per_author must be in [4, 10]");
  require(corpus.n_world >= 0 && corpus.n_world <= 200, "corpus.n_world must be in [0, 200]");
  require(corpus.forget_fraction > 0 && corpus.forget_fraction < 1,
          "corpus.forget_fraction must be in (0, 1)");
  require(corpus.supplement_size >= 0 && corpus.supplement_size <= 80,
          "corpus.supplement_size must be in [0, 80]");
  require(model.d_model > 0 && model.n_layers > 0 && model.n_heads > 0 && model.d_ff > 0,
          "model dimensions must be positive");
  require(model.d_model % model.n_heads == 0, "model.d_model must be divisible by model.n_heads");
  require(model.context >= 8, "model.context must be >= 8");
  require(model.init_std > 0, "model.init_std must be > 0");
  for (const auto* t : {&pretrain, &finetune}) {
    require(t->epochs >= 0 && t->batch_size >= 1 && t->lr > 0 && t->weight_decay >= 0,
            "training sections need epochs >= 0, batch_size >= 1, lr > 0, weight_decay >= 0");
  }
  try {
    method_config(unlearn.method, unlearn.alpha, unlearn.beta);
    parse_reference_policy(unlearn.reference);
    parse_reference_policy(continual.reference);
  } catch (const ConfigError&) {
    throw;
  }
  require(unlearn.epochs >= 0 && unlearn.batch_size >= 1 && unlearn.lr > 0 &&
              unlearn.weight_decay >= 0,
          "unlearn needs epochs >= 0, batch_size >= 1, lr > 0, weight_decay >= 0");
  require(unlearn.question_masking == "auto" || unlearn.question_masking == "on" ||
              unlearn.question_masking == "off",
          "unlearn.question_masking must be auto, on or off");
  require(continual.subtasks >= 1, "continual.subtasks must be >= 1");
  require(continual.fraction > 0 && continual.fraction < 1, "continual.fraction must be in (0, 1)");
  require(continual.alpha >= 0, "continual.alpha must be >= 0");
  require(continual.supplement_floor >= 0, "continual.supplement_floor must be >= 0");
  require(eval.max_new_tokens >= 1, "eval.max_new_tokens must be >= 1");
  require(eval.max_examples >= 0, "eval.max_examples must be >= 0");
  require(backend.timeout > 0, "backend.timeout must be > 0");
  require(backend.retries >= 0, "backend.retries must be >= 0");
  require(!(backend.remote_embed || backend.remote_nli) || !backend.url.empty(),
          "remote backends need backend.url");
}

std::string ExperimentConfig::to_json() const {
  auto copy = *this;
  nlohmann::ordered_json root;
  for (const auto& [section, fields] : layout(copy)) {
    nlohmann::ordered_json obj;
    for (const auto& [k, f] : fields) {
      std::visit([&](auto* p) { obj[k] = *p; }, f);
    }
    if (section.empty()) {
      for (auto& [k, v] : obj.items()) root[k] = v;
    } else {
      root[section] = obj;
    }
  }
  return root.dump(2) + "\n";
}

std::string ExperimentConfig::to_toml() const {
  auto copy = *this;
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, fields] : layout(copy)) {
    if (!section.empty()) out << (first ? "" : "\n") << "[" << section << "]\n";
    first = false;
    for (const auto& [k, f] : fields) {
      out << k << " = ";
      std::visit(
          [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, bool>) out << (*p ? "true" : "false");
            else if constexpr (std::is_same_v<T, std::string>) out << toml_string(*p);
            else if constexpr (std::is_same_v<T, double>) out << format_double(*p);
            else out << *p;
          },
          f);
      out << "\n";
    }
  }
  return out.str();
}

std::string ExperimentConfig::hash() const {
  auto j = nlohmann::ordered_json::parse(to_json());
  j.erase("out");
  return fnv1a_hex(j.dump());
}

std::string ExperimentConfig::corpus_hash() const {
  auto j = nlohmann::ordered_json::parse(to_json());
  j["corpus"].erase("forget_fraction");
  return fnv1a_hex(nlohmann::ordered_json{{"seed", j["seed"]}, {"corpus", j["corpus"]}}.dump());
}

std::string ExperimentConfig::pretrain_hash() const {
  const auto j = nlohmann::ordered_json::parse(to_json());
  return fnv1a_hex(
      nlohmann::ordered_json{
          {"corpus", corpus_hash()}, {"model", j["model"]}, {"pretrain", j["pretrain"]}}
          .dump());
}

std::string ExperimentConfig::target_hash() const {
  const auto j = nlohmann::ordered_json::parse(to_json());
  return fnv1a_hex(
      nlohmann::ordered_json{{"pretrained", pretrain_hash()}, {"finetune", j["finetune"]}}.dump());
}

ExperimentConfig parse_config(const std::string& text) {
  const auto start = text.find_first_not_of(" \t\r\n");
  if (start != std::string::npos && text[start] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    return from_tree(j);
  }
  try {
    const toml::table t = toml::parse(text);
    return from_tree(toml_to_json(t));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "invalid TOML config at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

}  // namespace ulab
