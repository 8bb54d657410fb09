// SPDX-License-Identifier: Apache-2.0
#include "ulab/xclients.hpp"

#include <httplib.h>

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "ulab/errors.hpp"

namespace ulab {
namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("backend url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.origin = url.substr(0, slash);
  if (slash != std::string::npos) e.prefix = url.substr(slash);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

constexpr const char* kJudgeTemplate =
    "You will be given a question, a reference answer and a generated answer. Your task is to "
    "provide a judgment on whether the generated answer is considered a \"hallucination\".\n"
    "\n"
    "Here are the criteria for \"hallucination\":\n"
    "- The generated answer MUST give a direct response to the question.\n"
    "- The generated answer MUST be inconsistent with the facts in the reference answer.\n"
    "NOTE: If the generated answer apologizes for lack of relevant knowledge or admits not "
    "knowing the correct answer, it is NOT considered a \"hallucination\".\n"
    "\n"
    "Here are the question, reference answer, and generated answer:\n"
    "Question: {QUESTION}\n"
    "Reference Answer: {GROUND TRUTH}\n"
    "Generated Answer: {OUTPUT}\n"
    "\n"
    "Provide your judgment, if the generated answer is considered a \"hallucination\", return "
    "\"YES\". Otherwise, simply return \"NO\".";

void replace_slot(std::string& s, const std::string& slot, const std::string& value) {
  const auto pos = s.find(slot);
  s.replace(pos, slot.size(), value);
}

}  // namespace

BackendConfig BackendConfig::with_env_token(std::string url, double timeout, int retries) {
  BackendConfig c;
  c.url = std::move(url);
  c.timeout = timeout;
  c.retries = retries;
  if (const char* t = std::getenv("AUTH_TOKEN")) c.auth_token = t;
  return c;
}

void BackendConfig::validate() const {
  if (url.empty()) throw ConfigError("backend url is empty");
  if (!(timeout > 0)) throw ConfigError("backend timeout must be > 0");
  if (retries < 0) throw ConfigError("backend retries must be >= 0");
}

nlohmann::json post_json(const BackendConfig& cfg, const std::string& path,
                         const nlohmann::json& body, Telemetry* telemetry) {
  cfg.validate();
  const Endpoint ep = split_url(cfg.url);
  httplib::Client cli(ep.origin);
  const auto secs = static_cast<time_t>(cfg.timeout);
  const auto usecs = static_cast<time_t>((cfg.timeout - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg.auth_token);
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    if (attempt > 0) {
      if (telemetry) ++telemetry->retries;
      std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt - 1, 5)));
    }
    if (telemetry) ++telemetry->requests;
    const auto res = cli.Post(ep.prefix + path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error&) {
        throw ProtocolError(path + ": response is not JSON");
      }
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable(res->status)) break;
  }
  throw BackendError(path + ": " + last_error);
}

std::vector<Eigen::VectorXd> embed_remote(const BackendConfig& cfg,
                                          std::span<const std::string> texts,
                                          Telemetry* telemetry) {
  if (texts.empty()) throw InputError("no texts to embed");
  const nlohmann::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  const auto j = post_json(cfg, "/embed", body, telemetry);
  if (!j.is_object() || !j.contains("vectors") || !j["vectors"].is_array()) {
    throw ProtocolError("/embed: missing \"vectors\" array");
  }
  const auto& vs = j["vectors"];
  if (vs.size() != texts.size()) throw ProtocolError("/embed: expected one vector per text");
  std::vector<Eigen::VectorXd> out;
  for (const auto& v : vs) {
    if (!v.is_array() || v.empty()) throw ProtocolError("/embed: vector must be a non-empty array");
    if (!out.empty() && static_cast<Eigen::Index>(v.size()) != out.front().size()) {
      throw ProtocolError("/embed: vectors differ in dimension");
    }
    Eigen::VectorXd e(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ProtocolError("/embed: non-numeric component");
      e[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    const double n = e.norm();
    if (!(n > 0) || !std::isfinite(n)) throw ProtocolError("/embed: zero or non-finite vector");
    out.push_back(e / n);
  }
  return out;
}

NliLabel nli_remote(const BackendConfig& cfg, const std::string& premise,
                    const std::string& hypothesis, Telemetry* telemetry) {
  const auto j =
      post_json(cfg, "/nli", {{"premise", premise}, {"hypothesis", hypothesis}}, telemetry);
  if (!j.is_object() || !j.contains("label") || !j["label"].is_string()) {
    throw ProtocolError("/nli: missing \"label\" string");
  }
  try {
    return parse_nli_label(j["label"].get<std::string>());
  } catch (const InputError& e) {
    throw ProtocolError(std::string("/nli: ") + e.what());
  }
}

std::string to_string(Judgment j) { return j == Judgment::kYes ? "yes" : "no"; }

std::string render_judge_prompt(const std::string& question, const std::string& reference,
                                const std::string& generated) {
  std::string s = kJudgeTemplate;
  // Fill the slots back to front so substituted text is never rescanned.
  replace_slot(s, "{OUTPUT}", generated);
  replace_slot(s, "{GROUND TRUTH}", reference);
  replace_slot(s, "{QUESTION}", question);
  return s;
}

Judgment parse_judgment(const std::string& reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    if (!std::isalpha(static_cast<unsigned char>(reply[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string word;
    while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j]))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(reply[j])));
      ++j;
    }
    if (word == "yes") return Judgment::kYes;
    if (word == "no") return Judgment::kNo;
    i = j;
  }
  throw JudgeParseError("judge reply has neither YES nor NO: " + reply);
}

Judgment judge_hallucination(const BackendConfig& cfg, const std::string& question,
                             const std::string& reference, const std::string& generated,
                             Telemetry* telemetry) {
  if (question.empty() || reference.empty() || generated.empty()) {
    throw InputError("judge needs a question, a reference and a generated answer");
  }
  const auto j = post_json(cfg, "/chat",
                           {{"prompt", render_judge_prompt(question, reference, generated)}},
                           telemetry);
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw ProtocolError("/chat: missing \"text\" string");
  }
  return parse_judgment(j["text"].get<std::string>());
}

Eigen::VectorXd RemoteEmbedder::embed(const std::string& text) const {
  return embed_remote(cfg_, std::span<const std::string>(&text, 1), &telemetry_).front();
}

std::vector<Eigen::VectorXd> RemoteEmbedder::embed_all(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  return embed_remote(cfg_, texts, &telemetry_);
}

NliLabel RemoteNli::classify(const std::string& premise, const std::string& hypothesis) const {
  return nli_remote(cfg_, premise, hypothesis, &telemetry_);
}

}  // namespace ulab
