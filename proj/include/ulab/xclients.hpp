// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <atomic>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "ulab/metrics.hpp"

namespace ulab {

struct BackendConfig {
  std::string url;  // scheme://host[:port][/prefix]
  double timeout = 10.0;
  int retries = 2;
  std::string auth_token;  // sent as a bearer token when non-empty

  /// Fills auth_token from the AUTH_TOKEN environment variable.
  static BackendConfig with_env_token(std::string url, double timeout = 10.0, int retries = 2);
  void validate() const;
};

struct Telemetry {
  std::atomic<long> requests{0};
  std::atomic<long> retries{0};
};

/// POSTs a JSON body and returns the parsed 2xx response. Transport errors,
/// 408, 429 and 5xx are retried up to cfg.retries times; other statuses fail
/// at once. A 2xx response is never retried.
nlohmann::json post_json(const BackendConfig& cfg, const std::string& path,
                         const nlohmann::json& body, Telemetry* telemetry = nullptr);

/// POST /embed {"texts": [...]} -> {"vectors": [[...], ...]}, normalized here.
std::vector<Eigen::VectorXd> embed_remote(const BackendConfig& cfg,
                                          std::span<const std::string> texts,
                                          Telemetry* telemetry = nullptr);

/// POST /nli {"premise", "hypothesis"} -> {"label"}.
NliLabel nli_remote(const BackendConfig& cfg, const std::string& premise,
                    const std::string& hypothesis, Telemetry* telemetry = nullptr);

enum class Judgment { kYes, kNo };
std::string to_string(Judgment j);

/// The hallucination-judge prompt with the three slots filled in.
std::string render_judge_prompt(const std::string& question, const std::string& reference,
                                const std::string& generated);

/// First standalone "yes" or "no" (any case) decides; neither is an error.
Judgment parse_judgment(const std::string& reply);

/// POST /chat {"prompt"} -> {"text"}, parsed with parse_judgment.
Judgment judge_hallucination(const BackendConfig& cfg, const std::string& question,
                             const std::string& reference, const std::string& generated,
                             Telemetry* telemetry = nullptr);

class RemoteEmbedder : public Embedder {
 public:
  explicit RemoteEmbedder(BackendConfig cfg) : cfg_(std::move(cfg)) {}
  Eigen::VectorXd embed(const std::string& text) const override;
  std::vector<Eigen::VectorXd> embed_all(std::span<const std::string> texts) const override;
  const Telemetry& telemetry() const { return telemetry_; }

 private:
  BackendConfig cfg_;
  mutable Telemetry telemetry_;
};

class RemoteNli : public NliJudge {
 public:
  explicit RemoteNli(BackendConfig cfg) : cfg_(std::move(cfg)) {}
  NliLabel classify(const std::string& premise, const std::string& hypothesis) const override;
  const Telemetry& telemetry() const { return telemetry_; }

 private:
  BackendConfig cfg_;
  mutable Telemetry telemetry_;
};

}  // namespace ulab
