// SPDX-License-Identifier: Apache-2.0
#include "ulab/losses.hpp"

#include <algorithm>

namespace ulab {

std::string to_string(ForgetLoss l) {
  switch (l) {
    case ForgetLoss::kGA: return "GA";
    case ForgetLoss::kNPO: return "NPO";
    case ForgetLoss::kDPO: return "DPO";
    case ForgetLoss::kIDK: return "IDK";
    case ForgetLoss::kME: return "ME";
  }
  return "?";
}

std::string to_string(RegLoss l) {
  switch (l) {
    case RegLoss::kNone: return "none";
    case RegLoss::kGD: return "GD";
    case RegLoss::kKL: return "KL";
    case RegLoss::kAP: return "AP";
  }
  return "?";
}

std::string to_string(ReferencePolicy p) {
  switch (p) {
    case ReferencePolicy::kInitial: return "initial";
    case ReferencePolicy::kPreviousSubtask: return "previous-subtask";
    case ReferencePolicy::kFixedInitial: return "fixed-initial";
  }
  return "?";
}

ForgetLoss parse_forget_loss(const std::string& s) {
  for (auto l : {ForgetLoss::kGA, ForgetLoss::kNPO, ForgetLoss::kDPO, ForgetLoss::kIDK,
                 ForgetLoss::kME}) {
    if (to_string(l) == s) return l;
  }
  throw ConfigError("unknown forget loss: " + s);
}

RegLoss parse_reg_loss(const std::string& s) {
  for (auto l : {RegLoss::kNone, RegLoss::kGD, RegLoss::kKL, RegLoss::kAP}) {
    if (to_string(l) == s) return l;
  }
  throw ConfigError("unknown regularization loss: " + s);
}

ReferencePolicy parse_reference_policy(const std::string& s) {
  if (s == "previous") return ReferencePolicy::kPreviousSubtask;
  for (auto p : {ReferencePolicy::kInitial, ReferencePolicy::kPreviousSubtask,
                 ReferencePolicy::kFixedInitial}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown reference policy: " + s);
}

std::string LossConfig::method() const {
  if (reg == RegLoss::kNone) return to_string(forget);
  return to_string(forget) + "+" + to_string(reg);
}

void LossConfig::validate() const {
  if (!(beta > 0) || !std::isfinite(beta)) throw ConfigError("beta must be > 0");
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"GA+GD",  "GA+KL",  "NPO+GD", "NPO+KL",
                                                 "DPO+GD", "DPO+KL", "IDK+GD", "ME+GD",
                                                 "ME+KL",  "IDK+AP", "DPO+AP"};
  return names;
}

LossConfig method_config(const std::string& name, double alpha, double beta) {
  LossConfig cfg;
  const auto plus = name.find('+');
  cfg.forget = parse_forget_loss(name.substr(0, plus));
  cfg.reg = plus == std::string::npos ? RegLoss::kNone : parse_reg_loss(name.substr(plus + 1));
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.question_masking = cfg.forget != ForgetLoss::kME;
  cfg.validate();
  return cfg;
}

TemplateDraws draw_templates(const LossConfig& cfg, std::span<const std::vector<TokenId>> templates,
                             std::size_t n_forget, std::size_t n_retain, std::mt19937_64& rng) {
  TemplateDraws d;
  if (!cfg.needs_templates()) return d;
  if (templates.empty()) throw ConfigError(cfg.method() + " needs rejection templates");
  std::uniform_int_distribution<std::size_t> pick(0, templates.size() - 1);
  if (cfg.forget == ForgetLoss::kIDK || cfg.forget == ForgetLoss::kDPO) {
    for (std::size_t i = 0; i < n_forget; ++i) d.forget.push_back(templates[pick(rng)]);
  }
  if (cfg.reg == RegLoss::kAP) {
    for (std::size_t i = 0; i < n_retain; ++i) d.retain.push_back(templates[pick(rng)]);
  }
  return d;
}

}  // namespace ulab
