// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>

#include "ulab/checkpoint.hpp"
#include "ulab/config.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

/// Corpus, supplement pool and vocabulary for a config.
Workspace workspace_for(const ExperimentConfig& cfg);

TransformerConfig transformer_config(const ExperimentConfig& cfg, int vocab_size);

/// Fresh model trained on world facts and rejection templates.
Model pretrain_model(const ExperimentConfig& cfg, const Workspace& ws);
/// Continues `pretrained` on the fictitious set (plus world facts and
/// templates) to give the target model.
Model finetune_model(const ExperimentConfig& cfg, const Workspace& ws, Model pretrained);

/// Loss config for the single-task section (method, α, β, masking, reference).
LossConfig unlearn_loss(const ExperimentConfig& cfg);
UnlearnOptions unlearn_options(const ExperimentConfig& cfg);
/// As unlearn_options, with the continual α and reference policy.
UnlearnOptions continual_options(const ExperimentConfig& cfg);
ContinualPlan continual_plan(const ExperimentConfig& cfg);

/// Metric backends owned together: lexical by default, remote when enabled.
struct Backends {
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<NliJudge> nli;
  EvalBackends view() const { return {embedder.get(), nli.get()}; }
};
Backends make_backends(const ExperimentConfig& cfg);

EvalOptions eval_options(const ExperimentConfig& cfg);

/// Target generations on every fictitious and world question.
std::map<std::string, std::string> target_outputs(const ExperimentConfig& cfg,
                                                  const Workspace& ws, const Model& target);

/// Resumable optimizer state as a checkpoint of kind "state".
Checkpoint state_checkpoint(const UnlearnState& state, const Model& model, const Vocab& vocab,
                            const std::string& config_hash);
UnlearnState unlearn_state(const Checkpoint& ckpt);

/// Mean ROUGE-L recall of `outputs` on `examples`.
double mean_rouge(std::span<const QAExample> examples,
                  const std::map<std::string, std::string>& outputs);

}  // namespace ulab
