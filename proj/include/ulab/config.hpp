// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace ulab {

struct CorpusSection {
  int n_authors = 100;
  int n_qa_per_author = 10;
  int n_world = 200;
  double forget_fraction = 0.05;
  int supplement_size = 80;
  bool operator==(const CorpusSection&) const = default;
};

struct ModelSection {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int context = 64;
  bool tied_output = false;
  double init_std = 0.02;
  bool operator==(const ModelSection&) const = default;
};

struct TrainSection {
  int epochs = 10;
  int batch_size = 32;
  double lr = 3e-3;
  double weight_decay = 0.01;
  bool operator==(const TrainSection&) const = default;
};

struct UnlearnSection {
  std::string method = "ME+GD";
  double alpha = 0.1;
  double beta = 0.1;
  int epochs = 5;
  int batch_size = 32;
  double lr = 3e-3;
  double weight_decay = 0.01;
  std::string question_masking = "auto";  // auto | on | off
  std::string reference = "initial";
  bool operator==(const UnlearnSection&) const = default;
};

struct ContinualSection {
  int subtasks = 10;
  double fraction = 0.01;
  double alpha = 1.0;
  int supplement_floor = 0;
  std::string reference = "previous-subtask";
  bool operator==(const ContinualSection&) const = default;
};

struct EvalSection {
  int max_new_tokens = 32;
  int max_examples = 0;
  bool operator==(const EvalSection&) const = default;
};

struct BackendSection {
  std::string url;  // empty: lexical embedder and NLI
  bool remote_embed = false;
  bool remote_nli = false;
  double timeout = 10.0;
  int retries = 2;
  bool operator==(const BackendSection&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "runs";
  CorpusSection corpus;
  ModelSection model;
  TrainSection pretrain{10, 32, 3e-3, 0.01};
  TrainSection finetune{40, 32, 5e-3, 0.01};
  UnlearnSection unlearn;
  ContinualSection continual;
  EvalSection eval;
  BackendSection backend;

  /// Throws ConfigError on out-of-range values or unknown names.
  void validate() const;
  /// Canonical JSON (fixed key order); the config hash is taken over it.
  std::string to_json() const;
  std::string to_toml() const;
  /// Hash of the canonical JSON without `out`, so relocated runs keep their
  /// identity. The stage hashes cover only what each stage reads.
  std::string hash() const;
  std::string corpus_hash() const;    // seed, corpus minus the forget split
  std::string pretrain_hash() const;  // + model, pretrain
  std::string target_hash() const;    // + finetune

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses TOML, or JSON when the text starts with '{'. Unknown keys are
/// rejected; missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace ulab
