// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/losses.hpp"
#include "ulab/metrics.hpp"
#include "ulab/optim.hpp"
#include "ulab/transformer.hpp"
#include "ulab/vocab.hpp"

namespace ulab {

using Model = Transformer<double>;

/// Corpus plus everything derived from it that training needs.
struct Workspace {
  DatasetBundle bundle;
  std::vector<QAExample> supplement;
  IdkTemplates idk;
  Vocab vocab;
  std::vector<std::vector<TokenId>> idk_ids;

  std::vector<TokenSeq> encode(std::span<const QAExample> examples) const;
  /// Each rejection template as a standalone answer with an empty question.
  std::vector<TokenSeq> template_sequences() const;
};

/// Builds the vocabulary over corpus, templates and supplement.
Workspace make_workspace(DatasetBundle bundle, std::vector<QAExample> supplement,
                         IdkTemplates idk = IdkTemplates::standard());

struct TrainOptions {
  int epochs = 1;
  int batch_size = 32;
  double lr = 3e-3;
  AdamWConfig adam;
  std::uint64_t seed = 0;
};

/// Per-step learning rates: linear warmup over the first epoch, linear decay
/// to zero afterwards. Update k (0-based) uses lr_at(k + 1), so the first
/// update moves and the last one is the smallest nonzero step.
Schedule make_schedule(double peak_lr, long steps_per_epoch, int epochs);

/// Plain NLL fine-tuning on answer tokens (used for pretraining and for
/// producing the target model). Returns the per-epoch mean loss.
std::vector<double> train_lm(Model& model, std::span<const TokenSeq> data,
                             const TrainOptions& opt);

/// Pretraining data: world facts plus the rejection templates.
std::vector<TokenSeq> pretrain_data(const Workspace& ws);
/// Fine-tuning data for the target model: fictitious and world facts plus the
/// rejection templates.
std::vector<TokenSeq> finetune_data(const Workspace& ws);

struct RunRecord {
  std::string method;
  int subtask = 0;
  int epoch = 0;
  MetricReport report;
  double wall_time = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  /// One JSON line; `with_wall_time = false` gives the byte-stable form.
  std::string to_json(bool with_wall_time = true) const;
  static RunRecord from_json(const std::string& line);
};

std::vector<RunRecord> read_records(const std::string& jsonl);

struct UnlearnOptions {
  LossConfig loss;
  int epochs = 5;
  int batch_size = 32;
  double lr = 3e-3;
  AdamWConfig adam;
  std::uint64_t seed = 0;
};

/// Optimizer and sampling state at an epoch boundary.
struct UnlearnState {
  Eigen::VectorXd params, adam_m, adam_v;
  long adam_t = 0;
  std::string rng;  // serialized std::mt19937_64
  int epochs_done = 0;
};

struct UnlearnTask {
  std::vector<TokenSeq> forget;
  std::vector<TokenSeq> retain;
};

struct RunTag {
  std::string method;
  std::string config_hash;
  int subtask = 0;
};

using EvalHook = std::function<MetricReport(const Model&)>;
/// Sees the state after an epoch and every record produced so far.
using EpochHook =
    std::function<void(const UnlearnState&, const Model&, const std::vector<RunRecord>&)>;

struct UnlearnResult {
  Model model;
  std::vector<RunRecord> records;
  std::optional<std::string> failure;  // set when the loss diverged
  long failure_step = -1;
};

/// One unlearning task from `start`, with `ref` frozen as the reference model.
/// `eval` (optional) produces a record after every epoch, or once with epoch 0
/// when `epochs` is 0. `on_epoch` sees the state after each epoch; passing a
/// saved state as `resume` continues from it bit-exactly.
UnlearnResult run_unlearning(const Model& start, const Model& ref, const UnlearnTask& task,
                             std::span<const std::vector<TokenId>> templates,
                             const UnlearnOptions& opt, const RunTag& tag,
                             const EvalHook& eval = {}, const EpochHook& on_epoch = {},
                             const UnlearnState* resume = nullptr,
                             bool eval_every_epoch = true);

struct ContinualPlan {
  int n_subtasks = 10;
  double fraction = 0.01;
  int supplement_floor = 0;  // 0 disables supplementation
  ReferencePolicy reference = ReferencePolicy::kPreviousSubtask;
};

/// Forget and retain examples of one subtask.
struct SubtaskData {
  std::vector<QAExample> forget;
  std::vector<QAExample> retain;       // remaining fictitious authors
  std::vector<QAExample> supplement;   // added to the retain batch pool
};

std::vector<SubtaskData> plan_subtasks(const Workspace& ws, const ContinualPlan& plan);

/// Evaluation for subtask data; receives the subtask index.
using SubtaskEvalHook = std::function<MetricReport(const Model&, const SubtaskData&, int)>;

struct ContinualResult {
  Model model;
  std::vector<RunRecord> records;
  std::optional<std::string> failure;
  int failure_subtask = -1;
};

/// Subtasks run in order, each continuing from the previous unlearned model
/// with a fresh optimizer. One record per subtask (after its last epoch).
ContinualResult run_continual(const Model& target, const Workspace& ws, const ContinualPlan& plan,
                              const UnlearnOptions& opt, const std::string& config_hash,
                              const SubtaskEvalHook& eval = {});

/// Generations of `model` keyed by question.
std::map<std::string, std::string> generation_cache(const Model& model, const Vocab& vocab,
                                                    std::span<const QAExample> examples,
                                                    const EvalOptions& opt = {});

EvalSuite make_suite(std::vector<QAExample> forget, std::vector<QAExample> retain,
                     std::vector<QAExample> world,
                     const std::map<std::string, std::string>& target_outputs,
                     const EvalOptions& opt = {});

}  // namespace ulab
