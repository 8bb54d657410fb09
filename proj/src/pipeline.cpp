// SPDX-License-Identifier: Apache-2.0
#include "ulab/pipeline.hpp"

#include "ulab/errors.hpp"
#include "ulab/xclients.hpp"

namespace ulab {

Workspace workspace_for(const ExperimentConfig& cfg) {
  CorpusParams p;
  p.seed = cfg.seed;
  p.n_authors = cfg.corpus.n_authors;
  p.n_qa_per_author = cfg.corpus.n_qa_per_author;
  p.n_world = cfg.corpus.n_world;
  p.forget_fraction = cfg.corpus.forget_fraction;
  return make_workspace(generate(p), generate_supplement(cfg.seed, cfg.corpus.supplement_size));
}

TransformerConfig transformer_config(const ExperimentConfig& cfg, int vocab_size) {
  TransformerConfig t;
  t.vocab_size = vocab_size;
  t.d_model = cfg.model.d_model;
  t.n_layers = cfg.model.n_layers;
  t.n_heads = cfg.model.n_heads;
  t.d_ff = cfg.model.d_ff;
  t.context = cfg.model.context;
  t.tied_output = cfg.model.tied_output;
  t.init_std = cfg.model.init_std;
  t.seed = cfg.seed;
  return t;
}

namespace {

TrainOptions train_options(const TrainSection& s, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = s.epochs;
  o.batch_size = s.batch_size;
  o.lr = s.lr;
  o.adam.weight_decay = s.weight_decay;
  o.seed = seed;
  return o;
}

}  // namespace

Model pretrain_model(const ExperimentConfig& cfg, const Workspace& ws) {
  Model m(transformer_config(cfg, ws.vocab.size()));
  if (cfg.pretrain.epochs > 0) train_lm(m, pretrain_data(ws), train_options(cfg.pretrain, cfg.seed));
  return m;
}

Model finetune_model(const ExperimentConfig& cfg, const Workspace& ws, Model pretrained) {
  if (cfg.finetune.epochs > 0) {
    train_lm(pretrained, finetune_data(ws), train_options(cfg.finetune, cfg.seed));
  }
  return pretrained;
}

LossConfig unlearn_loss(const ExperimentConfig& cfg) {
  LossConfig l = method_config(cfg.unlearn.method, cfg.unlearn.alpha, cfg.unlearn.beta);
  if (cfg.unlearn.question_masking == "on") l.question_masking = true;
  if (cfg.unlearn.question_masking == "off") l.question_masking = false;
  l.reference = parse_reference_policy(cfg.unlearn.reference);
  l.validate();
  return l;
}

UnlearnOptions unlearn_options(const ExperimentConfig& cfg) {
  UnlearnOptions o;
  o.loss = unlearn_loss(cfg);
  o.epochs = cfg.unlearn.epochs;
  o.batch_size = cfg.unlearn.batch_size;
  o.lr = cfg.unlearn.lr;
  o.adam.weight_decay = cfg.unlearn.weight_decay;
  o.seed = cfg.seed;
  return o;
}

UnlearnOptions continual_options(const ExperimentConfig& cfg) {
  UnlearnOptions o = unlearn_options(cfg);
  o.loss.alpha = cfg.continual.alpha;
  o.loss.reference = parse_reference_policy(cfg.continual.reference);
  return o;
}

ContinualPlan continual_plan(const ExperimentConfig& cfg) {
  ContinualPlan p;
  p.n_subtasks = cfg.continual.subtasks;
  p.fraction = cfg.continual.fraction;
  p.supplement_floor = cfg.continual.supplement_floor;
  p.reference = parse_reference_policy(cfg.continual.reference);
  return p;
}

Backends make_backends(const ExperimentConfig& cfg) {
  Backends b;
  const auto remote = [&] {
    return BackendConfig::with_env_token(cfg.backend.url, cfg.backend.timeout, cfg.backend.retries);
  };
  if (cfg.backend.remote_embed) {
    b.embedder = std::make_unique<RemoteEmbedder>(remote());
  } else {
    b.embedder = std::make_unique<LexicalEmbedder>();
  }
  if (cfg.backend.remote_nli) {
    b.nli = std::make_unique<RemoteNli>(remote());
  } else {
    b.nli = std::make_unique<LexicalNli>();
  }
  return b;
}

EvalOptions eval_options(const ExperimentConfig& cfg) {
  EvalOptions o;
  o.max_new_tokens = cfg.eval.max_new_tokens;
  o.max_examples = cfg.eval.max_examples;
  return o;
}

std::map<std::string, std::string> target_outputs(const ExperimentConfig& cfg,
                                                  const Workspace& ws, const Model& target) {
  std::vector<QAExample> all = ws.bundle.fictitious;
  all.insert(all.end(), ws.bundle.world.begin(), ws.bundle.world.end());
  return generation_cache(target, ws.vocab, all, eval_options(cfg));
}

Checkpoint state_checkpoint(const UnlearnState& state, const Model& model, const Vocab& vocab,
                            const std::string& config_hash) {
  Checkpoint c = model_checkpoint(model, vocab, config_hash);
  c.kind = "state";
  c.blobs.front().second = state.params;
  c.blobs.emplace_back("adam_m", state.adam_m);
  c.blobs.emplace_back("adam_v", state.adam_v);
  c.meta["adam_t"] = state.adam_t;
  c.meta["rng"] = state.rng;
  c.meta["epochs_done"] = state.epochs_done;
  return c;
}

UnlearnState unlearn_state(const Checkpoint& ckpt) {
  if (ckpt.kind != "state") throw InputError("not a state checkpoint");
  UnlearnState s;
  s.params = ckpt.blob("params");
  s.adam_m = ckpt.blob("adam_m");
  s.adam_v = ckpt.blob("adam_v");
  s.adam_t = ckpt.meta.at("adam_t").get<long>();
  s.rng = ckpt.meta.at("rng").get<std::string>();
  s.epochs_done = ckpt.meta.at("epochs_done").get<int>();
  return s;
}

double mean_rouge(std::span<const QAExample> examples,
                  const std::map<std::string, std::string>& outputs) {
  if (examples.empty()) throw InputError("no examples");
  double s = 0;
  for (const auto& ex : examples) {
    const auto it = outputs.find(ex.question);
    if (it == outputs.end()) throw InputError("no generation for: " + ex.question);
    s += rouge_l_recall(it->second, ex.answer);
  }
  return s / static_cast<double>(examples.size());
}

}  // namespace ulab
