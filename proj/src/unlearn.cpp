// SPDX-License-Identifier: Apache-2.0
#include "ulab/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "ulab/errors.hpp"

namespace ulab {

std::vector<TokenSeq> Workspace::encode(std::span<const QAExample> examples) const {
  std::vector<TokenSeq> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_qa(vocab, ex.question, ex.answer));
  return out;
}

std::vector<TokenSeq> Workspace::template_sequences() const {
  std::vector<TokenSeq> out;
  for (const auto& t : idk.items) out.push_back(encode_qa(vocab, "", t));
  return out;
}

Workspace make_workspace(DatasetBundle bundle, std::vector<QAExample> supplement,
                         IdkTemplates idk) {
  Workspace ws;
  ws.bundle = std::move(bundle);
  ws.supplement = std::move(supplement);
  ws.idk = std::move(idk);
  ws.vocab = Vocab::from_texts(all_texts(ws.bundle, ws.idk, ws.supplement));
  for (const auto& t : ws.idk.items) ws.idk_ids.push_back(ws.vocab.encode(t));
  return ws;
}

Schedule make_schedule(double peak_lr, long steps_per_epoch, int epochs) {
  Schedule s;
  s.peak_lr = peak_lr;
  s.warmup_steps = steps_per_epoch;
  s.total_steps = steps_per_epoch * epochs + 1;
  return s;
}

namespace {

long ceil_div(std::size_t a, std::size_t b) { return static_cast<long>((a + b - 1) / b); }

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so results do not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::string save_rng(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::mt19937_64 load_rng(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw InputError("corrupt rng state");
  return rng;
}

}  // namespace

std::vector<double> train_lm(Model& model, std::span<const TokenSeq> data, const TrainOptions& opt) {
  if (data.empty()) throw InputError("training set is empty");
  if (opt.epochs < 0 || opt.batch_size < 1) throw InputError("bad training options");
  std::mt19937_64 rng(opt.seed);
  AdamW<Eigen::VectorXd> adam(opt.adam, model.params().size());
  const long spe = ceil_div(data.size(), static_cast<std::size_t>(opt.batch_size));
  const Schedule sched = make_schedule(opt.lr, spe, std::max(opt.epochs, 1));
  std::vector<double> losses;
  long step = 0;
  for (int e = 0; e < opt.epochs; ++e) {
    const auto perm = permutation(data.size(), rng);
    double total = 0;
    for (long s = 0; s < spe; ++s) {
      std::vector<TokenSeq> batch;
      for (std::size_t i = static_cast<std::size_t>(s) * opt.batch_size;
           i < std::min(data.size(), static_cast<std::size_t>(s + 1) * opt.batch_size); ++i) {
        batch.push_back(data[perm[i]]);
      }
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params().size());
      const double loss = gd_loss(model, std::span<const TokenSeq>(batch), Region::kAnswer, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) throw TrainingError("non-finite NLL", step);
      total += loss * static_cast<double>(batch.size());
      adam.step(model.params(), grad, sched.lr_at(step + 1));
      ++step;
    }
    losses.push_back(total / static_cast<double>(data.size()));
  }
  return losses;
}

std::vector<TokenSeq> pretrain_data(const Workspace& ws) {
  auto data = ws.encode(ws.bundle.world);
  const auto t = ws.template_sequences();
  data.insert(data.end(), t.begin(), t.end());
  return data;
}

std::vector<TokenSeq> finetune_data(const Workspace& ws) {
  auto data = ws.encode(ws.bundle.fictitious);
  const auto w = pretrain_data(ws);
  data.insert(data.end(), w.begin(), w.end());
  return data;
}

std::string RunRecord::to_json(bool with_wall_time) const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["subtask"] = subtask;
  j["epoch"] = epoch;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  if (with_wall_time) j["wall_time"] = wall_time;
  j["metrics"] = nlohmann::ordered_json::parse(report.to_json());
  return j.dump();
}

RunRecord RunRecord::from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  RunRecord r;
  r.method = j.at("method").get<std::string>();
  r.subtask = j.at("subtask").get<int>();
  r.epoch = j.at("epoch").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.wall_time = j.value("wall_time", 0.0);
  r.report = MetricReport::from_json(j.at("metrics").dump());
  r.report.MU = j.at("metrics").at("MU").get<double>();
  r.report.FE = j.at("metrics").at("FE").get<double>();
  return r;
}

std::vector<RunRecord> read_records(const std::string& jsonl) {
  std::vector<RunRecord> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(RunRecord::from_json(line));
  }
  return out;
}

UnlearnResult run_unlearning(const Model& start, const Model& ref, const UnlearnTask& task,
                             std::span<const std::vector<TokenId>> templates,
                             const UnlearnOptions& opt, const RunTag& tag, const EvalHook& eval,
                             const EpochHook& on_epoch, const UnlearnState* resume,
                             bool eval_every_epoch) {
  opt.loss.validate();
  if (task.forget.empty()) throw PlanError("forget set is empty");
  if (opt.loss.reg != RegLoss::kNone && task.retain.empty()) throw PlanError("retain set is empty");
  if (opt.epochs < 0 || opt.batch_size < 1) throw InputError("bad unlearning options");
  if (opt.loss.needs_templates() && templates.empty()) {
    throw ConfigError(opt.loss.method() + " needs rejection templates");
  }
  const auto t0 = std::chrono::steady_clock::now();
  UnlearnResult res{start, {}, std::nullopt, -1};
  const auto record = [&](int epoch) {
    RunRecord r;
    r.method = tag.method;
    r.subtask = tag.subtask;
    r.epoch = epoch;
    r.report = eval(res.model);
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.seed = opt.seed;
    r.config_hash = tag.config_hash;
    res.records.push_back(std::move(r));
  };
  if (opt.epochs == 0) {
    if (eval) record(0);
    return res;
  }

  AdamW<Eigen::VectorXd> adam(opt.adam, start.params().size());
  std::mt19937_64 rng(opt.seed);
  int first_epoch = 1;
  if (resume) {
    res.model.params() = resume->params;
    adam.restore(resume->adam_t, resume->adam_m, resume->adam_v);
    rng = load_rng(resume->rng);
    first_epoch = resume->epochs_done + 1;
  }

  const std::size_t B = static_cast<std::size_t>(opt.batch_size);
  const long spe = ceil_div(task.forget.size(), B);
  const Schedule sched = make_schedule(opt.lr, spe, opt.epochs);
  const bool use_retain = opt.loss.reg != RegLoss::kNone;

  for (int e = first_epoch; e <= opt.epochs; ++e) {
    const auto fperm = permutation(task.forget.size(), rng);
    const auto rperm = permutation(task.retain.size(), rng);
    std::size_t rpos = 0;
    for (long s = 0; s < spe; ++s) {
      const long step = static_cast<long>(e - 1) * spe + s;
      std::vector<TokenSeq> fb, rb;
      for (std::size_t i = static_cast<std::size_t>(s) * B;
           i < std::min(task.forget.size(), static_cast<std::size_t>(s + 1) * B); ++i) {
        fb.push_back(task.forget[fperm[i]]);
      }
      if (use_retain) {
        const std::size_t nr = std::min(B, task.retain.size());
        for (std::size_t i = 0; i < nr; ++i, ++rpos) {
          rb.push_back(task.retain[rperm[rpos % rperm.size()]]);
        }
      }
      const TemplateDraws draws = draw_templates(opt.loss, templates, fb.size(), rb.size(), rng);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(res.model.params().size());
      try {
        combine(opt.loss, res.model, &ref, std::span<const TokenSeq>(fb),
                std::span<const TokenSeq>(rb), draws, &grad);
      } catch (const NumericError& err) {
        res.failure = err.what();
        res.failure_step = step;
        return res;
      }
      adam.step(res.model.params(), grad, sched.lr_at(step + 1));
      if (!res.model.params().allFinite()) {
        res.failure = "non-finite parameters";
        res.failure_step = step;
        return res;
      }
    }
    if (eval && (eval_every_epoch || e == opt.epochs)) record(e);
    if (on_epoch) {
      UnlearnState st{res.model.params(), adam.first_moment(), adam.second_moment(),
                      adam.steps(),       save_rng(rng),       e};
      on_epoch(st, res.model, res.records);
    }
  }
  return res;
}

std::vector<SubtaskData> plan_subtasks(const Workspace& ws, const ContinualPlan& plan) {
  const int n_authors = static_cast<int>(ws.bundle.authors.size());
  const auto slices = continual_partition(n_authors, plan.fraction, plan.n_subtasks);
  std::set<int> forgotten;
  std::vector<SubtaskData> out;
  for (const auto& slice : slices) {
    forgotten.insert(slice.begin(), slice.end());
    SubtaskData d;
    d.forget = select_authors(ws.bundle, slice);
    for (auto& ex : d.forget) ex.tag = SetTag::kForget;
    std::vector<int> remaining;
    for (int a = 0; a < n_authors; ++a) {
      if (!forgotten.count(a)) remaining.push_back(a);
    }
    d.retain = select_authors(ws.bundle, remaining);
    for (auto& ex : d.retain) ex.tag = SetTag::kRetain;
    if (d.retain.empty()) throw PlanError("retain set is empty");
    if (plan.supplement_floor > 0 && static_cast<int>(d.retain.size()) < plan.supplement_floor) {
      const auto need = static_cast<std::size_t>(plan.supplement_floor) - d.retain.size();
      if (need > ws.supplement.size()) {
        throw PlanError("supplement pool has " + std::to_string(ws.supplement.size()) +
                        " examples, floor needs " + std::to_string(need));
      }
      d.supplement.assign(ws.supplement.begin(), ws.supplement.begin() + static_cast<long>(need));
    }
    out.push_back(std::move(d));
  }
  return out;
}

ContinualResult run_continual(const Model& target, const Workspace& ws, const ContinualPlan& plan,
                              const UnlearnOptions& opt, const std::string& config_hash,
                              const SubtaskEvalHook& eval) {
  const auto subtasks = plan_subtasks(ws, plan);
  ContinualResult res{target, {}, std::nullopt, -1};
  UnlearnOptions sub = opt;
  sub.loss.reference = plan.reference;
  for (std::size_t k = 0; k < subtasks.size(); ++k) {
    const SubtaskData& d = subtasks[k];
    UnlearnTask task;
    task.forget = ws.encode(d.forget);
    task.retain = ws.encode(d.retain);
    const auto extra = ws.encode(d.supplement);
    task.retain.insert(task.retain.end(), extra.begin(), extra.end());
    const Model& ref =
        plan.reference == ReferencePolicy::kPreviousSubtask ? res.model : target;
    const Model ref_copy = ref;
    sub.seed = opt.seed + k;
    const RunTag tag{opt.loss.method(), config_hash, static_cast<int>(k) + 1};
    EvalHook hook;
    if (eval) hook = [&](const Model& m) { return eval(m, d, static_cast<int>(k) + 1); };
    auto r = run_unlearning(res.model, ref_copy, task, ws.idk_ids, sub, tag, hook, {}, nullptr,
                            /*eval_every_epoch=*/false);
    res.model = std::move(r.model);
    res.records.insert(res.records.end(), r.records.begin(), r.records.end());
    if (r.failure) {
      res.failure = r.failure;
      res.failure_subtask = static_cast<int>(k) + 1;
      break;
    }
  }
  return res;
}

std::map<std::string, std::string> generation_cache(const Model& model, const Vocab& vocab,
                                                    std::span<const QAExample> examples,
                                                    const EvalOptions& opt) {
  const auto gens = generate_answers(model, vocab, examples, opt);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < examples.size(); ++i) out[examples[i].question] = gens[i];
  return out;
}

EvalSuite make_suite(std::vector<QAExample> forget, std::vector<QAExample> retain,
                     std::vector<QAExample> world,
                     const std::map<std::string, std::string>& target_outputs,
                     const EvalOptions& opt) {
  EvalSuite s;
  const auto fill = [&](std::vector<QAExample>& v, const char* name) {
    if (opt.max_examples > 0 && v.size() > static_cast<std::size_t>(opt.max_examples)) {
      v.resize(static_cast<std::size_t>(opt.max_examples));
    }
    auto& before = s.before[name];
    for (const auto& ex : v) {
      const auto it = target_outputs.find(ex.question);
      if (it == target_outputs.end()) throw InputError("no target generation for: " + ex.question);
      before.push_back(it->second);
    }
  };
  fill(forget, "forget");
  fill(retain, "retain");
  fill(world, "world");
  s.forget = std::move(forget);
  s.retain = std::move(retain);
  s.world = std::move(world);
  return s;
}

}  // namespace ulab
