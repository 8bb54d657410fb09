// SPDX-License-Identifier: Apache-2.0
#include "ulab/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ulab/checkpoint.hpp"
#include "ulab/errors.hpp"
#include "ulab/pipeline.hpp"
#include "ulab/report.hpp"
#include "ulab/xclients.hpp"

namespace fs = std::filesystem;

namespace ulab {
namespace {

/// A required input artifact is absent or was produced by another config.
class MissingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run stopped on a non-finite loss; partial outputs are on disk.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend_url;
  bool force = false;
};

struct Paths {
  fs::path root;
  fs::path corpus() const { return root / "corpus"; }
  fs::path manifest() const { return corpus() / "manifest.json"; }
  fs::path pretrained() const { return root / "models" / "pretrained.ckpt"; }
  fs::path target() const { return root / "models" / "target.ckpt"; }
  fs::path run(const std::string& hash) const { return root / "runs" / hash; }
  fs::path continual(const std::string& hash) const { return root / "continual" / hash; }
  fs::path results() const { return root / "results.jsonl"; }
};

nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (!g.sets.empty()) {
    auto j = nlohmann::json::parse(cfg.to_json());
    for (const auto& kv : g.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value: " + kv);
      const std::string key = kv.substr(0, eq);
      const auto dot = key.find('.');
      const auto value = parse_override_value(kv.substr(eq + 1));
      if (dot == std::string::npos) {
        j[key] = value;
      } else {
        j[key.substr(0, dot)][key.substr(dot + 1)] = value;
      }
    }
    cfg = parse_config(j.dump());
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out = *g.out;
  if (g.backend_url) cfg.backend.url = *g.backend_url;
  cfg.validate();
  return cfg;
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw MissingError(p.string() + " not found (" + hint + ")");
}

void check_hash(const std::string& what, const std::string& found, const std::string& expected,
                bool force) {
  if (found != expected && !force) {
    throw MissingError(what + " was produced by config " + found + ", expected " + expected +
                       " (use --force to override)");
  }
}

Checkpoint load_stage(const fs::path& path, const std::string& stage, const std::string& expected,
                      bool force, const std::string& hint) {
  require_file(path, hint);
  Checkpoint c = load_checkpoint(path);
  check_hash(path.string(), c.config_hash, expected, force);
  if (c.meta.value("stage", std::string()) != stage) {
    throw MissingError(path.string() + " is not a " + stage + " checkpoint");
  }
  return c;
}

void check_vocab(const Checkpoint& c, const Workspace& ws) {
  if (c.vocab != ws.vocab.tokens()) {
    throw MissingError("checkpoint vocabulary does not match the corpus of this config");
  }
}

void write_records(const fs::path& path, std::span<const RunRecord> records) {
  std::string s;
  for (const auto& r : records) s += r.to_json(false) + "\n";
  write_file_atomic(path, s);
}

void write_timing(const fs::path& path, std::span<const RunRecord> records) {
  std::string s;
  for (const auto& r : records) {
    s += nlohmann::ordered_json{{"subtask", r.subtask}, {"epoch", r.epoch}, {"wall_time", r.wall_time}}
             .dump() +
         "\n";
  }
  write_file_atomic(path, s);
}

/// Replaces this config's records of one kind (single-task or continual) in
/// the shared results log, keeping everything else in place.
void update_results(const Paths& p, const std::string& hash, bool continual,
                    std::span<const RunRecord> records) {
  std::string kept;
  if (fs::exists(p.results())) {
    std::istringstream in(read_file(p.results()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto r = RunRecord::from_json(line);
      if (r.config_hash == hash && (r.subtask > 0) == continual) continue;
      kept += line + "\n";
    }
  }
  for (const auto& r : records) kept += r.to_json(false) + "\n";
  write_file_atomic(p.results(), kept);
}

std::vector<RunRecord> load_log(const fs::path& path) {
  require_file(path, "run unlearn or continual first");
  auto records = read_records(read_file(path));
  if (records.empty()) throw MissingError(path.string() + " holds no records");
  return records;
}

int cmd_gen(const ExperimentConfig& cfg, std::ostream& out) {
  const Paths p{cfg.out};
  const Workspace ws = workspace_for(cfg);
  write_file_atomic(p.corpus() / "fictitious.jsonl", to_jsonl(ws.bundle.fictitious));
  write_file_atomic(p.corpus() / "world.jsonl", to_jsonl(ws.bundle.world));
  write_file_atomic(p.corpus() / "supplement.jsonl", to_jsonl(ws.supplement));
  std::string idk;
  for (const auto& t : ws.idk.items) idk += t + "\n";
  write_file_atomic(p.corpus() / "idk.txt", idk);
  nlohmann::ordered_json m;
  m["config_hash"] = cfg.corpus_hash();
  m["authors"] = ws.bundle.authors.size();
  m["fictitious"] = ws.bundle.fictitious.size();
  m["forget"] = ws.bundle.forget.size();
  m["world"] = ws.bundle.world.size();
  m["supplement"] = ws.supplement.size();
  m["vocab_size"] = ws.vocab.size();
  write_file_atomic(p.manifest(), m.dump(2) + "\n");
  out << "corpus " << cfg.corpus_hash() << " -> " << p.corpus().string() << "\n";
  return kExitOk;
}

void require_corpus(const ExperimentConfig& cfg, bool force) {
  const Paths p{cfg.out};
  require_file(p.manifest(), "run gen first");
  const auto m = nlohmann::json::parse(read_file(p.manifest()));
  check_hash("corpus", m.at("config_hash").get<std::string>(), cfg.corpus_hash(), force);
}

Checkpoint stage_checkpoint(const Model& m, const Vocab& v, const std::string& hash,
                            const std::string& stage) {
  Checkpoint c = model_checkpoint(m, v, hash);
  c.meta["stage"] = stage;
  return c;
}

int cmd_pretrain(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  require_corpus(cfg, force);
  const Paths p{cfg.out};
  const Workspace ws = workspace_for(cfg);
  const Model m = pretrain_model(cfg, ws);
  save_checkpoint(p.pretrained(), stage_checkpoint(m, ws.vocab, cfg.pretrain_hash(), "pretrained"));
  out << "pretrained " << cfg.pretrain_hash() << " -> " << p.pretrained().string() << "\n";
  return kExitOk;
}

int cmd_finetune(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  require_corpus(cfg, force);
  const Paths p{cfg.out};
  const Workspace ws = workspace_for(cfg);
  const Checkpoint pre =
      load_stage(p.pretrained(), "pretrained", cfg.pretrain_hash(), force, "run pretrain first");
  check_vocab(pre, ws);
  const Model m = finetune_model(cfg, ws, pre.transformer());
  save_checkpoint(p.target(), stage_checkpoint(m, ws.vocab, cfg.target_hash(), "target"));
  out << "target " << cfg.target_hash() << " -> " << p.target().string() << "\n";
  return kExitOk;
}

struct Prepared {
  Workspace ws;
  Model target;
  std::map<std::string, std::string> outputs;
};

Prepared prepare(const ExperimentConfig& cfg, bool force) {
  require_corpus(cfg, force);
  const Paths p{cfg.out};
  Workspace ws = workspace_for(cfg);
  const Checkpoint t = load_stage(p.target(), "target", cfg.target_hash(), force, "run finetune first");
  check_vocab(t, ws);
  Model target = t.transformer();
  auto outputs = target_outputs(cfg, ws, target);
  const double r = mean_rouge(ws.bundle.retain, outputs);
  if (r < 0.95 && !force) {
    throw MissingError("target model does not memorize the retain set (ROUGE " +
                       std::to_string(r) + " < 0.95)");
  }
  return {std::move(ws), std::move(target), std::move(outputs)};
}

int cmd_unlearn(const ExperimentConfig& cfg, bool force, bool resume, std::ostream& out) {
  const Paths p{cfg.out};
  const std::string hash = cfg.hash();
  const fs::path dir = p.run(hash);
  Prepared prep = prepare(cfg, force);
  const Workspace& ws = prep.ws;
  const UnlearnOptions opt = unlearn_options(cfg);
  const EvalOptions eo = eval_options(cfg);
  const EvalSuite suite =
      make_suite(ws.bundle.forget, ws.bundle.retain, ws.bundle.world, prep.outputs, eo);
  const Backends backends = make_backends(cfg);
  const EvalHook eval = [&](const Model& m) { return evaluate(m, ws.vocab, suite, backends.view(), eo); };

  write_file_atomic(dir / "config.toml", cfg.to_toml());
  std::optional<UnlearnState> state;
  std::vector<RunRecord> previous;
  Model start = prep.target;
  if (resume && fs::exists(dir / "state.ckpt")) {
    const Checkpoint c = load_checkpoint(dir / "state.ckpt");
    check_hash("resume state", c.config_hash, hash, false);
    state = unlearn_state(c);
    for (auto& r : read_records(read_file(dir / "records.jsonl"))) {
      if (r.epoch <= state->epochs_done) previous.push_back(std::move(r));
    }
  }
  const auto on_epoch = [&](const UnlearnState& st, const Model& m,
                            const std::vector<RunRecord>& recs) {
    std::vector<RunRecord> all = previous;
    all.insert(all.end(), recs.begin(), recs.end());
    save_checkpoint(dir / ("epoch-" + std::to_string(st.epochs_done) + ".ckpt"),
                    stage_checkpoint(m, ws.vocab, hash, "unlearned"));
    save_checkpoint(dir / "state.ckpt", state_checkpoint(st, m, ws.vocab, hash));
    write_records(dir / "records.jsonl", all);
    write_timing(dir / "timing.jsonl", all);
  };
  const RunTag tag{opt.loss.method(), hash, 0};
  UnlearnResult res = run_unlearning(start, prep.target, {ws.encode(ws.bundle.forget),
                                                          ws.encode(ws.bundle.retain)},
                                     ws.idk_ids, opt, tag, eval, on_epoch,
                                     state ? &*state : nullptr);
  std::vector<RunRecord> all = previous;
  all.insert(all.end(), res.records.begin(), res.records.end());
  write_records(dir / "records.jsonl", all);
  write_timing(dir / "timing.jsonl", all);
  update_results(p, hash, false, all);
  if (res.failure) {
    throw DivergedError(*res.failure + " at step " + std::to_string(res.failure_step));
  }
  save_checkpoint(dir / "final.ckpt", stage_checkpoint(res.model, ws.vocab, hash, "unlearned"));
  for (const auto& r : all) {
    out << r.method << " epoch " << r.epoch << " MU " << r.report.MU << " FE " << r.report.FE
        << "\n";
  }
  return kExitOk;
}

int cmd_continual(const ExperimentConfig& cfg, bool force, std::ostream& out) {
  const Paths p{cfg.out};
  const std::string hash = cfg.hash();
  const fs::path dir = p.continual(hash);
  Prepared prep = prepare(cfg, force);
  const Workspace& ws = prep.ws;
  const EvalOptions eo = eval_options(cfg);
  const Backends backends = make_backends(cfg);
  write_file_atomic(dir / "config.toml", cfg.to_toml());
  const SubtaskEvalHook eval = [&](const Model& m, const SubtaskData& d, int) {
    const EvalSuite suite = make_suite(d.forget, d.retain, ws.bundle.world, prep.outputs, eo);
    return evaluate(m, ws.vocab, suite, backends.view(), eo);
  };
  const ContinualResult res =
      run_continual(prep.target, ws, continual_plan(cfg), continual_options(cfg), hash, eval);
  write_records(dir / "records.jsonl", res.records);
  write_timing(dir / "timing.jsonl", res.records);
  update_results(p, hash, true, res.records);
  if (res.failure) {
    throw DivergedError(*res.failure + " in subtask " + std::to_string(res.failure_subtask));
  }
  save_checkpoint(dir / "final.ckpt", stage_checkpoint(res.model, ws.vocab, hash, "continual"));
  for (const auto& r : res.records) {
    out << r.method << " subtask " << r.subtask << " MU " << r.report.MU << " FE " << r.report.FE
        << "\n";
  }
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, bool force, const std::string& ckpt_path,
             const std::string& output, std::ostream& out) {
  const Paths p{cfg.out};
  const fs::path path = ckpt_path.empty() ? p.run(cfg.hash()) / "final.ckpt" : fs::path(ckpt_path);
  require_file(path, "run unlearn first or pass --checkpoint");
  const Checkpoint c = load_checkpoint(path);
  const std::string stage = c.meta.value("stage", std::string());
  std::string expected = cfg.hash();
  if (stage == "pretrained") expected = cfg.pretrain_hash();
  if (stage == "target") expected = cfg.target_hash();
  check_hash(path.string(), c.config_hash, expected, force);
  require_corpus(cfg, force);
  Workspace ws = workspace_for(cfg);
  check_vocab(c, ws);
  const Checkpoint t = load_stage(p.target(), "target", cfg.target_hash(), force, "run finetune first");
  const EvalOptions eo = eval_options(cfg);
  const auto outputs = target_outputs(cfg, ws, t.transformer());
  const EvalSuite suite =
      make_suite(ws.bundle.forget, ws.bundle.retain, ws.bundle.world, outputs, eo);
  const Backends backends = make_backends(cfg);
  const MetricReport rep = evaluate(c.transformer(), ws.vocab, suite, backends.view(), eo);
  const std::string json = rep.to_json();
  write_file_atomic(output.empty() ? path.parent_path() / (path.stem().string() + ".eval.json")
                                   : fs::path(output),
                    json + "\n");
  out << json << "\n";
  return kExitOk;
}

int cmd_plot(const ExperimentConfig& cfg, const std::string& kind, const std::string& log,
             const std::string& output, std::ostream& out) {
  const Paths p{cfg.out};
  const auto records = load_log(log.empty() ? p.results() : fs::path(log));
  std::string svg;
  std::vector<RunRecord> picked;
  if (kind == "trajectory") {
    for (const auto& r : records) {
      if (r.subtask == 0) picked.push_back(r);
    }
    if (picked.empty()) throw MissingError("log holds no single-task records");
    svg = trajectory_svg(picked);
  } else {
    for (const auto& r : records) {
      if (r.subtask > 0) picked.push_back(r);
    }
    if (picked.empty()) throw MissingError("log holds no continual records");
    svg = continual_svg(picked);
  }
  const fs::path path = output.empty() ? p.root / "plots" / (kind + ".svg") : fs::path(output);
  write_file_atomic(path, svg);
  out << path.string() << "\n";
  return kExitOk;
}

int cmd_table(const ExperimentConfig& cfg, const std::string& log, const std::string& output,
              std::ostream& out) {
  const Paths p{cfg.out};
  const auto records = load_log(log.empty() ? p.results() : fs::path(log));
  const std::string csv = results_table_csv(records);
  write_file_atomic(output.empty() ? p.root / "table.csv" : fs::path(output), csv);
  out << csv;
  return kExitOk;
}

int cmd_judge(const ExperimentConfig& cfg, bool force, const std::string& question,
              const std::string& reference, const std::string& generated,
              const std::string& ckpt_path, std::ostream& out) {
  if (cfg.backend.url.empty()) throw ConfigError("judge needs backend.url or --backend-url");
  const auto bc =
      BackendConfig::with_env_token(cfg.backend.url, cfg.backend.timeout, cfg.backend.retries);
  if (ckpt_path.empty()) {
    out << to_string(judge_hallucination(bc, question, reference, generated)) << "\n";
    return kExitOk;
  }
  require_file(ckpt_path, "checkpoint to judge");
  const Checkpoint c = load_checkpoint(ckpt_path);
  require_corpus(cfg, force);
  const Workspace ws = workspace_for(cfg);
  check_vocab(c, ws);
  const auto gens = generate_answers(c.transformer(), ws.vocab, ws.bundle.forget, eval_options(cfg));
  std::string lines;
  int yes = 0;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const auto& ex = ws.bundle.forget[i];
    const std::string g = gens[i].empty() ? "(empty)" : gens[i];
    const Judgment j = judge_hallucination(bc, ex.question, ex.answer, g);
    yes += j == Judgment::kYes;
    lines += nlohmann::ordered_json{{"question", ex.question}, {"generated", gens[i]},
                                    {"judgment", to_string(j)}}
                 .dump() +
             "\n";
  }
  const fs::path path = fs::path(ckpt_path).parent_path() / "judge.jsonl";
  write_file_atomic(path, lines);
  out << "hallucination_fraction " << static_cast<double>(yes) / static_cast<double>(gens.size())
      << "\n";
  return kExitOk;
}

int fail(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << nlohmann::ordered_json{{"error", kind}, {"exit", code}, {"message", message}}.dump()
      << "\n";
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unlearning experiments on a small transformer", "unlearn-lab"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML or JSON experiment config");
  app.add_option("--set", g.sets, "Override a config key: section.key=value");
  app.add_option("--seed", g.seed, "Override the seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_option("--backend-url", g.backend_url, "Base URL of the metric/judge services");
  app.add_flag("--force", g.force, "Accept artifacts produced by another config");

  auto* gen = app.add_subcommand("gen", "Generate the corpus");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain on world facts");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune the target model");
  auto* unlearn = app.add_subcommand("unlearn", "Run one unlearning task");
  auto* continual = app.add_subcommand("continual", "Run continual unlearning");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* plot = app.add_subcommand("plot", "Draw SVG plots from the results log");
  auto* table = app.add_subcommand("table", "Write the MU/FE table as CSV");
  auto* judge = app.add_subcommand("judge", "Ask the hallucination judge");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::string method;
  std::optional<double> alpha;
  std::optional<int> epochs;
  bool resume = false;
  unlearn->add_option("--method", method, "Method name, e.g. ME+GD");
  unlearn->add_option("--alpha", alpha, "Forget-term weight");
  unlearn->add_option("--epochs", epochs, "Epochs");
  unlearn->add_flag("--resume", resume, "Continue from the last saved epoch");
  continual->add_option("--method", method, "Method name, e.g. ME+GD");
  continual->add_option("--alpha", alpha, "Forget-term weight");
  std::string reference;
  continual->add_option("--reference", reference, "previous-subtask or fixed-initial");

  std::string ckpt, output, log, kind = "trajectory";
  eval->add_option("--checkpoint", ckpt, "Checkpoint to evaluate");
  eval->add_option("--output", output, "Where to write the MetricReport JSON");
  plot->add_option("--kind", kind, "trajectory or continual")
      ->check(CLI::IsMember({"trajectory", "continual"}));
  plot->add_option("--log", log, "Results log (default: <out>/results.jsonl)");
  plot->add_option("--output", output, "SVG path");
  table->add_option("--log", log, "Results log (default: <out>/results.jsonl)");
  table->add_option("--output", output, "CSV path");
  std::string question, ref_answer, generated;
  judge->add_option("--question", question);
  judge->add_option("--reference", ref_answer);
  judge->add_option("--generated", generated);
  judge->add_option("--checkpoint", ckpt, "Judge this model's forget-set answers");

  std::vector<std::string> argv_store{"unlearn-lab"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", kExitConfig, e.what());
  }

  try {
    ExperimentConfig cfg = resolve_config(g);
    if (!method.empty()) cfg.unlearn.method = method;
    if (alpha) (*continual ? cfg.continual.alpha : cfg.unlearn.alpha) = *alpha;
    if (epochs) cfg.unlearn.epochs = *epochs;
    if (!reference.empty()) cfg.continual.reference = reference;
    cfg.validate();
    if (*gen) return cmd_gen(cfg, out);
    if (*pretrain) return cmd_pretrain(cfg, g.force, out);
    if (*finetune) return cmd_finetune(cfg, g.force, out);
    if (*unlearn) return cmd_unlearn(cfg, g.force, resume, out);
    if (*continual) return cmd_continual(cfg, g.force, out);
    if (*eval) return cmd_eval(cfg, g.force, ckpt, output, out);
    if (*plot) return cmd_plot(cfg, kind, log, output, out);
    if (*table) return cmd_table(cfg, log, output, out);
    if (*judge) return cmd_judge(cfg, g.force, question, ref_answer, generated, ckpt, out);
    return fail(err, "usage", kExitConfig, "no command");
  } catch (const ConfigError& e) {
    return fail(err, "config", kExitConfig, e.what());
  } catch (const PlanError& e) {
    return fail(err, "config", kExitConfig, e.what());
  } catch (const MissingError& e) {
    return fail(err, "missing", kExitMissing, e.what());
  } catch (const DivergedError& e) {
    return fail(err, "diverged", kExitDiverged, e.what());
  } catch (const TrainingError& e) {
    return fail(err, "diverged", kExitDiverged, e.what());
  } catch (const NumericError& e) {
    return fail(err, "diverged", kExitDiverged, e.what());
  } catch (const std::exception& e) {
    return fail(err, "failure", kExitFailure, e.what());
  }
}

}  // namespace ulab
