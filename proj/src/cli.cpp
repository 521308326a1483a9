#include "lakeqa/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "lakeqa/benchgen.hpp"
#include "lakeqa/config.hpp"
#include "lakeqa/metainfer.hpp"

namespace lakeqa {

using nlohmann::json;

int exit_code_for(Stage stage) {
  switch (stage) {
    case Stage::none: return kExitOk;
    case Stage::decomposition: return kExitDecomposition;
    case Stage::retrieval: return kExitRetrieval;
    case Stage::planning: return kExitPlanning;
    case Stage::execution: return kExitExecution;
  }
  return kExitFailure;
}

RunRecord make_run_record(const std::string& id, const std::string& question, std::size_t k,
                          const AnswerOutcome& outcome) {
  RunRecord r;
  r.id = id;
  r.question = question;
  r.k = k;
  r.retrieved = outcome.retrieved;
  r.answer = outcome.answer;
  if (!outcome.ok()) r.error = std::string(to_string(outcome.failed_stage)) + ": " + outcome.error;
  if (outcome.trace.contains("decomposition")) {
    const json& d = outcome.trace["decomposition"];
    for (const auto& n : d.value("needs", json::array())) r.needs.push_back(n.value("phrase", std::string()));
    for (const auto& s : d.value("subquestions", json::array())) r.subquestions.push_back(s.value("text", std::string()));
  }
  return r;
}

namespace {

// Failures that map straight onto an exit code.
struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

void write_json(const std::filesystem::path& file, const json& j) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw CommandError(kExitInput, "cannot write " + file.string());
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw CommandError(kExitInput, "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CommandError(kExitInput, file.string() + ": " + e.what());
  }
}

// Values given on the command line; each overrides the config file when set.
struct Overrides {
  std::string config;
  std::optional<std::string> corpus, graph, scorer, gold_plans;
  std::optional<double> tau_u, tau_j;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--corpus", o.corpus, "corpus directory");
  cmd->add_option("--graph", o.graph, "relationship graph file");
  cmd->add_option("--scorer", o.scorer, "coverage scorer file");
  cmd->add_option("--gold-plans", o.gold_plans, "plans for the rule planner");
  cmd->add_option("--tau-u", o.tau_u, "unionability threshold");
  cmd->add_option("--tau-j", o.tau_j, "joinability threshold");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--workers", o.workers, "worker threads");
}

AppConfig resolve_config(const Overrides& o) {
  AppConfig c = o.config.empty() ? AppConfig{} : AppConfig::load(o.config);
  if (o.corpus) c.corpus_dir = *o.corpus;
  if (o.graph) c.graph_file = *o.graph;
  if (o.scorer) c.scorer_file = *o.scorer;
  if (o.gold_plans) c.gold_plans = *o.gold_plans;
  if (o.tau_u) c.thresholds.tau_u = *o.tau_u;
  if (o.tau_j) c.thresholds.tau_j = *o.tau_j;
  if (o.seed) {
    c.seed = *o.seed;
    c.benchgen.seed = *o.seed;
  }
  if (o.workers) c.workers = *o.workers;
  c.validate();
  return c;
}

Corpus require_corpus(const AppConfig& c) {
  if (c.corpus_dir.empty()) throw CommandError(kExitUsage, "--corpus is required");
  try {
    return load_corpus(c.corpus_dir);
  } catch (const std::exception& e) {
    throw CommandError(kExitInput, e.what());
  }
}

RelationshipGraph graph_for(const AppConfig& c, const Corpus& corpus, const Embedder& embedder) {
  if (!c.graph_file.empty() && std::filesystem::exists(c.graph_file)) {
    RelationshipGraph g = RelationshipGraph::load(c.graph_file);
    if (g.corpus_hash() != corpus.content_hash())
      throw CommandError(kExitInput, "graph " + c.graph_file.string() + " was built for a different corpus");
    return g;
  }
  return build_graph(corpus, c.thresholds, embedder, {c.workers});
}

CoverageScorer scorer_for(const AppConfig& c) {
  return c.scorer_file.empty() ? CoverageScorer{} : CoverageScorer::load(c.scorer_file);
}

struct Session {
  AppConfig cfg;
  Providers providers;
  Corpus corpus;
  RelationshipGraph graph;
  CoverageScorer scorer;
  RulePlanner planner;
};

std::unique_ptr<Session> open_session(const Overrides& o) {
  auto s = std::make_unique<Session>();
  s->cfg = resolve_config(o);
  s->providers = s->cfg.make_providers();
  s->corpus = require_corpus(s->cfg);
  s->graph = graph_for(s->cfg, s->corpus, *s->providers.embedder);
  s->scorer = scorer_for(s->cfg);
  if (!s->cfg.gold_plans.empty()) s->planner.load(s->cfg.gold_plans);
  return s;
}

Pipeline make_pipeline(const Session& s) {
  Pipeline p = Pipeline::build(s.corpus, s.graph, s.scorer, s.providers, s.planner.size() ? &s.planner : nullptr);
  p.decomposer = s.cfg.decomposer;
  p.retrieval = s.cfg.retrieval;
  p.max_retries = s.cfg.max_retries;
  p.fuzzy_delta = s.cfg.fuzzy_delta;
  return p;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Question answering over large table collections"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Overrides o;
  std::function<int()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load CSV files into a corpus directory");
  std::string ingest_dir, ingest_manifest, ingest_out;
  ingest->add_option("--dir", ingest_dir, "directory of CSV files")->required();
  ingest->add_option("--manifest", ingest_manifest, "manifest describing the files");
  ingest->add_option("--out", ingest_out, "output corpus directory")->required();
  ingest->callback([&] {
    action = [&]() -> int {
      std::optional<CorpusManifest> manifest;
      if (!ingest_manifest.empty()) manifest = CorpusManifest::load(ingest_manifest);
      IngestResult r = ingest_csv_dir(ingest_dir, manifest ? &*manifest : nullptr,
                                      manifest ? std::filesystem::path(ingest_manifest).parent_path() : std::filesystem::path{});
      save_corpus(r.corpus, ingest_out);
      json errors = json::array();
      for (const auto& e : r.errors) errors.push_back({{"file", e.file}, {"message", e.message}, {"rows", e.rows}});
      out << json{{"tables", r.corpus.size()}, {"errors", errors}, {"corpus_hash", r.corpus.content_hash()}}.dump(2) << "\n";
      return r.errors.empty() ? kExitOk : kExitInput;
    };
  });

  // infer-metadata
  auto* infer = app.add_subcommand("infer-metadata", "fill masked titles and headers");
  add_common(infer, o);
  std::string infer_out;
  infer->add_option("--out", infer_out, "output corpus directory")->required();
  infer->callback([&] {
    action = [&]() -> int {
      AppConfig c = resolve_config(o);
      Providers p = c.make_providers();
      Corpus corpus = require_corpus(c);
      CorpusInferenceReport report;
      MetaInferenceOptions opts;
      opts.seed = c.seed;
      Corpus filled = infer_corpus_metadata(corpus, *p.embedder, p.chat.get(), opts, &report);
      save_corpus(filled, infer_out);
      out << json{{"tables_with_masks", report.tables_with_masks},
                  {"headers_masked", report.headers_masked},
                  {"headers_recovered", report.headers_recovered},
                  {"warnings", report.warnings}}
                 .dump(2)
          << "\n";
      return kExitOk;
    };
  });

  // graph build | stats
  auto* graph = app.add_subcommand("graph", "relationship graph");
  graph->require_subcommand(1);
  auto* gbuild = graph->add_subcommand("build", "build the graph of a corpus");
  add_common(gbuild, o);
  std::string graph_out;
  gbuild->add_option("--out", graph_out, "graph file")->required();
  gbuild->callback([&] {
    action = [&]() -> int {
      AppConfig c = resolve_config(o);
      Providers p = c.make_providers();
      Corpus corpus = require_corpus(c);
      RelationshipGraph g = build_graph(corpus, c.thresholds, *p.embedder, {c.workers});
      g.save(graph_out);
      out << to_json(graph_stats(g)).dump(2) << "\n";
      return kExitOk;
    };
  });
  auto* gstats = graph->add_subcommand("stats", "summarize a graph file");
  std::string stats_file;
  gstats->add_option("--graph", stats_file, "graph file")->required();
  gstats->callback([&] {
    action = [&]() -> int {
      out << to_json(graph_stats(RelationshipGraph::load(stats_file))).dump(2) << "\n";
      return kExitOk;
    };
  });

  // decompose
  auto* decomp = app.add_subcommand("decompose", "split a question into sub-questions");
  add_common(decomp, o);
  std::string question;
  decomp->add_option("--question", question, "question text")->required();
  decomp->callback([&] {
    action = [&]() -> int {
      auto s = open_session(o);
      const SnippetIndex index = SnippetIndex::build(s->corpus, *s->providers.embedder);
      try {
        out << to_json(decompose(question, s->corpus, index, s->graph, s->providers, s->cfg.decomposer)).dump(2) << "\n";
      } catch (const DecompositionError& e) {
        throw CommandError(kExitDecomposition, e.what());
      }
      return kExitOk;
    };
  });

  // train-scorer
  auto* train = app.add_subcommand("train-scorer", "fit the coverage scorer on question/table pairs");
  add_common(train, o);
  std::string qa_file, scorer_out;
  std::optional<std::size_t> epochs;
  std::optional<double> step;
  train->add_option("--qa", qa_file, "[{question, table, answer_column}]")->required();
  train->add_option("--out", scorer_out, "scorer file")->required();
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--step", step, "step size");
  train->callback([&] {
    action = [&]() -> int {
      AppConfig c = resolve_config(o);
      Providers p = c.make_providers();
      Corpus corpus = require_corpus(c);
      std::vector<QaRecord> records;
      for (const auto& r : read_json(qa_file)) {
        QaRecord q;
        q.question = r.at("question").get<std::string>();
        q.table_id = r.at("table").get<std::string>();
        const json& col = r.at("answer_column");
        if (col.is_string()) {
          const Table* t = corpus.find(q.table_id);
          auto idx = t ? t->column_index(col.get<std::string>()) : std::nullopt;
          if (!idx) throw CommandError(kExitInput, "unknown answer column " + col.get<std::string>());
          q.answer_column = *idx;
        } else {
          q.answer_column = col.get<std::size_t>();
        }
        records.push_back(std::move(q));
      }
      TripleBuildResult triples = make_training_triples(records, corpus);
      if (triples.triples.empty()) throw CommandError(kExitInput, "no usable training records");
      TrainingLog log;
      CoverageScorer scorer;
      try {
        scorer = train_scorer(triples.triples, *p.embedder, epochs.value_or(c.train_epochs), step.value_or(c.train_step),
                              {}, &log);
      } catch (const TrainingError& e) {
        throw CommandError(kExitInput, e.what());
      }
      scorer.save(scorer_out);
      out << json{{"triples", triples.triples.size()}, {"rejected", triples.errors}, {"loss", log.loss},
                  {"scorer", scorer.to_json()}}
                 .dump(2)
          << "\n";
      return kExitOk;
    };
  });

  // retrieve
  auto* retr = app.add_subcommand("retrieve", "rank tables for a question");
  add_common(retr, o);
  std::optional<std::size_t> k;
  retr->add_option("--question", question, "question text")->required();
  retr->add_option("--k", k, "tables to return");
  retr->callback([&] {
    action = [&]() -> int {
      auto s = open_session(o);
      const Pipeline p = make_pipeline(*s);
      Decomposition d;
      try {
        d = decompose(question, s->corpus, p.snippets, s->graph, s->providers, p.decomposer);
      } catch (const DecompositionError& e) {
        throw CommandError(kExitDecomposition, e.what());
      }
      RetrievalOptions ro = p.retrieval;
      if (k) ro.k = *k;
      RetrievalResult r = retrieve(d, s->corpus, s->graph, p.clusters, s->scorer, s->providers, ro);
      out << json{{"decomposition", to_json(d)}, {"retrieval", to_json(r)}}.dump(2) << "\n";
      return r.ranked.empty() ? kExitRetrieval : kExitOk;
    };
  });

  // answer
  auto* ans = app.add_subcommand("answer", "answer one question or a question file");
  add_common(ans, o);
  std::string trace_file, questions_file, runs_out;
  std::vector<std::size_t> ks;
  auto* qopt = ans->add_option("--question", question, "question text");
  auto* fopt = ans->add_option("--questions", questions_file, "questions file (benchmark output)");
  qopt->excludes(fopt);
  ans->add_option("--k", ks, "retrieval depth; repeat for several");
  ans->add_option("--trace", trace_file, "write the trace of a single question");
  ans->add_option("--out", runs_out, "runs file for a question file");
  ans->callback([&] {
    action = [&]() -> int {
      if (question.empty() && questions_file.empty()) throw CommandError(kExitUsage, "--question or --questions is required");
      auto s = open_session(o);
      const Pipeline p = make_pipeline(*s);
      if (ks.empty()) ks.push_back(s->cfg.retrieval.k);
      if (!question.empty()) {
        const AnswerOutcome a = answer(question, p, ks.front());
        if (!trace_file.empty()) write_json(trace_file, a.trace);
        out << json{{"answer", a.answer ? value_to_json(*a.answer) : json()},
                    {"stage", std::string(to_string(a.failed_stage))},
                    {"error", a.error},
                    {"retrieved", a.retrieved},
                    {"retries", a.retries},
                    {"gold_plan", a.gold_plan}}
                   .dump(2)
            << "\n";
        return exit_code_for(a.failed_stage);
      }
      if (runs_out.empty()) throw CommandError(kExitUsage, "--out is required with --questions");
      std::vector<RunRecord> runs;
      for (const auto& g : load_gold(questions_file))
        for (std::size_t kk : ks) runs.push_back(make_run_record(g.id, g.question, kk, answer(g.question, p, kk)));
      save_runs(runs, runs_out);
      out << json{{"runs", runs.size()}, {"out", runs_out}}.dump(2) << "\n";
      return kExitOk;
    };
  });

  // benchgen
  auto* bench = app.add_subcommand("benchgen", "build a benchmark lake from a seed database");
  add_common(bench, o);
  std::string seed_db, external_dir, bench_out;
  std::optional<std::size_t> top_n;
  bench->add_option("--seed-db", seed_db, "seed database directory")->required();
  bench->add_option("--external", external_dir, "external table pool");
  bench->add_option("--N", top_n, "external tables per query");
  bench->add_option("--out", bench_out, "output directory")->required();
  bench->callback([&] {
    action = [&]() -> int {
      AppConfig c = resolve_config(o);
      if (top_n) c.benchgen.external_top_n = *top_n;
      Providers p = c.make_providers();
      SeedDatabase db = SeedDatabase::load(seed_db);
      Corpus external = external_dir.empty() ? Corpus{} : load_corpus(external_dir);
      BenchResult r;
      try {
        r = run_benchgen(db, external, c.benchgen, p);
      } catch (const DatasetError& e) {
        throw CommandError(kExitDataset, e.what());
      }
      save_bench(r, bench_out);
      out << json{{"tables", r.lake.size()},
                  {"questions", r.questions.size()},
                  {"dropped", r.dropped.size()},
                  {"external_added", r.external_added.size()},
                  {"reconstruction_ok", r.reconstruction_ok},
                  {"row_splits_coclustered", r.row_splits_coclustered}}
                 .dump(2)
          << "\n";
      return r.reconstruction_ok ? kExitOk : kExitDataset;
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "score runs against gold questions");
  add_common(ev, o);
  std::string pred_file, gold_file, report_out;
  std::vector<std::size_t> eval_ks;
  ev->add_option("--pred", pred_file, "runs file")->required();
  ev->add_option("--gold", gold_file, "gold questions file")->required();
  ev->add_option("--k", eval_ks, "cutoffs")->required();
  ev->add_option("--out", report_out, "report file");
  ev->callback([&] {
    action = [&]() -> int {
      AppConfig c = resolve_config(o);
      Providers p = c.make_providers();
      std::optional<RelationshipGraph> g;
      if (!c.graph_file.empty()) g = RelationshipGraph::load(c.graph_file);
      MetricReport rep = evaluate(load_runs(pred_file), load_gold(gold_file), eval_ks, g ? &*g : nullptr, p.embedder.get());
      if (!report_out.empty()) write_json(report_out, rep.to_json());
      out << rep.to_text();
      if (report_out.empty()) out << rep.to_json().dump(2) << "\n";
      return kExitOk;
    };
  });

  std::vector<const char*> argv{"lakeqa"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (!action) return kExitUsage;
  try {
    return action();
  } catch (const CommandError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ProviderError& e) {
    err << "provider error: " << e.what() << "\n";
    return kExitProvider;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitDataset;
  } catch (const CorpusError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const TableError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace lakeqa
