#include "lakeqa/reasoner.hpp"

#include <algorithm>
#include <fstream>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

namespace {

std::string column_kind(const Table& t, std::size_t c) {
  if (t.column_is_numeric(c)) return "numeric";
  if (t.column_is_text(c)) return "text";
  return "empty";
}

std::string column_ref(const std::string& qualifier, std::size_t col) { return qualifier + ".#" + std::to_string(col); }

const Assignment* assignment_for(const Decomposition& d, std::size_t need) {
  for (const auto& a : d.mapping.assignments)
    if (a.need == need) return &a;
  return nullptr;
}

}  // namespace

std::string describe_tables(const PlanningInput& in) {
  std::string out;
  for (const Table* t : in.tables) {
    out += "- " + t->id;
    if (in.graph && in.graph->has_table(t->id)) out += " (group " + std::to_string(in.graph->cluster_of(t->id)) + ")";
    out += " title: " + t->title + "; " + std::to_string(t->row_count) + " rows; columns:";
    for (std::size_t c = 0; c < t->width(); ++c) {
      out += " #" + std::to_string(c) + " \"" + t->headers[c] + "\" " + column_kind(*t, c);
      auto sample = distinct_values(*t, c, 3);
      if (!sample.empty()) out += " e.g. " + join(sample, " | ");
      out += c + 1 < t->width() ? ";" : "";
    }
    out += "\n";
  }
  if (in.graph) {
    for (std::size_t i = 0; i < in.tables.size(); ++i) {
      for (std::size_t j = i + 1; j < in.tables.size(); ++j) {
        for (const auto& ev : in.graph->evidence_between(in.tables[i]->id, in.tables[j]->id)) {
          out += "- joinable: " + ev.table_a + ".#" + std::to_string(ev.col_a) + " with " + ev.table_b + ".#" +
                 std::to_string(ev.col_b) + " (score " + format_number(ev.score) + ")\n";
        }
      }
    }
  }
  return out;
}

std::string describe_knowledge(const PlanningInput& in) {
  if (!in.decomposition) return "none";
  std::vector<std::string> lines;
  for (const auto& a : in.decomposition->mapping.assignments) {
    const Table* t = nullptr;
    for (const Table* x : in.tables)
      if (x->id == a.table_id) t = x;
    if (!t) continue;
    lines.push_back("\"" + in.decomposition->needs.at(a.need).phrase + "\" refers to " + a.table_id + ".#" +
                    std::to_string(a.column) + " (\"" + t->headers.at(a.column) + "\")");
  }
  return lines.empty() ? "none" : join(lines, "\n");
}

namespace {

const char* kPlanFormat =
    "A plan is a JSON object {\"root\": id, \"nodes\": [...]}. Each node has an \"id\" and an \"op\":\n"
    "  scan {table}; union {tables} (members of one group, same columns); filter {input, predicate};\n"
    "  join {left, right, keys: [[left column, right column]], mode: \"exact\" | \"fuzzy\"};\n"
    "  project {input, columns}; aggregate {input, function: count|sum|avg|min|max, column, group_by, distinct};\n"
    "  sort {input, keys: [{column, desc}]}; limit {input, n}; distinct {input}.\n"
    "Predicates: {\"op\": \"=\"|\"!=\"|\"<\"|\"<=\"|\">\"|\">=\", column, value}, {\"op\": \"in\", column, values},\n"
    "  {\"op\": \"is_null\"|\"not_null\", column}, {\"op\": \"and\"|\"or\", args}, {\"op\": \"not\", arg}.\n"
    "Columns are written table.#index (or alias.#index); use fuzzy joins for text keys that may contain typos.\n";

}  // namespace

std::string plan_step_prompt(const PlanningInput& in, std::size_t step, const std::string& prior_plan) {
  std::string p =
      "You write executable relational plans that answer questions over several tables. Work through the "
      "sub-questions one at a time. The first sub-question must be answered from one table or from one union "
      "of a group of unionable tables. Every later sub-question adds its own small plan and joins it to the "
      "plan built so far. The sub-questions may be imperfect; fix them in your reasoning when needed.\n\n";
  p += kPlanFormat;
  p += "\nReply with JSON only: {\"reasoning\": \"...\", \"Final Plan\": {...}} where the plan covers every "
       "sub-question up to and including the current one.\n\n";
  p += "[Question] " + in.question + "\n";
  p += "[Tables]\n" + describe_tables(in);
  p += "[Hints]\n" + describe_knowledge(in) + "\n";
  p += "[Sub-questions]\n";
  for (std::size_t i = 0; i < in.subquestions.size(); ++i)
    p += std::to_string(i + 1) + ". " + in.subquestions[i].text + "\n";
  p += "[Current sub-question] " + std::to_string(step + 1) + "\n";
  p += "[Plan so far] " + (prior_plan.empty() ? std::string("none") : prior_plan) + "\n";
  return p;
}

std::string refine_prompt(const PlanningInput& in, const std::string& failed_plan, const ExecError& error) {
  std::string p =
      "The relational plan below failed when it was checked or run against the tables. Repair it so that it "
      "runs and still answers the question.\n\n";
  p += kPlanFormat;
  p += "\nReply with JSON only: {\"plan\": {...}}.\n\n";
  p += "[Question] " + in.question + "\n";
  p += "[Tables]\n" + describe_tables(in);
  p += "[Failed plan] " + failed_plan + "\n";
  p += "[Error] " + error.describe() + "\n";
  p += "[Hints]\n" + describe_knowledge(in) + "\n";
  return p;
}

RelationalPlan parse_plan_response(const std::string& response, const char* field) {
  auto j = extract_json_object(response);
  if (!j) throw PlanParseError("response is not a JSON object");
  if (j->contains(field)) {
    const json& plan = (*j)[field];
    if (plan.is_string()) {
      try {
        return plan_from_json(json::parse(plan.get<std::string>()));
      } catch (const json::exception&) {
        throw PlanParseError(std::string("\"") + field + "\" is not a JSON plan");
      }
    }
    return plan_from_json(plan);
  }
  if (j->contains("nodes")) return plan_from_json(*j);
  throw PlanParseError(std::string("response has no \"") + field + "\" field");
}

std::string RulePlanner::key(std::string_view question) {
  std::string out;
  for (const auto& w : word_tokens(to_lower(question))) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

void RulePlanner::add(std::string_view question, RelationalPlan plan) { gold_[key(question)] = std::move(plan); }

void RulePlanner::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  json doc = json::parse(in);
  const json& list = doc.is_object() && doc.contains("questions") ? doc["questions"] : doc;
  if (!list.is_array()) throw PlanParseError(file.string() + ": expected a list of questions");
  for (const auto& q : list) {
    if (!q.contains("question")) continue;
    const char* field = q.contains("plan") ? "plan" : (q.contains("gold_plan") ? "gold_plan" : nullptr);
    if (!field) continue;
    add(q["question"].get<std::string>(), plan_from_json(q[field]));
  }
}

std::optional<RelationalPlan> RulePlanner::lookup(std::string_view question, const std::set<std::string>& available) const {
  auto it = gold_.find(key(question));
  if (it == gold_.end()) return std::nullopt;
  for (const auto& t : it->second.referenced_tables())
    if (!available.count(t)) return std::nullopt;
  return it->second;
}

namespace {

struct Comparator {
  const char* words;
  Predicate::Op op;
};

constexpr Comparator kComparators[] = {
    {"more than", Predicate::Op::gt},    {"greater than", Predicate::Op::gt}, {"higher than", Predicate::Op::gt},
    {"larger than", Predicate::Op::gt},  {"over", Predicate::Op::gt},         {"above", Predicate::Op::gt},
    {"exceeding", Predicate::Op::gt},    {"after", Predicate::Op::gt},        {"at least", Predicate::Op::ge},
    {"no less than", Predicate::Op::ge}, {"since", Predicate::Op::ge},        {"less than", Predicate::Op::lt},
    {"fewer than", Predicate::Op::lt},   {"lower than", Predicate::Op::lt},   {"smaller than", Predicate::Op::lt},
    {"under", Predicate::Op::lt},        {"below", Predicate::Op::lt},        {"before", Predicate::Op::lt},
    {"at most", Predicate::Op::le},      {"no more than", Predicate::Op::le}, {"equal to", Predicate::Op::eq},
    {"exactly", Predicate::Op::eq},
};

std::optional<double> loose_number(std::string token) {
  std::erase_if(token, [](char c) { return c == ',' || c == '$' || c == '%'; });
  return parse_number(token);
}

// "<anything> <comparator> <number>"
std::optional<std::pair<Predicate::Op, double>> comparison_in(std::string_view phrase) {
  const auto words = word_tokens(to_lower(phrase));
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (const auto& cmp : kComparators) {
      const auto parts = word_tokens(cmp.words);
      if (i + parts.size() >= words.size()) continue;
      if (!std::equal(parts.begin(), parts.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) continue;
      if (auto n = loose_number(words[i + parts.size()])) return std::make_pair(cmp.op, *n);
    }
  }
  return std::nullopt;
}

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// Longest cell value of a text column whose words appear as a run in the phrase.
std::optional<std::string> grounded_value(std::string_view phrase, const Table& t, std::size_t col) {
  const auto words = word_tokens(to_lower(phrase));
  const std::string header = casefold_trim(t.headers[col]);
  std::optional<std::string> best;
  std::size_t best_len = 0;
  for (const auto& v : t.columns[col]) {
    if (!is_text(v)) continue;
    const auto& s = std::get<std::string>(v);
    const std::string folded = casefold_trim(s);
    if (folded.size() < 2 || folded == header) continue;
    const auto vw = word_tokens(folded);
    if (vw.size() > best_len && contains_run(words, vw)) {
      best = s;
      best_len = vw.size();
    }
  }
  return best;
}

struct AggWord {
  const char* words;
  AggFn fn;
};

constexpr AggWord kAggWords[] = {
    {"how many", AggFn::count}, {"number of", AggFn::count}, {"count", AggFn::count},   {"total", AggFn::sum},
    {"sum", AggFn::sum},        {"average", AggFn::avg},     {"mean", AggFn::avg},      {"maximum", AggFn::max},
    {"highest", AggFn::max},    {"largest", AggFn::max},     {"max", AggFn::max},       {"minimum", AggFn::min},
    {"lowest", AggFn::min},     {"smallest", AggFn::min},    {"min", AggFn::min},       {"fewest", AggFn::min},
};

struct AggChoice {
  AggFn fn = AggFn::count;
  std::size_t offset = 0;  // character offset just past the keyword
};

std::optional<AggChoice> aggregate_in(std::string_view question) {
  const std::string lower = to_lower(question);
  const auto words = word_tokens(lower);
  std::optional<AggChoice> best;
  std::size_t best_pos = SIZE_MAX;
  for (const auto& a : kAggWords) {
    const auto parts = word_tokens(a.words);
    for (std::size_t i = 0; i + parts.size() <= words.size(); ++i) {
      if (!std::equal(parts.begin(), parts.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) continue;
      if (i < best_pos) {
        best_pos = i;
        std::size_t offset = 0;
        for (std::size_t w = 0; w < i + parts.size(); ++w) offset = lower.find(words[w], offset) + words[w].size();
        best = AggChoice{a.fn, offset};
      }
      break;
    }
  }
  return best;
}

}  // namespace

std::optional<RelationalPlan> heuristic_plan(const PlanningInput& in, std::vector<std::string>* notes) {
  auto note = [&](std::string s) {
    if (notes) notes->push_back(std::move(s));
  };
  if (!in.decomposition || !in.graph || in.subquestions.empty()) return std::nullopt;
  const Decomposition& d = *in.decomposition;
  std::map<std::string, const Table*> available;
  for (const Table* t : in.tables) available[t->id] = t;

  RelationalPlan plan;
  std::map<std::string, std::string> anchors;  // table id -> qualifier in the accumulated plan
  std::set<std::pair<std::string, std::size_t>> filtered;
  std::string acc;
  std::size_t counter = 0;
  auto fresh = [&](const char* prefix) { return std::string(prefix) + std::to_string(counter++); };

  for (const auto& sq : in.subquestions) {
    if (!available.count(sq.table_id) || anchors.count(sq.table_id)) continue;
    const Table& t = *available.at(sq.table_id);

    std::vector<std::string> members = {t.id};
    for (const auto& m : in.graph->members(in.graph->cluster_of(t.id)))
      if (m != t.id && available.count(m)) members.push_back(m);
    std::sort(members.begin() + 1, members.end());

    PlanNode base;
    base.subquestion = sq.order;
    if (members.size() > 1) {
      base.id = fresh("u");
      base.op = OpKind::union_cluster;
      base.tables = members;
      base.alias = t.id;
    } else {
      base.id = fresh("s");
      base.op = OpKind::scan;
      base.table = t.id;
    }
    const std::string qual = t.id;
    std::string head = base.id;
    plan.nodes.push_back(base);

    std::vector<Predicate> preds;
    for (std::size_t need : sq.needs) {
      const Assignment* a = assignment_for(d, need);
      if (!a || a->table_id != t.id) continue;
      const std::string& phrase = d.needs.at(need).phrase;
      const std::string ref = column_ref(qual, a->column);
      if (auto cmp = comparison_in(phrase); cmp && t.column_is_numeric(a->column)) {
        Predicate p;
        p.op = cmp->first;
        p.column = ref;
        p.values = {cmp->second};
        preds.push_back(p);
        filtered.insert({t.id, a->column});
      } else if (auto v = grounded_value(phrase, t, a->column)) {
        Predicate p;
        p.op = Predicate::Op::eq;
        p.column = ref;
        p.values = {*v};
        preds.push_back(p);
        filtered.insert({t.id, a->column});
      }
    }
    if (!preds.empty()) {
      PlanNode f;
      f.id = fresh("f");
      f.op = OpKind::filter;
      f.inputs = {head};
      f.subquestion = sq.order;
      if (preds.size() == 1) {
        f.predicate = preds.front();
      } else {
        f.predicate.op = Predicate::Op::and_;
        f.predicate.args = preds;
      }
      plan.nodes.push_back(f);
      head = f.id;
    }

    if (acc.empty()) {
      acc = head;
      anchors[t.id] = qual;
      continue;
    }
    std::optional<JoinEvidence> best;
    std::string left_table;
    for (const auto& [anchor, q] : anchors) {
      for (const auto& ev : in.graph->evidence_between(anchor, t.id)) {
        if (!best || ev.score > best->score) {
          best = ev;
          left_table = anchor;
        }
        break;  // best first
      }
    }
    if (!best) {
      note("no join evidence links " + t.id + " to the plan; sub-question skipped");
      plan.nodes.erase(std::remove_if(plan.nodes.begin(), plan.nodes.end(),
                                      [&](const PlanNode& n) { return n.id == base.id || n.id == head; }),
                       plan.nodes.end());
      continue;
    }
    const bool left_is_a = best->table_a == left_table;
    const std::size_t lcol = left_is_a ? best->col_a : best->col_b;
    const std::size_t rcol = left_is_a ? best->col_b : best->col_a;
    const Table& lt = *available.at(left_table);
    PlanNode j;
    j.id = fresh("j");
    j.op = OpKind::join;
    j.inputs = {acc, head};
    j.subquestion = sq.order;
    j.keys = {{column_ref(anchors.at(left_table), lcol), column_ref(qual, rcol)}};
    j.mode = JoinMode::exact;
    if (lt.column_is_text(lcol) && t.column_is_text(rcol)) {
      const auto ka = join_key_set(lt, lcol), kb = join_key_set(t, rcol);
      if (std::min(containment(ka, kb), containment(kb, ka)) < 1.0) j.mode = JoinMode::fuzzy;
      j.delta = in.fuzzy_delta;
    }
    plan.nodes.push_back(j);
    acc = j.id;
    anchors[t.id] = qual;
  }
  if (acc.empty()) return std::nullopt;

  // Output column: numeric, unfiltered, mentioned after the aggregate keyword when there is one.
  const auto agg = aggregate_in(in.question);
  std::vector<std::size_t> order(d.needs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.needs[a].begin < d.needs[b].begin; });
  auto pick = [&](bool numeric, std::size_t from) -> std::optional<std::string> {
    for (std::size_t need : order) {
      if (d.needs[need].begin < from) continue;
      const Assignment* a = assignment_for(d, need);
      if (!a || !anchors.count(a->table_id) || filtered.count({a->table_id, a->column})) continue;
      if (numeric && !available.at(a->table_id)->column_is_numeric(a->column)) continue;
      return column_ref(anchors.at(a->table_id), a->column);
    }
    return std::nullopt;
  };

  PlanNode out;
  out.id = fresh("a");
  out.inputs = {acc};
  if (agg) {
    out.op = OpKind::aggregate;
    out.fn = agg->fn;
    if (agg->fn != AggFn::count) {
      auto col = pick(true, agg->offset);
      if (!col) col = pick(true, 0);
      if (col) {
        out.agg_column = *col;
      } else {
        note("no numeric column for " + std::string(to_string(agg->fn)) + "; counting rows instead");
        out.fn = AggFn::count;
      }
    }
    plan.nodes.push_back(out);
  } else {
    auto col = pick(false, 0);
    if (!col) col = column_ref(anchors.begin()->second, 0);
    out.op = OpKind::project;
    out.columns = {{*col, ""}};
    plan.nodes.push_back(out);
    PlanNode dist;
    dist.id = fresh("d");
    dist.op = OpKind::distinct;
    dist.inputs = {out.id};
    plan.nodes.push_back(dist);
  }
  plan.root = plan.nodes.back().id;
  return plan;
}

PlanDraft generate_plan_cot(const PlanningInput& in, const ChatProvider* chat, const RulePlanner* rules) {
  PlanDraft draft;
  if (chat) {
    std::string prior;
    const std::size_t steps = std::max<std::size_t>(1, in.subquestions.size());
    bool provider_failed = false;
    for (std::size_t i = 0; i < steps; ++i) {
      std::string response;
      try {
        response = chat->complete(plan_step_prompt(in, i, prior));
      } catch (const ProviderError& e) {
        draft.notes.push_back(std::string("chat provider failed during planning: ") + e.what());
        provider_failed = true;
        break;
      }
      draft.steps.push_back(response);
      draft.raw = response;
      try {
        RelationalPlan p = parse_plan_response(response, "Final Plan");
        if (i == 0) {
          std::size_t sources = 0;
          for (const auto& n : p.nodes) sources += n.op == OpKind::scan || n.op == OpKind::union_cluster;
          if (sources != 1)
            throw PlanParseError("the first step must read one table or one union of unionable tables, found " +
                                 std::to_string(sources) + " sources");
        }
        prior = plan_to_json(p).dump();
        draft.plan = std::move(p);
      } catch (const PlanParseError& e) {
        draft.plan.reset();
        draft.error = ExecError{ExecError::Kind::malformed_plan, e.what(), ""};
        return draft;
      }
    }
    if (!provider_failed) return draft;
    draft.plan.reset();
    draft.steps.clear();
    draft.raw.clear();
  }
  draft.rule_based = true;
  std::set<std::string> available;
  for (const Table* t : in.tables) available.insert(t->id);
  if (rules) {
    if (auto gold = rules->lookup(in.question, available)) {
      draft.plan = std::move(gold);
      draft.gold = true;
      return draft;
    }
  }
  draft.plan = heuristic_plan(in, &draft.notes);
  if (!draft.plan) draft.error = ExecError{ExecError::Kind::malformed_plan, "the rule planner could not build a plan", ""};
  return draft;
}

RefineOutcome refine_plan(const PlanningInput& in, std::string failed_plan, ExecError error, const ExecContext& ctx,
                          const ChatProvider* chat, std::size_t max_retries) {
  RefineOutcome out;
  out.errors.push_back(error);
  for (std::size_t attempt = 0; chat && attempt < max_retries; ++attempt) {
    std::string response;
    try {
      response = chat->complete(refine_prompt(in, failed_plan, error));
    } catch (const ProviderError& e) {
      ++out.retries;
      error = ExecError{ExecError::Kind::malformed_plan, std::string("provider failure: ") + e.what(), ""};
      out.errors.push_back(error);
      continue;
    }
    ++out.retries;
    try {
      RelationalPlan plan = parse_plan_response(response, "plan");
      ExecResult r = execute_plan(plan, ctx);
      if (r.ok()) {
        out.result = std::move(r);
        out.plan = std::move(plan);
        return out;
      }
      error = *r.error;
      failed_plan = plan_to_json(plan).dump();
    } catch (const PlanParseError& e) {
      error = ExecError{ExecError::Kind::malformed_plan, e.what(), ""};
      failed_plan = response;
    }
    out.errors.push_back(error);
  }
  out.result = ExecResult{};
  out.result.error = error;
  return out;
}

RefineOutcome execute_with_refinement(const PlanningInput& in, const PlanDraft& draft, const ExecContext& ctx,
                                      const ChatProvider* chat, std::size_t max_retries) {
  if (draft.plan) {
    ExecResult r = execute_plan(*draft.plan, ctx);
    if (r.ok()) {
      RefineOutcome out;
      out.result = std::move(r);
      out.plan = draft.plan;
      return out;
    }
    return refine_plan(in, plan_to_json(*draft.plan).dump(), *r.error, ctx, chat, max_retries);
  }
  const ExecError err = draft.error.value_or(ExecError{ExecError::Kind::malformed_plan, "no plan", ""});
  return refine_plan(in, draft.raw, err, ctx, chat, max_retries);
}

Pipeline Pipeline::build(const Corpus& corpus, const RelationshipGraph& graph, const CoverageScorer& scorer,
                         const Providers& providers, const RulePlanner* planner) {
  Pipeline p;
  p.corpus = &corpus;
  p.graph = &graph;
  p.scorer = &scorer;
  p.providers = &providers;
  p.planner = planner;
  p.snippets = SnippetIndex::build(corpus, *providers.embedder);
  p.clusters = ClusterIndex::build(corpus, graph, *providers.embedder);
  return p;
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::none: return "none";
    case Stage::decomposition: return "decomposition";
    case Stage::retrieval: return "retrieval";
    case Stage::planning: return "planning";
    case Stage::execution: return "execution";
  }
  return "?";
}

AnswerOutcome answer(std::string_view question, const Pipeline& p, std::size_t k) {
  AnswerOutcome out;
  out.trace = {{"question", std::string(question)}, {"k", k}};
  auto failed = [&](Stage s, std::string message) {
    out.failed_stage = s;
    out.error = std::move(message);
    out.trace["stage"] = std::string(to_string(s));
    out.trace["error"] = out.error;
    return out;
  };

  Decomposition d;
  try {
    d = decompose(question, *p.corpus, p.snippets, *p.graph, *p.providers, p.decomposer);
  } catch (const std::exception& e) {
    return failed(Stage::decomposition, e.what());
  }
  out.trace["decomposition"] = to_json(d);
  if (d.subquestions.empty()) return failed(Stage::decomposition, "no sub-questions");

  RetrievalResult rr;
  try {
    RetrievalOptions opts = p.retrieval;
    opts.k = k;
    rr = retrieve(d, *p.corpus, *p.graph, p.clusters, *p.scorer, *p.providers, opts);
  } catch (const std::exception& e) {
    return failed(Stage::retrieval, e.what());
  }
  out.trace["retrieval"] = to_json(rr);
  for (const auto& s : rr.ranked) out.retrieved.push_back(s.table_id);
  out.trace["retrieved"] = out.retrieved;
  if (out.retrieved.empty()) return failed(Stage::retrieval, "nothing retrieved");

  std::set<std::string> available;
  for (const auto& id : out.retrieved) {
    available.insert(id);
    if (p.graph->has_table(id))
      for (const auto& m : p.graph->members(p.graph->cluster_of(id))) available.insert(m);
  }
  PlanningInput in;
  in.question = std::string(question);
  in.subquestions = d.subquestions;
  in.decomposition = &d;
  in.graph = p.graph;
  in.fuzzy_delta = p.fuzzy_delta;
  for (const auto& id : available)
    if (const Table* t = p.corpus->find(id)) in.tables.push_back(t);
  out.trace["available"] = std::vector<std::string>(available.begin(), available.end());

  const ChatProvider* chat = p.providers->chat.get();
  PlanDraft draft = generate_plan_cot(in, chat, p.planner);
  out.gold_plan = draft.gold;
  out.trace["plan_source"] = draft.gold ? "gold" : (draft.rule_based ? "heuristic" : "chat");
  out.trace["plan_steps"] = draft.steps;
  out.trace["planner_notes"] = draft.notes;
  if (!draft.plan && draft.rule_based) return failed(Stage::planning, draft.error ? draft.error->describe() : "no plan");

  ExecContext ctx{p.corpus, p.graph, &available, p.providers->embedder.get()};
  RefineOutcome ro = execute_with_refinement(in, draft, ctx, chat, p.max_retries);
  out.retries = ro.retries;
  out.trace["retries"] = ro.retries;
  json errors = json::array();
  for (const auto& e : ro.errors) errors.push_back(e.describe());
  out.trace["errors"] = errors;
  const RelationalPlan* final_plan = ro.plan ? &*ro.plan : (draft.plan ? &*draft.plan : nullptr);
  if (final_plan) {
    out.trace["plan"] = plan_to_json(*final_plan);
    out.trace["sql"] = plan_to_sql(*final_plan);
  }
  out.result = ro.result;
  out.trace["result"] = to_json(ro.result);
  if (!ro.result.ok()) return failed(Stage::execution, ro.result.error->describe());
  out.answer = ro.result.scalar;
  out.trace["answer"] = out.answer ? value_to_json(*out.answer) : json(nullptr);
  out.trace["stage"] = "none";
  return out;
}

AnswerOutcome answer(std::string_view question, const Corpus& corpus, const RelationshipGraph& graph,
                     const CoverageScorer& scorer, const Providers& providers, std::size_t k,
                     const RulePlanner* planner) {
  const Pipeline p = Pipeline::build(corpus, graph, scorer, providers, planner);
  return answer(question, p, k);
}

}  // namespace lakeqa
