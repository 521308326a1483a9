#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "lakeqa/plan.hpp"
#include "lakeqa/reasoner.hpp"

using namespace lakeqa;
using nlohmann::json;

namespace {

Corpus school_lake() {
  Corpus c;
  c.add(make_table("schools", "schools", {"school id", "school name", "city", "charter funded"},
                   {{"1", "Hill High", "New York", "yes"},
                    {"2", "Lake School", "Boston", "no"},
                    {"3", "Park Academy", "new york", "yes"},
                    {"4", "River High", "Chicago", "yes"}}));
  c.add(make_table("scores", "SAT scores", {"school id", "math score"},
                   {{"1", "600"}, {"2", "540"}, {"3", "580"}, {"4", "500"}}));
  c.add(make_table("cities", "cities", {"city name", "state"}, {{"Nw York", "NY"}, {"Boston", "MA"}}));
  return c;
}

PlanNode scan(std::string id, std::string table) {
  PlanNode n;
  n.id = std::move(id);
  n.op = OpKind::scan;
  n.alias = n.table = std::move(table);
  return n;
}

Predicate compare(Predicate::Op op, std::string column, Value v) {
  Predicate p;
  p.op = op;
  p.column = std::move(column);
  p.values = {std::move(v)};
  return p;
}

PlanNode count_of(std::string id, std::string input) {
  PlanNode n;
  n.id = std::move(id);
  n.op = OpKind::aggregate;
  n.inputs = {std::move(input)};
  n.fn = AggFn::count;
  n.as = "n";
  return n;
}

// Charter-funded schools with a math score over 560.
RelationalPlan charter_plan() {
  RelationalPlan p;
  PlanNode s = scan("s", "schools");
  PlanNode t = scan("t", "scores");
  PlanNode j;
  j.id = "j";
  j.op = OpKind::join;
  j.inputs = {"s", "t"};
  j.keys = {{"schools.school id", "scores.school id"}};
  PlanNode f;
  f.id = "f";
  f.op = OpKind::filter;
  f.inputs = {"j"};
  f.predicate.op = Predicate::Op::and_;
  f.predicate.args = {compare(Predicate::Op::gt, "math score", 560.0),
                      compare(Predicate::Op::eq, "charter funded", std::string("yes"))};
  p.nodes = {s, t, j, f, count_of("c", "f")};
  p.root = "c";
  return p;
}

ExecContext context_for(const Corpus& c) {
  ExecContext ctx;
  ctx.corpus = &c;
  return ctx;
}

}  // namespace

TEST(Plan, JsonRoundTrip) {
  RelationalPlan p = charter_plan();
  PlanNode srt;
  srt.id = "o";
  srt.op = OpKind::sort;
  srt.inputs = {"f"};
  srt.sort_keys = {{"math score", true}};
  PlanNode lim;
  lim.id = "l";
  lim.op = OpKind::limit;
  lim.inputs = {"o"};
  lim.limit = 2;
  p.nodes.push_back(srt);
  p.nodes.push_back(lim);
  p.nodes[2].mode = JoinMode::fuzzy;
  p.nodes[2].delta = 0.1;
  EXPECT_EQ(plan_from_json(plan_to_json(p)), p);
  EXPECT_EQ(plan_from_json(json::parse(plan_to_json(p).dump())), p);
  EXPECT_THROW(plan_from_json(json::array()), PlanParseError);
  EXPECT_THROW(plan_from_json(json{{"nodes", 3}}), PlanParseError);
}

TEST(Plan, ExecutesAJoinFilterCount) {
  const Corpus c = school_lake();
  const ExecResult r = execute_plan(charter_plan(), context_for(c));
  ASSERT_TRUE(r.ok()) << r.error->describe();
  ASSERT_TRUE(r.scalar.has_value());
  EXPECT_EQ(std::get<double>(*r.scalar), 2.0);
}

TEST(Plan, ValidationReportsEachKind) {
  const Corpus c = school_lake();
  const ExecContext ctx = context_for(c);
  auto kind_of = [&](const RelationalPlan& p) {
    auto e = validate_plan(p, ctx);
    EXPECT_TRUE(e.has_value());
    return e ? e->kind : ExecError::Kind::malformed_plan;
  };

  RelationalPlan p;
  p.nodes = {scan("s", "nowhere"), count_of("c", "s")};
  p.root = "c";
  EXPECT_EQ(kind_of(p), ExecError::Kind::unknown_table);

  p = charter_plan();
  p.nodes[3].predicate.args[0].column = "reading score";
  EXPECT_EQ(kind_of(p), ExecError::Kind::unknown_column);

  p = charter_plan();
  p.nodes[4].fn = AggFn::sum;
  p.nodes[4].agg_column = "school name";
  EXPECT_EQ(kind_of(p), ExecError::Kind::aggregate_on_text);

  p = charter_plan();
  p.nodes[2].keys = {{"schools.school name", "scores.math score"}};
  EXPECT_EQ(kind_of(p), ExecError::Kind::type_mismatch);

  p = charter_plan();
  p.root = "missing";
  EXPECT_EQ(kind_of(p), ExecError::Kind::malformed_plan);

  p = charter_plan();
  p.nodes[3].inputs = {"c"};  // f -> c -> f
  EXPECT_EQ(kind_of(p), ExecError::Kind::malformed_plan);

  EXPECT_FALSE(validate_plan(charter_plan(), ctx).has_value());
}

TEST(Plan, AllowedSetIsEnforced) {
  const Corpus c = school_lake();
  ExecContext ctx = context_for(c);
  const std::set<std::string> allowed = {"schools"};
  ctx.allowed = &allowed;
  const ExecResult r = execute_plan(charter_plan(), ctx);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, ExecError::Kind::unknown_table);
}

TEST(Plan, FuzzyMatching) {
  EXPECT_TRUE(fuzzy_match("New York", "Nw York", 0.2));
  EXPECT_TRUE(fuzzy_match(" NEW YORK", "new york", 0.0));
  EXPECT_FALSE(fuzzy_match("New York", "Boston", 0.2));
  EXPECT_FALSE(fuzzy_match("New York", "Nw York", 0.0));
}

TEST(Plan, FuzzyJoinToleratesTypos) {
  const Corpus c = school_lake();
  RelationalPlan p;
  PlanNode j;
  j.id = "j";
  j.op = OpKind::join;
  j.inputs = {"s", "k"};
  j.keys = {{"city", "city name"}};
  j.mode = JoinMode::fuzzy;
  p.nodes = {scan("s", "schools"), scan("k", "cities"), j, count_of("c", "j")};
  p.root = "c";
  ExecResult r = execute_plan(p, context_for(c));
  ASSERT_TRUE(r.ok()) << r.error->describe();
  EXPECT_EQ(std::get<double>(*r.scalar), 3.0);  // two New York spellings and Boston
  p.nodes[2].mode = JoinMode::exact;
  r = execute_plan(p, context_for(c));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(std::get<double>(*r.scalar), 1.0);
}

TEST(Plan, UnionOfSplitTableIsTheWhole) {
  Corpus c;
  c.add(make_table("p1", "scores", {"id", "score"}, {{"1", "10"}, {"2", "20"}}));
  c.add(make_table("p2", "scores", {"id", "score"}, {{"3", "30.5"}}));
  RelationalPlan p;
  PlanNode u;
  u.id = "u";
  u.op = OpKind::union_cluster;
  u.alias = "scores";
  u.tables = {"p1", "p2"};
  PlanNode a;
  a.id = "a";
  a.op = OpKind::aggregate;
  a.inputs = {"u"};
  a.fn = AggFn::sum;
  a.agg_column = "score";
  p.nodes = {u, a};
  p.root = "a";
  const ExecResult r = execute_plan(p, context_for(c));
  ASSERT_TRUE(r.ok()) << r.error->describe();
  EXPECT_EQ(std::get<double>(*r.scalar), 60.5);
}

TEST(Plan, ExactSumIgnoresOrder) {
  EXPECT_EQ(exact_sum({1e16, 1.0, -1e16}), 1.0);
  EXPECT_EQ(exact_sum({0.1, 0.2, 0.3}), exact_sum({0.3, 0.2, 0.1}));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mag(-20, 20);
  std::vector<double> xs;
  for (int i = 0; i < 300; ++i) xs.push_back(std::ldexp(mag(rng), static_cast<int>(rng() % 60) - 30));
  const double base = exact_sum(xs);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(xs.begin(), xs.end(), rng);
    ASSERT_EQ(exact_sum(xs), base);
  }
}

TEST(Plan, MutatedPlansNeverThrowFromExecution) {
  const Corpus c = school_lake();
  const ExecContext ctx = context_for(c);
  const json base = plan_to_json(charter_plan());
  const std::vector<json> junk = {json(), json(-1), json("#9"), json("school id"), json::array(), json::object(),
                                  json(1e300), json("nodes")};
  std::mt19937_64 rng(23);
  std::size_t parsed = 0;
  for (int round = 0; round < 2000; ++round) {
    json doc = base;
    for (int m = 0, n = 1 + static_cast<int>(rng() % 3); m < n; ++m) {
      // walk to a random spot and replace or drop it
      json* at = &doc;
      while ((at->is_object() || at->is_array()) && !at->empty() && rng() % 3 != 0) {
        auto it = at->begin();
        std::advance(it, static_cast<long>(rng() % at->size()));
        at = &*it;
      }
      *at = junk[rng() % junk.size()];
    }
    RelationalPlan p;
    try {
      p = plan_from_json(doc);
    } catch (const PlanParseError&) {
      continue;
    }
    ++parsed;
    EXPECT_NO_THROW(execute_plan(p, ctx)) << doc.dump();
  }
  EXPECT_GT(parsed, 0u);
}

TEST(Reasoner, RulePlannerLookup) {
  RulePlanner rules;
  rules.add("How many charter-funded schools score over 560?", charter_plan());
  EXPECT_EQ(rules.size(), 1u);
  EXPECT_EQ(RulePlanner::key("  How many  Charter-funded schools? "), RulePlanner::key("how many charter funded schools"));
  EXPECT_TRUE(rules.lookup("how many charter funded schools score over 560", {"schools", "scores"}).has_value());
  EXPECT_FALSE(rules.lookup("how many charter funded schools score over 560", {"schools"}).has_value());
  EXPECT_FALSE(rules.lookup("something else", {"schools", "scores"}).has_value());
}

TEST(Reasoner, GoldPlanWithoutChat) {
  const Corpus c = school_lake();
  RulePlanner rules;
  rules.add("q", charter_plan());
  PlanningInput in;
  in.question = "q";
  for (const auto& t : c.tables()) in.tables.push_back(&t);
  const PlanDraft d = generate_plan_cot(in, nullptr, &rules);
  EXPECT_TRUE(d.rule_based);
  EXPECT_TRUE(d.gold);
  ASSERT_TRUE(d.plan.has_value());
  EXPECT_EQ(*d.plan, charter_plan());
}

TEST(Reasoner, CotStepsExtendThePlan) {
  const Corpus c = school_lake();
  PlanningInput in;
  in.question = "q";
  in.subquestions = {{"Which schools are charter funded?", {0}, "schools", 0, 0},
                     {"Which of #1 score over 560?", {1}, "scores", 1, 1}};
  for (const auto& t : c.tables()) in.tables.push_back(&t);

  RelationalPlan first;
  first.nodes = {scan("s", "schools"), count_of("c", "s")};
  first.root = "c";
  std::vector<std::string> prompts;
  ScriptedChat chat;
  chat.add_responder([&](const std::string& p) -> std::optional<std::string> {
    prompts.push_back(p);
    const RelationalPlan& plan = prompts.size() == 1 ? first : charter_plan();
    return json{{"reasoning", "step"}, {"Final Plan", plan_to_json(plan)}}.dump();
  });
  const PlanDraft d = generate_plan_cot(in, &chat, nullptr);
  EXPECT_EQ(prompts.size(), 2u);
  EXPECT_FALSE(d.rule_based);
  ASSERT_TRUE(d.plan.has_value());
  EXPECT_EQ(*d.plan, charter_plan());
  // the second prompt carries the first step's plan
  EXPECT_NE(prompts[1].find(plan_to_json(first).dump()), std::string::npos);
}

TEST(Reasoner, FirstStepMustReadOneSource) {
  const Corpus c = school_lake();
  PlanningInput in;
  in.question = "q";
  for (const auto& t : c.tables()) in.tables.push_back(&t);
  ScriptedChat chat;
  chat.add_responder([&](const std::string&) -> std::optional<std::string> {
    return json{{"Final Plan", plan_to_json(charter_plan())}}.dump();
  });
  const PlanDraft d = generate_plan_cot(in, &chat, nullptr);
  EXPECT_FALSE(d.plan.has_value());
  ASSERT_TRUE(d.error.has_value());
  EXPECT_EQ(d.error->kind, ExecError::Kind::malformed_plan);
}

TEST(Reasoner, RefinementBudget) {
  const Corpus c = school_lake();
  const ExecContext ctx = context_for(c);
  PlanningInput in;
  in.question = "q";
  RelationalPlan broken = charter_plan();
  broken.nodes[3].predicate.args[0].column = "reading score";
  const ExecError err = *validate_plan(broken, ctx);

  ScriptedChat always_bad;
  always_bad.add_responder([&](const std::string&) -> std::optional<std::string> {
    return json{{"plan", plan_to_json(broken)}}.dump();
  });
  RefineOutcome out = refine_plan(in, plan_to_json(broken).dump(), err, ctx, &always_bad);
  EXPECT_EQ(out.retries, kMaxRefineRetries);
  EXPECT_EQ(out.errors.size(), kMaxRefineRetries + 1);
  EXPECT_FALSE(out.result.ok());

  int calls = 0;
  ScriptedChat fixes_second;
  fixes_second.add_responder([&](const std::string&) -> std::optional<std::string> {
    return ++calls < 2 ? std::string("not json") : json{{"plan", plan_to_json(charter_plan())}}.dump();
  });
  out = refine_plan(in, plan_to_json(broken).dump(), err, ctx, &fixes_second);
  EXPECT_EQ(out.retries, 2u);
  ASSERT_TRUE(out.result.ok());
  EXPECT_EQ(std::get<double>(*out.result.scalar), 2.0);

  out = refine_plan(in, "", err, ctx, nullptr);
  EXPECT_EQ(out.retries, 0u);
  EXPECT_FALSE(out.result.ok());
}

TEST(Reasoner, AnswerWithGoldPlanAndUnmatchedQuestion) {
  const Corpus c = school_lake();
  const Providers providers = Providers::deterministic();
  const RelationshipGraph g = build_graph(c, {}, *providers.embedder);
  const CoverageScorer scorer;
  RulePlanner rules;
  const std::string q = "How many charter funded schools have a math score over 560?";
  rules.add(q, charter_plan());
  const AnswerOutcome a = answer(q, c, g, scorer, providers, 5, &rules);
  ASSERT_TRUE(a.ok()) << a.error;
  EXPECT_TRUE(a.gold_plan);
  ASSERT_TRUE(a.answer.has_value());
  EXPECT_EQ(std::get<double>(*a.answer), 2.0);
  EXPECT_TRUE(a.trace.is_object());

  const AnswerOutcome none = answer("how many?", c, g, scorer, providers, 5, &rules);
  EXPECT_FALSE(none.ok());
  EXPECT_EQ(none.failed_stage, Stage::decomposition);
}

TEST(Plan, LaureateCitationFixture) {
  // Female laureates after 2010, whose citation counts sit in two unionable
  // tables; the gender table spells some names differently.
  Corpus c;
  c.add(make_table("laureates", "physics laureates", {"name", "year"},
                   {{"Donna Strickland", "2018"}, {"Andrea Ghez", "2020"}, {"Anne L'Huillier", "2023"},
                    {"Roger Penrose", "2020"}, {"Pierre Agostini", "2023"}, {"Maria Goeppert Mayer", "1963"}}));
  c.add(make_table("gender", "gender", {"name", "gender"},
                   {{"Dona Strickland", "F"}, {"Andrea Gez", "F"}, {"Anne LHuillier", "F"}, {"Roger Penrose", "M"},
                    {"Pierre Agostini", "M"}, {"Maria Goeppert Mayer", "F"}}));
  c.add(make_table("citations_a", "citations", {"name", "citations"},
                   {{"Donna Strickland", "100"}, {"Roger Penrose", "500"}}));
  c.add(make_table("citations_b", "citations", {"name", "citations"},
                   {{"Andrea Ghez", "90"}, {"Anne L'Huillier", "60"}, {"Maria Goeppert Mayer", "300"}}));

  RelationalPlan p;
  PlanNode j1;
  j1.id = "j1";
  j1.op = OpKind::join;
  j1.inputs = {"l", "g"};
  j1.keys = {{"laureates.name", "gender.name"}};
  j1.mode = JoinMode::fuzzy;
  j1.delta = 0.2;
  PlanNode f;
  f.id = "f";
  f.op = OpKind::filter;
  f.inputs = {"j1"};
  f.predicate.op = Predicate::Op::and_;
  f.predicate.args = {compare(Predicate::Op::gt, "year", 2010.0), compare(Predicate::Op::eq, "gender", std::string("F"))};
  PlanNode u;
  u.id = "u";
  u.op = OpKind::union_cluster;
  u.alias = "cites";
  u.tables = {"citations_a", "citations_b"};
  PlanNode j2;
  j2.id = "j2";
  j2.op = OpKind::join;
  j2.inputs = {"f", "u"};
  j2.keys = {{"laureates.name", "cites.name"}};
  PlanNode a;
  a.id = "a";
  a.op = OpKind::aggregate;
  a.inputs = {"j2"};
  a.fn = AggFn::sum;
  a.agg_column = "cites.citations";
  p.nodes = {scan("l", "laureates"), scan("g", "gender"), j1, f, u, j2, a};
  p.root = "a";

  const ExecResult r = execute_plan(p, context_for(c));
  ASSERT_TRUE(r.ok()) << r.error->describe();
  EXPECT_EQ(std::get<double>(*r.scalar), 250.0);  // 100 + 90 + 60, by hand

  // exact matching loses the misspelled names
  p.nodes[2].mode = JoinMode::exact;
  const ExecResult exact = execute_plan(p, context_for(c));
  ASSERT_TRUE(exact.ok());
  EXPECT_TRUE(!exact.scalar || is_null(*exact.scalar) || std::get<double>(*exact.scalar) == 0.0);
}

// Decomposes against the whole corpus, the way the pipeline prepares the planner.
PlanningInput planning_input(const std::string& q, const Corpus& c, const RelationshipGraph& g, const Providers& p,
                             Decomposition& d) {
  d = decompose(q, c, SnippetIndex::build(c, *p.embedder), g, p);
  PlanningInput in;
  in.question = q;
  in.subquestions = d.subquestions;
  for (const auto& t : c.tables()) in.tables.push_back(&t);
  in.decomposition = &d;
  in.graph = &g;
  return in;
}

TEST(Reasoner, SingleSubquestionCountsRows) {
  Corpus c;
  c.add(school_lake().at("schools"));
  const Providers p = Providers::deterministic();
  const RelationshipGraph g = build_graph(c, {}, *p.embedder);
  Decomposition d;
  const PlanningInput in = planning_input("How many schools are there?", c, g, p, d);
  ASSERT_EQ(in.subquestions.size(), 1u);
  const PlanDraft draft = generate_plan_cot(in, nullptr, nullptr);
  ASSERT_TRUE(draft.plan.has_value()) << ::testing::PrintToString(draft.notes);
  ASSERT_EQ(draft.plan->nodes.size(), 2u);
  EXPECT_EQ(draft.plan->nodes[0].op, OpKind::scan);
  EXPECT_EQ(draft.plan->nodes[1].op, OpKind::aggregate);
  EXPECT_EQ(draft.plan->nodes[1].fn, AggFn::count);
  const ExecResult r = execute_plan(*draft.plan, context_for(c));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(std::get<double>(*r.scalar), 4.0);
}

TEST(Reasoner, HeuristicJoinUsesTheEvidencePair) {
  Corpus c;
  c.add(school_lake().at("schools"));
  c.add(school_lake().at("scores"));
  const Providers p = Providers::deterministic();
  const RelationshipGraph g = build_graph(c, {}, *p.embedder);
  const auto evidence = g.evidence_between("schools", "scores");
  ASSERT_EQ(evidence.size(), 1u);
  Decomposition d;
  const PlanningInput in = planning_input("What is the total math score of charter funded schools?", c, g, p, d);
  ASSERT_EQ(in.subquestions.size(), 2u);
  const PlanDraft draft = generate_plan_cot(in, nullptr, nullptr);
  ASSERT_TRUE(draft.plan.has_value()) << ::testing::PrintToString(draft.notes);
  std::vector<const PlanNode*> joins;
  for (const auto& n : draft.plan->nodes)
    if (n.op == OpKind::join) joins.push_back(&n);
  ASSERT_EQ(joins.size(), 1u);
  ASSERT_EQ(joins[0]->keys.size(), 1u);
  const auto& ev = evidence[0];
  // keys may name the column or give its position
  auto refers_to = [&](const std::string& ref, const std::string& table, std::size_t col) {
    return ref == table + "." + c.at(table).headers[col] || ref == table + ".#" + std::to_string(col);
  };
  const auto& [ka, kb] = joins[0]->keys[0];
  EXPECT_TRUE((refers_to(ka, ev.table_a, ev.col_a) && refers_to(kb, ev.table_b, ev.col_b)) ||
              (refers_to(ka, ev.table_b, ev.col_b) && refers_to(kb, ev.table_a, ev.col_a)))
      << ka << " = " << kb;
  EXPECT_TRUE(execute_plan(*draft.plan, context_for(c)).ok());
}
