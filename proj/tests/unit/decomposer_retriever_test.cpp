#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "lakeqa/decomposer.hpp"
#include "lakeqa/retriever.hpp"
#include "lakeqa/synthetic.hpp"

using namespace lakeqa;

namespace {

RelationshipGraph hand_graph(std::vector<std::vector<std::string>> clusters,
                             const std::vector<std::pair<std::size_t, std::size_t>>& links) {
  std::vector<GraphEdge> edges;
  for (auto [a, b] : links) edges.push_back({a, b, {{clusters[a][0], 0, clusters[b][0], 0, 1.0}}});
  return RelationshipGraph({}, "hand", std::move(clusters), std::move(edges));
}

InformationNeed need(std::string phrase, std::size_t begin) {
  return {std::move(phrase), PhraseKind::noun, begin, begin + 1, 0};
}

bool has_need(const std::vector<InformationNeed>& needs, const std::string& text) {
  return std::any_of(needs.begin(), needs.end(), [&](const auto& n) { return normalize_phrase(n.phrase) == text; });
}

// A -- C -- B, with no direct link between A and B.
struct ChainLake {
  Corpus corpus;
  RelationshipGraph graph;

  ChainLake() {
    corpus.add(make_table("a", "employees", {"employee name", "dept id"}, {{"Ann", "1"}, {"Bob", "2"}}));
    corpus.add(make_table("b", "cities", {"city id", "city name"}, {{"10", "Oslo"}, {"20", "Lima"}}));
    corpus.add(make_table("c", "departments", {"dept id", "city id", "department budget"},
                          {{"1", "10", "500"}, {"2", "20", "700"}}));
    graph = hand_graph({{"a"}, {"b"}, {"c"}}, {{0, 2}, {1, 2}});
  }
};

}  // namespace

TEST(Decomposer, NormalizeAndStopPhrases) {
  EXPECT_EQ(normalize_phrase("  Charter-Funded_Schools "), "charter funded schools");
  EXPECT_TRUE(is_stop_phrase("how many"));
  EXPECT_TRUE(is_stop_phrase("What"));
  EXPECT_FALSE(is_stop_phrase("schools"));
}

TEST(Decomposer, NeedsOfTheCharterQuestion) {
  RuleChunker chunker;
  const auto needs = extract_information_needs(
      "Among the schools with the average Math score over 560 in the SAT test, how many schools are directly "
      "charter-funded?",
      chunker);
  EXPECT_TRUE(has_need(needs, "schools"));
  EXPECT_TRUE(has_need(needs, "sat test"));
  EXPECT_TRUE(has_need(needs, "math score over 560"));
  EXPECT_TRUE(std::any_of(needs.begin(), needs.end(), [](const auto& n) {
    return normalize_phrase(n.phrase).find("charter funded") != std::string::npos;
  }));
  // repeats are dropped and spans stay in order
  EXPECT_EQ(std::count_if(needs.begin(), needs.end(), [](const auto& n) { return normalize_phrase(n.phrase) == "schools"; }), 1);
  for (std::size_t i = 1; i < needs.size(); ++i) EXPECT_LT(needs[i - 1].begin, needs[i].begin);
  EXPECT_THROW(extract_information_needs("how many?", chunker), DecompositionError);
}

TEST(Decomposer, ContextRelevanceNeedsConnectivity) {
  const auto g = hand_graph({{"a"}, {"b"}, {"c"}}, {{0, 1}});
  NeedMapping m;
  m.assignments = {{0, "a", 0, 0.9}, {1, "b", 1, 0.7}};
  EXPECT_DOUBLE_EQ(context_relevance(m, g), 1.6);
  m.assignments[1].table_id = "c";
  EXPECT_EQ(context_relevance(m, g), 0.0);
  m.assignments = {{0, "c", 0, 0.4}};
  EXPECT_DOUBLE_EQ(context_relevance(m, g), 0.4);
}

TEST(Decomposer, BacktracksPastAnIsolatedSeed) {
  // X is the best match for the first need but links to nothing; B, the only
  // match for the second need, links to A.
  const auto g = hand_graph({{"A"}, {"B"}, {"X"}}, {{0, 1}});
  const std::vector<InformationNeed> needs = {need("first", 0), need("second", 10)};
  const std::vector<CandidateSet> sets = {{0, {{"X", 0, 0.95}, {"A", 0, 0.9}}}, {1, {{"B", 1, 0.6}}}};
  const NeedMapping m = disambiguate(needs, sets, g);
  ASSERT_EQ(m.assignments.size(), 2u);
  EXPECT_EQ(m.assignments[0].table_id, "A");
  EXPECT_EQ(m.assignments[1].table_id, "B");
  EXPECT_DOUBLE_EQ(m.score, 1.5);
  EXPECT_EQ(m.seeds_tried, 2u);
  EXPECT_FALSE(m.seeds_exhausted);
  EXPECT_FALSE(m.disconnected);
}

TEST(Decomposer, ExhaustedSeedsFallBackToArgmax) {
  const auto g = hand_graph({{"A"}, {"B"}}, {});
  const std::vector<InformationNeed> needs = {need("first", 0), need("second", 10)};
  const std::vector<CandidateSet> sets = {{0, {{"A", 0, 0.9}}}, {1, {{"B", 0, 0.8}}}};
  const NeedMapping m = disambiguate(needs, sets, g);
  EXPECT_TRUE(m.seeds_exhausted);
  EXPECT_TRUE(m.disconnected);
  EXPECT_EQ(m.score, 0.0);
  EXPECT_THROW(disambiguate(needs, {{0, {}}, {1, {{"B", 0, 0.8}}}}, g), std::invalid_argument);
}

TEST(Decomposer, SnippetTopMatchesBruteForce) {
  const Corpus corpus = synthetic_corpus(21, 12);
  HashingEmbedder e;
  const SnippetIndex index = SnippetIndex::build(corpus, e);
  ASSERT_FALSE(index.empty());
  for (const std::string q : {"employee salary", "city population", "product price", "zzz"}) {
    const Embedding qe = e.embed_text(q);
    std::vector<ColumnCandidate> all;
    for (const auto& entry : index.entries()) all.push_back({entry.table_id, entry.column, similarity(qe, entry.embedding)});
    std::sort(all.begin(), all.end(), candidate_before);
    all.resize(std::min<std::size_t>(all.size(), 7));
    EXPECT_EQ(index.top(qe, 7), all) << q;
  }
}

TEST(Decomposer, TemplateSubquestionsPartitionNeeds) {
  ChainLake lake;
  const std::vector<InformationNeed> needs = {need("employee", 0), need("budget", 10), need("dept", 20)};
  NeedMapping m;
  m.assignments = {{0, "a", 0, 0.5}, {1, "c", 2, 0.8}, {2, "c", 0, 0.3}};
  const auto r = generate_subquestions("employee budget dept", needs, m, lake.corpus, lake.graph, nullptr);
  EXPECT_TRUE(r.template_fallback);
  ASSERT_EQ(r.subquestions.size(), 2u);
  // the group holding the best similarity comes first
  EXPECT_EQ(r.subquestions[0].table_id, "c");
  EXPECT_EQ(r.subquestions[0].needs, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(r.subquestions[1].needs, (std::vector<std::size_t>{0}));
  EXPECT_EQ(r.subquestions[0].text, "Which department budget, dept id satisfy budget, dept?");
}

TEST(Decomposer, ScriptedSubquestionsAndRetry) {
  ChainLake lake;
  const std::vector<InformationNeed> needs = {need("employee", 0), need("budget", 10)};
  NeedMapping m;
  m.assignments = {{0, "a", 0, 0.5}, {1, "c", 2, 0.8}};
  int calls = 0;
  ScriptedChat chat;
  chat.add_responder([&](const std::string& p) -> std::optional<std::string> {
    ++calls;
    if (p.find("previous answer") == std::string::npos) return R"({"Sub-questions": ["only one"]})";
    return R"({"Sub-questions": ["What is the budget?", "Which employee works in #1?"]})";
  });
  const auto r = generate_subquestions("q", needs, m, lake.corpus, lake.graph, &chat);
  EXPECT_EQ(calls, 2);
  EXPECT_FALSE(r.template_fallback);
  ASSERT_EQ(r.subquestions.size(), 2u);
  EXPECT_EQ(r.subquestions[1].text, "Which employee works in #1?");
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Retriever, HingeLoss) {
  EXPECT_NEAR(hinge(0.9, 0.2), 0.3, 1e-12);
  EXPECT_EQ(hinge(2.0, 0.5), 0.0);
  EXPECT_EQ(hinge(0.0, 0.0), 1.0);
}

TEST(Retriever, SatisfiedMarginsLeaveWeightsAlone) {
  Features pos{}, neg{};
  pos.fill(1.0);
  neg.fill(0.0);
  CoverageScorer init;
  init.weights.fill(1.0);  // margin 5 already
  TrainingLog log;
  const CoverageScorer out = train_on_features({{pos, neg}}, 10, 0.1, init, &log);
  EXPECT_EQ(out.weights, init.weights);
  for (double l : log.loss) EXPECT_EQ(l, 0.0);
  EXPECT_THROW(train_on_features({}, 1, 0.1), std::invalid_argument);
  EXPECT_THROW(train_on_features({{pos, neg}}, 1, 0.0), std::invalid_argument);
}

TEST(Retriever, TrainingLossNeverRisesOnSeparableFeatures) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<Features, Features>> pairs;
  for (int i = 0; i < 50; ++i) {
    Features p{}, n{};
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      n[f] = u(rng) * 0.5;
      p[f] = n[f] + (f == 2 ? 0.5 : 0.0);
    }
    pairs.push_back({p, n});
  }
  TrainingLog log;
  train_on_features(pairs, 100, 0.05, {}, &log);
  ASSERT_EQ(log.loss.size(), 101u);
  for (std::size_t i = 1; i < log.loss.size(); ++i) EXPECT_LE(log.loss[i], log.loss[i - 1] + 1e-9);
  EXPECT_LT(log.loss.back(), log.loss.front());
}

TEST(Retriever, TriplesDropTheAnswerHeader) {
  ChainLake lake;
  const auto r = make_training_triples(
      {{"what is the department budget", "c", 2}, {"x", "c", 7}, {"y", "nope", 0}}, lake.corpus);
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.errors.size(), 2u);
  const auto& t = r.triples[0];
  EXPECT_EQ(t.positive.headers.size(), 3u);
  EXPECT_EQ(t.negative.headers, (std::vector<std::string>{"dept id", "city id"}));
}

TEST(Retriever, LexicalCoverageBoundsAndGrowth) {
  HashingEmbedder e;
  const std::string q = "total budget of departments located in cities";
  Table t = make_table("t", "departments located", {"total budget", "cities"}, {{"1", "Oslo"}});
  EXPECT_EQ(coverage_features(q, TableDocument::of(t), e)[1], 1.0);

  t = make_table("t", "departments", {"dept id"}, {{"1"}});
  Features prev = coverage_features(q, TableDocument::of(t), e);
  for (const std::string h : {"budget", "city name", "floor", "manager"}) {
    t.headers.push_back(h);
    t.columns.push_back({t.columns[0][0]});
    const Features now = coverage_features(q, TableDocument::of(t), e);
    EXPECT_GE(now[1], prev[1]);
    prev = now;
  }
}

TEST(Retriever, RemovedQuestionHeaderLowersHeaderCoverage) {
  ChainLake lake;
  HashingEmbedder e;
  const auto r = make_training_triples({{"what is the department budget", "c", 2}}, lake.corpus);
  ASSERT_EQ(r.triples.size(), 1u);
  const auto& t = r.triples[0];
  const Features pos = coverage_features(t.question, t.positive, e);
  const Features neg = coverage_features(t.question, t.negative, e);
  EXPECT_DOUBLE_EQ(pos[2], 1.0 / 3.0);
  EXPECT_EQ(neg[2], 0.0);
}

TEST(Retriever, SelectTopkKeepsBestGroupScore) {
  std::vector<TableGroup> groups(3);
  groups[0].members = {"a", "b"};
  groups[0].score = 0.7;
  groups[1].members = {"b", "c"};
  groups[1].score = 0.9;
  groups[2].members = {"d"};
  groups[2].score = 0.7;
  const auto top = select_topk(groups, 3, {{"a", 0.1}, {"d", 0.2}});
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].table_id, "b");
  EXPECT_EQ(top[0].score, 0.9);
  EXPECT_EQ(top[1].table_id, "c");
  // a and d tie at 0.7; d has the higher individual score
  EXPECT_EQ(top[2].table_id, "d");
  EXPECT_THROW(select_topk(groups, 0), std::invalid_argument);
}

TEST(Retriever, GroupsOnlyKeepConnectedCombinations) {
  ChainLake lake;
  HashingEmbedder e;
  CoverageScorer scorer;
  const std::vector<std::vector<ScoredTable>> cands = {{{"a", 0.9}, {"b", 0.1}}, {{"c", 0.5}}};
  const auto groups = build_groups("employee department", cands, lake.corpus, lake.graph, scorer, e);
  ASSERT_EQ(groups.size(), 2u);
  for (const auto& g : groups) EXPECT_TRUE(g.connected);
  EXPECT_TRUE(build_groups("q", {{{"a", 0.9}}, {{"b", 0.8}}}, lake.corpus, lake.graph, scorer, e).empty());
}

TEST(Retriever, ResidualParsing) {
  EXPECT_EQ(parse_residual(R"({"Residual Sub-question": "Which city?"})"), "Which city?");
  EXPECT_FALSE(parse_residual(R"({"Residual Sub-question": None})").has_value());
  EXPECT_FALSE(parse_residual(R"({"Residual Sub-question": null})").has_value());
  EXPECT_FALSE(parse_residual("None").has_value());
  EXPECT_THROW(parse_residual(R"({"other": 1})"), std::invalid_argument);
  EXPECT_THROW(parse_residual("no json here"), std::invalid_argument);
  EXPECT_THROW(parse_residual(R"({"Residual Sub-question": 3})"), std::invalid_argument);
}

TEST(Retriever, GapRefinementBridgesThroughAMissingTable) {
  ChainLake lake;
  HashingEmbedder e;
  CoverageScorer scorer;
  const auto clusters = ClusterIndex::build(lake.corpus, lake.graph, e);
  const std::vector<std::vector<ScoredTable>> cands = {{{"a", 0.9}}, {{"b", 0.8}}};
  const std::string q = "Which employees work in departments of cities named Oslo?";
  auto groups = build_groups(q, cands, lake.corpus, lake.graph, scorer, e);
  ASSERT_TRUE(groups.empty());

  ScriptedChat chat;
  chat.add_responder([](const std::string&) -> std::optional<std::string> {
    return R"({"Residual Sub-question": "Which department and city id link them?"})";
  });
  RefinementContext ctx;
  ctx.clusters = &clusters;
  const auto r = detect_gap_and_refine(q, groups, cands, lake.corpus, lake.graph, scorer, e, &chat,
                                       gap_threshold(scorer, 0.5), ctx);
  EXPECT_TRUE(r.triggered);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_TRUE(r.groups[0].refined);
  EXPECT_TRUE(r.groups[0].connected);
  EXPECT_EQ(r.groups[0].members, (std::vector<std::string>{"a", "b", "c"}));
  const auto top = select_topk(r.groups, 5);
  EXPECT_EQ(top.size(), 3u);
}

TEST(Retriever, StrongGroupsSkipRefinement) {
  ChainLake lake;
  HashingEmbedder e;
  CoverageScorer scorer;
  TableGroup g;
  g.members = {"c"};
  g.score = 10;
  const auto r = detect_gap_and_refine("q", {g}, {}, lake.corpus, lake.graph, scorer, e, nullptr, 0.5, {});
  EXPECT_FALSE(r.triggered);
  EXPECT_EQ(r.groups.size(), 1u);
}

TEST(Retriever, CoarseRankingMatchesBruteForce) {
  const Corpus corpus = synthetic_corpus(31, 25);
  HashingEmbedder e;
  const RelationshipGraph g = build_graph(corpus, {}, e);
  const ClusterIndex index = ClusterIndex::build(corpus, g, e);
  ASSERT_EQ(index.size(), g.cluster_count());
  for (const std::string q : {"employee salary by department", "city population", "zzz"}) {
    const Embedding qe = e.embed_text(q);
    std::vector<std::pair<std::size_t, double>> all;
    for (std::size_t c = 0; c < index.size(); ++c) all.push_back({c, similarity(qe, e.embed_text(index.document(c)))});
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    auto top = coarse_retrieve(q, index, e, 5);
    ASSERT_EQ(top.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(top[i].first, all[i].first) << q << " rank " << i;
      EXPECT_NEAR(top[i].second, all[i].second, 1e-12);
    }
    EXPECT_EQ(coarse_retrieve(q, index, e, 1000).size(), index.size());
  }
}
