#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/decomposer.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/plan.hpp"
#include "lakeqa/providers.hpp"
#include "lakeqa/retriever.hpp"

namespace lakeqa {

/// Everything the planner may look at for one question.
struct PlanningInput {
  std::string question;
  std::vector<SubQuestion> subquestions;
  std::vector<const Table*> tables;   // retrieved tables plus their cluster members
  const Decomposition* decomposition = nullptr;
  const RelationshipGraph* graph = nullptr;
  double fuzzy_delta = 0.2;  // threshold for fuzzy joins the rule planner emits
};

/// Table schemas, cluster ids and the join evidence among the given tables.
std::string describe_tables(const PlanningInput& in);
/// Need -> column hints from the decomposer's mapping.
std::string describe_knowledge(const PlanningInput& in);

std::string plan_step_prompt(const PlanningInput& in, std::size_t step, const std::string& prior_plan);
std::string refine_prompt(const PlanningInput& in, const std::string& failed_plan, const ExecError& error);

/// Plan for a single step response: {"reasoning": ..., "Final Plan": {...}}.
/// Throws PlanParseError.
RelationalPlan parse_plan_response(const std::string& response, const char* field);

/// Gold plans keyed by normalized question text, plus a heuristic compiler
/// for questions without one.
class RulePlanner {
 public:
  void add(std::string_view question, RelationalPlan plan);
  /// Accepts [{question, plan | gold_plan}] or {"questions": [...]}.
  void load(const std::filesystem::path& file);
  std::size_t size() const { return gold_.size(); }

  /// The registered plan when every table it touches is available.
  std::optional<RelationalPlan> lookup(std::string_view question, const std::set<std::string>& available) const;

  static std::string key(std::string_view question);

 private:
  std::map<std::string, RelationalPlan> gold_;
};

/// Scan or union per sub-question, joins on the strongest evidence pair,
/// filters from comparison phrases and grounded values, a final aggregate
/// chosen from the question wording.
std::optional<RelationalPlan> heuristic_plan(const PlanningInput& in, std::vector<std::string>* notes = nullptr);

struct PlanDraft {
  std::optional<RelationalPlan> plan;
  std::string raw;                  // last provider response, re-prompt payload on failure
  std::optional<ExecError> error;   // parse or step-shape failure
  std::vector<std::string> steps;   // raw response per step
  bool rule_based = false;
  bool gold = false;
  std::vector<std::string> notes;
};

/// One prompt per sub-question in order, each extending the previous plan.
/// Without a chat provider the rule planner answers (gold first, then heuristic).
PlanDraft generate_plan_cot(const PlanningInput& in, const ChatProvider* chat, const RulePlanner* rules);

struct RefineOutcome {
  ExecResult result;
  std::optional<RelationalPlan> plan;
  std::size_t retries = 0;
  std::vector<ExecError> errors;  // one per failed attempt, in order
};

inline constexpr std::size_t kMaxRefineRetries = 3;

/// Re-prompts with the error until a plan executes or the budget runs out.
RefineOutcome refine_plan(const PlanningInput& in, std::string failed_plan, ExecError error, const ExecContext& ctx,
                          const ChatProvider* chat, std::size_t max_retries = kMaxRefineRetries);

/// Executes the draft and refines only on failure.
RefineOutcome execute_with_refinement(const PlanningInput& in, const PlanDraft& draft, const ExecContext& ctx,
                                      const ChatProvider* chat, std::size_t max_retries = kMaxRefineRetries);

/// Indexes and options shared across questions.
struct Pipeline {
  const Corpus* corpus = nullptr;
  const RelationshipGraph* graph = nullptr;
  const CoverageScorer* scorer = nullptr;
  const Providers* providers = nullptr;
  const RulePlanner* planner = nullptr;
  SnippetIndex snippets;
  ClusterIndex clusters;
  DecomposerOptions decomposer;
  RetrievalOptions retrieval;
  std::size_t max_retries = kMaxRefineRetries;
  double fuzzy_delta = 0.2;

  static Pipeline build(const Corpus& corpus, const RelationshipGraph& graph, const CoverageScorer& scorer,
                        const Providers& providers, const RulePlanner* planner = nullptr);
};

enum class Stage { none, decomposition, retrieval, planning, execution };
std::string_view to_string(Stage s);

struct AnswerOutcome {
  Stage failed_stage = Stage::none;
  std::string error;
  std::optional<Value> answer;  // scalar result, or the single cell of a one-row table
  ExecResult result;
  std::vector<std::string> retrieved;
  std::size_t retries = 0;
  bool gold_plan = false;
  nlohmann::json trace;

  bool ok() const { return failed_stage == Stage::none; }
};

AnswerOutcome answer(std::string_view question, const Pipeline& pipeline, std::size_t k);

/// Convenience form that builds the indexes for a single question.
AnswerOutcome answer(std::string_view question, const Corpus& corpus, const RelationshipGraph& graph,
                     const CoverageScorer& scorer, const Providers& providers, std::size_t k,
                     const RulePlanner* planner = nullptr);

}  // namespace lakeqa
