#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

enum class OpKind { scan, union_cluster, filter, join, project, aggregate, sort, limit, distinct };
enum class AggFn { count, sum, avg, min, max };
enum class JoinMode { exact, fuzzy };

std::string_view to_string(OpKind op);
std::string_view to_string(AggFn fn);

struct Predicate {
  enum class Op { and_, or_, not_, eq, ne, lt, le, gt, ge, in, is_null, not_null };

  Op op = Op::eq;
  std::vector<Predicate> args;  // and / or / not
  std::string column;
  std::vector<Value> values;    // one for comparisons, any number for in

  bool operator==(const Predicate&) const = default;
};

struct ProjectItem {
  std::string column;
  std::string as;  // empty keeps the source name

  bool operator==(const ProjectItem&) const = default;
};

struct SortKey {
  std::string column;
  bool descending = false;

  bool operator==(const SortKey&) const = default;
};

/// Column references: "name", "qualifier.name", "#i" or "qualifier.#i" (0-based).
struct PlanNode {
  std::string id;
  OpKind op = OpKind::scan;
  std::string alias;                      // qualifier for scan / union output
  std::optional<std::size_t> subquestion;  // originating sub-question

  std::string table;                                // scan
  std::vector<std::string> tables;                  // union
  std::vector<std::vector<std::size_t>> alignment;  // union: member column for each output column
  std::vector<std::string> inputs;                  // one input; join: left, right
  Predicate predicate;                              // filter
  std::vector<std::pair<std::string, std::string>> keys;  // join
  JoinMode mode = JoinMode::exact;
  double delta = 0.2;
  std::vector<ProjectItem> columns;  // project
  AggFn fn = AggFn::count;           // aggregate
  std::string agg_column;            // empty: count rows
  bool agg_distinct = false;
  std::vector<std::string> group_by;
  std::string as;
  std::vector<SortKey> sort_keys;  // sort
  std::size_t limit = 0;           // limit

  bool operator==(const PlanNode&) const = default;
};

struct RelationalPlan {
  static constexpr int kFormatVersion = 1;

  std::vector<PlanNode> nodes;
  std::string root;

  const PlanNode* node(std::string_view id) const;
  std::set<std::string> referenced_tables() const;

  bool operator==(const RelationalPlan&) const = default;
};

struct ExecError {
  enum class Kind { unknown_table, unknown_column, type_mismatch, empty_join_key, aggregate_on_text, malformed_plan };

  Kind kind = Kind::malformed_plan;
  std::string message;
  std::string node;

  std::string describe() const;
};

std::string_view to_string(ExecError::Kind kind);

/// Throws PlanParseError on anything that is not a well-formed plan document.
class PlanParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RelationalPlan plan_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const RelationalPlan& plan);
nlohmann::json predicate_to_json(const Predicate& p);
Predicate predicate_from_json(const nlohmann::json& j);

/// Human-readable SQL rendering for traces; not parsed back.
std::string plan_to_sql(const RelationalPlan& plan);

struct ResultTable {
  std::vector<std::string> headers;
  std::vector<std::vector<Value>> rows;
};

struct ExecResult {
  std::optional<Value> scalar;  // set when the result is one row x one column
  ResultTable table;
  std::size_t row_count = 0;
  std::optional<ExecError> error;

  bool ok() const { return !error.has_value(); }
};

nlohmann::json to_json(const ExecResult& r);

/// Case-folded, trimmed strings; edit distance (with adjacent transpositions)
/// over the longer length must not exceed delta.
bool fuzzy_match(std::string_view a, std::string_view b, double delta = 0.2);

/// Exactly rounded floating-point sum, independent of input order.
double exact_sum(const std::vector<double>& xs);

struct ExecContext {
  const Corpus* corpus = nullptr;
  const RelationshipGraph* graph = nullptr;  // when set, union members must share a cluster
  const std::set<std::string>* allowed = nullptr;  // when set, the only tables a plan may touch
  const Embedder* embedder = nullptr;        // header alignment for unions without exact names
};

/// Static checks: structure, acyclicity, tables, column references, key and
/// aggregate types. Returns the first violation.
std::optional<ExecError> validate_plan(const RelationalPlan& plan, const ExecContext& ctx);

/// Validates, then executes. Never throws on plan content.
ExecResult execute_plan(const RelationalPlan& plan, const ExecContext& ctx);

}  // namespace lakeqa
