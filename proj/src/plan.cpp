#include "lakeqa/plan.hpp"

#include <algorithm>
#include <map>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::scan: return "scan";
    case OpKind::union_cluster: return "union";
    case OpKind::filter: return "filter";
    case OpKind::join: return "join";
    case OpKind::project: return "project";
    case OpKind::aggregate: return "aggregate";
    case OpKind::sort: return "sort";
    case OpKind::limit: return "limit";
    case OpKind::distinct: return "distinct";
  }
  return "?";
}

std::string_view to_string(AggFn fn) {
  switch (fn) {
    case AggFn::count: return "count";
    case AggFn::sum: return "sum";
    case AggFn::avg: return "avg";
    case AggFn::min: return "min";
    case AggFn::max: return "max";
  }
  return "?";
}

std::string_view to_string(ExecError::Kind kind) {
  switch (kind) {
    case ExecError::Kind::unknown_table: return "unknown table";
    case ExecError::Kind::unknown_column: return "unknown column";
    case ExecError::Kind::type_mismatch: return "type mismatch";
    case ExecError::Kind::empty_join_key: return "empty join key";
    case ExecError::Kind::aggregate_on_text: return "aggregate on text";
    case ExecError::Kind::malformed_plan: return "malformed plan";
  }
  return "?";
}

std::string ExecError::describe() const {
  std::string out(to_string(kind));
  if (!node.empty()) out += " at node " + node;
  return out + ": " + message;
}

const PlanNode* RelationalPlan::node(std::string_view id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::set<std::string> RelationalPlan::referenced_tables() const {
  std::set<std::string> out;
  for (const auto& n : nodes) {
    if (n.op == OpKind::scan) out.insert(n.table);
    if (n.op == OpKind::union_cluster) out.insert(n.tables.begin(), n.tables.end());
  }
  return out;
}

namespace {

struct PredOpName {
  Predicate::Op op;
  const char* name;
};

constexpr PredOpName kPredOps[] = {
    {Predicate::Op::and_, "and"}, {Predicate::Op::or_, "or"},     {Predicate::Op::not_, "not"},
    {Predicate::Op::eq, "="},     {Predicate::Op::ne, "!="},      {Predicate::Op::lt, "<"},
    {Predicate::Op::le, "<="},    {Predicate::Op::gt, ">"},       {Predicate::Op::ge, ">="},
    {Predicate::Op::in, "in"},    {Predicate::Op::is_null, "is_null"}, {Predicate::Op::not_null, "not_null"},
};

const char* pred_name(Predicate::Op op) {
  for (const auto& p : kPredOps)
    if (p.op == op) return p.name;
  return "?";
}

std::string req_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string()) throw PlanParseError(where + ": missing string field \"" + key + "\"");
  return j[key].get<std::string>();
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_array()) throw PlanParseError(where + ": missing array field \"" + key + "\"");
  std::vector<std::string> out;
  for (const auto& x : j[key]) {
    if (!x.is_string()) throw PlanParseError(where + ": \"" + key + "\" must hold strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

Value literal(const json& j, const std::string& where) {
  if (j.is_object() || j.is_array()) throw PlanParseError(where + ": literal must be a number, string or null");
  return value_from_json(j);
}

Predicate parse_predicate(const json& j) {
  if (!j.is_object()) throw PlanParseError("predicate must be an object");
  const std::string op = req_string(j, "op", "predicate");
  Predicate p;
  const auto* found = std::find_if(std::begin(kPredOps), std::end(kPredOps), [&](const PredOpName& x) { return op == x.name; });
  if (found == std::end(kPredOps)) {
    static const std::map<std::string, Predicate::Op> aliases = {
        {"==", Predicate::Op::eq}, {"eq", Predicate::Op::eq}, {"<>", Predicate::Op::ne}, {"ne", Predicate::Op::ne},
        {"lt", Predicate::Op::lt}, {"le", Predicate::Op::le}, {"gt", Predicate::Op::gt}, {"ge", Predicate::Op::ge}};
    auto it = aliases.find(op);
    if (it == aliases.end()) throw PlanParseError("unknown predicate op \"" + op + "\"");
    p.op = it->second;
  } else {
    p.op = found->op;
  }
  switch (p.op) {
    case Predicate::Op::and_:
    case Predicate::Op::or_:
      if (!j.contains("args") || !j["args"].is_array() || j["args"].empty())
        throw PlanParseError("predicate \"" + op + "\" needs a non-empty args array");
      for (const auto& a : j["args"]) p.args.push_back(parse_predicate(a));
      break;
    case Predicate::Op::not_:
      if (j.contains("arg")) {
        p.args.push_back(parse_predicate(j["arg"]));
      } else if (j.contains("args") && j["args"].is_array() && j["args"].size() == 1) {
        p.args.push_back(parse_predicate(j["args"][0]));
      } else {
        throw PlanParseError("predicate \"not\" needs one argument");
      }
      break;
    case Predicate::Op::in:
      p.column = req_string(j, "column", "predicate");
      if (!j.contains("values") || !j["values"].is_array()) throw PlanParseError("predicate \"in\" needs values");
      for (const auto& v : j["values"]) p.values.push_back(literal(v, "predicate"));
      break;
    case Predicate::Op::is_null:
    case Predicate::Op::not_null:
      p.column = req_string(j, "column", "predicate");
      break;
    default:
      p.column = req_string(j, "column", "predicate");
      if (!j.contains("value")) throw PlanParseError("comparison needs a value");
      p.values.push_back(literal(j["value"], "predicate"));
      break;
  }
  return p;
}

// Library type errors from malformed documents surface as parse errors.
template <class F>
auto as_parse_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw PlanParseError(std::string("malformed plan: ") + e.what());
  }
}

}  // namespace

Predicate predicate_from_json(const json& j) {
  return as_parse_error([&] { return parse_predicate(j); });
}

json predicate_to_json(const Predicate& p) {
  json j = {{"op", pred_name(p.op)}};
  switch (p.op) {
    case Predicate::Op::and_:
    case Predicate::Op::or_: {
      json args = json::array();
      for (const auto& a : p.args) args.push_back(predicate_to_json(a));
      j["args"] = args;
      break;
    }
    case Predicate::Op::not_:
      j["arg"] = predicate_to_json(p.args.at(0));
      break;
    case Predicate::Op::in: {
      j["column"] = p.column;
      json vs = json::array();
      for (const auto& v : p.values) vs.push_back(value_to_json(v));
      j["values"] = vs;
      break;
    }
    case Predicate::Op::is_null:
    case Predicate::Op::not_null:
      j["column"] = p.column;
      break;
    default:
      j["column"] = p.column;
      j["value"] = value_to_json(p.values.at(0));
      break;
  }
  return j;
}

namespace {

RelationalPlan parse_plan(const json& j) {
  if (!j.is_object()) throw PlanParseError("plan must be a JSON object");
  if (j.contains("format_version") && j["format_version"] != RelationalPlan::kFormatVersion)
    throw PlanParseError("unsupported plan format_version");
  if (!j.contains("nodes") || !j["nodes"].is_array() || j["nodes"].empty())
    throw PlanParseError("plan needs a non-empty \"nodes\" array");
  RelationalPlan plan;
  for (const auto& n : j["nodes"]) {
    if (!n.is_object()) throw PlanParseError("plan node must be an object");
    PlanNode node;
    node.id = req_string(n, "id", "node");
    const std::string where = "node " + node.id;
    const std::string op = req_string(n, "op", where);
    if (n.contains("alias")) {
      if (!n["alias"].is_string()) throw PlanParseError(where + ": alias must be a string");
      node.alias = n["alias"].get<std::string>();
    }
    if (n.contains("subquestion") && !n["subquestion"].is_null()) {
      if (!n["subquestion"].is_number_unsigned()) throw PlanParseError(where + ": subquestion must be an index");
      node.subquestion = n["subquestion"].get<std::size_t>();
    }
    auto one_input = [&] { node.inputs = {req_string(n, "input", where)}; };
    if (op == "scan") {
      node.op = OpKind::scan;
      node.table = req_string(n, "table", where);
    } else if (op == "union" || op == "union_cluster") {
      node.op = OpKind::union_cluster;
      node.tables = string_list(n, "tables", where);
      if (node.tables.empty()) throw PlanParseError(where + ": union needs tables");
      if (n.contains("alignment") && !n["alignment"].is_null()) {
        try {
          node.alignment = n["alignment"].get<std::vector<std::vector<std::size_t>>>();
        } catch (const json::exception&) {
          throw PlanParseError(where + ": alignment must be lists of column indices");
        }
      }
    } else if (op == "filter") {
      node.op = OpKind::filter;
      one_input();
      if (!n.contains("predicate")) throw PlanParseError(where + ": filter needs a predicate");
      node.predicate = parse_predicate(n["predicate"]);
    } else if (op == "join") {
      node.op = OpKind::join;
      node.inputs = {req_string(n, "left", where), req_string(n, "right", where)};
      if (!n.contains("keys") || !n["keys"].is_array()) throw PlanParseError(where + ": join needs keys");
      for (const auto& k : n["keys"]) {
        if (k.is_array() && k.size() == 2 && k[0].is_string() && k[1].is_string()) {
          node.keys.emplace_back(k[0].get<std::string>(), k[1].get<std::string>());
        } else if (k.is_object()) {
          node.keys.emplace_back(req_string(k, "left", where), req_string(k, "right", where));
        } else {
          throw PlanParseError(where + ": join key must be [left, right]");
        }
      }
      const std::string mode = n.value("mode", std::string("exact"));
      if (mode == "exact") {
        node.mode = JoinMode::exact;
      } else if (mode == "fuzzy") {
        node.mode = JoinMode::fuzzy;
      } else {
        throw PlanParseError(where + ": join mode must be exact or fuzzy");
      }
      if (n.contains("delta")) {
        if (!n["delta"].is_number()) throw PlanParseError(where + ": delta must be a number");
        node.delta = n["delta"].get<double>();
      }
    } else if (op == "project") {
      node.op = OpKind::project;
      one_input();
      if (!n.contains("columns") || !n["columns"].is_array() || n["columns"].empty())
        throw PlanParseError(where + ": project needs columns");
      for (const auto& c : n["columns"]) {
        if (c.is_string()) {
          node.columns.push_back({c.get<std::string>(), ""});
        } else if (c.is_object()) {
          node.columns.push_back({req_string(c, "column", where), c.value("as", std::string())});
        } else {
          throw PlanParseError(where + ": project column must be a string or {column, as}");
        }
      }
    } else if (op == "aggregate") {
      node.op = OpKind::aggregate;
      one_input();
      const std::string fn = req_string(n, "function", where);
      static const std::map<std::string, AggFn> fns = {
          {"count", AggFn::count}, {"sum", AggFn::sum}, {"avg", AggFn::avg}, {"mean", AggFn::avg},
          {"min", AggFn::min},     {"max", AggFn::max}};
      auto it = fns.find(to_lower(fn));
      if (it == fns.end()) throw PlanParseError(where + ": unknown aggregate function \"" + fn + "\"");
      node.fn = it->second;
      if (n.contains("column") && !n["column"].is_null()) {
        if (!n["column"].is_string()) throw PlanParseError(where + ": aggregate column must be a string");
        node.agg_column = n["column"].get<std::string>();
      }
      node.agg_distinct = n.value("distinct", false);
      if (n.contains("group_by")) node.group_by = string_list(n, "group_by", where);
      node.as = n.value("as", std::string());
      if (node.fn != AggFn::count && node.agg_column.empty())
        throw PlanParseError(where + ": " + fn + " needs a column");
    } else if (op == "sort") {
      node.op = OpKind::sort;
      one_input();
      if (!n.contains("keys") || !n["keys"].is_array() || n["keys"].empty()) throw PlanParseError(where + ": sort needs keys");
      for (const auto& k : n["keys"]) {
        if (k.is_string()) {
          node.sort_keys.push_back({k.get<std::string>(), false});
        } else if (k.is_object()) {
          node.sort_keys.push_back({req_string(k, "column", where), k.value("desc", false)});
        } else {
          throw PlanParseError(where + ": sort key must be a string or {column, desc}");
        }
      }
    } else if (op == "limit") {
      node.op = OpKind::limit;
      one_input();
      if (!n.contains("n") || !n["n"].is_number_unsigned()) throw PlanParseError(where + ": limit needs n >= 0");
      node.limit = n["n"].get<std::size_t>();
    } else if (op == "distinct") {
      node.op = OpKind::distinct;
      one_input();
    } else {
      throw PlanParseError(where + ": unknown op \"" + op + "\"");
    }
    plan.nodes.push_back(std::move(node));
  }
  if (j.contains("root")) {
    if (!j["root"].is_string()) throw PlanParseError("root must be a node id");
    plan.root = j["root"].get<std::string>();
  } else {
    plan.root = plan.nodes.back().id;
  }
  return plan;
}

}  // namespace

RelationalPlan plan_from_json(const json& j) {
  return as_parse_error([&] { return parse_plan(j); });
}

json plan_to_json(const RelationalPlan& plan) {
  json nodes = json::array();
  for (const auto& n : plan.nodes) {
    json j = {{"id", n.id}, {"op", to_string(n.op)}};
    if (!n.alias.empty()) j["alias"] = n.alias;
    if (n.subquestion) j["subquestion"] = *n.subquestion;
    switch (n.op) {
      case OpKind::scan:
        j["table"] = n.table;
        break;
      case OpKind::union_cluster:
        j["tables"] = n.tables;
        if (!n.alignment.empty()) j["alignment"] = n.alignment;
        break;
      case OpKind::filter:
        j["input"] = n.inputs.at(0);
        j["predicate"] = predicate_to_json(n.predicate);
        break;
      case OpKind::join: {
        j["left"] = n.inputs.at(0);
        j["right"] = n.inputs.at(1);
        json keys = json::array();
        for (const auto& [l, r] : n.keys) keys.push_back({l, r});
        j["keys"] = keys;
        j["mode"] = n.mode == JoinMode::exact ? "exact" : "fuzzy";
        if (n.mode == JoinMode::fuzzy) j["delta"] = n.delta;
        break;
      }
      case OpKind::project: {
        j["input"] = n.inputs.at(0);
        json cols = json::array();
        for (const auto& c : n.columns) {
          if (c.as.empty()) {
            cols.push_back(c.column);
          } else {
            cols.push_back({{"column", c.column}, {"as", c.as}});
          }
        }
        j["columns"] = cols;
        break;
      }
      case OpKind::aggregate:
        j["input"] = n.inputs.at(0);
        j["function"] = to_string(n.fn);
        if (!n.agg_column.empty()) j["column"] = n.agg_column;
        if (n.agg_distinct) j["distinct"] = true;
        if (!n.group_by.empty()) j["group_by"] = n.group_by;
        if (!n.as.empty()) j["as"] = n.as;
        break;
      case OpKind::sort: {
        j["input"] = n.inputs.at(0);
        json keys = json::array();
        for (const auto& k : n.sort_keys) keys.push_back({{"column", k.column}, {"desc", k.descending}});
        j["keys"] = keys;
        break;
      }
      case OpKind::limit:
        j["input"] = n.inputs.at(0);
        j["n"] = n.limit;
        break;
      case OpKind::distinct:
        j["input"] = n.inputs.at(0);
        break;
    }
    nodes.push_back(std::move(j));
  }
  return {{"format_version", RelationalPlan::kFormatVersion}, {"root", plan.root}, {"nodes", nodes}};
}

namespace {

std::string sql_literal(const Value& v) {
  if (is_null(v)) return "NULL";
  if (is_number(v)) return format_number(std::get<double>(v));
  std::string s = "'";
  for (char c : std::get<std::string>(v)) {
    if (c == '\'') s.push_back('\'');
    s.push_back(c);
  }
  return s + "'";
}

std::string sql_predicate(const Predicate& p) {
  switch (p.op) {
    case Predicate::Op::and_:
    case Predicate::Op::or_: {
      std::vector<std::string> parts;
      for (const auto& a : p.args) parts.push_back("(" + sql_predicate(a) + ")");
      return join(parts, p.op == Predicate::Op::and_ ? " AND " : " OR ");
    }
    case Predicate::Op::not_:
      return "NOT (" + sql_predicate(p.args.at(0)) + ")";
    case Predicate::Op::in: {
      std::vector<std::string> vs;
      for (const auto& v : p.values) vs.push_back(sql_literal(v));
      return p.column + " IN (" + join(vs, ", ") + ")";
    }
    case Predicate::Op::is_null:
      return p.column + " IS NULL";
    case Predicate::Op::not_null:
      return p.column + " IS NOT NULL";
    default:
      return p.column + " " + (p.op == Predicate::Op::ne ? std::string("<>") : std::string(pred_name(p.op))) + " " +
             sql_literal(p.values.at(0));
  }
}

std::string sql_node(const RelationalPlan& plan, const std::string& id, int depth) {
  const PlanNode* n = plan.node(id);
  if (!n || depth > 64) return "<" + id + ">";
  auto in = [&](std::size_t i) { return "(" + sql_node(plan, n->inputs.at(i), depth + 1) + ")"; };
  switch (n->op) {
    case OpKind::scan:
      return "SELECT * FROM " + n->table + (n->alias.empty() ? "" : " AS " + n->alias);
    case OpKind::union_cluster: {
      std::vector<std::string> parts;
      for (const auto& t : n->tables) parts.push_back("SELECT * FROM " + t);
      return join(parts, " UNION ALL ");
    }
    case OpKind::filter:
      return "SELECT * FROM " + in(0) + " WHERE " + sql_predicate(n->predicate);
    case OpKind::join: {
      std::vector<std::string> on;
      for (const auto& [l, r] : n->keys)
        on.push_back(n->mode == JoinMode::exact ? l + " = " + r
                                                : "FUZZY_MATCH(" + l + ", " + r + ", " + format_number(n->delta) + ")");
      return "SELECT * FROM " + in(0) + " JOIN " + in(1) + " ON " + join(on, " AND ");
    }
    case OpKind::project: {
      std::vector<std::string> cols;
      for (const auto& c : n->columns) cols.push_back(c.as.empty() ? c.column : c.column + " AS " + c.as);
      return "SELECT " + join(cols, ", ") + " FROM " + in(0);
    }
    case OpKind::aggregate: {
      std::string agg = std::string(to_string(n->fn));
      std::transform(agg.begin(), agg.end(), agg.begin(), ::toupper);
      agg += "(" + std::string(n->agg_distinct ? "DISTINCT " : "") + (n->agg_column.empty() ? "*" : n->agg_column) + ")";
      if (!n->as.empty()) agg += " AS " + n->as;
      std::vector<std::string> sel = n->group_by;
      sel.push_back(agg);
      std::string s = "SELECT " + join(sel, ", ") + " FROM " + in(0);
      if (!n->group_by.empty()) s += " GROUP BY " + join(n->group_by, ", ");
      return s;
    }
    case OpKind::sort: {
      std::vector<std::string> keys;
      for (const auto& k : n->sort_keys) keys.push_back(k.column + (k.descending ? " DESC" : ""));
      return "SELECT * FROM " + in(0) + " ORDER BY " + join(keys, ", ");
    }
    case OpKind::limit:
      return "SELECT * FROM " + in(0) + " LIMIT " + std::to_string(n->limit);
    case OpKind::distinct:
      return "SELECT DISTINCT * FROM " + in(0);
  }
  return {};
}

}  // namespace

std::string plan_to_sql(const RelationalPlan& plan) { return sql_node(plan, plan.root, 0); }

json to_json(const ExecResult& r) {
  json j;
  if (r.error) {
    j["error"] = {{"kind", std::string(to_string(r.error->kind))}, {"message", r.error->message}, {"node", r.error->node}};
    return j;
  }
  j["scalar"] = r.scalar ? value_to_json(*r.scalar) : json(nullptr);
  j["headers"] = r.table.headers;
  json rows = json::array();
  for (const auto& row : r.table.rows) {
    json jr = json::array();
    for (const auto& v : row) jr.push_back(value_to_json(v));
    rows.push_back(std::move(jr));
  }
  j["rows"] = rows;
  j["row_count"] = r.row_count;
  return j;
}

}  // namespace lakeqa
