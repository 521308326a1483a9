#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "lakeqa/plan.hpp"
#include "lakeqa/text.hpp"

namespace lakeqa {

bool fuzzy_match(std::string_view a, std::string_view b, double delta) {
  const std::string x = casefold_trim(a);
  const std::string y = casefold_trim(b);
  if (x == y) return true;
  const std::size_t longest = std::max(x.size(), y.size());
  return static_cast<double>(edit_distance(x, y)) <= delta * static_cast<double>(longest);
}

// Shewchuk's partials with the final round-half-even correction, as in Python's math.fsum.
double exact_sum(const std::vector<double>& xs) {
  std::vector<double> partials;
  double special = 0.0;
  double inf_sum = 0.0;
  bool overflowed = false;
  double naive = 0.0;
  for (double x : xs) {
    naive += x;
    const double original = x;
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    if (x != 0.0) {
      if (!std::isfinite(x)) {
        if (!std::isfinite(original)) {
          if (std::isinf(original)) inf_sum += original;
          special += original;
        } else {
          overflowed = true;
        }
        partials.clear();
      } else {
        partials.push_back(x);
      }
    }
  }
  if (special != 0.0 || std::isnan(special)) return std::isnan(inf_sum) ? inf_sum : special;
  if (overflowed) return naive;

  double hi = 0.0;
  std::size_t n = partials.size();
  if (n > 0) {
    double lo = 0.0;
    hi = partials[--n];
    while (n > 0) {
      const double x = hi;
      const double y = partials[--n];
      hi = x + y;
      const double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      const double yr = x - hi;
      if (y == yr) hi = x;
    }
  }
  return hi;
}

namespace {

enum class ColType { unknown, number, text, mixed };

ColType merge(ColType a, ColType b) {
  if (a == ColType::unknown) return b;
  if (b == ColType::unknown || a == b) return a;
  return ColType::mixed;
}

const char* type_name(ColType t) {
  switch (t) {
    case ColType::number: return "numeric";
    case ColType::text: return "text";
    case ColType::mixed: return "mixed";
    case ColType::unknown: return "empty";
  }
  return "?";
}

struct Column {
  std::string qualifier;
  std::string name;
  ColType type = ColType::unknown;
};

using Schema = std::vector<Column>;
using Row = std::vector<Value>;

struct Relation {
  Schema schema;
  std::vector<Row> rows;
};

struct Failure {
  ExecError error;
};

[[noreturn]] void fail(ExecError::Kind kind, std::string message, const std::string& node) {
  throw Failure{ExecError{kind, std::move(message), node}};
}

ColType table_column_type(const Table& t, std::size_t c) {
  if (t.column_is_numeric(c)) return ColType::number;
  bool number = false;
  for (const auto& v : t.columns[c]) number = number || is_number(v);
  if (t.column_is_text(c)) return number ? ColType::mixed : ColType::text;
  return ColType::unknown;
}

ColType value_type(const Value& v) {
  if (is_number(v)) return ColType::number;
  if (is_text(v)) return ColType::text;
  return ColType::unknown;
}

std::optional<std::size_t> parse_position(std::string_view s) {
  if (s.size() < 2 || s[0] != '#') return std::nullopt;
  std::size_t v = 0;
  for (char c : s.substr(1)) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

std::size_t resolve(const Schema& schema, const std::string& ref, const std::string& node) {
  auto unique = [&](const std::function<bool(const Column&)>& pred) -> std::optional<std::size_t> {
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!pred(schema[i])) continue;
      if (hit) fail(ExecError::Kind::unknown_column, "column reference \"" + ref + "\" is ambiguous; qualify it", node);
      hit = i;
    }
    return hit;
  };
  if (auto pos = parse_position(ref)) {
    if (*pos < schema.size()) return *pos;
    fail(ExecError::Kind::unknown_column, "column position " + ref + " is out of range", node);
  }
  if (auto hit = unique([&](const Column& c) { return c.name == ref; })) return *hit;
  for (std::size_t dot = ref.find('.'); dot != std::string::npos; dot = ref.find('.', dot + 1)) {
    const std::string qual = casefold_trim(std::string_view(ref).substr(0, dot));
    const std::string rest = ref.substr(dot + 1);
    if (auto pos = parse_position(rest)) {
      std::size_t seen = 0;
      for (std::size_t i = 0; i < schema.size(); ++i) {
        if (casefold_trim(schema[i].qualifier) != qual) continue;
        if (seen++ == *pos) return i;
      }
      continue;
    }
    auto in_qual = [&](const Column& c) { return casefold_trim(c.qualifier) == qual; };
    if (auto hit = unique([&](const Column& c) { return in_qual(c) && c.name == rest; })) return *hit;
    const std::string folded = casefold_trim(rest);
    if (auto hit = unique([&](const Column& c) { return in_qual(c) && casefold_trim(c.name) == folded; })) return *hit;
  }
  const std::string folded = casefold_trim(ref);
  if (auto hit = unique([&](const Column& c) { return casefold_trim(c.name) == folded; })) return *hit;
  std::vector<std::string> names;
  for (const auto& c : schema) names.push_back(c.qualifier.empty() ? c.name : c.qualifier + "." + c.name);
  fail(ExecError::Kind::unknown_column, "no column \"" + ref + "\"; available: " + join(names, ", "), node);
}

// Total order used by sort, min and max: numbers before text, text case-folded.
int compare_values(const Value& a, const Value& b) {
  if (is_number(a) && is_number(b)) {
    const double x = std::get<double>(a), y = std::get<double>(b);
    return x < y ? -1 : (y < x ? 1 : 0);
  }
  if (is_number(a) != is_number(b)) return is_number(a) ? -1 : 1;
  const std::string x = casefold_trim(std::get<std::string>(a));
  const std::string y = casefold_trim(std::get<std::string>(b));
  if (x != y) return x < y ? -1 : 1;
  const auto& rx = std::get<std::string>(a);
  const auto& ry = std::get<std::string>(b);
  return rx < ry ? -1 : (ry < rx ? 1 : 0);
}

std::optional<int> compare_for_predicate(const Value& cell, const Value& literal) {
  if (is_null(cell) || is_null(literal)) return std::nullopt;
  if (is_number(cell) && is_text(literal)) {
    auto n = parse_number(std::get<std::string>(literal));
    if (!n) return std::nullopt;
    return compare_values(cell, Value(*n));
  }
  if (is_text(cell) && is_number(literal)) {
    auto n = parse_number(std::get<std::string>(cell));
    if (!n) return std::nullopt;
    return compare_values(Value(*n), literal);
  }
  if (is_text(cell)) {
    const std::string x = casefold_trim(std::get<std::string>(cell));
    const std::string y = casefold_trim(std::get<std::string>(literal));
    return x < y ? -1 : (y < x ? 1 : 0);
  }
  return compare_values(cell, literal);
}

std::string join_key(const Value& v) {
  if (is_number(v)) return "n" + format_number(std::get<double>(v));
  const auto& s = std::get<std::string>(v);
  if (auto n = parse_number(trim(s))) return "n" + format_number(*n);
  return "s" + casefold_trim(s);
}

std::string row_key(const Row& row) {
  std::string key;
  for (const auto& v : row) {
    if (is_null(v)) {
      key += "0";
    } else if (is_number(v)) {
      key += "1" + format_number(std::get<double>(v));
    } else {
      key += "2" + std::get<std::string>(v);
    }
    key.push_back('\x1f');
  }
  return key;
}

class Engine {
 public:
  Engine(const RelationalPlan& plan, const ExecContext& ctx) : plan_(plan), ctx_(ctx) {}

  void check_structure() {
    if (!ctx_.corpus) fail(ExecError::Kind::malformed_plan, "no corpus to execute against", "");
    if (plan_.nodes.empty()) fail(ExecError::Kind::malformed_plan, "plan has no nodes", "");
    for (const auto& n : plan_.nodes) {
      if (n.id.empty()) fail(ExecError::Kind::malformed_plan, "node without id", "");
      if (!index_.emplace(n.id, &n).second) fail(ExecError::Kind::malformed_plan, "duplicate node id", n.id);
    }
    if (!index_.count(plan_.root)) fail(ExecError::Kind::malformed_plan, "root \"" + plan_.root + "\" is not a node", "");
    for (const auto& n : plan_.nodes) {
      const std::size_t want = n.op == OpKind::join ? 2 : (n.op == OpKind::scan || n.op == OpKind::union_cluster ? 0 : 1);
      if (n.inputs.size() != want)
        fail(ExecError::Kind::malformed_plan,
             std::string(to_string(n.op)) + " takes " + std::to_string(want) + " input(s), got " +
                 std::to_string(n.inputs.size()),
             n.id);
      for (const auto& in : n.inputs)
        if (!index_.count(in)) fail(ExecError::Kind::malformed_plan, "input \"" + in + "\" is not a node", n.id);
    }
    // Cycle detection over the whole node set.
    std::map<std::string, int> state;
    std::function<void(const PlanNode&)> visit = [&](const PlanNode& n) {
      state[n.id] = 1;
      for (const auto& in : n.inputs) {
        const int s = state[in];
        if (s == 1) fail(ExecError::Kind::malformed_plan, "plan contains a cycle through \"" + in + "\"", n.id);
        if (s == 0) visit(*index_.at(in));
      }
      state[n.id] = 2;
    };
    for (const auto& n : plan_.nodes)
      if (state[n.id] == 0) visit(n);
  }

  const Schema& schema(const std::string& id) {
    if (auto it = schemas_.find(id); it != schemas_.end()) return it->second;
    const PlanNode& n = *index_.at(id);
    Schema s = compute_schema(n);
    return schemas_.emplace(id, std::move(s)).first->second;
  }

  const Relation& run(const std::string& id) {
    if (auto it = results_.find(id); it != results_.end()) return it->second;
    const PlanNode& n = *index_.at(id);
    Relation r = compute(n);
    return results_.emplace(id, std::move(r)).first->second;
  }

 private:
  const Table& table(const std::string& id, const std::string& node) {
    const Table* t = ctx_.corpus->find(id);
    if (!t) fail(ExecError::Kind::unknown_table, "table \"" + id + "\" is not in the corpus", node);
    if (ctx_.allowed && !ctx_.allowed->count(id))
      fail(ExecError::Kind::unknown_table, "table \"" + id + "\" is not among the retrieved tables", node);
    return *t;
  }

  // member column for each output column (first member's header order), or npos
  std::vector<std::vector<std::size_t>> union_alignment(const PlanNode& n) {
    std::vector<const Table*> members;
    for (const auto& id : n.tables) members.push_back(&table(id, n.id));
    if (ctx_.graph) {
      std::optional<std::size_t> cluster;
      for (const auto& id : n.tables) {
        if (!ctx_.graph->has_table(id))
          fail(ExecError::Kind::malformed_plan, "union member \"" + id + "\" is not in the relationship graph", n.id);
        const std::size_t c = ctx_.graph->cluster_of(id);
        if (cluster && *cluster != c)
          fail(ExecError::Kind::malformed_plan, "union members \"" + n.tables.front() + "\" and \"" + id +
                                                    "\" are not in the same unionable cluster", n.id);
        cluster = c;
      }
    }
    const std::size_t width = members.front()->width();
    std::vector<std::vector<std::size_t>> align(width, std::vector<std::size_t>(members.size(), SIZE_MAX));
    if (!n.alignment.empty()) {
      if (n.alignment.size() != width)
        fail(ExecError::Kind::malformed_plan, "alignment needs one entry per column of the first member", n.id);
      for (std::size_t c = 0; c < width; ++c) {
        if (n.alignment[c].size() != members.size())
          fail(ExecError::Kind::malformed_plan, "alignment entry needs one column per member", n.id);
        for (std::size_t m = 0; m < members.size(); ++m) {
          const std::size_t col = n.alignment[c][m];
          if (col != SIZE_MAX && col >= members[m]->width())
            fail(ExecError::Kind::malformed_plan, "alignment column out of range for \"" + n.tables[m] + "\"", n.id);
          align[c][m] = col;
        }
      }
      return align;
    }
    const Table& first = *members.front();
    std::vector<Embedding> first_emb;
    if (ctx_.embedder) first_emb = ctx_.embedder->embed(first.headers);
    for (std::size_t c = 0; c < width; ++c) align[c][0] = c;
    for (std::size_t m = 1; m < members.size(); ++m) {
      const Table& other = *members[m];
      std::vector<Embedding> other_emb;
      if (ctx_.embedder && other.width() > 0) other_emb = ctx_.embedder->embed(other.headers);
      std::vector<std::vector<double>> w(width, std::vector<double>(other.width(), 0.0));
      for (std::size_t i = 0; i < width; ++i) {
        for (std::size_t j = 0; j < other.width(); ++j) {
          if (first.headers[i] == kMask || other.headers[j] == kMask) continue;
          if (casefold_trim(first.headers[i]) == casefold_trim(other.headers[j])) {
            w[i][j] = 2.0;  // exact names always win
          } else if (ctx_.embedder) {
            w[i][j] = similarity(first_emb[i], other_emb[j]);
          }
        }
      }
      if (width == 0 || other.width() == 0) continue;
      const auto match = max_weight_matching(w);
      for (std::size_t i = 0; i < width; ++i)
        if (match[i] >= 0 && w[i][static_cast<std::size_t>(match[i])] > 0.0)
          align[i][m] = static_cast<std::size_t>(match[i]);
    }
    return align;
  }

  void check_predicate(const Predicate& p, const Schema& s, const std::string& node) {
    switch (p.op) {
      case Predicate::Op::and_:
      case Predicate::Op::or_:
      case Predicate::Op::not_:
        if (p.args.empty()) fail(ExecError::Kind::malformed_plan, "logical predicate without arguments", node);
        for (const auto& a : p.args) check_predicate(a, s, node);
        return;
      default:
        break;
    }
    const ColType t = s[resolve(s, p.column, node)].type;
    if (p.op == Predicate::Op::is_null || p.op == Predicate::Op::not_null) return;
    if (p.values.empty()) fail(ExecError::Kind::malformed_plan, "comparison on \"" + p.column + "\" without a value", node);
    for (const auto& v : p.values) {
      if (is_null(v)) fail(ExecError::Kind::type_mismatch, "compare with null via is_null, not a literal", node);
      const bool ok = t == ColType::unknown || t == ColType::mixed || t == value_type(v) ||
                      (t == ColType::number && is_text(v) && parse_number(std::get<std::string>(v)));
      if (!ok)
        fail(ExecError::Kind::type_mismatch,
             std::string(type_name(t)) + " column \"" + p.column + "\" compared with " +
                 (is_number(v) ? "number " : "text ") + value_to_string(v),
             node);
    }
  }

  Schema compute_schema(const PlanNode& n) {
    switch (n.op) {
      case OpKind::scan: {
        const Table& t = table(n.table, n.id);
        Schema s;
        for (std::size_t c = 0; c < t.width(); ++c)
          s.push_back({n.alias.empty() ? t.id : n.alias, t.headers[c], table_column_type(t, c)});
        return s;
      }
      case OpKind::union_cluster: {
        if (n.tables.empty()) fail(ExecError::Kind::malformed_plan, "union without tables", n.id);
        const auto align = union_alignment(n);
        Schema s;
        const Table& first = table(n.tables.front(), n.id);
        for (std::size_t c = 0; c < align.size(); ++c) {
          ColType type = ColType::unknown;
          for (std::size_t m = 0; m < n.tables.size(); ++m)
            if (align[c][m] != SIZE_MAX) type = merge(type, table_column_type(table(n.tables[m], n.id), align[c][m]));
          s.push_back({n.alias.empty() ? n.id : n.alias, first.headers[c], type});
        }
        return s;
      }
      case OpKind::filter: {
        Schema s = schema(n.inputs[0]);
        check_predicate(n.predicate, s, n.id);
        return s;
      }
      case OpKind::join: {
        const Schema& l = schema(n.inputs[0]);
        const Schema& r = schema(n.inputs[1]);
        if (n.keys.empty()) fail(ExecError::Kind::empty_join_key, "join without key pairs", n.id);
        if (n.mode == JoinMode::fuzzy && !(n.delta >= 0.0 && n.delta <= 1.0))
          fail(ExecError::Kind::malformed_plan, "fuzzy delta must lie in [0, 1]", n.id);
        for (const auto& [lk, rk] : n.keys) {
          if (trim(lk).empty() || trim(rk).empty()) fail(ExecError::Kind::empty_join_key, "join key is empty", n.id);
          const ColType lt = l[resolve(l, lk, n.id)].type;
          const ColType rt = r[resolve(r, rk, n.id)].type;
          if (n.mode == JoinMode::fuzzy && (lt == ColType::number || rt == ColType::number))
            fail(ExecError::Kind::type_mismatch, "fuzzy join needs text keys; \"" + lk + "\"/\"" + rk + "\" are numeric",
                 n.id);
          if ((lt == ColType::number && rt == ColType::text) || (lt == ColType::text && rt == ColType::number))
            fail(ExecError::Kind::type_mismatch,
                 "join key \"" + lk + "\" is " + type_name(lt) + " but \"" + rk + "\" is " + type_name(rt), n.id);
        }
        Schema s = l;
        s.insert(s.end(), r.begin(), r.end());
        return s;
      }
      case OpKind::project: {
        const Schema& in = schema(n.inputs[0]);
        if (n.columns.empty()) fail(ExecError::Kind::malformed_plan, "project without columns", n.id);
        Schema s;
        for (const auto& item : n.columns) {
          Column c = in[resolve(in, item.column, n.id)];
          if (!item.as.empty()) c.name = item.as;
          s.push_back(c);
        }
        return s;
      }
      case OpKind::aggregate: {
        const Schema& in = schema(n.inputs[0]);
        Schema s;
        for (const auto& g : n.group_by) s.push_back(in[resolve(in, g, n.id)]);
        ColType out = ColType::number;
        std::string name = std::string(to_string(n.fn));
        if (!n.agg_column.empty()) {
          const Column& c = in[resolve(in, n.agg_column, n.id)];
          if ((n.fn == AggFn::sum || n.fn == AggFn::avg) && (c.type == ColType::text || c.type == ColType::mixed))
            fail(ExecError::Kind::aggregate_on_text,
                 std::string(to_string(n.fn)) + " over " + type_name(c.type) + " column \"" + n.agg_column + "\"", n.id);
          if (n.fn == AggFn::min || n.fn == AggFn::max) out = c.type;
          name += "(" + c.name + ")";
        } else if (n.fn != AggFn::count) {
          fail(ExecError::Kind::malformed_plan, std::string(to_string(n.fn)) + " needs a column", n.id);
        }
        s.push_back({"", n.as.empty() ? name : n.as, out});
        return s;
      }
      case OpKind::sort: {
        const Schema& in = schema(n.inputs[0]);
        if (n.sort_keys.empty()) fail(ExecError::Kind::malformed_plan, "sort without keys", n.id);
        for (const auto& k : n.sort_keys) resolve(in, k.column, n.id);
        return in;
      }
      case OpKind::limit:
      case OpKind::distinct:
        return schema(n.inputs[0]);
    }
    fail(ExecError::Kind::malformed_plan, "unknown operator", n.id);
  }

  bool eval(const Predicate& p, const Schema& s, const Row& row, const std::string& node) {
    switch (p.op) {
      case Predicate::Op::and_:
        return std::all_of(p.args.begin(), p.args.end(), [&](const Predicate& a) { return eval(a, s, row, node); });
      case Predicate::Op::or_:
        return std::any_of(p.args.begin(), p.args.end(), [&](const Predicate& a) { return eval(a, s, row, node); });
      case Predicate::Op::not_:
        return !eval(p.args.at(0), s, row, node);
      default:
        break;
    }
    const Value& cell = row[resolve(s, p.column, node)];
    switch (p.op) {
      case Predicate::Op::is_null: return is_null(cell);
      case Predicate::Op::not_null: return !is_null(cell);
      case Predicate::Op::in:
        return std::any_of(p.values.begin(), p.values.end(), [&](const Value& v) {
          auto c = compare_for_predicate(cell, v);
          return c && *c == 0;
        });
      default:
        break;
    }
    auto c = compare_for_predicate(cell, p.values.at(0));
    if (!c) return false;
    switch (p.op) {
      case Predicate::Op::eq: return *c == 0;
      case Predicate::Op::ne: return *c != 0;
      case Predicate::Op::lt: return *c < 0;
      case Predicate::Op::le: return *c <= 0;
      case Predicate::Op::gt: return *c > 0;
      case Predicate::Op::ge: return *c >= 0;
      default: return false;
    }
  }

  Value aggregate(const PlanNode& n, const std::vector<const Row*>& rows, std::optional<std::size_t> col) {
    if (n.fn == AggFn::count) {
      if (!col) return static_cast<double>(rows.size());
      std::unordered_set<std::string> seen;
      std::size_t count = 0;
      for (const Row* r : rows) {
        const Value& v = (*r)[*col];
        if (is_null(v)) continue;
        if (n.agg_distinct && !seen.insert(row_key({v})).second) continue;
        ++count;
      }
      return static_cast<double>(count);
    }
    std::vector<Value> values;
    std::unordered_set<std::string> seen;
    for (const Row* r : rows) {
      const Value& v = (*r)[*col];
      if (is_null(v)) continue;
      if (n.agg_distinct && !seen.insert(row_key({v})).second) continue;
      values.push_back(v);
    }
    if (values.empty()) return std::monostate{};
    if (n.fn == AggFn::min || n.fn == AggFn::max) {
      auto cmp = [](const Value& a, const Value& b) { return compare_values(a, b) < 0; };
      return n.fn == AggFn::min ? *std::min_element(values.begin(), values.end(), cmp)
                                : *std::max_element(values.begin(), values.end(), cmp);
    }
    std::vector<double> xs;
    for (const auto& v : values) {
      if (!is_number(v))
        fail(ExecError::Kind::aggregate_on_text, std::string(to_string(n.fn)) + " met text value \"" + value_to_string(v) + "\"",
             n.id);
      xs.push_back(std::get<double>(v));
    }
    const double total = exact_sum(xs);
    return n.fn == AggFn::sum ? total : total / static_cast<double>(xs.size());
  }

  Relation compute(const PlanNode& n) {
    Relation out;
    out.schema = schema(n.id);
    switch (n.op) {
      case OpKind::scan: {
        const Table& t = table(n.table, n.id);
        for (std::size_t r = 0; r < t.row_count; ++r) out.rows.push_back(t.row(r));
        break;
      }
      case OpKind::union_cluster: {
        const auto align = union_alignment(n);
        for (std::size_t m = 0; m < n.tables.size(); ++m) {
          const Table& t = table(n.tables[m], n.id);
          for (std::size_t r = 0; r < t.row_count; ++r) {
            Row row;
            for (const auto& a : align) row.push_back(a[m] == SIZE_MAX ? Value{} : t.columns[a[m]][r]);
            out.rows.push_back(std::move(row));
          }
        }
        break;
      }
      case OpKind::filter: {
        const Relation& in = run(n.inputs[0]);
        for (const auto& row : in.rows)
          if (eval(n.predicate, in.schema, row, n.id)) out.rows.push_back(row);
        break;
      }
      case OpKind::join: {
        const Relation& l = run(n.inputs[0]);
        const Relation& r = run(n.inputs[1]);
        std::vector<std::pair<std::size_t, std::size_t>> cols;
        for (const auto& [lk, rk] : n.keys) cols.emplace_back(resolve(l.schema, lk, n.id), resolve(r.schema, rk, n.id));
        auto emit = [&](const Row& a, const Row& b) {
          Row row = a;
          row.insert(row.end(), b.begin(), b.end());
          out.rows.push_back(std::move(row));
        };
        if (n.mode == JoinMode::exact) {
          auto key_of = [&](const Row& row, bool left) -> std::optional<std::string> {
            std::string key;
            for (const auto& [lc, rc] : cols) {
              const Value& v = row[left ? lc : rc];
              if (is_null(v)) return std::nullopt;
              key += join_key(v);
              key.push_back('\x1f');
            }
            return key;
          };
          std::unordered_map<std::string, std::vector<std::size_t>> right;
          for (std::size_t i = 0; i < r.rows.size(); ++i)
            if (auto k = key_of(r.rows[i], false)) right[*k].push_back(i);
          for (const auto& row : l.rows) {
            auto k = key_of(row, true);
            if (!k) continue;
            auto it = right.find(*k);
            if (it == right.end()) continue;
            for (std::size_t i : it->second) emit(row, r.rows[i]);
          }
        } else {
          for (const auto& a : l.rows) {
            for (const auto& b : r.rows) {
              bool all = true;
              for (const auto& [lc, rc] : cols) {
                if (is_null(a[lc]) || is_null(b[rc]) ||
                    !fuzzy_match(value_to_string(a[lc]), value_to_string(b[rc]), n.delta)) {
                  all = false;
                  break;
                }
              }
              if (all) emit(a, b);
            }
          }
        }
        break;
      }
      case OpKind::project: {
        const Relation& in = run(n.inputs[0]);
        std::vector<std::size_t> cols;
        for (const auto& item : n.columns) cols.push_back(resolve(in.schema, item.column, n.id));
        for (const auto& row : in.rows) {
          Row o;
          for (std::size_t c : cols) o.push_back(row[c]);
          out.rows.push_back(std::move(o));
        }
        break;
      }
      case OpKind::aggregate: {
        const Relation& in = run(n.inputs[0]);
        std::optional<std::size_t> col;
        if (!n.agg_column.empty()) col = resolve(in.schema, n.agg_column, n.id);
        std::vector<std::size_t> gcols;
        for (const auto& g : n.group_by) gcols.push_back(resolve(in.schema, g, n.id));
        if (gcols.empty()) {
          std::vector<const Row*> all;
          for (const auto& row : in.rows) all.push_back(&row);
          out.rows.push_back({aggregate(n, all, col)});
          break;
        }
        std::vector<Row> keys;
        std::vector<std::vector<const Row*>> groups;
        std::unordered_map<std::string, std::size_t> where;
        for (const auto& row : in.rows) {
          Row key;
          for (std::size_t c : gcols) key.push_back(row[c]);
          auto [it, fresh] = where.emplace(row_key(key), groups.size());
          if (fresh) {
            keys.push_back(key);
            groups.emplace_back();
          }
          groups[it->second].push_back(&row);
        }
        for (std::size_t g = 0; g < groups.size(); ++g) {
          Row o = keys[g];
          o.push_back(aggregate(n, groups[g], col));
          out.rows.push_back(std::move(o));
        }
        break;
      }
      case OpKind::sort: {
        const Relation& in = run(n.inputs[0]);
        std::vector<std::pair<std::size_t, bool>> keys;
        for (const auto& k : n.sort_keys) keys.emplace_back(resolve(in.schema, k.column, n.id), k.descending);
        out.rows = in.rows;
        std::stable_sort(out.rows.begin(), out.rows.end(), [&](const Row& a, const Row& b) {
          for (const auto& [c, desc] : keys) {
            const bool na = is_null(a[c]), nb = is_null(b[c]);
            if (na || nb) {
              if (na && nb) continue;
              return nb;  // nulls last in either direction
            }
            const int cmp = compare_values(a[c], b[c]);
            if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
          }
          return false;
        });
        break;
      }
      case OpKind::limit: {
        const Relation& in = run(n.inputs[0]);
        out.rows.assign(in.rows.begin(), in.rows.begin() + static_cast<std::ptrdiff_t>(std::min(n.limit, in.rows.size())));
        break;
      }
      case OpKind::distinct: {
        const Relation& in = run(n.inputs[0]);
        std::unordered_set<std::string> seen;
        for (const auto& row : in.rows)
          if (seen.insert(row_key(row)).second) out.rows.push_back(row);
        break;
      }
    }
    return out;
  }

  const RelationalPlan& plan_;
  const ExecContext& ctx_;
  std::map<std::string, const PlanNode*, std::less<>> index_;
  std::map<std::string, Schema> schemas_;
  std::map<std::string, Relation> results_;
};

}  // namespace

std::optional<ExecError> validate_plan(const RelationalPlan& plan, const ExecContext& ctx) {
  try {
    Engine engine(plan, ctx);
    engine.check_structure();
    for (const auto& n : plan.nodes) engine.schema(n.id);
  } catch (const Failure& f) {
    return f.error;
  } catch (const std::exception& e) {
    return ExecError{ExecError::Kind::malformed_plan, e.what(), ""};
  }
  return std::nullopt;
}

ExecResult execute_plan(const RelationalPlan& plan, const ExecContext& ctx) {
  ExecResult result;
  try {
    Engine engine(plan, ctx);
    engine.check_structure();
    for (const auto& n : plan.nodes) engine.schema(n.id);
    const Relation& rel = engine.run(plan.root);
    for (const auto& c : rel.schema) result.table.headers.push_back(c.name);
    result.table.rows = rel.rows;
    result.row_count = rel.rows.size();
    if (rel.rows.size() == 1 && rel.schema.size() == 1) result.scalar = rel.rows[0][0];
  } catch (const Failure& f) {
    result = ExecResult{};
    result.error = f.error;
  } catch (const std::exception& e) {
    result = ExecResult{};
    result.error = ExecError{ExecError::Kind::malformed_plan, e.what(), ""};
  }
  return result;
}

}  // namespace lakeqa
