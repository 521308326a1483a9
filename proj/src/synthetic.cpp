#include "lakeqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "lakeqa/text.hpp"

namespace lakeqa {

namespace {

const char* const kOnsets[] = {"b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                               "br", "ch", "dr", "gl", "kr", "pl", "sh", "st", "th", "tr"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "io", "ou"};
const char* const kCodas[] = {"", "", "", "n", "r", "l", "s", "m", "x", "nd", "rk"};

template <class T, std::size_t N>
const T& pick(const T (&arr)[N], Rng& rng) {
  return arr[uniform_index(rng, 0, N - 1)];
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, 0, v.size() - 1)];
}

std::string pseudo_word(Rng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += pick(kOnsets, rng);
    w += pick(kVowels, rng);
    if (i + 1 == syllables) w += pick(kCodas, rng);
  }
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

double step_value(Rng& rng, double lo, double hi, double step) {
  const auto steps = static_cast<std::size_t>(std::llround((hi - lo) / step));
  const double v = lo + step * static_cast<double>(uniform_index(rng, 0, steps));
  return std::round(v * 100.0) / 100.0;
}

// Column builders for the seed tables.
struct ColumnSpec {
  std::string header;
  std::vector<Value> values;
};

Table assemble(std::string id, std::string title, std::vector<ColumnSpec> cols) {
  Table t;
  t.id = std::move(id);
  t.title = std::move(title);
  t.row_count = cols.empty() ? 0 : cols.front().values.size();
  for (auto& c : cols) {
    t.headers.push_back(std::move(c.header));
    t.columns.push_back(std::move(c.values));
  }
  t.validate();
  return t;
}

ColumnSpec text_column(std::string header, const std::vector<std::string>& pool, std::size_t rows, Rng& rng) {
  ColumnSpec c{std::move(header), {}};
  // Every pool value appears at least once when there is room for it.
  for (std::size_t r = 0; r < rows; ++r) c.values.emplace_back(r < pool.size() ? pool[r] : pick(pool, rng));
  return c;
}

ColumnSpec number_column(std::string header, std::size_t rows, Rng& rng, double lo, double hi, double step) {
  ColumnSpec c{std::move(header), {}};
  for (std::size_t r = 0; r < rows; ++r) c.values.emplace_back(step_value(rng, lo, hi, step));
  // Keep non-key numeric columns from turning into accidental keys.
  if (rows > 1) c.values[1] = c.values[0];
  return c;
}

ColumnSpec key_column(std::string header, const std::vector<std::string>& values) {
  ColumnSpec c{std::move(header), {}};
  for (const auto& v : values) c.values.emplace_back(v);
  return c;
}

void shuffle_rows(std::vector<ColumnSpec>& cols, Rng& rng) {
  if (cols.empty()) return;
  std::vector<std::size_t> order(cols.front().values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  seeded_shuffle(order, rng);
  for (auto& c : cols) {
    std::vector<Value> v;
    for (std::size_t i : order) v.push_back(c.values[i]);
    c.values = std::move(v);
  }
}

// Small plan builder over source tables; columns are named "table.header".
class PlanBuilder {
 public:
  std::string scan(const std::string& table) {
    PlanNode n = make(OpKind::scan);
    n.table = table;
    return push(std::move(n));
  }
  std::string filter(const std::string& in, Predicate p) {
    PlanNode n = make(OpKind::filter);
    n.inputs = {in};
    n.predicate = std::move(p);
    return push(std::move(n));
  }
  std::string join(const std::string& l, const std::string& r, const std::string& lk, const std::string& rk) {
    PlanNode n = make(OpKind::join);
    n.inputs = {l, r};
    n.keys = {{lk, rk}};
    return push(std::move(n));
  }
  std::string aggregate(const std::string& in, AggFn fn, const std::string& column) {
    PlanNode n = make(OpKind::aggregate);
    n.inputs = {in};
    n.fn = fn;
    n.agg_column = column;
    n.as = "answer";
    return push(std::move(n));
  }
  RelationalPlan finish() {
    plan_.root = plan_.nodes.back().id;
    return plan_;
  }

 private:
  PlanNode make(OpKind op) {
    PlanNode n;
    n.op = op;
    n.id = "n" + std::to_string(plan_.nodes.size());
    return n;
  }
  std::string push(PlanNode n) {
    plan_.nodes.push_back(std::move(n));
    return plan_.nodes.back().id;
  }
  RelationalPlan plan_;
};

Predicate compare(Predicate::Op op, const std::string& column, Value v) {
  Predicate p;
  p.op = op;
  p.column = column;
  p.values = {std::move(v)};
  return p;
}

std::string ref(const std::string& table, const std::string& header) { return table + "." + header; }

struct AggWord {
  AggFn fn;
  const char* word;
};
constexpr AggWord kAggWords[] = {{AggFn::sum, "total"}, {AggFn::avg, "average"}, {AggFn::max, "highest"}, {AggFn::min, "lowest"}};

// Median of a numeric column, as a round threshold.
double threshold_of(const Table& t, std::size_t col) {
  std::vector<double> xs;
  for (const auto& v : t.columns[col])
    if (is_number(v)) xs.push_back(std::get<double>(v));
  std::sort(xs.begin(), xs.end());
  return xs.empty() ? 0.0 : xs[xs.size() / 2];
}

// A wide table described for question generation.
struct FactSpec {
  std::string table;
  std::string plural;
  std::vector<std::pair<std::string, std::string>> filters;  // categorical header, phrase template with {}
  std::vector<std::string> measures;
};

std::string fill(const std::string& templ, const std::string& value) {
  const auto at = templ.find("{}");
  return templ.substr(0, at) + value + templ.substr(at + 2);
}

std::vector<std::string> distinct_text(const Table& t, std::size_t col) {
  std::set<std::string> s;
  for (const auto& v : t.columns[col])
    if (is_text(v)) s.insert(std::get<std::string>(v));
  return {s.begin(), s.end()};
}

void fact_questions(SeedDatabase& db, const FactSpec& spec) {
  const Table& t = db.tables.at(spec.table);
  std::size_t counter = 0;
  auto id = [&] { return spec.table + "_q" + std::to_string(counter++); };
  for (const auto& [cat, phrase] : spec.filters) {
    const std::size_t c = *t.column_index(cat);
    for (const auto& v : distinct_text(t, c)) {
      for (const auto& m : spec.measures) {
        for (const auto& w : kAggWords) {
          PlanBuilder b;
          auto s = b.scan(spec.table);
          s = b.filter(s, compare(Predicate::Op::eq, ref(spec.table, cat), v));
          b.aggregate(s, w.fn, ref(spec.table, m));
          db.questions.push_back({id(),
                                  std::string("What is the ") + w.word + " " + m + " of " + spec.plural + " " +
                                      fill(phrase, v) + "?",
                                  b.finish()});
        }
        const double th = threshold_of(t, *t.column_index(m));
        PlanBuilder b;
        auto s = b.scan(spec.table);
        Predicate both;
        both.op = Predicate::Op::and_;
        both.args = {compare(Predicate::Op::eq, ref(spec.table, cat), v),
                     compare(Predicate::Op::gt, ref(spec.table, m), th)};
        s = b.filter(s, both);
        b.aggregate(s, AggFn::count, "");
        db.questions.push_back({id(),
                                "How many " + spec.plural + " " + fill(phrase, v) + " have a " + m + " above " +
                                    format_number(th) + "?",
                                b.finish()});
      }
    }
  }
}

struct DimSpec {
  std::string table;
  std::string plural;
  std::vector<std::string> measures;
};

void dim_questions(SeedDatabase& db, const DimSpec& spec) {
  const Table& t = db.tables.at(spec.table);
  std::size_t counter = 0;
  for (const auto& m : spec.measures) {
    for (const auto& cond : spec.measures) {
      if (cond == m) continue;
      const double th = threshold_of(t, *t.column_index(cond));
      for (const auto& w : kAggWords) {
        PlanBuilder b;
        auto s = b.scan(spec.table);
        s = b.filter(s, compare(Predicate::Op::ge, ref(spec.table, cond), th));
        b.aggregate(s, w.fn, ref(spec.table, m));
        db.questions.push_back({spec.table + "_q" + std::to_string(counter++),
                                std::string("What is the ") + w.word + " " + m + " of " + spec.plural + " with a " +
                                    cond + " of at least " + format_number(th) + "?",
                                b.finish()});
      }
    }
  }
}

struct JoinSpec {
  std::string fact, fact_plural, fact_key;
  std::string filter_column, filter_phrase;
  std::string dim, dim_singular, dim_key;
  std::string condition;
  std::string measure;  // empty: count
};

void join_questions(SeedDatabase& db, const JoinSpec& spec) {
  const Table& f = db.tables.at(spec.fact);
  const Table& d = db.tables.at(spec.dim);
  const double th = threshold_of(d, *d.column_index(spec.condition));
  std::size_t counter = 0;
  for (const auto& v : distinct_text(f, *f.column_index(spec.filter_column))) {
    for (const auto& op : {Predicate::Op::gt, Predicate::Op::lt}) {
      PlanBuilder b;
      auto l = b.scan(spec.fact);
      l = b.filter(l, compare(Predicate::Op::eq, ref(spec.fact, spec.filter_column), v));
      auto r = b.scan(spec.dim);
      r = b.filter(r, compare(op, ref(spec.dim, spec.condition), th));
      auto j = b.join(l, r, ref(spec.fact, spec.fact_key), ref(spec.dim, spec.dim_key));
      const std::string cmp = op == Predicate::Op::gt ? " above " : " below ";
      std::string q;
      if (spec.measure.empty()) {
        b.aggregate(j, AggFn::count, "");
        q = "How many " + spec.fact_plural + " " + fill(spec.filter_phrase, v) + " belong to a " + spec.dim_singular +
            " with a " + spec.condition + cmp + format_number(th) + "?";
      } else {
        b.aggregate(j, AggFn::sum, ref(spec.fact, spec.measure));
        q = "What is the total " + spec.measure + " of " + spec.fact_plural + " " + fill(spec.filter_phrase, v) +
            " whose " + spec.dim_singular + " has a " + spec.condition + cmp + format_number(th) + "?";
      }
      db.questions.push_back({spec.fact + "_" + spec.dim + "_q" + std::to_string(counter++), q, b.finish()});
    }
  }
}

const std::vector<std::string> kDepartments = {"Research Lab", "Marketing", "Logistics", "Finance Office",
                                               "Customer Care", "Engineering"};
const std::vector<std::string> kCities = {"Lisbon", "Toronto", "Nairobi", "Melbourne", "Santiago", "Hamburg"};
const std::vector<std::string> kCountries = {"Portugal", "Canada", "Kenya", "Australia", "Chile", "Germany"};
const std::vector<std::string> kRoles = {"Analyst", "Manager", "Technician", "Consultant", "Coordinator"};
const std::vector<std::string> kCategories = {"Kitchenware", "Garden Tools", "Stationery", "Electronics", "Sportswear"};
const std::vector<std::string> kSuppliers = {"Norvale Trading", "Brightwick Supply", "Castellan Goods", "Ophira Imports",
                                             "Tamsin Wholesale"};
const std::vector<std::string> kMajors = {"Biology", "Economics", "History", "Mathematics", "Architecture"};
const std::vector<std::string> kFaculties = {"Science", "Business", "Humanities", "Science", "Design"};

Table employees_table(Rng& rng, std::size_t rows) {
  std::vector<ColumnSpec> cols;
  std::vector<std::string> names = synthetic_names(rng, rows);
  cols.push_back(key_column("employee name", names));
  cols.push_back(text_column("department", kDepartments, rows, rng));
  cols.push_back(text_column("office city", kCities, rows, rng));
  cols.push_back(text_column("job role", kRoles, rows, rng));
  cols.push_back(number_column("salary", rows, rng, 30000, 90000, 500));
  cols.push_back(number_column("age", rows, rng, 22, 64, 1));
  cols.push_back(number_column("hire year", rows, rng, 2000, 2023, 1));
  cols.push_back(number_column("weekly hours", rows, rng, 30, 50, 1));
  shuffle_rows(cols, rng);
  return assemble("employees", "Employees", std::move(cols));
}

Table departments_table(Rng& rng) {
  std::vector<ColumnSpec> cols;
  cols.push_back(key_column("department name", kDepartments));
  cols.push_back(number_column("budget", kDepartments.size(), rng, 100000, 900000, 50000));
  cols.push_back(number_column("floor", kDepartments.size(), rng, 1, 8, 1));
  cols.push_back(number_column("team size", kDepartments.size(), rng, 4, 40, 1));
  return assemble("departments", "Departments", std::move(cols));
}

Table cities_table(Rng& rng) {
  std::vector<ColumnSpec> cols;
  cols.push_back(key_column("city name", kCities));
  cols.push_back(key_column("country", kCountries));
  cols.push_back(number_column("population", kCities.size(), rng, 500000, 5000000, 10000));
  cols.push_back(number_column("area km2", kCities.size(), rng, 100, 2000, 10));
  return assemble("cities", "Cities", std::move(cols));
}

}  // namespace

std::vector<std::string> synthetic_names(Rng& rng, std::size_t count, std::size_t min_length, std::size_t min_distance) {
  std::vector<std::string> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > count * 1000) throw std::runtime_error("cannot generate enough well separated names");
    std::string name = pseudo_word(rng, 2 + uniform_index(rng, 0, 1)) + " " + pseudo_word(rng, 2);
    if (name.size() < min_length || name.size() > 18) continue;
    const bool close = std::any_of(out.begin(), out.end(), [&](const std::string& o) {
      return edit_distance(casefold_trim(o), casefold_trim(name)) < min_distance;
    });
    if (!close) out.push_back(std::move(name));
  }
  return out;
}

Corpus synthetic_corpus(std::uint64_t seed, std::size_t tables) {
  Rng rng(mix64(seed));
  struct Family {
    const char* topic;
    std::vector<std::vector<std::string>> headers;  // alternatives per slot
  };
  const std::vector<Family> families = {
      {"city statistics", {{"city", "town", "municipality"}, {"country", "nation"}, {"population", "inhabitants"},
                           {"area", "surface area"}, {"founded", "year founded"}}},
      {"staff directory", {{"name", "full name", "employee"}, {"department", "division"}, {"salary", "annual pay"},
                           {"city", "office"}, {"age"}}},
      {"product catalog", {{"product", "item"}, {"price", "unit price", "cost"}, {"category", "type"},
                           {"supplier", "vendor"}, {"stock", "quantity"}}},
      {"football results", {{"team", "club"}, {"goals", "score"}, {"season", "year"}, {"stadium", "venue"},
                            {"city", "town"}}},
      {"weather log", {{"station", "location"}, {"temperature", "temp"}, {"rainfall", "precipitation"},
                       {"month"}, {"city"}}},
      {"book list", {{"title", "book"}, {"author", "writer"}, {"year", "published"}, {"pages"}, {"publisher"}}},
  };
  std::vector<std::string> names = synthetic_names(rng, 60, 8, 3);
  std::vector<std::string> places = synthetic_names(rng, 30, 6, 2);
  std::vector<std::string> words = synthetic_names(rng, 40, 6, 2);

  auto slot_values = [&](const std::string& header, std::size_t rows, std::size_t offset) {
    std::vector<Value> vals;
    static const std::set<std::string> numeric = {"population", "inhabitants", "area", "surface area", "founded",
                                                  "year founded", "salary", "annual pay", "age", "price",
                                                  "unit price", "cost", "stock", "quantity", "goals", "score",
                                                  "season", "year", "temperature", "temp", "rainfall",
                                                  "precipitation", "pages", "published"};
    static const std::set<std::string> place = {"city", "town", "municipality", "office", "location", "station",
                                                "stadium", "venue", "country", "nation"};
    static const std::set<std::string> person = {"name", "full name", "employee", "author", "writer"};
    for (std::size_t r = 0; r < rows; ++r) {
      if (numeric.count(header)) {
        vals.emplace_back(static_cast<double>(uniform_index(rng, 1, 400)));
      } else if (place.count(header)) {
        vals.emplace_back(places[(offset + r) % places.size()]);
      } else if (person.count(header)) {
        vals.emplace_back(names[(offset + r) % names.size()]);
      } else {
        vals.emplace_back(words[(offset + uniform_index(rng, 0, 12)) % words.size()]);
      }
    }
    return vals;
  };

  Corpus corpus;
  for (std::size_t i = 0; i < tables; ++i) {
    const Family& fam = families[uniform_index(rng, 0, families.size() - 1)];
    std::vector<std::size_t> slots(fam.headers.size());
    for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = s;
    seeded_shuffle(slots, rng);
    slots.resize(uniform_index(rng, 3, fam.headers.size()));
    std::sort(slots.begin(), slots.end());
    const std::size_t rows = uniform_index(rng, 8, 30);
    const std::size_t offset = uniform_index(rng, 0, 40);
    Table t;
    t.id = "t" + std::to_string(1000 + i);
    t.title = std::string(fam.topic) + " " + pick(words, rng);
    t.row_count = rows;
    for (std::size_t s : slots) {
      std::string h = pick(fam.headers[s], rng);
      t.columns.push_back(slot_values(h, rows, offset));
      t.headers.push_back(std::move(h));
    }
    if (uniform_index(rng, 0, 9) == 0) t.headers[uniform_index(rng, 0, t.width() - 1)] = std::string(kMask);
    t.validate();
    corpus.add(std::move(t));
  }
  return corpus;
}

SeedDatabase small_seed_database(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x5eedULL));
  SeedDatabase db;
  db.tables.add(employees_table(rng, 60));
  db.tables.add(departments_table(rng));
  db.tables.add(cities_table(rng));
  db.pkfk = {{"employees", {"department", "office city"}},
             {"departments", {"department name"}},
             {"cities", {"city name"}}};
  fact_questions(db, {"employees", "employees",
                      {{"department", "in the {} department"}, {"office city", "based in the {} office"}},
                      {"salary", "age"}});
  join_questions(db, {"employees", "employees", "department", "job role", "working as {}", "departments", "department",
                      "department name", "budget", ""});
  return db;
}

SeedDatabase desk_seed_database(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0xde5cULL));
  SeedDatabase db;
  db.tables.add(employees_table(rng, 90));
  db.tables.add(departments_table(rng));
  db.tables.add(cities_table(rng));
  {
    const std::size_t rows = 80;
    std::vector<ColumnSpec> cols;
    cols.push_back(key_column("product name", synthetic_names(rng, rows)));
    cols.push_back(text_column("category", kCategories, rows, rng));
    cols.push_back(text_column("supplier name", kSuppliers, rows, rng));
    cols.push_back(number_column("unit price", rows, rng, 5, 200, 0.5));
    cols.push_back(number_column("stock quantity", rows, rng, 0, 500, 1));
    cols.push_back(number_column("weight grams", rows, rng, 50, 5000, 50));
    cols.push_back(number_column("customer rating", rows, rng, 1, 5, 0.5));
    shuffle_rows(cols, rng);
    db.tables.add(assemble("products", "Products", std::move(cols)));
  }
  {
    std::vector<ColumnSpec> cols;
    cols.push_back(key_column("supplier name", kSuppliers));
    cols.push_back(text_column("supplier country", kCountries, kSuppliers.size(), rng));
    cols.push_back(number_column("founded year", kSuppliers.size(), rng, 1950, 2015, 1));
    cols.push_back(number_column("delivery days", kSuppliers.size(), rng, 2, 30, 1));
    db.tables.add(assemble("suppliers", "Suppliers", std::move(cols)));
  }
  {
    const std::size_t rows = 100;
    std::vector<ColumnSpec> cols;
    cols.push_back(key_column("student name", synthetic_names(rng, rows)));
    cols.push_back(text_column("major", kMajors, rows, rng));
    cols.push_back(text_column("home city", kCities, rows, rng));
    cols.push_back(number_column("enrollment year", rows, rng, 2015, 2023, 1));
    cols.push_back(number_column("credits earned", rows, rng, 0, 240, 6));
    cols.push_back(number_column("grade average", rows, rng, 2, 4, 0.1));
    cols.push_back(number_column("scholarship amount", rows, rng, 0, 10000, 250));
    shuffle_rows(cols, rng);
    db.tables.add(assemble("students", "Students", std::move(cols)));
  }
  {
    std::vector<ColumnSpec> cols;
    cols.push_back(key_column("major name", kMajors));
    ColumnSpec faculty{"faculty", {}};
    for (const auto& f : kFaculties) faculty.values.emplace_back(f);
    cols.push_back(std::move(faculty));
    cols.push_back(number_column("tuition fee", kMajors.size(), rng, 2000, 12000, 500));
    cols.push_back(number_column("duration years", kMajors.size(), rng, 3, 5, 1));
    db.tables.add(assemble("majors", "Majors", std::move(cols)));
  }
  db.pkfk = {{"employees", {"department", "office city"}}, {"departments", {"department name"}},
             {"cities", {"city name"}},                    {"products", {"supplier name"}},
             {"suppliers", {"supplier name"}},             {"students", {"major", "home city"}},
             {"majors", {"major name"}}};

  fact_questions(db, {"employees", "employees",
                      {{"department", "in the {} department"},
                       {"office city", "based in the {} office"},
                       {"job role", "working as {}"}},
                      {"salary", "age", "hire year", "weekly hours"}});
  fact_questions(db, {"products", "products",
                      {{"category", "in the {} category"}, {"supplier name", "supplied by {}"}},
                      {"unit price", "stock quantity", "weight grams", "customer rating"}});
  fact_questions(db, {"students", "students",
                      {{"major", "majoring in {}"}, {"home city", "from {}"}},
                      {"credits earned", "grade average", "scholarship amount", "enrollment year"}});
  dim_questions(db, {"departments", "departments", {"budget", "floor", "team size"}});
  dim_questions(db, {"cities", "cities", {"population", "area km2"}});
  dim_questions(db, {"suppliers", "suppliers", {"founded year", "delivery days"}});
  dim_questions(db, {"majors", "majors", {"tuition fee", "duration years"}});
  join_questions(db, {"employees", "employees", "department", "office city", "based in the {} office", "departments",
                      "department", "department name", "budget", ""});
  join_questions(db, {"employees", "employees", "office city", "job role", "working as {}", "cities", "office city",
                      "city name", "population", "salary"});
  join_questions(db, {"products", "products", "supplier name", "category", "in the {} category", "suppliers",
                      "supplier", "supplier name", "delivery days", "stock quantity"});
  join_questions(db, {"students", "students", "major", "home city", "from {}", "majors", "major", "major name",
                      "tuition fee", "scholarship amount"});
  return db;
}

Corpus synthetic_external_pool(std::uint64_t seed, std::size_t tables) {
  Rng rng(mix64(seed ^ 0xe87ULL));
  struct Topic {
    const char* name;
    std::vector<std::string> headers;
  };
  const std::vector<Topic> topics = {
      {"river gauges", {"river", "station", "water level", "flow rate"}},
      {"film releases", {"film", "director", "release year", "box office"}},
      {"bird sightings", {"species", "observer", "count", "habitat"}},
      {"train timetable", {"route", "departure", "arrival", "platform"}},
      {"chess ratings", {"player", "federation", "rating", "games"}},
      {"volcano records", {"volcano", "region", "elevation", "last eruption"}},
      {"recipe nutrition", {"recipe", "calories", "protein", "servings"}},
      {"marathon times", {"runner", "finish time", "bib", "age group"}},
      {"museum visits", {"museum", "visitors", "exhibit", "opening year"}},
      {"satellite launches", {"satellite", "operator", "launch year", "orbit"}},
      {"employee training sessions", {"session", "trainer", "hours", "attendees"}},
      {"city weather summary", {"city", "rainfall", "sunshine hours", "month"}},
      {"product recalls", {"product", "recall date", "units", "reason"}},
      {"student clubs", {"club", "members", "founded", "advisor"}},
      {"supplier audits", {"auditor", "audit score", "site", "audit year"}},
      {"department events", {"event", "attendance", "venue", "cost"}},
  };
  const std::vector<std::string> words = synthetic_names(rng, 80, 6, 2);
  Corpus pool;
  for (std::size_t i = 0; i < tables; ++i) {
    const Topic& topic = topics[uniform_index(rng, 0, topics.size() - 1)];
    Table t;
    std::string slug = topic.name;
    std::replace(slug.begin(), slug.end(), ' ', '_');
    t.id = "ext_" + slug + "_" + std::to_string(i);
    t.title = std::string(topic.name) + " " + pick(words, rng);
    t.headers = topic.headers;
    t.row_count = uniform_index(rng, 5, 15);
    t.columns.assign(t.width(), {});
    for (std::size_t c = 0; c < t.width(); ++c)
      for (std::size_t r = 0; r < t.row_count; ++r) {
        if (c == 0 || uniform_index(rng, 0, 2) == 0)
          t.columns[c].emplace_back(pick(words, rng));
        else
          t.columns[c].emplace_back(static_cast<double>(uniform_index(rng, 1, 5000)));
      }
    t.validate();
    pool.add(std::move(t));
  }
  return pool;
}

std::vector<BenchQuestion> select_questions(const std::vector<BenchQuestion>& pool, const SelectionOptions& options,
                                            std::vector<std::string>* notes) {
  std::vector<const BenchQuestion*> lexical, other;
  for (const auto& q : pool) {
    if (q.relevant.empty() || q.relevant.size() > options.max_relevant) continue;
    (q.lexical ? lexical : other).push_back(&q);
  }
  // Spread the picks over the templates: round-robin over question id prefixes.
  auto spread = [](std::vector<const BenchQuestion*> qs) {
    std::map<std::string, std::vector<const BenchQuestion*>> by_prefix;
    for (const auto* q : qs) by_prefix[q->id.substr(0, q->id.rfind('_'))].push_back(q);
    std::vector<const BenchQuestion*> out;
    for (std::size_t round = 0; out.size() < qs.size(); ++round)
      for (auto& [prefix, list] : by_prefix)
        if (round < list.size()) out.push_back(list[round]);
    return out;
  };
  lexical = spread(lexical);
  other = spread(other);
  const auto want_lexical =
      static_cast<std::size_t>(std::ceil(options.min_lexical_share * static_cast<double>(options.questions) - 1e-9));
  std::vector<BenchQuestion> out;
  std::size_t li = 0, oi = 0;
  while (out.size() < want_lexical && li < lexical.size()) out.push_back(*lexical[li++]);
  while (out.size() < options.questions && oi < other.size()) out.push_back(*other[oi++]);
  while (out.size() < options.questions && li < lexical.size()) out.push_back(*lexical[li++]);
  if (notes) {
    const auto lex = static_cast<std::size_t>(std::count_if(out.begin(), out.end(), [](const auto& q) { return q.lexical; }));
    notes->push_back("selected " + std::to_string(out.size()) + " of " + std::to_string(pool.size()) +
                     " verified questions; " + std::to_string(lex) + " lexically recoverable");
    if (out.size() < options.questions) notes->push_back("not enough eligible questions");
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

DeskBenchmark build_desk_benchmark(std::uint64_t seed, const Providers& providers, std::size_t external_tables,
                                   const SelectionOptions& options) {
  DeskBenchmark d;
  d.seed = desk_seed_database(seed);
  d.external = synthetic_external_pool(seed, external_tables);
  BenchConfig cfg;
  cfg.seed = seed;
  d.bench = run_benchgen(d.seed, d.external, cfg, providers);
  d.questions = select_questions(d.bench.questions, options, &d.notes);
  return d;
}

}  // namespace lakeqa
