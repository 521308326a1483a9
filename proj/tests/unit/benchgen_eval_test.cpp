#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "lakeqa/benchgen.hpp"
#include "lakeqa/eval.hpp"
#include "lakeqa/synthetic.hpp"
#include "lakeqa/text.hpp"

using namespace lakeqa;

namespace {

Table numbered_table(const std::string& id, std::size_t rows, std::size_t width) {
  std::vector<std::string> headers;
  for (std::size_t c = 0; c < width; ++c) headers.push_back("col" + std::to_string(c));
  std::vector<std::vector<std::string>> cells;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::string> row = {std::to_string(r)};
    for (std::size_t c = 1; c < width; ++c) row.push_back("v" + std::to_string((r * 7 + c * 3) % 11));
    cells.push_back(row);
  }
  return make_table(id, id, headers, cells);
}

// Smallest sorted id list covering the footprint, found by trying every subset.
std::optional<std::vector<std::string>> subset_oracle(const GoldFootprint& fp, const Corpus& lake, const Table& src) {
  const auto& tables = lake.tables();
  std::optional<std::vector<std::string>> best;
  for (std::size_t mask = 0; mask < (std::size_t{1} << tables.size()); ++mask) {
    std::vector<std::string> ids;
    bool all = true;
    for (const auto& [s, part] : fp)
      for (std::size_t c : part.columns)
        for (std::size_t r : part.rows) {
          bool hit = false;
          for (std::size_t i = 0; i < tables.size() && !hit; ++i) {
            if (!(mask >> i & 1)) continue;
            const Provenance& p = *tables[i].provenance;
            const bool row_in = p.rows.kind == RowPredicate::Kind::all || p.rows.matches(src.columns[p.rows.column][r]);
            hit = row_in && std::find(p.columns.begin(), p.columns.end(), c) != p.columns.end();
          }
          all = all && hit;
        }
    if (!all) continue;
    for (std::size_t i = 0; i < tables.size(); ++i)
      if (mask >> i & 1) ids.push_back(tables[i].id);
    if (!best || ids.size() < best->size() || (ids.size() == best->size() && ids < *best)) best = ids;
  }
  return best;
}

std::vector<std::vector<Value>> sorted_rows(const Table& t) {
  std::vector<std::vector<Value>> rows;
  for (std::size_t r = 0; r < t.row_count; ++r) rows.push_back(t.row(r));
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

TEST(Benchgen, ConfigValidation) {
  BenchConfig c;
  EXPECT_NO_THROW(c.validate());
  c.mask_table_fraction = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.min_buckets = 9;
  c.max_buckets = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Benchgen, KeyColumns) {
  const Table t = make_table("t", "t", {"id", "name", "dup", "gap"},
                             {{"1", "a", "x", "p"}, {"2", "B", "x", "q"}, {"3", "b", "y", ""}});
  // a missing value disqualifies a column, case does not merge values
  EXPECT_EQ(key_columns(t), (std::vector<std::size_t>{0, 1}));
}

TEST(Benchgen, MaskingCounts) {
  Corpus c;
  for (int i = 0; i < 10; ++i) c.add(numbered_table("t" + std::to_string(i), 3, 5));
  Rng rng(1);
  const auto gold = mask_metadata(c, {}, rng);
  ASSERT_EQ(gold.size(), 2u);
  for (const auto& [id, meta] : gold) {
    const Table& t = c.at(id);
    EXPECT_EQ(t.title, kMask);
    EXPECT_EQ(std::count(t.headers.begin(), t.headers.end(), kMask), 3);
    EXPECT_EQ(meta.title, id);
    EXPECT_EQ(meta.headers.size(), 5u);
  }
}

TEST(Benchgen, PerturbationsAreSingleFuzzyEdits) {
  Rng rng(4);
  for (const std::string kind : {"swap", "delete", "substitute"}) {
    for (const std::string s : {"New York", "Chicago", "Lakeside Academy", "Oslo5"}) {
      for (int i = 0; i < 20; ++i) {
        const auto p = perturb_once(s, kind, rng);
        ASSERT_TRUE(p.has_value()) << kind << " " << s;
        EXPECT_NE(*p, s);
        EXPECT_EQ(edit_distance(*p, s), 1u) << *p;
        EXPECT_TRUE(fuzzy_match(*p, s, 0.2)) << *p;
      }
    }
  }
  EXPECT_FALSE(perturb_once("", "delete", rng).has_value());
  EXPECT_FALSE(perturb_once("aa", "swap", rng).has_value());
}

TEST(Benchgen, RowSplitsPartitionTheRows) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Table t = numbered_table("src" + std::to_string(trial), 60 + static_cast<std::size_t>(trial) * 5, 4);
    const auto parts = split_rows(t, {0}, rng);
    ASSERT_GE(parts.size(), 2u);
    std::vector<std::vector<Value>> joined;
    for (const auto& p : parts) {
      ASSERT_TRUE(p.provenance.has_value());
      EXPECT_EQ(p.headers, t.headers);
      EXPECT_NE(p.provenance->rows.column, 0u);  // never on the key
      for (std::size_t r = 0; r < p.row_count; ++r) {
        const auto row = p.row(r);
        EXPECT_TRUE(p.provenance->rows.matches(row[p.provenance->rows.column]));
        joined.push_back(row);
      }
    }
    std::sort(joined.begin(), joined.end());
    EXPECT_EQ(joined, sorted_rows(t));
  }
}

TEST(Benchgen, RelevantTablesMatchSubsetOracle) {
  Rng rng(12);
  Corpus sources;
  const Table src = numbered_table("src", 8, 4);
  sources.add(src);
  std::size_t covered_cases = 0;
  for (int trial = 0; trial < 150; ++trial) {
    Corpus lake;
    const std::size_t n = uniform_index(rng, 2, 10);
    for (std::size_t i = 0; i < n; ++i) {
      Provenance p;
      p.source_table = "src";
      for (std::size_t c = 0; c < 4; ++c)
        if (uniform_index(rng, 0, 1)) p.columns.push_back(c);
      if (p.columns.empty()) p.columns.push_back(uniform_index(rng, 0, 3));
      if (uniform_index(rng, 0, 2) > 0) {
        p.rows.kind = RowPredicate::Kind::range;
        p.rows.column = 0;
        p.rows.lo = static_cast<double>(uniform_index(rng, 0, 7));
        p.rows.hi = p.rows.lo + static_cast<double>(uniform_index(rng, 0, 4));
      }
      std::vector<std::string> headers;
      std::vector<std::string> row;
      for (std::size_t c : p.columns) {
        headers.push_back("col" + std::to_string(c));
        row.push_back("x");
      }
      Table t = make_table("d" + std::to_string(i), "d", headers, {row});
      t.provenance = p;
      lake.add(t);
    }
    GoldFootprint fp;
    auto& part = fp["src"];
    for (std::size_t c = 0; c < 4; ++c)
      if (uniform_index(rng, 0, 2) == 0) part.columns.insert(c);
    if (part.columns.empty()) part.columns.insert(0);
    for (std::size_t r = 0; r < 8; ++r)
      if (uniform_index(rng, 0, 2) == 0) part.rows.insert(r);
    if (part.rows.empty()) part.rows.insert(uniform_index(rng, 0, 7));

    const auto expected = subset_oracle(fp, lake, src);
    if (!expected) {
      EXPECT_THROW(annotate_relevant_tables(fp, lake, sources), DatasetError);
      continue;
    }
    ++covered_cases;
    EXPECT_EQ(annotate_relevant_tables(fp, lake, sources), *expected) << "trial " << trial;
  }
  EXPECT_GT(covered_cases, 30u);
}

TEST(Benchgen, ComplexityLabels) {
  EXPECT_EQ(complexity_label({1, 0, false}), "easy");
  EXPECT_EQ(complexity_label({2, 1, true}), "hard");
  EXPECT_EQ(complexity_label({0, 0, true}), "moderate");
  EXPECT_EQ(complexity_label({3, 0, true}), "moderate");
}

TEST(Benchgen, LexicalOverlapIgnoresMaskedMetadata) {
  Table t = make_table("t", "students", {"major", "gpa"}, {{"math", "3.5"}});
  const std::set<std::string> keys = {lexical_key("students"), lexical_key("majors")};
  EXPECT_EQ(lexical_overlap(keys, t), 2u);
  t.headers[0] = kMask;
  EXPECT_EQ(lexical_overlap(keys, t), 1u);
}

TEST(Benchgen, QuestionJsonRoundTrip) {
  BenchQuestion q;
  q.id = "students_q1";
  q.question = "How many students?";
  q.answer = 12.0;
  q.relevant = {"students_p0", "students_p1"};
  q.complexity = "moderate";
  q.counts = {0, 1, false};
  q.lexical = true;
  q.plan.nodes.push_back({});
  q.plan.nodes[0].id = "s";
  q.plan.nodes[0].table = "students_p0";
  q.plan.root = "s";
  const BenchQuestion back = BenchQuestion::from_json(q.to_json());
  EXPECT_EQ(back.to_json(), q.to_json());
  EXPECT_EQ(back.plan, q.plan);
}

TEST(Benchgen, SmallSeedRunIsDeterministic) {
  const SeedDatabase db = small_seed_database(7);
  const Corpus ext = synthetic_external_pool(7, 30);
  const Providers p = Providers::deterministic();
  BenchConfig cfg;
  cfg.seed = 7;
  const BenchResult a = run_benchgen(db, ext, cfg, p);
  const BenchResult b = run_benchgen(db, ext, cfg, p);
  EXPECT_EQ(a.lake, b.lake);
  ASSERT_EQ(a.questions.size(), b.questions.size());
  for (std::size_t i = 0; i < a.questions.size(); ++i) EXPECT_EQ(a.questions[i].to_json(), b.questions[i].to_json());
  EXPECT_TRUE(a.reconstruction_ok);
  EXPECT_TRUE(a.row_splits_coclustered);
  for (const auto& [source, parts] : a.derived) {
    std::vector<const Table*> ptrs;
    for (const auto& id : parts) ptrs.push_back(&a.lake.at(id));
    EXPECT_TRUE(verify_reconstruction(db.tables.at(source), ptrs, a.perturbations)) << source;
  }
}

TEST(Eval, PrecisionRecallAtK) {
  const std::vector<std::string> retrieved = {"a", "b", "c", "d", "e"};
  const std::set<std::string> relevant = {"a", "c", "x"};
  Prf p = prf_at_k(retrieved, relevant, 3);
  EXPECT_DOUBLE_EQ(p.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.f1, 2.0 / 3.0);
  p = prf_at_k(retrieved, relevant, 5);
  EXPECT_DOUBLE_EQ(p.precision, 0.4);
  EXPECT_DOUBLE_EQ(p.f1, 2 * 0.4 * (2.0 / 3.0) / (0.4 + 2.0 / 3.0));
  // a short list still divides by k
  p = prf_at_k({"a"}, relevant, 5);
  EXPECT_DOUBLE_EQ(p.precision, 0.2);
  EXPECT_EQ(prf_at_k({"y"}, relevant, 1).f1, 0.0);
  EXPECT_THROW(prf_at_k(retrieved, relevant, 0), std::invalid_argument);
  EXPECT_THROW(prf_at_k(retrieved, {}, 3), std::invalid_argument);
}

TEST(Eval, ExactMatch) {
  EXPECT_TRUE(em_match(Value(100.00005), Value(100.0)));
  EXPECT_FALSE(em_match(Value(100.001), Value(100.0)));
  EXPECT_TRUE(em_match(Value(0.0000005), Value(0.0)));
  EXPECT_TRUE(em_match(Value(std::string(" New York")), Value(std::string("new york"))));
  EXPECT_FALSE(em_match(Value(std::string("Boston")), Value(std::string("new york"))));
  EXPECT_TRUE(em_match(Value(std::string("42")), Value(42.0)));
  EXPECT_FALSE(em_match(std::nullopt, Value(1.0)));
}

TEST(Eval, RetentionAndRedundancy) {
  EXPECT_TRUE(fuzzy_contains("Which schools have an average Math scores above 560?", "math score"));
  EXPECT_TRUE(information_retained({"math score", "charter funded"},
                                   {"Which schools have a Math score over 560?", "Are they charter-funded?"}));
  EXPECT_FALSE(information_retained({"math score", "enrollment"}, {"Which schools have a Math score over 560?"}));

  HashingEmbedder e;
  EXPECT_FALSE(subquestion_redundancy({"only one"}, e).has_value());
  EXPECT_NEAR(*subquestion_redundancy({"same words", "same words"}, e), 1.0, 1e-12);
  const double mixed = *subquestion_redundancy({"nobel prize winners", "shipping container weight", "nobel prize"}, e);
  EXPECT_GT(mixed, 0.0);
  EXPECT_LT(mixed, 1.0);
}

TEST(Eval, ReportHandlesMissingAndInvalidRecords) {
  std::vector<GoldRecord> gold(2);
  gold[0] = {"q1", "first", Value(3.0), {"a"}, "easy"};
  gold[1] = {"q2", "second", Value(std::string("x")), {}, "hard"};  // no relevant tables
  std::vector<RunRecord> runs(2);
  runs[0].id = "q1";
  runs[0].k = 5;
  runs[0].retrieved = {"a", "b"};
  runs[0].answer = Value(3.0);
  runs[1].id = "q9";
  runs[1].k = 5;
  const MetricReport r = evaluate(runs, gold, {5});
  EXPECT_EQ(r.overall.at(5).questions, 1u);
  EXPECT_DOUBLE_EQ(r.overall.at(5).recall, 1.0);
  EXPECT_DOUBLE_EQ(r.overall.at(5).em, 1.0);
  EXPECT_FALSE(r.errors.empty());
  EXPECT_FALSE(r.to_text().empty());
  EXPECT_TRUE(r.to_json().contains("overall"));
}

TEST(Benchgen, ExternalAugmentation) {
  const Corpus pool = synthetic_external_pool(5, 40);
  Corpus lake;
  lake.add(make_table("seed_students", "students", {"id", "major"}, {{"1", "math"}}));
  const Corpus before = lake;
  EXPECT_TRUE(augment_external(lake, pool, {"students major"}, 0).empty());
  EXPECT_EQ(lake, before);

  std::vector<std::string> warnings;
  EXPECT_TRUE(augment_external(lake, Corpus{}, {"students"}, 5, &warnings).empty());
  EXPECT_EQ(warnings.size(), 1u);

  // a repeated query adds its hits once
  Corpus once = lake, twice = lake;
  const auto a = augment_external(once, pool, {"city population"}, 3);
  const auto b = augment_external(twice, pool, {"city population", "city population"}, 3);
  ASSERT_FALSE(a.empty());
  EXPECT_LE(a.size(), 3u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(once, twice);
  EXPECT_EQ(once.size(), before.size() + a.size());
}
