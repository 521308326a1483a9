#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/plan.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

using Rng = std::mt19937_64;

/// Inclusive uniform integer; portable across standard libraries.
std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi);
template <class T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, 0, i - 1)]);
}

struct BenchConfig {
  double mask_table_fraction = 0.20;
  double mask_header_fraction = 0.50;
  double perturb_cell_fraction = 0.20;
  std::uint64_t seed = 42;
  std::size_t external_top_n = 5;
  std::size_t split_min_columns = 5;  // decompose when columns exceed this
  std::size_t split_min_rows = 50;    // ... and rows exceed this
  std::size_t min_buckets = 5, max_buckets = 20;
  std::size_t min_groups = 2, max_groups = 20;
  std::size_t min_perturb_length = 5;

  /// Throws std::invalid_argument when a fraction leaves [0, 1] or a range is empty.
  void validate() const;
};

/// Columns with a value in every row, all distinct.
std::vector<std::size_t> key_columns(const Table& t);

std::string column_grouping_prompt(const Table& t, const std::vector<std::size_t>& columns);

struct ColumnSplit {
  std::vector<Table> tables;
  std::vector<std::size_t> keys;  // source key columns (the synthetic key is the source width)
  bool used_provider = false;
  std::vector<std::string> warnings;
};

/// Identity unless the table is large. Every column group gets one key column;
/// a table holding all keys is added when no group has them all.
ColumnSplit split_columns(const Table& t, const std::set<std::string>& pkfk_headers, const ChatProvider* chat,
                          const Embedder& embedder, Rng& rng, const BenchConfig& cfg = {});

/// Bucket a table on one non-key column. `keys` are its key columns (local
/// indices); they are never chosen. Identity when no column can be split.
std::vector<Table> split_rows(const Table& t, const std::vector<std::size_t>& keys, Rng& rng,
                              const BenchConfig& cfg = {});

struct GoldMetadata {
  std::string title;
  std::vector<std::string> headers;
};

/// Masks floor(f_t * n) tables among `ids` (all tables when empty): ceil(f_h * width) headers and the title.
std::map<std::string, GoldMetadata> mask_metadata(Corpus& corpus, const BenchConfig& cfg, Rng& rng,
                                                  std::vector<std::string> ids = {});

struct PerturbationRecord {
  std::string table;
  std::size_t column = 0;
  std::size_t row = 0;
  std::string original;
  std::string perturbed;
  std::string kind;  // swap | delete | substitute
};

/// One edit of the given kind at a random position; nullopt when impossible.
std::optional<std::string> perturb_once(const std::string& s, const std::string& kind, Rng& rng);

struct PerturbationReport {
  std::vector<PerturbationRecord> log;
  std::vector<std::string> warnings;
};

/// Perturbs floor(f * rows) cells of each textual key column of the named tables.
PerturbationReport perturb_join_values(Corpus& corpus, const BenchConfig& cfg, Rng& rng,
                                       const std::vector<std::string>& ids = {});

/// Adds the top-N external tables for each query (deduplicated, id collisions skipped).
std::vector<std::string> augment_external(Corpus& corpus, const Corpus& external, const std::vector<std::string>& queries,
                                          std::size_t top_n, std::vector<std::string>* warnings = nullptr);

/// Source table -> (columns, rows) of the source that the answer draws on.
struct FootprintPart {
  std::set<std::size_t> columns;
  std::set<std::size_t> rows;
};
using GoldFootprint = std::map<std::string, FootprintPart>;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimum set of derived tables covering every footprint cell; among minimum
/// covers the lexicographically smallest id list. Throws DatasetError when a
/// cell is covered by no table.
std::vector<std::string> annotate_relevant_tables(const GoldFootprint& footprint, const Corpus& lake,
                                                  const Corpus& sources);

/// Columns referenced by the plan for each scanned source table, the primary key,
/// and the rows surviving the filters applied directly on the scan.
GoldFootprint compute_footprint(const RelationalPlan& plan, const Corpus& sources,
                                const std::map<std::string, std::set<std::string>>& pkfk);

/// Union of row splits then natural join of column splits equals the source cell
/// multiset, after undoing the logged perturbations.
bool verify_reconstruction(const Table& source, const std::vector<const Table*>& parts,
                           const std::vector<PerturbationRecord>& log);

/// Rewrites a plan over source tables into one over the given derived tables.
/// Throws DatasetError when the tables cannot be joined back together.
RelationalPlan rewrite_plan(const RelationalPlan& plan, const Corpus& sources, const Corpus& lake,
                            const std::vector<std::string>& relevant);

struct ComplexityCounts {
  std::size_t joins = 0;
  std::size_t unions = 0;
  bool masked = false;
};

ComplexityCounts complexity_counts(const RelationalPlan& lake_plan, const Corpus& lake);
/// easy: at most one join, no union, full metadata; hard: two or more joins, a
/// union and masked metadata; moderate otherwise.
std::string complexity_label(const ComplexityCounts& c);

/// Distinct question words (after lexical_key) found in the table's unmasked
/// title and headers.
std::size_t lexical_overlap(const std::set<std::string>& question_keys, const Table& t);
/// Word overlap with the question alone separates the relevant tables: every
/// relevant table overlaps strictly more than any other table in the lake.
bool lexically_recoverable(std::string_view question, const std::vector<std::string>& relevant, const Corpus& lake);

struct SeedQuestion {
  std::string id;
  std::string question;
  RelationalPlan plan;  // over the seed tables, columns by name
};

struct SeedDatabase {
  Corpus tables;
  std::map<std::string, std::set<std::string>> pkfk;  // table -> headers in PK-FK joins
  std::vector<SeedQuestion> questions;

  /// <dir>/tables + manifest via load_corpus, <dir>/seed.json for questions and keys.
  static SeedDatabase load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

struct BenchQuestion {
  std::string id;
  std::string question;
  Value answer;
  std::vector<std::string> relevant;
  RelationalPlan plan;  // over the lake
  std::string complexity;
  ComplexityCounts counts;
  bool lexical = false;

  nlohmann::json to_json() const;
  static BenchQuestion from_json(const nlohmann::json& j);
};

struct BenchResult {
  Corpus lake;
  std::vector<BenchQuestion> questions;
  std::vector<PerturbationRecord> perturbations;
  std::map<std::string, GoldMetadata> gold_metadata;
  std::map<std::string, std::vector<std::string>> derived;  // source -> derived table ids
  std::vector<std::string> external_added;
  std::vector<std::string> dropped;  // question ids and reasons
  std::vector<std::string> warnings;
  bool reconstruction_ok = true;
  bool row_splits_coclustered = true;  // checked before masking
};

struct BenchOptions {
  bool check_coclustering = true;
};

BenchResult run_benchgen(const SeedDatabase& seed, const Corpus& external, const BenchConfig& cfg,
                         const Providers& providers, const BenchOptions& options = {});

/// Lake corpus, questions.json, gold_metadata.json, perturbations.json, report.json.
void save_bench(const BenchResult& result, const std::filesystem::path& dir);
std::vector<BenchQuestion> load_bench_questions(const std::filesystem::path& file);

}  // namespace lakeqa
