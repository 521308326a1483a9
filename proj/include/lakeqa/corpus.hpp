#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace lakeqa {

/// A cell: null, number or text.
using Value = std::variant<std::monostate, double, std::string>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }
inline bool is_number(const Value& v) { return std::holds_alternative<double>(v); }
inline bool is_text(const Value& v) { return std::holds_alternative<std::string>(v); }

/// Empty cell -> null, numeric-looking cell -> number, anything else text.
Value parse_cell(std::string_view cell);

/// Canonical rendering; null renders as the empty string.
std::string value_to_string(const Value& v);

nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

/// The outermost {...} span of a model response, parsed; nullopt when absent or invalid.
std::optional<nlohmann::json> extract_json_object(const std::string& text);

/// Which rows of the source table a derived table holds.
struct RowPredicate {
  enum class Kind { all, range, categories };

  Kind kind = Kind::all;
  std::size_t column = 0;              // source column index
  double lo = 0, hi = 0;               // range: lo <= v <= hi
  std::vector<std::string> categories;  // canonical value strings
  bool includes_null = false;

  bool matches(const Value& v) const;
  std::string describe() const;

  bool operator==(const RowPredicate&) const = default;
};

struct Provenance {
  std::string source_table;
  std::vector<std::size_t> columns;  // source column index of each column, in order
  RowPredicate rows;
  // The source had no all-distinct column; a row-number key was appended to it as
  // column index = original width.
  bool synthetic_key = false;

  bool operator==(const Provenance&) const = default;
};

nlohmann::json provenance_to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);

class TableError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Table {
  std::string id;
  std::string title;
  std::vector<std::string> headers;
  std::vector<std::vector<Value>> columns;
  std::size_t row_count = 0;
  std::optional<Provenance> provenance;

  std::size_t width() const { return headers.size(); }

  /// Throws TableError when the shape invariants are broken.
  void validate() const;

  /// At least one number and no text.
  bool column_is_numeric(std::size_t col) const;
  /// Any text value.
  bool column_is_text(std::size_t col) const;

  bool has_mask() const;
  std::optional<std::size_t> column_index(std::string_view header) const;
  std::vector<Value> row(std::size_t r) const;

  bool operator==(const Table&) const = default;
};

/// Builds a table from header + rows, typing each cell with parse_cell.
Table make_table(std::string id, std::string title, std::vector<std::string> headers,
                 const std::vector<std::vector<std::string>>& rows);

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The table collection, kept ordered by id.
class Corpus {
 public:
  void add(Table t);  // throws CorpusError on duplicate id
  void replace(Table t);

  const Table& at(std::string_view id) const;
  const Table* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  const std::vector<Table>& tables() const { return tables_; }
  std::vector<std::string> ids() const;
  std::size_t size() const { return tables_.size(); }
  bool empty() const { return tables_.empty(); }

  /// Hash over ids, metadata and cell contents.
  std::string content_hash() const;

  bool operator==(const Corpus&) const = default;

 private:
  std::vector<Table> tables_;
};

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest directory
  std::string title;
  std::vector<bool> masked_headers;
  bool header_row = true;
  std::optional<Provenance> provenance;
};

struct CorpusManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::vector<ManifestEntry> entries;

  static CorpusManifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

struct IngestError {
  std::string file;
  std::string message;
  std::vector<std::size_t> rows;  // 1-based record numbers (header = 1)
};

struct IngestResult {
  Corpus corpus;
  std::vector<IngestError> errors;
};

/// Without a manifest every *.csv under `dir` (sorted by name) becomes a table
/// titled by its file stem; with one, entries drive ids, titles and masks and
/// paths resolve against `manifest_dir`.
IngestResult ingest_csv_dir(const std::filesystem::path& dir, const CorpusManifest* manifest = nullptr,
                            const std::filesystem::path& manifest_dir = {});

/// Loads `dir/manifest.json` + `dir/tables/` when present, else plain CSVs in
/// dir/tables or dir. Any ingestion error is fatal here.
Corpus load_corpus(const std::filesystem::path& dir);

/// Writes `dir/tables/<id>.csv` and `dir/manifest.json`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

inline constexpr std::size_t kSnippetValues = 50;

struct ColumnSnippet {
  std::string table_id;
  std::size_t column = 0;
  std::string text;
};

/// Distinct non-null values of a column in first-occurrence order, rendered
/// canonically, at most `cap` of them.
std::vector<std::string> distinct_values(const Table& t, std::size_t col, std::size_t cap = SIZE_MAX);

ColumnSnippet build_column_snippet(const Table& t, std::size_t col, std::size_t values = kSnippetValues);

/// Title followed by headers.
std::string table_document(const Table& t);

/// Member metadata blocks in id order.
std::string build_cluster_document(std::vector<const Table*> members);

}  // namespace lakeqa
