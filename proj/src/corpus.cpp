#include "lakeqa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "lakeqa/csv.hpp"
#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

Value parse_cell(std::string_view cell) {
  if (cell.empty()) return std::monostate{};
  if (auto v = parse_number(cell)) return *v;
  return std::string(cell);
}

std::string value_to_string(const Value& v) {
  if (is_number(v)) return format_number(std::get<double>(v));
  if (is_text(v)) return std::get<std::string>(v);
  return {};
}

json value_to_json(const Value& v) {
  if (is_number(v)) return std::get<double>(v);
  if (is_text(v)) return std::get<std::string>(v);
  return nullptr;
}

Value value_from_json(const json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? 1.0 : 0.0;
  throw std::invalid_argument("value must be null, number or string");
}

bool RowPredicate::matches(const Value& v) const {
  if (kind == Kind::all) return true;
  if (is_null(v)) return includes_null;
  if (kind == Kind::range) {
    if (!is_number(v)) return false;
    double x = std::get<double>(v);
    return x >= lo && x <= hi;
  }
  const std::string s = value_to_string(v);
  return std::binary_search(categories.begin(), categories.end(), s);
}

std::string RowPredicate::describe() const {
  switch (kind) {
    case Kind::all:
      return "all rows";
    case Kind::range:
      return "column " + std::to_string(column) + " in [" + format_number(lo) + ", " + format_number(hi) + "]" +
             (includes_null ? " or null" : "");
    case Kind::categories:
      return "column " + std::to_string(column) + " in {" + join(categories, ", ") + "}" +
             (includes_null ? " or null" : "");
  }
  return {};
}

json provenance_to_json(const Provenance& p) {
  json rows;
  switch (p.rows.kind) {
    case RowPredicate::Kind::all:
      rows = {{"kind", "all"}};
      break;
    case RowPredicate::Kind::range:
      rows = {{"kind", "range"}, {"column", p.rows.column}, {"lo", p.rows.lo}, {"hi", p.rows.hi},
              {"nulls", p.rows.includes_null}};
      break;
    case RowPredicate::Kind::categories:
      rows = {{"kind", "categories"}, {"column", p.rows.column}, {"values", p.rows.categories},
              {"nulls", p.rows.includes_null}};
      break;
  }
  rows["description"] = p.rows.describe();
  return {{"source", p.source_table}, {"columns", p.columns}, {"rows", rows}, {"synthetic_key", p.synthetic_key}};
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.source_table = j.at("source").get<std::string>();
  p.columns = j.at("columns").get<std::vector<std::size_t>>();
  p.synthetic_key = j.value("synthetic_key", false);
  const json& rows = j.at("rows");
  const std::string kind = rows.at("kind").get<std::string>();
  if (kind == "all") {
    p.rows.kind = RowPredicate::Kind::all;
  } else if (kind == "range") {
    p.rows.kind = RowPredicate::Kind::range;
    p.rows.column = rows.at("column").get<std::size_t>();
    p.rows.lo = rows.at("lo").get<double>();
    p.rows.hi = rows.at("hi").get<double>();
    p.rows.includes_null = rows.value("nulls", false);
  } else if (kind == "categories") {
    p.rows.kind = RowPredicate::Kind::categories;
    p.rows.column = rows.at("column").get<std::size_t>();
    p.rows.categories = rows.at("values").get<std::vector<std::string>>();
    std::sort(p.rows.categories.begin(), p.rows.categories.end());
    p.rows.includes_null = rows.value("nulls", false);
  } else {
    throw std::invalid_argument("unknown row predicate kind: " + kind);
  }
  return p;
}

void Table::validate() const {
  if (id.empty()) throw TableError("table id is empty");
  if (headers.size() != columns.size())
    throw TableError("table " + id + ": " + std::to_string(headers.size()) + " headers but " +
                     std::to_string(columns.size()) + " columns");
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c].size() != row_count)
      throw TableError("table " + id + ": column " + std::to_string(c) + " has " +
                       std::to_string(columns[c].size()) + " cells, expected " + std::to_string(row_count));
  if (provenance && provenance->columns.size() != headers.size())
    throw TableError("table " + id + ": provenance column list does not match width");
}

bool Table::column_is_numeric(std::size_t col) const {
  bool any = false;
  for (const auto& v : columns.at(col)) {
    if (is_text(v)) return false;
    any = any || is_number(v);
  }
  return any;
}

bool Table::column_is_text(std::size_t col) const {
  return std::any_of(columns.at(col).begin(), columns.at(col).end(), [](const Value& v) { return is_text(v); });
}

bool Table::has_mask() const {
  return title == kMask || std::any_of(headers.begin(), headers.end(), [](const std::string& h) { return h == kMask; });
}

std::optional<std::size_t> Table::column_index(std::string_view header) const {
  for (std::size_t i = 0; i < headers.size(); ++i)
    if (headers[i] == header) return i;
  const std::string folded = casefold_trim(header);
  for (std::size_t i = 0; i < headers.size(); ++i)
    if (casefold_trim(headers[i]) == folded) return i;
  return std::nullopt;
}

std::vector<Value> Table::row(std::size_t r) const {
  std::vector<Value> out;
  out.reserve(columns.size());
  for (const auto& col : columns) out.push_back(col.at(r));
  return out;
}

Table make_table(std::string id, std::string title, std::vector<std::string> headers,
                 const std::vector<std::vector<std::string>>& rows) {
  Table t;
  t.id = std::move(id);
  t.title = std::move(title);
  t.headers = std::move(headers);
  t.columns.assign(t.headers.size(), {});
  for (const auto& r : rows) {
    if (r.size() != t.headers.size()) throw TableError("table " + t.id + ": ragged row");
    for (std::size_t c = 0; c < r.size(); ++c) t.columns[c].push_back(parse_cell(r[c]));
  }
  t.row_count = rows.size();
  return t;
}

void Corpus::add(Table t) {
  t.validate();
  auto it = std::lower_bound(tables_.begin(), tables_.end(), t.id,
                             [](const Table& a, const std::string& id) { return a.id < id; });
  if (it != tables_.end() && it->id == t.id) throw CorpusError("duplicate table id: " + t.id);
  tables_.insert(it, std::move(t));
}

void Corpus::replace(Table t) {
  t.validate();
  auto it = std::lower_bound(tables_.begin(), tables_.end(), t.id,
                             [](const Table& a, const std::string& id) { return a.id < id; });
  if (it == tables_.end() || it->id != t.id) throw CorpusError("no such table: " + t.id);
  *it = std::move(t);
}

const Table* Corpus::find(std::string_view id) const {
  auto it = std::lower_bound(tables_.begin(), tables_.end(), id,
                             [](const Table& a, std::string_view key) { return a.id < key; });
  if (it == tables_.end() || it->id != id) return nullptr;
  return &*it;
}

const Table& Corpus::at(std::string_view id) const {
  if (const Table* t = find(id)) return *t;
  throw CorpusError("unknown table: " + std::string(id));
}

std::vector<std::string> Corpus::ids() const {
  std::vector<std::string> out;
  out.reserve(tables_.size());
  for (const auto& t : tables_) out.push_back(t.id);
  return out;
}

std::string Corpus::content_hash() const {
  std::uint64_t h = 0;
  auto feed = [&h](std::string_view s) {
    h = mix64(h ^ fnv1a64(s));
    h = mix64(h ^ s.size());
  };
  for (const auto& t : tables_) {
    feed(t.id);
    feed(t.title);
    for (const auto& hd : t.headers) feed(hd);
    for (const auto& col : t.columns)
      for (const auto& v : col) feed(std::string(1, static_cast<char>('0' + v.index())) + value_to_string(v));
  }
  return hex64(h);
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw CorpusError("cannot open manifest " + file.string());
  json j = json::parse(in);
  CorpusManifest m;
  m.format_version = j.value("format_version", kFormatVersion);
  if (m.format_version != kFormatVersion)
    throw CorpusError("unsupported manifest format_version " + std::to_string(m.format_version));
  for (const auto& e : j.at("tables")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.path = e.at("path").get<std::string>();
    entry.title = e.value("title", "");
    entry.masked_headers = e.value("masked_headers", std::vector<bool>{});
    entry.header_row = e.value("header_row", true);
    if (e.contains("provenance") && !e.at("provenance").is_null())
      entry.provenance = provenance_from_json(e.at("provenance"));
    m.entries.push_back(std::move(entry));
  }
  return m;
}

void CorpusManifest::save(const std::filesystem::path& file) const {
  json tables = json::array();
  for (const auto& e : entries) {
    json j = {{"id", e.id}, {"path", e.path}, {"title", e.title}, {"masked_headers", e.masked_headers}};
    if (!e.header_row) j["header_row"] = false;
    if (e.provenance) j["provenance"] = provenance_to_json(*e.provenance);
    tables.push_back(std::move(j));
  }
  std::ofstream out(file);
  if (!out) throw CorpusError("cannot write manifest " + file.string());
  out << json{{"format_version", format_version}, {"tables", tables}}.dump(1) << '\n';
}

namespace {

std::optional<Table> ingest_one(const std::filesystem::path& file, const ManifestEntry* entry,
                                std::vector<IngestError>& errors) {
  std::vector<CsvRecord> records;
  try {
    records = read_csv_file(file);
  } catch (const CsvError& e) {
    errors.push_back({file.string(), e.what(), {}});
    return std::nullopt;
  }
  const bool header_row = entry ? entry->header_row : true;
  if (records.empty() && header_row) {
    errors.push_back({file.string(), "missing header row", {}});
    return std::nullopt;
  }
  std::size_t width = records.empty() ? 0 : records.front().size();
  if (entry && !header_row && records.empty()) width = entry->masked_headers.size();

  std::vector<std::size_t> ragged;
  for (std::size_t r = 0; r < records.size(); ++r)
    if (records[r].size() != width) ragged.push_back(r + 1);
  if (!ragged.empty()) {
    errors.push_back({file.string(), "ragged rows", ragged});
    return std::nullopt;
  }

  Table t;
  t.id = entry ? entry->id : file.stem().string();
  t.title = entry ? entry->title : file.stem().string();
  std::size_t first = 0;
  if (header_row) {
    t.headers = records.front();
    first = 1;
  } else {
    t.headers.assign(width, std::string(kMask));
  }
  if (entry) {
    if (!entry->masked_headers.empty() && entry->masked_headers.size() != width) {
      errors.push_back({file.string(), "masked_headers length does not match column count", {}});
      return std::nullopt;
    }
    for (std::size_t i = 0; i < entry->masked_headers.size(); ++i)
      if (entry->masked_headers[i]) t.headers[i] = std::string(kMask);
    t.provenance = entry->provenance;
  }
  t.columns.assign(width, {});
  for (std::size_t r = first; r < records.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) t.columns[c].push_back(parse_cell(records[r][c]));
  t.row_count = records.size() - first;
  try {
    t.validate();
  } catch (const TableError& e) {
    errors.push_back({file.string(), e.what(), {}});
    return std::nullopt;
  }
  return t;
}

void add_or_fail(Corpus& corpus, Table t) {
  if (corpus.contains(t.id)) throw CorpusError("duplicate table id: " + t.id);
  corpus.add(std::move(t));
}

}  // namespace

IngestResult ingest_csv_dir(const std::filesystem::path& dir, const CorpusManifest* manifest,
                            const std::filesystem::path& manifest_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw CorpusError("not a directory: " + dir.string());
  IngestResult result;
  if (manifest) {
    const fs::path base = manifest_dir.empty() ? dir : manifest_dir;
    for (const auto& entry : manifest->entries) {
      if (auto t = ingest_one(base / entry.path, &entry, result.errors)) add_or_fail(result.corpus, std::move(*t));
    }
    return result;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    if (auto t = ingest_one(f, nullptr, result.errors)) add_or_fail(result.corpus, std::move(*t));
  return result;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  IngestResult r;
  if (fs::exists(dir / "manifest.json")) {
    CorpusManifest m = CorpusManifest::load(dir / "manifest.json");
    r = ingest_csv_dir(dir, &m, dir);
  } else if (fs::is_directory(dir / "tables")) {
    r = ingest_csv_dir(dir / "tables");
  } else {
    r = ingest_csv_dir(dir);
  }
  if (!r.errors.empty()) {
    std::string msg = "ingestion failed for " + std::to_string(r.errors.size()) + " file(s): " +
                      r.errors.front().file + ": " + r.errors.front().message;
    throw CorpusError(msg);
  }
  return std::move(r.corpus);
}

namespace {

std::string file_stem_for(const std::string& id) {
  std::string out;
  for (char c : id) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tables");
  CorpusManifest m;
  std::set<std::string> used;
  for (const auto& t : corpus.tables()) {
    std::string stem = file_stem_for(t.id);
    if (used.contains(stem)) stem += "_" + hex64(fnv1a64(t.id)).substr(0, 8);
    used.insert(stem);
    const std::string rel = "tables/" + stem + ".csv";

    std::vector<CsvRecord> records;
    records.push_back(t.headers);
    for (std::size_t r = 0; r < t.row_count; ++r) {
      CsvRecord rec;
      rec.reserve(t.width());
      for (const auto& col : t.columns) rec.push_back(value_to_string(col[r]));
      records.push_back(std::move(rec));
    }
    write_csv_file(dir / rel, records);

    ManifestEntry e;
    e.id = t.id;
    e.path = rel;
    e.title = t.title;
    for (const auto& h : t.headers) e.masked_headers.push_back(h == kMask);
    e.provenance = t.provenance;
    m.entries.push_back(std::move(e));
  }
  m.save(dir / "manifest.json");
}

std::vector<std::string> distinct_values(const Table& t, std::size_t col, std::size_t cap) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& v : t.columns.at(col)) {
    if (out.size() >= cap) break;
    if (is_null(v)) continue;
    std::string s = value_to_string(v);
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

ColumnSnippet build_column_snippet(const Table& t, std::size_t col, std::size_t values) {
  if (col >= t.width()) throw std::out_of_range("column index out of range");
  ColumnSnippet s{t.id, col, t.title + " " + t.headers[col]};
  for (const auto& v : distinct_values(t, col, values)) {
    s.text.push_back(' ');
    s.text += v;
  }
  return s;
}

std::string table_document(const Table& t) {
  std::string out = t.title;
  for (const auto& h : t.headers) {
    out.push_back(' ');
    out += h;
  }
  return out;
}

std::string build_cluster_document(std::vector<const Table*> members) {
  if (members.empty()) throw std::invalid_argument("cluster document needs at least one table");
  std::sort(members.begin(), members.end(), [](const Table* a, const Table* b) { return a->id < b->id; });
  std::string out;
  for (const Table* t : members) {
    if (!out.empty()) out.push_back(' ');
    out += table_document(*t);
  }
  return out;
}

std::optional<json> extract_json_object(const std::string& text) {
  auto b = text.find('{');
  auto e = text.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
  try {
    return json::parse(text.substr(b, e - b + 1));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace lakeqa
