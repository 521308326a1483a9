#include "lakeqa/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <unordered_map>

#include "lakeqa/bm25.hpp"
#include "lakeqa/eval.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/metainfer.hpp"
#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return lo + static_cast<std::size_t>(x % range);
}

void BenchConfig::validate() const {
  for (double f : {mask_table_fraction, mask_header_fraction, perturb_cell_fraction})
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("benchmark fractions must lie in [0, 1]");
  if (min_buckets < 1 || min_buckets > max_buckets) throw std::invalid_argument("bad bucket range");
  if (min_groups < 2 || min_groups > max_groups) throw std::invalid_argument("bad category group range");
}

namespace {

std::string canonical(const Value& v) {
  if (is_null(v)) return "\x01null";
  if (is_number(v)) return "n" + format_number(std::get<double>(v));
  return "s" + std::get<std::string>(v);
}

Table project_table(const Table& t, const std::vector<std::size_t>& cols, std::string id, std::string title) {
  Table out;
  out.id = std::move(id);
  out.title = std::move(title);
  out.row_count = t.row_count;
  for (std::size_t c : cols) {
    out.headers.push_back(t.headers.at(c));
    out.columns.push_back(t.columns.at(c));
  }
  return out;
}

Provenance whole_table(const Table& t) {
  Provenance p;
  p.source_table = t.id;
  for (std::size_t c = 0; c < t.width(); ++c) p.columns.push_back(c);
  return p;
}

std::size_t floor_fraction(double f, std::size_t n) {
  return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
}

std::size_t ceil_fraction(double f, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
}

Rng derived_rng(std::uint64_t seed, std::string_view salt) { return Rng(mix64(seed ^ fnv1a64(salt))); }

}  // namespace

std::vector<std::size_t> key_columns(const Table& t) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < t.width(); ++c) {
    if (t.row_count == 0) continue;
    std::set<std::string> seen;
    bool ok = true;
    for (const auto& v : t.columns[c]) {
      if (is_null(v) || !seen.insert(canonical(v)).second) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(c);
  }
  return out;
}

std::string column_grouping_prompt(const Table& t, const std::vector<std::size_t>& columns) {
  json headers = json::array();
  for (std::size_t c : columns) headers.push_back(t.headers.at(c));
  std::string p =
      "Split the columns of a wide table into smaller tables of columns that belong together by topic. "
      "Use every column exactly once, keep the header text unchanged, and keep the original column order "
      "inside each group. Give each group a short descriptive title.\n\n"
      "Reply with JSON only: {\"Tables\": [{\"Table Title\": \"...\", \"Column Headers\": [\"...\"]}]}\n\n";
  p += "[Table Title] " + t.title + "\n";
  p += "[Column Headers] " + headers.dump() + "\n";
  return p;
}

namespace {

std::optional<std::vector<std::pair<std::string, std::vector<std::size_t>>>> parse_grouping(
    const std::string& response, const Table& t, const std::vector<std::size_t>& nonkey) {
  auto j = extract_json_object(response);
  if (!j || !j->contains("Tables") || !(*j)["Tables"].is_array() || (*j)["Tables"].empty()) return std::nullopt;
  std::map<std::string, std::size_t> by_header;
  for (std::size_t c : nonkey) {
    if (by_header.count(t.headers[c])) return std::nullopt;  // ambiguous headers
    by_header[t.headers[c]] = c;
  }
  std::set<std::size_t> used;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (const auto& g : (*j)["Tables"]) {
    if (!g.is_object() || !g.contains("Column Headers") || !g["Column Headers"].is_array()) return std::nullopt;
    std::vector<std::size_t> cols;
    for (const auto& h : g["Column Headers"]) {
      if (!h.is_string()) return std::nullopt;
      auto it = by_header.find(h.get<std::string>());
      if (it == by_header.end() || !used.insert(it->second).second) return std::nullopt;
      cols.push_back(it->second);
    }
    if (cols.empty()) return std::nullopt;
    std::sort(cols.begin(), cols.end());
    std::string title = g.contains("Table Title") && g["Table Title"].is_string() ? g["Table Title"].get<std::string>() : "";
    out.emplace_back(std::move(title), std::move(cols));
  }
  if (used.size() != nonkey.size()) return std::nullopt;
  return out;
}

std::string group_title(const Table& t, const std::vector<std::size_t>& cols) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cols.size() && i < 3; ++i) names.push_back(t.headers[cols[i]]);
  std::string s = t.title + ": " + join(names, ", ");
  if (cols.size() > 3) s += " and more";
  return s;
}

}  // namespace

ColumnSplit split_columns(const Table& t, const std::set<std::string>& pkfk_headers, const ChatProvider* chat,
                          const Embedder& embedder, Rng& rng, const BenchConfig& cfg) {
  ColumnSplit out;
  auto identity = [&] {
    Table copy = t;
    copy.provenance = whole_table(t);
    out.tables = {copy};
    out.keys = key_columns(t);
    return out;
  };
  if (t.width() <= cfg.split_min_columns || t.row_count <= cfg.split_min_rows) return identity();

  Table w = t;
  std::vector<std::size_t> keys = key_columns(t);
  const bool synthetic = keys.empty();
  if (synthetic) {
    w.headers.push_back("row number");
    std::vector<Value> ids;
    for (std::size_t r = 0; r < t.row_count; ++r) ids.emplace_back(static_cast<double>(r + 1));
    w.columns.push_back(std::move(ids));
    keys = {t.width()};
    out.warnings.push_back(t.id + ": no key column; added a row number key");
  }
  std::vector<std::size_t> nonkey;
  for (std::size_t c = 0; c < w.width(); ++c)
    if (!std::binary_search(keys.begin(), keys.end(), c)) nonkey.push_back(c);
  if (nonkey.empty()) return identity();
  out.keys = keys;

  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  if (chat) {
    try {
      if (auto parsed = parse_grouping(chat->complete(column_grouping_prompt(w, nonkey)), w, nonkey)) {
        groups = std::move(*parsed);
        out.used_provider = true;
      } else {
        out.warnings.push_back(t.id + ": column grouping response rejected; using embedding groups");
      }
    } catch (const ProviderError& e) {
      out.warnings.push_back(t.id + ": column grouping provider failed (" + e.what() + "); using embedding groups");
    }
  }
  if (groups.empty()) {
    Table sub = project_table(w, nonkey, w.id, w.title);
    for (const auto& g : discover_column_groups(sub, embedder).groups) {
      std::vector<std::size_t> cols;
      for (std::size_t local : g) cols.push_back(nonkey[local]);
      groups.emplace_back("", std::move(cols));
    }
  }

  std::vector<std::size_t> free_keys;
  for (std::size_t k : keys) {
    const bool pkfk = k < t.width() && std::any_of(pkfk_headers.begin(), pkfk_headers.end(), [&](const std::string& h) {
                        return casefold_trim(h) == casefold_trim(w.headers[k]);
                      });
    if (!pkfk) free_keys.push_back(k);
  }
  const std::optional<std::size_t> shared =
      free_keys.empty() ? std::nullopt : std::optional<std::size_t>(free_keys[uniform_index(rng, 0, free_keys.size() - 1)]);

  bool all_keys_somewhere = false;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto& [title, cols] = groups[i];
    const std::size_t key = shared ? *shared : keys[uniform_index(rng, 0, keys.size() - 1)];
    cols.push_back(key);
    std::sort(cols.begin(), cols.end());
    all_keys_somewhere = all_keys_somewhere || keys.size() == 1;
    Table sub = project_table(w, cols, t.id + "_c" + std::to_string(i), title.empty() ? group_title(w, cols) : title);
    Provenance p;
    p.source_table = t.id;
    p.columns = cols;
    p.synthetic_key = synthetic;
    sub.provenance = p;
    out.tables.push_back(std::move(sub));
  }
  if (!all_keys_somewhere) {
    Table sub = project_table(w, keys, t.id + "_k", t.title + ": identifiers");
    Provenance p;
    p.source_table = t.id;
    p.columns = keys;
    p.synthetic_key = synthetic;
    sub.provenance = p;
    out.tables.push_back(std::move(sub));
  }
  return out;
}

std::vector<Table> split_rows(const Table& t, const std::vector<std::size_t>& keys, Rng& rng, const BenchConfig& cfg) {
  if (t.row_count <= cfg.split_min_rows) return {t};
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < t.width(); ++c) {
    if (std::find(keys.begin(), keys.end(), c) != keys.end()) continue;
    std::set<std::string> distinct;
    for (const auto& v : t.columns[c])
      if (!is_null(v)) distinct.insert(canonical(v));
    if (distinct.size() >= 2) candidates.push_back(c);
  }
  if (candidates.empty()) return {t};
  seeded_shuffle(candidates, rng);
  const std::size_t col = candidates.front();
  const Provenance base = t.provenance.value_or(whole_table(t));
  const std::size_t source_col = base.columns.at(col);

  std::vector<RowPredicate> buckets;
  std::vector<std::string> labels;
  auto chunk = [](std::size_t m, std::size_t parts, std::size_t i) {
    return std::make_pair(i * m / parts, (i + 1) * m / parts);
  };
  std::set<double> numbers;
  for (const auto& v : t.columns[col])
    if (is_number(v)) numbers.insert(std::get<double>(v));
  if (t.column_is_numeric(col) && numbers.size() >= cfg.min_buckets) {
    const std::vector<double> sorted(numbers.begin(), numbers.end());
    const std::size_t b = uniform_index(rng, cfg.min_buckets, std::min(cfg.max_buckets, sorted.size()));
    for (std::size_t i = 0; i < b; ++i) {
      auto [lo, hi] = chunk(sorted.size(), b, i);
      RowPredicate p;
      p.kind = RowPredicate::Kind::range;
      p.column = source_col;
      p.lo = sorted[lo];
      p.hi = sorted[hi - 1];
      buckets.push_back(p);
      labels.push_back(format_number(p.lo) + " to " + format_number(p.hi));
    }
  } else {
    std::set<std::string> distinct;
    for (const auto& v : t.columns[col])
      if (!is_null(v)) distinct.insert(value_to_string(v));
    std::vector<std::string> cats(distinct.begin(), distinct.end());
    seeded_shuffle(cats, rng);
    const std::size_t g = uniform_index(rng, cfg.min_groups, std::min(cfg.max_groups, cats.size()));
    for (std::size_t i = 0; i < g; ++i) {
      auto [lo, hi] = chunk(cats.size(), g, i);
      RowPredicate p;
      p.kind = RowPredicate::Kind::categories;
      p.column = source_col;
      p.categories.assign(cats.begin() + static_cast<std::ptrdiff_t>(lo), cats.begin() + static_cast<std::ptrdiff_t>(hi));
      std::sort(p.categories.begin(), p.categories.end());
      buckets.push_back(p);
      std::vector<std::string> shown(p.categories.begin(), p.categories.begin() + std::min<std::ptrdiff_t>(3, p.categories.size()));
      std::string label = join(shown, ", ");
      if (p.categories.size() > 3) label += " and " + std::to_string(p.categories.size() - 3) + " more";
      labels.push_back(label);
    }
  }
  buckets.front().includes_null = true;

  std::vector<Table> out;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    Table part;
    part.id = t.id + "_r" + std::to_string(i);
    part.title = t.title + " (" + t.headers[col] + " " + labels[i] + ")";
    part.headers = t.headers;
    part.columns.assign(t.width(), {});
    for (std::size_t r = 0; r < t.row_count; ++r) {
      if (!buckets[i].matches(t.columns[col][r])) continue;
      for (std::size_t c = 0; c < t.width(); ++c) part.columns[c].push_back(t.columns[c][r]);
      ++part.row_count;
    }
    Provenance p = base;
    p.rows = buckets[i];
    part.provenance = p;
    out.push_back(std::move(part));
  }
  return out;
}

std::map<std::string, GoldMetadata> mask_metadata(Corpus& corpus, const BenchConfig& cfg, Rng& rng,
                                                  std::vector<std::string> ids) {
  if (ids.empty()) ids = corpus.ids();
  std::sort(ids.begin(), ids.end());
  seeded_shuffle(ids, rng);
  ids.resize(floor_fraction(cfg.mask_table_fraction, ids.size()));
  std::sort(ids.begin(), ids.end());
  std::map<std::string, GoldMetadata> gold;
  for (const auto& id : ids) {
    Table t = corpus.at(id);
    gold[id] = {t.title, t.headers};
    std::vector<std::size_t> cols(t.width());
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
    seeded_shuffle(cols, rng);
    cols.resize(ceil_fraction(cfg.mask_header_fraction, t.width()));
    for (std::size_t c : cols) t.headers[c] = std::string(kMask);
    t.title = std::string(kMask);
    corpus.replace(std::move(t));
  }
  return gold;
}

std::optional<std::string> perturb_once(const std::string& s, const std::string& kind, Rng& rng) {
  auto ascii = [&](std::size_t i) { return static_cast<unsigned char>(s[i]) < 0x80; };
  std::vector<std::size_t> pos;
  if (kind == "swap") {
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
      if (ascii(i) && ascii(i + 1) && s[i] != s[i + 1]) pos.push_back(i);
  } else {
    for (std::size_t i = 0; i < s.size(); ++i)
      if (ascii(i)) pos.push_back(i);
  }
  if (pos.empty()) return std::nullopt;
  const std::size_t i = pos[uniform_index(rng, 0, pos.size() - 1)];
  std::string out = s;
  if (kind == "swap") {
    std::swap(out[i], out[i + 1]);
  } else if (kind == "delete") {
    out.erase(i, 1);
  } else if (kind == "substitute") {
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    char c;
    do {
      c = static_cast<char>('a' + uniform_index(rng, 0, 25));
    } while (c == lower);
    out[i] = std::isupper(static_cast<unsigned char>(s[i])) ? static_cast<char>(std::toupper(c)) : c;
  } else {
    return std::nullopt;
  }
  return out;
}

PerturbationReport perturb_join_values(Corpus& corpus, const BenchConfig& cfg, Rng& rng,
                                       const std::vector<std::string>& ids_in) {
  static const std::string kinds[] = {"swap", "delete", "substitute"};
  PerturbationReport report;
  std::vector<std::string> ids = ids_in.empty() ? corpus.ids() : ids_in;
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    Table t = corpus.at(id);
    bool changed = false;
    for (std::size_t col : key_columns(t)) {
      if (!std::all_of(t.columns[col].begin(), t.columns[col].end(), [](const Value& v) { return is_text(v); })) continue;
      std::set<std::string> taken;
      std::vector<std::size_t> eligible;
      for (std::size_t r = 0; r < t.row_count; ++r) {
        const auto& s = std::get<std::string>(t.columns[col][r]);
        taken.insert(casefold_trim(s));
        if (trim(s).size() >= cfg.min_perturb_length) eligible.push_back(r);
      }
      std::size_t want = floor_fraction(cfg.perturb_cell_fraction, t.row_count);
      if (eligible.size() < want) {
        report.warnings.push_back(id + " column " + std::to_string(col) + ": only " + std::to_string(eligible.size()) +
                                  " values long enough to perturb, wanted " + std::to_string(want));
        want = eligible.size();
      }
      seeded_shuffle(eligible, rng);
      eligible.resize(want);
      std::sort(eligible.begin(), eligible.end());
      for (std::size_t r : eligible) {
        const std::string original = std::get<std::string>(t.columns[col][r]);
        bool done = false;
        for (int attempt = 0; attempt < 32 && !done; ++attempt) {
          const std::string& kind = kinds[uniform_index(rng, 0, 2)];
          auto p = perturb_once(original, kind, rng);
          if (!p || *p == original || parse_number(trim(*p)) || taken.count(casefold_trim(*p))) continue;
          taken.insert(casefold_trim(*p));
          t.columns[col][r] = *p;
          report.log.push_back({id, col, r, original, *p, kind});
          done = changed = true;
        }
        if (!done) report.warnings.push_back(id + ": could not perturb \"" + original + "\"");
      }
    }
    if (changed) corpus.replace(std::move(t));
  }
  return report;
}

std::vector<std::string> augment_external(Corpus& corpus, const Corpus& external, const std::vector<std::string>& queries,
                                          std::size_t top_n, std::vector<std::string>* warnings) {
  std::vector<std::string> added;
  if (top_n == 0) return added;
  if (external.empty()) {
    if (warnings) warnings->push_back("external pool is empty; nothing added");
    return added;
  }
  std::vector<std::string> docs;
  for (const auto& t : external.tables()) {
    std::string name = t.id;
    std::replace(name.begin(), name.end(), '_', ' ');
    docs.push_back(name + " " + t.title);
  }
  const Bm25Index index = Bm25Index::build(docs);
  std::set<std::string> seen;
  for (const auto& q : queries) {
    for (const auto& [doc, score] : index.top(q, top_n)) {
      const Table& t = external.tables()[doc];
      if (!seen.insert(t.id).second) continue;
      if (corpus.contains(t.id)) {
        if (warnings) warnings->push_back("external table " + t.id + " collides with an existing id; skipped");
        continue;
      }
      corpus.add(t);
      added.push_back(t.id);
    }
  }
  return added;
}

std::vector<std::string> annotate_relevant_tables(const GoldFootprint& footprint, const Corpus& lake,
                                                  const Corpus& sources) {
  // Cells of the footprint, numbered.
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::size_t> cell;
  for (const auto& [src, part] : footprint) {
    if (!sources.contains(src)) throw DatasetError("footprint names unknown source table " + src);
    if (part.columns.empty() || part.rows.empty()) throw DatasetError("empty footprint for " + src);
    for (std::size_t c : part.columns)
      for (std::size_t r : part.rows) cell.emplace(std::make_tuple(src, c, r), cell.size());
  }
  const std::size_t n = cell.size();
  struct Candidate {
    std::string id;
    std::vector<bool> covers;
  };
  std::vector<Candidate> cands;
  for (const auto& t : lake.tables()) {
    if (!t.provenance) continue;
    const Provenance& p = *t.provenance;
    auto fp = footprint.find(p.source_table);
    if (fp == footprint.end()) continue;
    const Table& src = sources.at(p.source_table);
    Candidate c{t.id, std::vector<bool>(n, false)};
    bool any = false;
    for (std::size_t r : fp->second.rows) {
      const bool row_in = p.rows.kind == RowPredicate::Kind::all ||
                          (p.rows.column < src.width() && r < src.row_count && p.rows.matches(src.columns[p.rows.column][r]));
      if (!row_in) continue;
      for (std::size_t col : p.columns) {
        auto it = cell.find({p.source_table, col, r});
        if (it == cell.end()) continue;
        c.covers[it->second] = true;
        any = true;
      }
    }
    if (any) cands.push_back(std::move(c));
  }
  std::vector<std::vector<std::size_t>> by_cell(n);
  for (std::size_t i = 0; i < cands.size(); ++i)
    for (std::size_t e = 0; e < n; ++e)
      if (cands[i].covers[e]) by_cell[e].push_back(i);
  for (std::size_t e = 0; e < n; ++e)
    if (by_cell[e].empty()) throw DatasetError("footprint cell not covered by any derived table; provenance lost");

  std::optional<std::vector<std::string>> best;
  std::vector<std::size_t> chosen;
  std::vector<int> covered(n, 0);
  std::size_t uncovered = n;
  std::function<void()> search = [&] {
    if (uncovered == 0) {
      std::vector<std::string> ids;
      for (std::size_t i : chosen) ids.push_back(cands[i].id);
      std::sort(ids.begin(), ids.end());
      if (!best || ids.size() < best->size() || (ids.size() == best->size() && ids < *best)) best = ids;
      return;
    }
    if (best && chosen.size() >= best->size()) return;
    // Branch on the uncovered cell with the fewest covering tables.
    std::size_t pick = SIZE_MAX;
    for (std::size_t e = 0; e < n; ++e)
      if (!covered[e] && (pick == SIZE_MAX || by_cell[e].size() < by_cell[pick].size())) pick = e;
    for (std::size_t i : by_cell[pick]) {
      chosen.push_back(i);
      for (std::size_t e = 0; e < n; ++e)
        if (cands[i].covers[e] && covered[e]++ == 0) --uncovered;
      search();
      for (std::size_t e = 0; e < n; ++e)
        if (cands[i].covers[e] && --covered[e] == 0) ++uncovered;
      chosen.pop_back();
    }
  };
  search();
  return *best;
}

namespace {

void collect_refs(const Predicate& p, std::vector<std::string>& out) {
  if (!p.column.empty()) out.push_back(p.column);
  for (const auto& a : p.args) collect_refs(a, out);
}

std::vector<std::string> plan_refs(const RelationalPlan& plan) {
  std::vector<std::string> out;
  for (const auto& n : plan.nodes) {
    collect_refs(n.predicate, out);
    for (const auto& [l, r] : n.keys) {
      out.push_back(l);
      out.push_back(r);
    }
    for (const auto& c : n.columns) out.push_back(c.column);
    if (!n.agg_column.empty()) out.push_back(n.agg_column);
    out.insert(out.end(), n.group_by.begin(), n.group_by.end());
    for (const auto& k : n.sort_keys) out.push_back(k.column);
  }
  return out;
}

std::string qualifier_of(const PlanNode& scan) { return scan.alias.empty() ? scan.table : scan.alias; }

// Source column a reference names for this scan, if any.
std::optional<std::size_t> ref_column(const std::string& ref, const PlanNode& scan, const Table& src) {
  if (!ref.empty() && ref[0] == '#') throw DatasetError("source plans must name columns, found " + ref);
  auto header = [&](std::string_view h) -> std::optional<std::size_t> {
    if (!h.empty() && h[0] == '#') throw DatasetError("source plans must name columns, found " + ref);
    for (std::size_t c = 0; c < src.width(); ++c)
      if (src.headers[c] == h) return c;
    for (std::size_t c = 0; c < src.width(); ++c)
      if (casefold_trim(src.headers[c]) == casefold_trim(h)) return c;
    return std::nullopt;
  };
  const std::string qual = casefold_trim(qualifier_of(scan));
  for (std::size_t dot = ref.find('.'); dot != std::string::npos; dot = ref.find('.', dot + 1)) {
    const std::string q = casefold_trim(std::string_view(ref).substr(0, dot));
    if (q == qual || q == casefold_trim(scan.table)) return header(std::string_view(ref).substr(dot + 1));
  }
  return header(ref);
}

std::vector<std::size_t> primary_keys(const Table& src, const std::set<std::string>& pkfk) {
  const auto keys = key_columns(src);
  for (std::size_t k : keys)
    for (const auto& h : pkfk)
      if (casefold_trim(h) == casefold_trim(src.headers[k])) return {k};
  if (!keys.empty()) return {keys.front()};
  return {};
}

}  // namespace

GoldFootprint compute_footprint(const RelationalPlan& plan, const Corpus& sources,
                                const std::map<std::string, std::set<std::string>>& pkfk) {
  GoldFootprint fp;
  const auto refs = plan_refs(plan);
  std::map<std::string, std::vector<const PlanNode*>> consumers;
  for (const auto& n : plan.nodes)
    for (const auto& in : n.inputs) consumers[in].push_back(&n);

  for (const auto& scan : plan.nodes) {
    if (scan.op == OpKind::union_cluster) throw DatasetError("source plans use scans only");
    if (scan.op != OpKind::scan) continue;
    const Table* src = sources.find(scan.table);
    if (!src) throw DatasetError("source plan scans unknown table " + scan.table);
    FootprintPart& part = fp[src->id];
    for (const auto& ref : refs)
      if (auto c = ref_column(ref, scan, *src)) part.columns.insert(*c);
    auto keys = pkfk.find(src->id);
    for (std::size_t k : primary_keys(*src, keys == pkfk.end() ? std::set<std::string>{} : keys->second))
      part.columns.insert(k);

    // Filters stacked directly on the scan decide which rows are drawn on.
    Table tagged = *src;
    tagged.headers.push_back("__row__");
    std::vector<Value> ids;
    for (std::size_t r = 0; r < src->row_count; ++r) ids.emplace_back(static_cast<double>(r));
    tagged.columns.push_back(std::move(ids));
    Corpus temp;
    temp.add(tagged);
    RelationalPlan chain;
    chain.nodes.push_back(scan);
    std::string head = scan.id;
    while (true) {
      auto it = consumers.find(head);
      if (it == consumers.end() || it->second.size() != 1 || it->second.front()->op != OpKind::filter) break;
      chain.nodes.push_back(*it->second.front());
      head = it->second.front()->id;
    }
    chain.root = head;
    ExecContext ctx;
    ctx.corpus = &temp;
    const ExecResult res = execute_plan(chain, ctx);
    if (!res.ok()) throw DatasetError("footprint rows for " + src->id + ": " + res.error->describe());
    for (const auto& row : res.table.rows) part.rows.insert(static_cast<std::size_t>(std::get<double>(row.back())));
  }
  return fp;
}

bool verify_reconstruction(const Table& source, const std::vector<const Table*>& parts_in,
                           const std::vector<PerturbationRecord>& log) {
  if (parts_in.empty()) return false;
  std::vector<Table> parts;
  bool synthetic = false;
  for (const Table* p : parts_in) {
    if (!p->provenance || p->provenance->source_table != source.id) return false;
    synthetic = synthetic || p->provenance->synthetic_key;
    parts.push_back(*p);
  }
  for (const auto& rec : log) {
    for (auto& p : parts) {
      if (p.id != rec.table) continue;
      if (rec.column >= p.width() || rec.row >= p.row_count) return false;
      Value& cell = p.columns[rec.column][rec.row];
      if (!is_text(cell) || std::get<std::string>(cell) != rec.perturbed) return false;
      cell = rec.original;
    }
  }
  Table full = source;
  if (synthetic) {
    full.headers.push_back("row number");
    std::vector<Value> ids;
    for (std::size_t r = 0; r < source.row_count; ++r) ids.emplace_back(static_cast<double>(r + 1));
    full.columns.push_back(std::move(ids));
  }

  // Union within each column group.
  std::map<std::vector<std::size_t>, std::vector<std::vector<Value>>> groups;
  for (const auto& p : parts) {
    auto& rows = groups[p.provenance->columns];
    for (std::size_t r = 0; r < p.row_count; ++r) rows.push_back(p.row(r));
  }
  // Natural join across groups on shared columns.
  auto it = groups.begin();
  std::vector<std::size_t> cols = it->first;
  std::vector<std::vector<Value>> rows = it->second;
  std::set<std::vector<std::size_t>> pending;
  for (auto g = std::next(groups.begin()); g != groups.end(); ++g) pending.insert(g->first);
  while (!pending.empty()) {
    bool progressed = false;
    for (auto g = pending.begin(); g != pending.end(); ++g) {
      std::vector<std::pair<std::size_t, std::size_t>> shared;
      for (std::size_t i = 0; i < g->size(); ++i) {
        auto pos = std::find(cols.begin(), cols.end(), (*g)[i]);
        if (pos != cols.end()) shared.emplace_back(static_cast<std::size_t>(pos - cols.begin()), i);
      }
      if (shared.empty()) continue;
      std::unordered_map<std::string, std::vector<std::size_t>> index;
      const auto& right = groups[*g];
      for (std::size_t r = 0; r < right.size(); ++r) {
        std::string key;
        for (const auto& [l, rr] : shared) key += canonical(right[r][rr]) + '\x1f';
        index[key].push_back(r);
      }
      std::vector<std::vector<Value>> joined;
      for (const auto& row : rows) {
        std::string key;
        for (const auto& [l, rr] : shared) key += canonical(row[l]) + '\x1f';
        auto hit = index.find(key);
        if (hit == index.end()) continue;
        for (std::size_t r : hit->second) {
          auto out = row;
          for (std::size_t i = 0; i < g->size(); ++i)
            if (std::none_of(shared.begin(), shared.end(), [&](const auto& s) { return s.second == i; }))
              out.push_back(right[r][i]);
          joined.push_back(std::move(out));
        }
      }
      for (std::size_t i = 0; i < g->size(); ++i)
        if (std::none_of(shared.begin(), shared.end(), [&](const auto& s) { return s.second == i; }))
          cols.push_back((*g)[i]);
      rows = std::move(joined);
      pending.erase(g);
      progressed = true;
      break;
    }
    if (!progressed) return false;
  }
  if (std::set<std::size_t>(cols.begin(), cols.end()).size() != full.width() || cols.size() != full.width()) return false;
  std::vector<std::string> got, want;
  for (const auto& row : rows) {
    std::string key;
    for (std::size_t c = 0; c < full.width(); ++c)
      key += canonical(row[static_cast<std::size_t>(std::find(cols.begin(), cols.end(), c) - cols.begin())]) + '\x1f';
    got.push_back(std::move(key));
  }
  for (std::size_t r = 0; r < full.row_count; ++r) {
    std::string key;
    for (std::size_t c = 0; c < full.width(); ++c) key += canonical(full.columns[c][r]) + '\x1f';
    want.push_back(std::move(key));
  }
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  return got == want;
}

RelationalPlan rewrite_plan(const RelationalPlan& plan, const Corpus& sources, const Corpus& lake,
                            const std::vector<std::string>& relevant) {
  std::map<std::string, std::vector<const Table*>> by_source;
  for (const auto& id : relevant) {
    const Table& t = lake.at(id);
    if (!t.provenance) throw DatasetError("relevant table " + id + " has no provenance");
    by_source[t.provenance->source_table].push_back(&t);
  }
  auto is_text_ref = [&](const std::string& ref) {
    for (const auto& n : plan.nodes) {
      if (n.op != OpKind::scan) continue;
      const Table& src = sources.at(n.table);
      if (auto c = ref_column(ref, n, src)) return src.column_is_text(*c);
    }
    return false;
  };

  RelationalPlan out;
  out.root = plan.root;
  for (const auto& n : plan.nodes) {
    if (n.op == OpKind::join) {
      PlanNode j = n;
      if (std::any_of(j.keys.begin(), j.keys.end(), [&](const auto& k) { return is_text_ref(k.first) || is_text_ref(k.second); }))
        j.mode = JoinMode::fuzzy;
      out.nodes.push_back(std::move(j));
      continue;
    }
    if (n.op != OpKind::scan) {
      out.nodes.push_back(n);
      continue;
    }
    const Table& src = sources.at(n.table);
    auto found = by_source.find(src.id);
    if (found == by_source.end()) throw DatasetError("no relevant table derives from " + src.id);
    const std::string qual = qualifier_of(n);
    const auto src_keys = key_columns(src);
    const bool synthetic = found->second.front()->provenance->synthetic_key;

    std::map<std::vector<std::size_t>, std::vector<const Table*>> groups;
    for (const Table* t : found->second) groups[t->provenance->columns].push_back(t);
    struct Part {
      std::string node;
      std::vector<std::size_t> cols;
    };
    std::vector<Part> parts;
    std::size_t g = 0;
    for (auto& [cols, members] : groups) {
      std::sort(members.begin(), members.end(), [](const Table* a, const Table* b) { return a->id < b->id; });
      PlanNode p;
      p.id = n.id + "__g" + std::to_string(g++);
      p.alias = qual;
      p.subquestion = n.subquestion;
      if (members.size() == 1) {
        p.op = OpKind::scan;
        p.table = members.front()->id;
      } else {
        p.op = OpKind::union_cluster;
        for (const Table* m : members) p.tables.push_back(m->id);
        const auto& first = members.front()->provenance->columns;
        for (std::size_t c = 0; c < first.size(); ++c) {
          std::vector<std::size_t> row;
          for (const Table* m : members) {
            const auto& mc = m->provenance->columns;
            row.push_back(static_cast<std::size_t>(std::find(mc.begin(), mc.end(), first[c]) - mc.begin()));
          }
          p.alignment.push_back(row);
        }
      }
      out.nodes.push_back(p);
      parts.push_back({p.id, cols});
    }
    auto is_key = [&](std::size_t c) {
      return (synthetic && c == src.width()) || std::binary_search(src_keys.begin(), src_keys.end(), c);
    };
    std::string acc = parts.front().node;
    std::vector<std::size_t> acc_cols = parts.front().cols;
    std::vector<Part> pending(parts.begin() + 1, parts.end());
    std::size_t joins = 0;
    while (!pending.empty()) {
      bool progressed = false;
      for (auto it = pending.begin(); it != pending.end(); ++it) {
        std::optional<std::pair<std::size_t, std::size_t>> key;
        for (std::size_t i = 0; i < it->cols.size() && !key; ++i) {
          if (!is_key(it->cols[i])) continue;
          auto pos = std::find(acc_cols.begin(), acc_cols.end(), it->cols[i]);
          if (pos != acc_cols.end()) key = std::make_pair(static_cast<std::size_t>(pos - acc_cols.begin()), i);
        }
        if (!key) continue;
        const std::size_t source_col = it->cols[key->second];
        PlanNode j;
        j.id = n.id + "__j" + std::to_string(joins++);
        j.op = OpKind::join;
        j.inputs = {acc, it->node};
        j.subquestion = n.subquestion;
        j.keys = {{"#" + std::to_string(key->first), "#" + std::to_string(key->second)}};
        j.mode = source_col < src.width() && src.column_is_text(source_col) ? JoinMode::fuzzy : JoinMode::exact;
        out.nodes.push_back(j);
        acc = j.id;
        acc_cols.insert(acc_cols.end(), it->cols.begin(), it->cols.end());
        pending.erase(it);
        progressed = true;
        break;
      }
      if (!progressed) throw DatasetError("derived tables of " + src.id + " share no key column");
    }
    PlanNode proj;
    proj.id = n.id;
    proj.op = OpKind::project;
    proj.inputs = {acc};
    proj.subquestion = n.subquestion;
    for (std::size_t c = 0; c < src.width(); ++c) {
      auto pos = std::find(acc_cols.begin(), acc_cols.end(), c);
      if (pos == acc_cols.end()) continue;
      proj.columns.push_back({"#" + std::to_string(pos - acc_cols.begin()), src.headers[c]});
    }
    out.nodes.push_back(proj);
  }
  return out;
}

ComplexityCounts complexity_counts(const RelationalPlan& lake_plan, const Corpus& lake) {
  ComplexityCounts c;
  for (const auto& n : lake_plan.nodes) {
    c.joins += n.op == OpKind::join;
    c.unions += n.op == OpKind::union_cluster && n.tables.size() > 1;
  }
  for (const auto& id : lake_plan.referenced_tables())
    if (const Table* t = lake.find(id)) c.masked = c.masked || t->has_mask();
  return c;
}

std::string complexity_label(const ComplexityCounts& c) {
  if (c.joins <= 1 && c.unions == 0 && !c.masked) return "easy";
  if (c.joins >= 2 && c.unions >= 1 && c.masked) return "hard";
  return "moderate";
}

std::size_t lexical_overlap(const std::set<std::string>& question_keys, const Table& t) {
  std::string text = t.title == kMask ? "" : t.title;
  for (const auto& h : t.headers)
    if (h != kMask) text += " " + h;
  std::set<std::string> hits;
  for (const auto& w : content_tokens(text))
    if (const auto k = lexical_key(w); question_keys.count(k)) hits.insert(k);
  return hits.size();
}

bool lexically_recoverable(std::string_view question, const std::vector<std::string>& relevant, const Corpus& lake) {
  if (relevant.empty()) return false;
  std::set<std::string> q;
  for (const auto& w : content_tokens(question)) q.insert(lexical_key(w));
  const std::set<std::string> rel(relevant.begin(), relevant.end());
  std::size_t weakest_relevant = std::numeric_limits<std::size_t>::max(), strongest_other = 0;
  for (const auto& t : lake.tables()) {
    const std::size_t n = lexical_overlap(q, t);
    if (rel.count(t.id))
      weakest_relevant = std::min(weakest_relevant, n);
    else
      strongest_other = std::max(strongest_other, n);
  }
  return weakest_relevant > 0 && weakest_relevant > strongest_other;
}

SeedDatabase SeedDatabase::load(const std::filesystem::path& dir) {
  SeedDatabase db;
  db.tables = load_corpus(dir);
  const auto file = dir / "seed.json";
  if (!std::filesystem::exists(file)) return db;
  std::ifstream in(file);
  const json doc = json::parse(in);
  if (doc.contains("pkfk"))
    for (const auto& [table, cols] : doc["pkfk"].items()) db.pkfk[table] = cols.get<std::set<std::string>>();
  for (const auto& q : doc.value("questions", json::array()))
    db.questions.push_back({q.at("id").get<std::string>(), q.at("question").get<std::string>(), plan_from_json(q.at("plan"))});
  return db;
}

void SeedDatabase::save(const std::filesystem::path& dir) const {
  save_corpus(tables, dir);
  json qs = json::array();
  for (const auto& q : questions) qs.push_back({{"id", q.id}, {"question", q.question}, {"plan", plan_to_json(q.plan)}});
  json keys = json::object();
  for (const auto& [t, cols] : pkfk) keys[t] = cols;
  std::ofstream out(dir / "seed.json");
  out << json{{"format_version", 1}, {"pkfk", keys}, {"questions", qs}}.dump(2) << "\n";
}

json BenchQuestion::to_json() const {
  return {{"id", id},
          {"question", question},
          {"answer", value_to_json(answer)},
          {"relevant", relevant},
          {"gold_plan", plan_to_json(plan)},
          {"complexity", complexity},
          {"joins", counts.joins},
          {"unions", counts.unions},
          {"masked", counts.masked},
          {"lexically_recoverable", lexical}};
}

BenchQuestion BenchQuestion::from_json(const json& j) {
  BenchQuestion q;
  q.id = j.at("id").get<std::string>();
  q.question = j.at("question").get<std::string>();
  q.answer = value_from_json(j.at("answer"));
  q.relevant = j.at("relevant").get<std::vector<std::string>>();
  q.plan = plan_from_json(j.at("gold_plan"));
  q.complexity = j.value("complexity", std::string("moderate"));
  q.counts.joins = j.value("joins", std::size_t{0});
  q.counts.unions = j.value("unions", std::size_t{0});
  q.counts.masked = j.value("masked", false);
  q.lexical = j.value("lexically_recoverable", false);
  return q;
}

BenchResult run_benchgen(const SeedDatabase& seed, const Corpus& external, const BenchConfig& cfg,
                         const Providers& providers, const BenchOptions& options) {
  cfg.validate();
  BenchResult res;
  const ChatProvider* chat = providers.chat.get();
  const Embedder& embedder = *providers.embedder;

  // Stage 1: decomposition, each source with its own stream.
  std::map<std::string, std::vector<Table>> derived;
  for (const auto& src : seed.tables.tables()) {
    Rng rng = derived_rng(cfg.seed, "split:" + src.id);
    auto keys_it = seed.pkfk.find(src.id);
    ColumnSplit cs = split_columns(src, keys_it == seed.pkfk.end() ? std::set<std::string>{} : keys_it->second, chat,
                                   embedder, rng, cfg);
    res.warnings.insert(res.warnings.end(), cs.warnings.begin(), cs.warnings.end());
    const bool large = src.width() > cfg.split_min_columns && src.row_count > cfg.split_min_rows;
    std::vector<Table> parts;
    for (auto& t : cs.tables) {
      if (!large) {
        parts.push_back(std::move(t));
        continue;
      }
      std::vector<std::size_t> local_keys;
      for (std::size_t c = 0; c < t.width(); ++c)
        if (std::find(cs.keys.begin(), cs.keys.end(), t.provenance->columns[c]) != cs.keys.end()) local_keys.push_back(c);
      for (auto& piece : split_rows(t, local_keys, rng, cfg)) parts.push_back(std::move(piece));
    }
    for (auto& p : parts) {
      res.derived[src.id].push_back(p.id);
      res.lake.add(p);
    }
    derived[src.id] = std::move(parts);
  }
  for (const auto& src : seed.tables.tables()) {
    std::vector<const Table*> parts;
    for (const auto& id : res.derived[src.id]) parts.push_back(&res.lake.at(id));
    if (!verify_reconstruction(src, parts, {})) {
      res.reconstruction_ok = false;
      res.warnings.push_back(src.id + ": decomposition does not reconstruct the source");
    }
  }
  if (options.check_coclustering) {
    for (const auto& [src, parts] : derived) {
      std::map<std::vector<std::size_t>, std::vector<const Table*>> siblings;
      for (const auto& p : parts) siblings[p.provenance->columns].push_back(&p);
      for (const auto& [cols, members] : siblings)
        for (std::size_t i = 1; i < members.size(); ++i)
          if (unionability(*members[0], *members[i], embedder) < Thresholds{}.tau_u) {
            res.row_splits_coclustered = false;
            res.warnings.push_back(members[i]->id + " is not unionable with " + members[0]->id);
          }
    }
  }

  std::vector<std::string> ids = res.lake.ids();
  // Stage 2 and 3.
  {
    Rng rng = derived_rng(cfg.seed, "mask");
    res.gold_metadata = mask_metadata(res.lake, cfg, rng, ids);
  }
  {
    Rng rng = derived_rng(cfg.seed, "perturb");
    auto report = perturb_join_values(res.lake, cfg, rng, ids);
    res.perturbations = std::move(report.log);
    res.warnings.insert(res.warnings.end(), report.warnings.begin(), report.warnings.end());
  }
  for (const auto& src : seed.tables.tables()) {
    std::vector<const Table*> parts;
    for (const auto& id : res.derived[src.id]) parts.push_back(&res.lake.at(id));
    if (!verify_reconstruction(src, parts, res.perturbations)) {
      res.reconstruction_ok = false;
      res.warnings.push_back(src.id + ": perturbed decomposition does not reconstruct the source");
    }
  }

  // External distractors.
  std::vector<std::string> queries;
  for (const auto& q : seed.questions) queries.push_back(q.question);
  for (const auto& id : ids) {
    const Table& t = res.lake.at(id);
    std::string name = id;
    std::replace(name.begin(), name.end(), '_', ' ');
    queries.push_back(t.title == kMask ? name : name + " " + t.title);
  }
  res.external_added = augment_external(res.lake, external, queries, cfg.external_top_n, &res.warnings);

  // Annotation.
  for (const auto& sq : seed.questions) {
    auto drop = [&](const std::string& why) { res.dropped.push_back(sq.id + ": " + why); };
    ExecContext src_ctx;
    src_ctx.corpus = &seed.tables;
    const ExecResult gold = execute_plan(sq.plan, src_ctx);
    if (!gold.ok()) {
      drop("gold plan fails on the seed tables: " + gold.error->describe());
      continue;
    }
    if (!gold.scalar || is_null(*gold.scalar)) {
      drop("gold plan does not produce a single value");
      continue;
    }
    try {
      const GoldFootprint fp = compute_footprint(sq.plan, seed.tables, seed.pkfk);
      BenchQuestion q;
      q.id = sq.id;
      q.question = sq.question;
      q.answer = *gold.scalar;
      q.relevant = annotate_relevant_tables(fp, res.lake, seed.tables);
      q.plan = rewrite_plan(sq.plan, seed.tables, res.lake, q.relevant);
      ExecContext lake_ctx;
      lake_ctx.corpus = &res.lake;
      const ExecResult check = execute_plan(q.plan, lake_ctx);
      if (!em_match(check, q.answer)) {
        drop("rewritten plan gives " + (check.ok() && check.scalar ? value_to_string(*check.scalar) : std::string("an error")) +
             " instead of " + value_to_string(q.answer));
        continue;
      }
      q.counts = complexity_counts(q.plan, res.lake);
      q.complexity = complexity_label(q.counts);
      q.lexical = lexically_recoverable(q.question, q.relevant, res.lake);
      res.questions.push_back(std::move(q));
    } catch (const DatasetError& e) {
      drop(e.what());
    }
  }
  return res;
}

void save_bench(const BenchResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(result.lake, dir);
  auto write = [&](const char* name, const json& j) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << j.dump(2) << "\n";
  };
  json qs = json::array();
  for (const auto& q : result.questions) qs.push_back(q.to_json());
  write("questions.json", {{"format_version", 1}, {"questions", qs}});
  json gold = json::object();
  for (const auto& [id, m] : result.gold_metadata) gold[id] = {{"title", m.title}, {"headers", m.headers}};
  write("gold_metadata.json", gold);
  json log = json::array();
  for (const auto& p : result.perturbations)
    log.push_back({{"table", p.table}, {"column", p.column}, {"row", p.row}, {"original", p.original},
                   {"perturbed", p.perturbed}, {"kind", p.kind}});
  write("perturbations.json", log);
  write("report.json", {{"derived", result.derived},
                        {"external_added", result.external_added},
                        {"dropped", result.dropped},
                        {"warnings", result.warnings},
                        {"reconstruction_ok", result.reconstruction_ok},
                        {"row_splits_coclustered", result.row_splits_coclustered},
                        {"tables", result.lake.size()}});
}

std::vector<BenchQuestion> load_bench_questions(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  const json doc = json::parse(in);
  std::vector<BenchQuestion> out;
  for (const auto& q : doc.is_object() ? doc.at("questions") : doc) out.push_back(BenchQuestion::from_json(q));
  return out;
}

}  // namespace lakeqa
