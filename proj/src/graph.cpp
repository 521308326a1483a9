#include "lakeqa/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

std::vector<int> max_weight_matching(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  if (rows == 0) return {};
  const std::size_t cols = weight.front().size();
  if (cols == 0) return std::vector<int>(rows, -1);
  if (rows > cols) {
    std::vector<std::vector<double>> t(cols, std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t[j][i] = weight[i][j];
    std::vector<int> col_to_row = max_weight_matching(t);
    std::vector<int> out(rows, -1);
    for (std::size_t j = 0; j < cols; ++j)
      if (col_to_row[j] >= 0) out[static_cast<std::size_t>(col_to_row[j])] = static_cast<int>(j);
    return out;
  }
  // Kuhn-Munkres with potentials on cost = -weight, 1-based, rows <= cols.
  const std::size_t n = rows, m = cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = -weight[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) out[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

double unionability_score(const std::vector<Embedding>& ha, const std::vector<bool>& masked_a,
                          const std::vector<Embedding>& hb, const std::vector<bool>& masked_b) {
  if (ha.empty() || hb.empty()) return 0.0;
  std::vector<std::vector<double>> w(ha.size(), std::vector<double>(hb.size(), 0.0));
  for (std::size_t i = 0; i < ha.size(); ++i)
    for (std::size_t j = 0; j < hb.size(); ++j)
      if (!masked_a[i] && !masked_b[j]) w[i][j] = similarity(ha[i], hb[j]);
  const auto match = max_weight_matching(w);
  double total = 0;
  for (std::size_t i = 0; i < match.size(); ++i)
    if (match[i] >= 0) total += w[i][static_cast<std::size_t>(match[i])];
  const double score = total / static_cast<double>(std::max(ha.size(), hb.size()));
  return std::clamp(score, 0.0, 1.0);
}

namespace {

std::vector<bool> mask_flags(const Table& t) {
  std::vector<bool> out;
  for (const auto& h : t.headers) out.push_back(h == kMask);
  return out;
}

// Argument order is fixed by content so that f(x, y) and f(y, x) run the same
// floating-point operations.
bool canonical_first(const Table& a, const Table& b) {
  if (a.id != b.id) return a.id < b.id;
  return a.headers <= b.headers;
}

enum class ColumnKind { none, number, text };

ColumnKind column_kind(const Table& t, std::size_t col) {
  if (t.column_is_text(col)) return ColumnKind::text;
  if (t.column_is_numeric(col)) return ColumnKind::number;
  return ColumnKind::none;
}

}  // namespace

double unionability(const Table& a, const Table& b, const Embedder& embedder) {
  if (!canonical_first(a, b)) return unionability(b, a, embedder);
  if (a.headers.empty() || b.headers.empty()) throw std::invalid_argument("unionability needs headers on both tables");
  auto ha = embedder.embed(a.headers);
  auto hb = embedder.embed(b.headers);
  return unionability_score(ha, mask_flags(a), hb, mask_flags(b));
}

std::vector<std::string> join_key_set(const Table& t, std::size_t col, std::size_t cap) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& v : t.columns.at(col)) {
    if (is_null(v)) continue;
    std::string key = is_number(v) ? value_to_string(v) : casefold_trim(std::get<std::string>(v));
    if (seen.insert(key).second) {
      out.push_back(std::move(key));
      if (out.size() >= cap) break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

double containment(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t shared = 0;
  auto i = a.begin(), j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(std::min(a.size(), b.size()));
}

std::string value_snippet(const Table& t, std::size_t col) { return join(distinct_values(t, col, kSnippetValues), " "); }

double joinability(const Table& a, std::size_t col_a, const Table& b, std::size_t col_b, const Embedder& embedder) {
  if (!canonical_first(a, b)) return joinability(b, col_b, a, col_a, embedder);
  const ColumnKind ka = column_kind(a, col_a), kb = column_kind(b, col_b);
  if (ka == ColumnKind::none || ka != kb) return 0.0;
  const double cont = containment(join_key_set(a, col_a), join_key_set(b, col_b));
  if (ka == ColumnKind::number) return cont;
  const double sem = similarity(embedder.embed_one(value_snippet(a, col_a)), embedder.embed_one(value_snippet(b, col_b)));
  return std::max(cont, sem);
}

RelationshipGraph::RelationshipGraph(Thresholds thresholds, std::string corpus_hash,
                                     std::vector<std::vector<std::string>> clusters, std::vector<GraphEdge> edges)
    : thresholds_(thresholds), corpus_hash_(std::move(corpus_hash)), clusters_(std::move(clusters)),
      edges_(std::move(edges)) {
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    if (clusters_[c].empty()) throw std::invalid_argument("empty cluster");
    for (const auto& id : clusters_[c])
      if (!cluster_of_.emplace(id, c).second) throw std::invalid_argument("table in two clusters: " + id);
  }
  adjacency_.assign(clusters_.size(), {});
  std::sort(edges_.begin(), edges_.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  for (const auto& e : edges_) {
    if (e.a >= e.b || e.b >= clusters_.size()) throw std::invalid_argument("malformed edge");
    adjacency_[e.a].push_back(e.b);
    adjacency_[e.b].push_back(e.a);
  }
  for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
}

std::size_t RelationshipGraph::cluster_of(std::string_view table_id) const {
  auto it = cluster_of_.find(table_id);
  if (it == cluster_of_.end()) throw std::out_of_range("table not in graph: " + std::string(table_id));
  return it->second;
}

bool RelationshipGraph::has_table(std::string_view table_id) const { return cluster_of_.find(table_id) != cluster_of_.end(); }

const GraphEdge* RelationshipGraph::edge(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair{a, b}, [](const GraphEdge& e, const auto& key) {
    return std::tie(e.a, e.b) < std::tie(key.first, key.second);
  });
  if (it == edges_.end() || it->a != a || it->b != b) return nullptr;
  return &*it;
}

bool RelationshipGraph::has_edge(std::size_t a, std::size_t b) const { return edge(a, b) != nullptr; }

std::vector<JoinEvidence> RelationshipGraph::evidence_between(std::string_view x, std::string_view y) const {
  std::vector<JoinEvidence> out;
  const GraphEdge* e = edge(cluster_of(x), cluster_of(y));
  if (!e) return out;
  for (const auto& ev : e->evidence) {
    if (ev.table_a == x && ev.table_b == y) {
      out.push_back(ev);
    } else if (ev.table_a == y && ev.table_b == x) {
      out.push_back({ev.table_b, ev.col_b, ev.table_a, ev.col_a, ev.score});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const JoinEvidence& p, const JoinEvidence& q) { return p.score > q.score; });
  return out;
}

json RelationshipGraph::to_json() const {
  json edges = json::array();
  for (const auto& e : edges_) {
    json ev = json::array();
    for (const auto& x : e.evidence)
      ev.push_back({{"table_a", x.table_a}, {"col_a", x.col_a}, {"table_b", x.table_b}, {"col_b", x.col_b},
                    {"score", x.score}});
    edges.push_back({{"a", e.a}, {"b", e.b}, {"evidence", ev}});
  }
  return {{"format_version", kFormatVersion},
          {"thresholds", {{"tau_u", thresholds_.tau_u}, {"tau_j", thresholds_.tau_j}}},
          {"corpus_hash", corpus_hash_},
          {"clusters", clusters_},
          {"edges", edges}};
}

RelationshipGraph RelationshipGraph::from_json(const json& j) {
  if (j.value("format_version", kFormatVersion) != kFormatVersion) throw std::invalid_argument("unsupported graph format");
  Thresholds t{j.at("thresholds").at("tau_u").get<double>(), j.at("thresholds").at("tau_j").get<double>()};
  std::vector<GraphEdge> edges;
  for (const auto& e : j.at("edges")) {
    GraphEdge g{e.at("a").get<std::size_t>(), e.at("b").get<std::size_t>(), {}};
    for (const auto& x : e.at("evidence"))
      g.evidence.push_back({x.at("table_a").get<std::string>(), x.at("col_a").get<std::size_t>(),
                            x.at("table_b").get<std::string>(), x.at("col_b").get<std::size_t>(),
                            x.at("score").get<double>()});
    edges.push_back(std::move(g));
  }
  return RelationshipGraph(t, j.at("corpus_hash").get<std::string>(),
                           j.at("clusters").get<std::vector<std::vector<std::string>>>(), std::move(edges));
}

void RelationshipGraph::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write graph " + file.string());
  out << to_json().dump() << '\n';
}

RelationshipGraph RelationshipGraph::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open graph " + file.string());
  return from_json(json::parse(in));
}

bool connected(const RelationshipGraph& graph, const std::vector<std::size_t>& clusters) {
  for (std::size_t c : clusters)
    if (c >= graph.cluster_count()) throw std::out_of_range("unknown cluster id " + std::to_string(c));
  std::set<std::size_t> want(clusters.begin(), clusters.end());
  if (want.size() <= 1) return true;
  std::set<std::size_t> seen{*want.begin()};
  std::deque<std::size_t> queue{*want.begin()};
  while (!queue.empty()) {
    std::size_t c = queue.front();
    queue.pop_front();
    for (std::size_t n : graph.neighbors(c))
      if (want.contains(n) && seen.insert(n).second) queue.push_back(n);
  }
  return seen.size() == want.size();
}

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct ColumnInfo {
  std::size_t table = 0;
  std::size_t col = 0;
  ColumnKind kind = ColumnKind::none;
  std::vector<std::string> keys;
  Embedding values;
};

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

RelationshipGraph build_graph(const Corpus& corpus, const Thresholds& thresholds, const Embedder& embedder,
                              const GraphBuildOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("build_graph: empty corpus");
  const auto& tables = corpus.tables();
  const std::size_t n = tables.size();

  std::vector<std::vector<Embedding>> header_emb(n);
  std::vector<std::vector<bool>> masked(n);
  for (std::size_t i = 0; i < n; ++i) {
    header_emb[i] = tables[i].headers.empty() ? std::vector<Embedding>{} : embedder.embed(tables[i].headers);
    masked[i] = mask_flags(tables[i]);
  }

  // Unionability over all pairs; tables are id-sorted so i < j is the canonical order.
  UnionFind uf(n);
  {
    std::vector<std::vector<std::size_t>> partners(n);
    parallel_for(n, options.workers, [&](std::size_t i) {
      for (std::size_t j = i + 1; j < n; ++j)
        if (unionability_score(header_emb[i], masked[i], header_emb[j], masked[j]) >= thresholds.tau_u)
          partners[i].push_back(j);
    });
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : partners[i]) uf.unite(i, j);
  }
  std::vector<std::size_t> cluster_of(n);
  std::vector<std::vector<std::string>> clusters;
  {
    std::unordered_map<std::size_t, std::size_t> root_to_cluster;
    for (std::size_t i = 0; i < n; ++i) {  // i ascends by id, so clusters come out ordered by min id
      auto [it, fresh] = root_to_cluster.emplace(uf.find(i), clusters.size());
      if (fresh) clusters.emplace_back();
      clusters[it->second].push_back(tables[i].id);
      cluster_of[i] = it->second;
    }
  }

  std::vector<ColumnInfo> cols;
  std::vector<std::string> snippet_texts;
  std::vector<std::size_t> snippet_owner;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < tables[i].width(); ++c) {
      ColumnInfo info{i, c, column_kind(tables[i], c), {}, {}};
      if (info.kind != ColumnKind::none) info.keys = join_key_set(tables[i], c);
      if (info.kind == ColumnKind::text) {
        snippet_texts.push_back(value_snippet(tables[i], c));
        snippet_owner.push_back(cols.size());
      }
      cols.push_back(std::move(info));
    }
  }
  if (!snippet_texts.empty()) {
    auto embs = embedder.embed(snippet_texts);
    for (std::size_t k = 0; k < embs.size(); ++k) cols[snippet_owner[k]].values = std::move(embs[k]);
  }

  // Postings: typed key -> columns holding it. Only columns that share a value
  // can have non-zero containment, so intersections are counted from here.
  std::unordered_map<std::string, std::vector<std::size_t>> postings;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k].kind == ColumnKind::none) continue;
    const char tag = cols[k].kind == ColumnKind::number ? 'n' : 't';
    for (const auto& key : cols[k].keys) postings[tag + key].push_back(k);
  }

  std::vector<std::vector<JoinEvidence>> found(cols.size());
  parallel_for(cols.size(), options.workers, [&](std::size_t a) {
    const ColumnInfo& ca = cols[a];
    if (ca.kind == ColumnKind::none) return;
    std::unordered_map<std::size_t, std::size_t> shared;
    const char tag = ca.kind == ColumnKind::number ? 'n' : 't';
    for (const auto& key : ca.keys)
      for (std::size_t b : postings.at(tag + key))
        if (b > a) ++shared[b];
    for (std::size_t b = a + 1; b < cols.size(); ++b) {
      const ColumnInfo& cb = cols[b];
      if (cb.kind != ca.kind || cluster_of[ca.table] == cluster_of[cb.table]) continue;
      double cont = 0;
      if (auto it = shared.find(b); it != shared.end())
        cont = static_cast<double>(it->second) / static_cast<double>(std::min(ca.keys.size(), cb.keys.size()));
      double score = cont;
      if (ca.kind == ColumnKind::text) score = std::max(cont, similarity(ca.values, cb.values));
      if (score < thresholds.tau_j) continue;
      const bool a_first = cluster_of[ca.table] < cluster_of[cb.table];
      const ColumnInfo& x = a_first ? ca : cb;
      const ColumnInfo& y = a_first ? cb : ca;
      found[a].push_back({tables[x.table].id, x.col, tables[y.table].id, y.col, score});
    }
  });

  std::map<std::pair<std::size_t, std::size_t>, std::vector<JoinEvidence>> by_edge;
  for (auto& list : found)
    for (auto& ev : list) {
      std::size_t ca = cluster_of[static_cast<std::size_t>(&corpus.at(ev.table_a) - tables.data())];
      std::size_t cb = cluster_of[static_cast<std::size_t>(&corpus.at(ev.table_b) - tables.data())];
      by_edge[{ca, cb}].push_back(std::move(ev));
    }
  std::vector<GraphEdge> edges;
  for (auto& [key, ev] : by_edge) {
    std::sort(ev.begin(), ev.end());
    edges.push_back({key.first, key.second, std::move(ev)});
  }
  return RelationshipGraph(thresholds, corpus.content_hash(), std::move(clusters), std::move(edges));
}

GraphStats graph_stats(const RelationshipGraph& g) {
  GraphStats s;
  s.clusters = g.cluster_count();
  for (const auto& c : g.clusters()) {
    s.tables += c.size();
    if (c.size() == 1) ++s.singleton_clusters;
    s.largest_cluster = std::max(s.largest_cluster, c.size());
  }
  s.edges = g.edges().size();
  for (const auto& e : g.edges()) s.evidence += e.evidence.size();
  return s;
}

json to_json(const GraphStats& s) {
  return {{"tables", s.tables},         {"clusters", s.clusters}, {"singleton_clusters", s.singleton_clusters},
          {"largest_cluster", s.largest_cluster}, {"edges", s.edges},       {"evidence", s.evidence}};
}

}  // namespace lakeqa
