#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

struct Thresholds {
  double tau_u = 0.9;
  double tau_j = 0.5;

  bool operator==(const Thresholds&) const = default;
};

inline constexpr std::size_t kMaxDistinctForJoin = 10000;

/// Maximum-weight one-to-one assignment between rows and columns of a
/// non-negative weight matrix. Returns, for each row, the matched column or -1.
std::vector<int> max_weight_matching(const std::vector<std::vector<double>>& weight);

/// Header-alignment score in [0,1]. MASK headers align with nothing.
double unionability(const Table& a, const Table& b, const Embedder& embedder);

/// Same score over precomputed header embeddings; `masked` flags headers that
/// contribute zero similarity.
double unionability_score(const std::vector<Embedding>& ha, const std::vector<bool>& masked_a,
                          const std::vector<Embedding>& hb, const std::vector<bool>& masked_b);

/// Distinct normalized (case-folded, trimmed) values, sorted, capped.
std::vector<std::string> join_key_set(const Table& t, std::size_t col, std::size_t cap = kMaxDistinctForJoin);

/// |A ∩ B| / min(|A|, |B|) over sorted sets; 0 when either is empty.
double containment(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Space-joined distinct values; the text embedded for the semantic term.
std::string value_snippet(const Table& t, std::size_t col);

/// max(containment, semantic) for text columns, containment only for numeric
/// ones, 0 across types.
double joinability(const Table& a, std::size_t col_a, const Table& b, std::size_t col_b, const Embedder& embedder);

struct JoinEvidence {
  std::string table_a;
  std::size_t col_a = 0;
  std::string table_b;
  std::size_t col_b = 0;
  double score = 0;

  auto operator<=>(const JoinEvidence&) const = default;
};

struct GraphEdge {
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
  std::vector<JoinEvidence> evidence;  // table_a in cluster a, sorted

  bool operator==(const GraphEdge&) const = default;
};

class RelationshipGraph {
 public:
  static constexpr int kFormatVersion = 1;

  RelationshipGraph() = default;
  /// Clusters are ordered by their smallest table id; edges sorted by (a, b).
  RelationshipGraph(Thresholds thresholds, std::string corpus_hash, std::vector<std::vector<std::string>> clusters,
                    std::vector<GraphEdge> edges);

  const Thresholds& thresholds() const { return thresholds_; }
  const std::string& corpus_hash() const { return corpus_hash_; }
  const std::vector<std::vector<std::string>>& clusters() const { return clusters_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  std::size_t cluster_count() const { return clusters_.size(); }

  /// Throws std::out_of_range for unknown tables.
  std::size_t cluster_of(std::string_view table_id) const;
  bool has_table(std::string_view table_id) const;
  const std::vector<std::string>& members(std::size_t cluster) const { return clusters_.at(cluster); }

  bool has_edge(std::size_t a, std::size_t b) const;
  const GraphEdge* edge(std::size_t a, std::size_t b) const;
  const std::vector<std::size_t>& neighbors(std::size_t cluster) const { return adjacency_.at(cluster); }

  /// Evidence rows connecting two specific tables (either orientation), best first.
  std::vector<JoinEvidence> evidence_between(std::string_view table_x, std::string_view table_y) const;

  nlohmann::json to_json() const;
  static RelationshipGraph from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static RelationshipGraph load(const std::filesystem::path& file);

  bool operator==(const RelationshipGraph& o) const {
    return thresholds_ == o.thresholds_ && corpus_hash_ == o.corpus_hash_ && clusters_ == o.clusters_ &&
           edges_ == o.edges_;
  }

 private:
  Thresholds thresholds_;
  std::string corpus_hash_;
  std::vector<std::vector<std::string>> clusters_;
  std::vector<GraphEdge> edges_;
  std::map<std::string, std::size_t, std::less<>> cluster_of_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// True iff the subgraph induced by exactly these clusters is connected.
bool connected(const RelationshipGraph& graph, const std::vector<std::size_t>& clusters);

struct GraphBuildOptions {
  std::size_t workers = 1;
};

RelationshipGraph build_graph(const Corpus& corpus, const Thresholds& thresholds, const Embedder& embedder,
                              const GraphBuildOptions& options = {});

struct GraphStats {
  std::size_t tables = 0;
  std::size_t clusters = 0;
  std::size_t singleton_clusters = 0;
  std::size_t largest_cluster = 0;
  std::size_t edges = 0;
  std::size_t evidence = 0;
};

GraphStats graph_stats(const RelationshipGraph& g);
nlohmann::json to_json(const GraphStats& s);

}  // namespace lakeqa
