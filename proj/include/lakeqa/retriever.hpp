#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/decomposer.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

/// Metadata view of one table or of a concatenated group of tables.
struct TableDocument {
  std::string text;
  std::vector<std::string> titles;
  std::vector<std::string> headers;

  static TableDocument of(const Table& t);
  static TableDocument concat(const std::vector<TableDocument>& parts);
};

inline constexpr std::size_t kFeatureCount = 5;
using Features = std::array<double, kFeatureCount>;

const std::array<std::string, kFeatureCount>& feature_names();

/// [semantic token coverage, lexical question coverage, header coverage,
///  whole-text cosine, log(1 + shared numeric literals)]
Features coverage_features(std::string_view question, const TableDocument& doc, const Embedder& embedder);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CoverageScorer {
  std::array<double, kFeatureCount> weights;

  CoverageScorer() { weights.fill(1.0 / kFeatureCount); }

  double score(const Features& f) const;

  nlohmann::json to_json() const;
  static CoverageScorer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static CoverageScorer load(const std::filesystem::path& file);
};

double score_coverage(const CoverageScorer& scorer, std::string_view question, const TableDocument& doc,
                      const Embedder& embedder);

struct QaRecord {
  std::string question;
  std::string table_id;
  std::size_t answer_column = 0;
};

struct TrainingTriple {
  std::string question;
  TableDocument positive;
  TableDocument negative;
};

struct TripleBuildResult {
  std::vector<TrainingTriple> triples;
  std::vector<std::string> errors;  // one per rejected record
};

/// The negative is the gold table's document without the answer-bearing header.
TripleBuildResult make_training_triples(const std::vector<QaRecord>& records, const Corpus& corpus);

struct TrainingLog {
  std::vector<double> loss;  // summed hinge loss before each epoch, then after the last
};

/// max(0, 1 - f(q, T+) + f(q, T-))
double hinge(double positive_score, double negative_score);

/// Full-batch subgradient descent on the summed margin loss, averaged gradient.
CoverageScorer train_scorer(const std::vector<TrainingTriple>& triples, const Embedder& embedder, std::size_t epochs,
                            double step, CoverageScorer init = {}, TrainingLog* log = nullptr);

/// Same procedure on precomputed feature pairs.
CoverageScorer train_on_features(const std::vector<std::pair<Features, Features>>& pairs, std::size_t epochs,
                                 double step, CoverageScorer init = {}, TrainingLog* log = nullptr);

/// Embedded cluster documents.
class ClusterIndex {
 public:
  static ClusterIndex build(const Corpus& corpus, const RelationshipGraph& graph, const Embedder& embedder);

  std::size_t size() const { return docs_.size(); }
  const std::string& document(std::size_t cluster) const { return docs_.at(cluster); }

  /// (cluster, similarity), best first, ties by cluster id.
  std::vector<std::pair<std::size_t, double>> top(const Embedding& query, std::size_t depth) const;

 private:
  std::vector<std::string> docs_;
  std::vector<Embedding> embeddings_;
};

inline constexpr std::size_t kCoarseDepth = 20;

std::vector<std::pair<std::size_t, double>> coarse_retrieve(std::string_view subquestion, const ClusterIndex& index,
                                                            const Embedder& embedder, std::size_t depth = kCoarseDepth);

struct ScoredTable {
  std::string table_id;
  double score = 0;
};

struct TableGroup {
  std::vector<std::string> members;  // one per sub-question, then an optional residual table
  std::vector<std::size_t> clusters;
  bool connected = false;
  double score = 0;
  double individual_sum = 0;
  bool refined = false;
};

struct GroupCaps {
  std::size_t candidates = 10;   // C
  std::size_t probes = 1000;     // B
  std::size_t groups = 20;       // G
};

/// Enumerates one-table-per-sub-question combinations by descending summed
/// individual score (ties: index tuple ascending), keeps connected ones, and
/// scores up to G of them on the concatenated member documents.
std::vector<TableGroup> build_groups(std::string_view question,
                                     const std::vector<std::vector<ScoredTable>>& candidates, const Corpus& corpus,
                                     const RelationshipGraph& graph, const CoverageScorer& scorer,
                                     const Embedder& embedder, const GroupCaps& caps = {});

std::string residual_prompt(std::string_view question, const std::vector<const Table*>& tables);

/// Parses {"Residual Sub-question": ...}; nullopt for None/null/empty. Throws
/// std::invalid_argument when the shape is wrong.
std::optional<std::string> parse_residual(const std::string& response);

struct RefinementContext {
  const Decomposition* decomposition = nullptr;  // for the deterministic residual
  const ClusterIndex* clusters = nullptr;
  std::size_t depth = kCoarseDepth;
  std::size_t candidates = 10;
};

struct RefinementResult {
  std::vector<TableGroup> groups;
  std::optional<std::string> residual;
  bool triggered = false;
  bool provider_fallback = false;
  std::vector<std::string> warnings;
};

RefinementResult detect_gap_and_refine(std::string_view question, std::vector<TableGroup> groups,
                                       const std::vector<std::vector<ScoredTable>>& candidates,
                                       const Corpus& corpus, const RelationshipGraph& graph,
                                       const CoverageScorer& scorer, const Embedder& embedder,
                                       const ChatProvider* chat, double gap_threshold,
                                       const RefinementContext& ctx);

/// gap_fraction times the largest score the bounded features can reach.
double gap_threshold(const CoverageScorer& scorer, double gap_fraction);

/// Max group score per table; ties by individual score, then id.
std::vector<ScoredTable> select_topk(const std::vector<TableGroup>& groups, std::size_t k,
                                     const std::map<std::string, double>& individual = {});

struct RetrievalOptions {
  std::size_t k = 5;
  std::size_t depth = kCoarseDepth;
  GroupCaps caps;
  double gap_fraction = 0.5;
  bool refine = true;
};

struct RetrievalResult {
  std::vector<ScoredTable> ranked;
  std::vector<TableGroup> groups;
  std::vector<std::vector<ScoredTable>> candidates;  // per sub-question
  std::optional<std::string> residual;
  bool refined = false;
  std::vector<std::string> warnings;
};

RetrievalResult retrieve(const Decomposition& decomposition, const Corpus& corpus, const RelationshipGraph& graph,
                         const ClusterIndex& clusters, const CoverageScorer& scorer, const Providers& providers,
                         const RetrievalOptions& options = {});

nlohmann::json to_json(const TableGroup& g);
nlohmann::json to_json(const RetrievalResult& r);

}  // namespace lakeqa
