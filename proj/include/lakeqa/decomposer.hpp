#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InformationNeed {
  std::string phrase;
  PhraseKind kind = PhraseKind::noun;
  std::size_t begin = 0;
  std::size_t end = 0;
  double rank_key = 0;  // max candidate similarity, filled after matching
};

/// Lower-case, hyphens and underscores as spaces, collapsed whitespace.
std::string normalize_phrase(std::string_view phrase);

/// Phrases made only of interrogatives, function words and bare aggregate words.
bool is_stop_phrase(std::string_view phrase);

/// Chunker phrases minus stop phrases and repeats, in span order. Throws
/// DecompositionError("undecomposable question ...") when nothing is left.
std::vector<InformationNeed> extract_information_needs(std::string_view question, const Chunker& chunker);

struct ColumnCandidate {
  std::string table_id;
  std::size_t column = 0;
  double similarity = 0;

  bool operator==(const ColumnCandidate&) const = default;
};

/// similarity desc, table id asc, column asc.
bool candidate_before(const ColumnCandidate& a, const ColumnCandidate& b);

struct CandidateSet {
  std::size_t need = 0;  // index into the need list
  std::vector<ColumnCandidate> candidates;
};

/// Embedded column snippets of a whole corpus.
class SnippetIndex {
 public:
  struct Entry {
    std::string table_id;
    std::size_t column = 0;
    std::string text;
    Embedding embedding;
  };

  static SnippetIndex build(const Corpus& corpus, const Embedder& embedder, std::size_t values = kSnippetValues);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Exact top-`depth` by clamped cosine.
  std::vector<ColumnCandidate> top(const Embedding& query, std::size_t depth) const;

 private:
  std::vector<Entry> entries_;
};

inline constexpr std::size_t kMatchDepth = 30;

CandidateSet match_columns(const InformationNeed& need, std::size_t need_index, const SnippetIndex& index,
                           const Embedder& embedder, std::size_t depth = kMatchDepth);

struct Assignment {
  std::size_t need = 0;
  std::string table_id;
  std::size_t column = 0;
  double similarity = 0;

  bool operator==(const Assignment&) const = default;
};

struct NeedMapping {
  std::vector<Assignment> assignments;  // ordered by need index
  double score = 0;
  bool seeds_exhausted = false;  // greedy found no connected mapping; argmax fallback used
  bool disconnected = false;     // the returned mapping's clusters are not connected
  std::size_t seeds_tried = 0;
};

/// Sum of similarities when the assigned tables' clusters are connected, else 0.
double context_relevance(const NeedMapping& mapping, const RelationshipGraph& graph);

inline constexpr std::size_t kMaxSeedRetries = 30;

/// Greedy Steps 1-3 with seed backtracking. `sets` is parallel to `needs`; every
/// set must be non-empty.
NeedMapping disambiguate(const std::vector<InformationNeed>& needs, const std::vector<CandidateSet>& sets,
                         const RelationshipGraph& graph, std::size_t max_seed_retries = kMaxSeedRetries);

struct SubQuestion {
  std::string text;
  std::vector<std::size_t> needs;  // indices into the need list
  std::string table_id;
  std::size_t cluster = 0;
  std::size_t order = 0;
};

std::string decomposition_prompt(std::string_view question, const std::vector<std::vector<std::string>>& groups);

struct SubQuestionResult {
  std::vector<SubQuestion> subquestions;
  bool template_fallback = false;
  std::vector<std::string> warnings;
};

/// Groups needs by assigned table (highest-similarity group first) and words one
/// sub-question per group through the chat provider, falling back to a template.
SubQuestionResult generate_subquestions(std::string_view question, const std::vector<InformationNeed>& needs,
                                        const NeedMapping& mapping, const Corpus& corpus,
                                        const RelationshipGraph& graph, const ChatProvider* chat);

struct DecomposerOptions {
  std::size_t depth = kMatchDepth;
  double min_similarity = 0.05;
  std::size_t max_seed_retries = kMaxSeedRetries;
};

struct Decomposition {
  std::string question;
  std::vector<InformationNeed> needs;
  std::vector<CandidateSet> candidates;  // parallel to needs (post-filter)
  std::vector<std::size_t> unmapped;     // needs without any candidate above min_similarity
  NeedMapping mapping;
  std::vector<SubQuestion> subquestions;
  bool template_fallback = false;
  std::vector<std::string> warnings;
};

Decomposition decompose(std::string_view question, const Corpus& corpus, const SnippetIndex& index,
                        const RelationshipGraph& graph, const Providers& providers,
                        const DecomposerOptions& options = {});

nlohmann::json to_json(const InformationNeed& n);
nlohmann::json to_json(const NeedMapping& m);
nlohmann::json to_json(const SubQuestion& s);
nlohmann::json to_json(const Decomposition& d);

}  // namespace lakeqa
