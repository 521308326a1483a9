#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

struct ColumnGroupPartition {
  std::vector<std::vector<std::size_t>> groups;  // each sorted; groups ordered by first column
  std::vector<std::string> labels;               // optional, parallel to groups when present
};

inline constexpr double kColumnGroupThreshold = 0.6;

/// Text embedded per column when grouping: header followed by its distinct values.
std::string grouping_text(const Table& t, std::size_t col);

/// Average-linkage agglomerative grouping of column embeddings: repeatedly merge
/// the most similar pair of groups while their linkage is >= threshold.
ColumnGroupPartition discover_column_groups(const Table& t, const Embedder& embedder,
                                            double threshold = kColumnGroupThreshold);

/// The same procedure over a precomputed column-by-column similarity matrix.
ColumnGroupPartition agglomerate(const std::vector<std::vector<double>>& sim, double threshold);

struct MetaInferenceOptions {
  std::size_t sample_rows = 10;
  std::uint64_t seed = 42;
};

struct MetaInferenceResult {
  Table table;
  std::vector<std::string> warnings;
  std::size_t prompts = 0;
};

/// Seeded sample of row indices, ascending.
std::vector<std::size_t> sample_rows(const Table& t, std::size_t count, std::uint64_t seed);

std::string metadata_prompt(const Table& t, const std::vector<std::size_t>& group,
                            const std::vector<std::size_t>& rows);

/// Throws std::invalid_argument when the table carries no MASK. A null chat
/// provider leaves masks in place with a warning.
MetaInferenceResult infer_missing_metadata(const Table& t, const ColumnGroupPartition& partition,
                                           const ChatProvider* chat, const MetaInferenceOptions& options = {});

struct CorpusInferenceReport {
  std::size_t tables_with_masks = 0;
  std::size_t headers_masked = 0;
  std::size_t headers_recovered = 0;
  std::map<std::string, std::vector<std::string>> warnings;  // per table
};

/// Runs discovery + inference on every table that has masks.
Corpus infer_corpus_metadata(const Corpus& corpus, const Embedder& embedder, const ChatProvider* chat,
                             const MetaInferenceOptions& options, CorpusInferenceReport* report = nullptr);

/// Token-level greedy matching F1 with embedding cosine as token similarity.
double header_f1(const std::string& predicted, const std::string& gold, const Embedder& embedder);

}  // namespace lakeqa
