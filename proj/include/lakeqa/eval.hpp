#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lakeqa/corpus.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/plan.hpp"
#include "lakeqa/providers.hpp"

namespace lakeqa {

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Throws std::invalid_argument for k = 0 or an empty relevant set.
Prf prf_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& relevant, std::size_t k);

inline constexpr double kEmTolerance = 1e-6;

/// Numbers: |a - g| <= tol * max(1, |g|). Text: case-folded, trimmed equality.
bool em_match(const std::optional<Value>& answer, const Value& gold, double rel_tol = kEmTolerance);
bool em_match(const ExecResult& result, const Value& gold, double rel_tol = kEmTolerance);

/// Some window of `text`'s words fuzzy-matches the phrase.
bool fuzzy_contains(std::string_view text, std::string_view phrase, double delta = 0.2);

/// Every need phrase survives in at least one sub-question.
bool information_retained(const std::vector<std::string>& needs, const std::vector<std::string>& subquestions,
                          double delta = 0.2);

/// Mean pairwise cosine among sub-questions; nullopt with fewer than two.
std::optional<double> subquestion_redundancy(const std::vector<std::string>& subquestions, const Embedder& embedder);

struct RunRecord {
  std::string id;
  std::string question;
  std::size_t k = 0;
  std::vector<std::string> retrieved;
  std::optional<Value> answer;
  std::optional<std::string> error;
  std::vector<std::string> needs;
  std::vector<std::string> subquestions;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

struct GoldRecord {
  std::string id;
  std::string question;
  Value answer;
  std::vector<std::string> relevant;
  std::string complexity;

  static GoldRecord from_json(const nlohmann::json& j);
};

/// Runs file: {"runs": [...]} or a bare list. Gold file: {"questions": [...]} or a bare list.
std::vector<RunRecord> load_runs(const std::filesystem::path& file);
void save_runs(const std::vector<RunRecord>& runs, const std::filesystem::path& file);
std::vector<GoldRecord> load_gold(const std::filesystem::path& file);

struct Aggregate {
  std::size_t questions = 0;  // with retrieval metrics
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t answered = 0;  // with an answer record at this k
  double em = 0;
};

struct MetricReport {
  std::vector<std::size_t> ks;
  std::map<std::size_t, Aggregate> overall;
  std::map<std::string, std::map<std::size_t, Aggregate>> by_complexity;
  std::optional<double> irr;
  std::optional<double> sr;
  std::optional<double> sar_clusters;
  std::optional<double> sar_tables;
  std::vector<std::string> errors;  // invalid gold records, unmatched runs
  nlohmann::json records = nlohmann::json::array();

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// SAR needs the graph (relevant clusters) and SR needs an embedder; each is
/// omitted when its input is missing.
MetricReport evaluate(const std::vector<RunRecord>& runs, const std::vector<GoldRecord>& gold,
                      const std::vector<std::size_t>& ks, const RelationshipGraph* graph = nullptr,
                      const Embedder* embedder = nullptr);

}  // namespace lakeqa
