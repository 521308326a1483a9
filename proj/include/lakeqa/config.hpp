#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "lakeqa/benchgen.hpp"
#include "lakeqa/decomposer.hpp"
#include "lakeqa/graph.hpp"
#include "lakeqa/providers.hpp"
#include "lakeqa/retriever.hpp"

namespace lakeqa {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AppConfig {
  static constexpr int kFormatVersion = 1;

  std::filesystem::path corpus_dir;
  std::filesystem::path graph_file;
  std::filesystem::path scorer_file;
  std::filesystem::path gold_plans;  // optional rule-planner plans
  std::uint64_t seed = 42;
  std::size_t workers = 1;

  Thresholds thresholds;
  DecomposerOptions decomposer;
  RetrievalOptions retrieval;
  double fuzzy_delta = 0.2;
  std::size_t max_retries = 3;
  std::size_t train_epochs = 200;
  double train_step = 0.1;
  BenchConfig benchgen;

  ProviderConfig embedder;
  ProviderConfig chat;
  bool use_chat = false;  // without it every stage takes its deterministic path

  /// Throws ConfigError on unknown keys, wrong types or out-of-range values.
  static AppConfig from_json(const nlohmann::json& j);
  static AppConfig load(const std::filesystem::path& file);
  nlohmann::json to_json() const;
  void validate() const;

  Providers make_providers() const;
};

}  // namespace lakeqa
