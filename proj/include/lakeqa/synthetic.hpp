#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lakeqa/benchgen.hpp"
#include "lakeqa/corpus.hpp"

namespace lakeqa {

/// Families of loosely unionable tables drawing on shared value pools, so that
/// both kinds of graph evidence occur at a range of strengths.
Corpus synthetic_corpus(std::uint64_t seed, std::size_t tables);

/// Distinct capitalised pseudo-words, pairwise edit distance at least `min_distance`.
std::vector<std::string> synthetic_names(Rng& rng, std::size_t count, std::size_t min_length = 10,
                                         std::size_t min_distance = 6);

/// One wide fact table and two small lookup tables with a handful of questions.
SeedDatabase small_seed_database(std::uint64_t seed);

/// Three wide fact tables, four lookup tables and a large pool of candidate questions.
SeedDatabase desk_seed_database(std::uint64_t seed);

/// Unrelated tables for the distractor pool; a few borrow vocabulary from the seed domains.
Corpus synthetic_external_pool(std::uint64_t seed, std::size_t tables);

struct SelectionOptions {
  std::size_t questions = 20;
  std::size_t max_relevant = 5;
  double min_lexical_share = 0.8;
};

/// Picks verified questions with few relevant tables, lexically recoverable ones
/// first, until the count is met; the share of recoverable ones is reported.
std::vector<BenchQuestion> select_questions(const std::vector<BenchQuestion>& pool, const SelectionOptions& options,
                                            std::vector<std::string>* notes = nullptr);

struct DeskBenchmark {
  SeedDatabase seed;
  Corpus external;
  BenchResult bench;
  std::vector<BenchQuestion> questions;
  std::vector<std::string> notes;
};

DeskBenchmark build_desk_benchmark(std::uint64_t seed, const Providers& providers, std::size_t external_tables = 500,
                                   const SelectionOptions& options = {});

}  // namespace lakeqa
