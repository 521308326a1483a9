#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lakeqa {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Okapi BM25 over lower-cased word tokens with stopwords removed.
class Bm25Index {
 public:
  static Bm25Index build(const std::vector<std::string>& documents, Bm25Params params = {});

  std::size_t size() const { return lengths_.size(); }
  double score(std::string_view query, std::size_t doc) const;

  /// (document, score) with score > 0, best first, ties by document index.
  std::vector<std::pair<std::size_t, double>> top(std::string_view query, std::size_t n) const;

  static std::vector<std::string> tokenize(std::string_view text);

 private:
  double idf(const std::string& term) const;

  Bm25Params params_;
  std::vector<std::size_t> lengths_;
  double average_length_ = 0;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;  // term -> (doc, tf)
};

}  // namespace lakeqa
