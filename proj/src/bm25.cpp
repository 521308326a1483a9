#include "lakeqa/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lakeqa/text.hpp"

namespace lakeqa {

std::vector<std::string> Bm25Index::tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : word_tokens(to_lower(text)))
    if (!is_stopword(w)) out.push_back(std::move(w));
  return out;
}

Bm25Index Bm25Index::build(const std::vector<std::string>& documents, Bm25Params params) {
  Bm25Index idx;
  idx.params_ = params;
  double total = 0;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    const auto tokens = tokenize(documents[d]);
    idx.lengths_.push_back(tokens.size());
    total += static_cast<double>(tokens.size());
    std::map<std::string, std::size_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) idx.postings_[term].emplace_back(d, count);
  }
  idx.average_length_ = documents.empty() ? 0.0 : total / static_cast<double>(documents.size());
  return idx;
}

double Bm25Index::idf(const std::string& term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(lengths_.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double Bm25Index::score(std::string_view query, std::size_t doc) const {
  double s = 0;
  for (const auto& term : tokenize(query)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    auto hit = std::find_if(it->second.begin(), it->second.end(), [&](const auto& p) { return p.first == doc; });
    if (hit == it->second.end()) continue;
    const double tf = static_cast<double>(hit->second);
    const double norm = 1.0 - params_.b + params_.b * static_cast<double>(lengths_[doc]) / std::max(average_length_, 1e-12);
    s += idf(term) * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
  }
  return s;
}

std::vector<std::pair<std::size_t, double>> Bm25Index::top(std::string_view query, std::size_t n) const {
  std::map<std::size_t, double> acc;
  for (const auto& term : tokenize(query)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const auto& [doc, count] : it->second) {
      const double tf = static_cast<double>(count);
      const double norm =
          1.0 - params_.b + params_.b * static_cast<double>(lengths_[doc]) / std::max(average_length_, 1e-12);
      acc[doc] += w * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
    }
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& [doc, s] : acc)
    if (s > 0) out.emplace_back(doc, s);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

}  // namespace lakeqa
