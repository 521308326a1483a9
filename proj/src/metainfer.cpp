#include "lakeqa/metainfer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

std::string grouping_text(const Table& t, std::size_t col) {
  std::string out = t.headers.at(col);
  for (const auto& v : distinct_values(t, col, kSnippetValues)) {
    out.push_back(' ');
    out += v;
  }
  return out;
}

ColumnGroupPartition agglomerate(const std::vector<std::vector<double>>& sim, double threshold) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < sim.size(); ++i) groups.push_back({i});
  auto linkage = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double total = 0;
    for (std::size_t i : a)
      for (std::size_t j : b) total += sim[i][j];
    return total / static_cast<double>(a.size() * b.size());
  };
  while (groups.size() > 1) {
    double best = -1;
    std::size_t bi = 0, bj = 0;
    // groups stay ordered by first column, so the first strict maximum found
    // is the pair with the lowest column indices
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j) {
        double l = linkage(groups[i], groups[j]);
        if (l > best) {
          best = l;
          bi = i;
          bj = j;
        }
      }
    if (best < threshold) break;
    groups[bi].insert(groups[bi].end(), groups[bj].begin(), groups[bj].end());
    std::sort(groups[bi].begin(), groups[bi].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return {groups, {}};
}

ColumnGroupPartition discover_column_groups(const Table& t, const Embedder& embedder, double threshold) {
  if (t.width() == 0) throw std::invalid_argument("discover_column_groups: table has no columns");
  std::vector<std::string> texts;
  for (std::size_t c = 0; c < t.width(); ++c) texts.push_back(grouping_text(t, c));
  auto emb = embedder.embed(texts);
  std::vector<std::vector<double>> sim(t.width(), std::vector<double>(t.width(), 0));
  for (std::size_t i = 0; i < t.width(); ++i)
    for (std::size_t j = 0; j < t.width(); ++j) sim[i][j] = i == j ? 1.0 : cosine(emb[i], emb[j]);
  return agglomerate(sim, threshold);
}

std::vector<std::size_t> sample_rows(const Table& t, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(t.row_count);
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() <= count) return idx;
  std::mt19937_64 rng(mix64(seed ^ fnv1a64(t.id)));
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string metadata_prompt(const Table& t, const std::vector<std::size_t>& group, const std::vector<std::size_t>& rows) {
  json headers = json::array();
  for (std::size_t c : group) headers.push_back(t.headers[c]);
  json sample = json::array();
  for (std::size_t r : rows) {
    json row = json::array();
    for (std::size_t c : group) row.push_back(value_to_json(t.columns[c][r]));
    sample.push_back(std::move(row));
  }
  std::string p;
  p += "You recover missing table metadata. Some title or column header values below are the placeholder MASK.\n";
  p += "Using the sampled rows, replace every MASK with the most plausible name.\n";
  p += "Rules:\n";
  p += "- Return exactly as many column headers as given, in the same order.\n";
  p += "- Keep every header that is not MASK unchanged.\n";
  p += "Respond with JSON only: {\"updated_title\": \"...\", \"updated_headers\": [\"...\"]}\n\n";
  p += "[Table Title] " + t.title + "\n";
  p += "[Column Headers] " + headers.dump() + "\n";
  p += "[Sample Rows (" + std::to_string(rows.size()) + " sampled rows)] " + sample.dump() + "\n";
  return p;
}

namespace {

struct ParsedMetadata {
  std::string title;
  std::vector<std::string> headers;
};

// Returns an error message, or empty on success.
std::string parse_metadata_response(const std::string& response, std::size_t arity, ParsedMetadata& out) {
  auto j = extract_json_object(response);
  if (!j || !j->is_object()) return "response is not a JSON object";
  if (!j->contains("updated_headers") || !(*j)["updated_headers"].is_array())
    return "missing \"updated_headers\" array";
  const auto& hs = (*j)["updated_headers"];
  if (hs.size() != arity)
    return "expected " + std::to_string(arity) + " headers but received " + std::to_string(hs.size());
  out.headers.clear();
  for (const auto& h : hs) {
    if (!h.is_string()) return "headers must be strings";
    out.headers.push_back(std::string(trim(h.get<std::string>())));
  }
  out.title.clear();
  if (j->contains("updated_title") && (*j)["updated_title"].is_string())
    out.title = std::string(trim((*j)["updated_title"].get<std::string>()));
  return {};
}

}  // namespace

MetaInferenceResult infer_missing_metadata(const Table& t, const ColumnGroupPartition& partition,
                                           const ChatProvider* chat, const MetaInferenceOptions& options) {
  if (!t.has_mask()) throw std::invalid_argument("infer_missing_metadata: table " + t.id + " has no MASK");
  MetaInferenceResult result{t, {}, 0};
  Table& out = result.table;
  const auto rows = sample_rows(t, options.sample_rows, options.seed);

  std::vector<std::vector<std::size_t>> targets;
  for (const auto& g : partition.groups)
    if (std::any_of(g.begin(), g.end(), [&](std::size_t c) { return t.headers.at(c) == kMask; })) targets.push_back(g);
  // a masked title alone still needs one prompt, over the whole table
  if (targets.empty() && t.title == kMask) {
    std::vector<std::size_t> all(t.width());
    std::iota(all.begin(), all.end(), 0);
    targets.push_back(all);
  }
  if (!chat) {
    result.warnings.push_back("no chat provider; MASK placeholders kept");
    return result;
  }

  for (const auto& group : targets) {
    const std::string base = metadata_prompt(out, group, rows);
    std::string prompt = base;
    ParsedMetadata parsed;
    std::string error;
    for (int attempt = 0; attempt < 2; ++attempt) {
      ++result.prompts;
      try {
        error = parse_metadata_response(chat->complete(prompt), group.size(), parsed);
      } catch (const ProviderError& e) {
        error = std::string("provider error: ") + e.what();
      }
      if (error.empty()) break;
      prompt = base + "\nYour previous answer was rejected: " + error + "\nAnswer again following the format exactly.\n";
    }
    if (!error.empty()) {
      result.warnings.push_back("columns " + join([&] {
        std::vector<std::string> s;
        for (std::size_t c : group) s.push_back(std::to_string(c));
        return s;
      }(), ",") + ": " + error + "; MASK kept");
      continue;
    }
    for (std::size_t k = 0; k < group.size(); ++k) {
      const std::size_t c = group[k];
      if (t.headers[c] == kMask && !parsed.headers[k].empty() && parsed.headers[k] != kMask) out.headers[c] = parsed.headers[k];
    }
    if (out.title == kMask && !parsed.title.empty() && parsed.title != kMask) out.title = parsed.title;
  }
  return result;
}

Corpus infer_corpus_metadata(const Corpus& corpus, const Embedder& embedder, const ChatProvider* chat,
                             const MetaInferenceOptions& options, CorpusInferenceReport* report) {
  Corpus out;
  for (const auto& t : corpus.tables()) {
    if (!t.has_mask()) {
      out.add(t);
      continue;
    }
    auto partition = discover_column_groups(t, embedder);
    auto r = infer_missing_metadata(t, partition, chat, options);
    if (report) {
      ++report->tables_with_masks;
      for (std::size_t c = 0; c < t.width(); ++c) {
        if (t.headers[c] != kMask) continue;
        ++report->headers_masked;
        if (r.table.headers[c] != kMask) ++report->headers_recovered;
      }
      if (!r.warnings.empty()) report->warnings[t.id] = r.warnings;
    }
    out.add(std::move(r.table));
  }
  return out;
}

double header_f1(const std::string& predicted, const std::string& gold, const Embedder& embedder) {
  const auto g = word_tokens(gold);
  if (g.empty()) throw std::invalid_argument("header_f1: gold header has no tokens");
  const auto p = word_tokens(predicted);
  if (p.empty()) return 0.0;
  auto ge = embedder.embed(g);
  auto pe = embedder.embed(p);
  std::vector<std::vector<double>> sim(p.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) sim[i][j] = p[i] == g[j] ? 1.0 : similarity(pe[i], ge[j]);
  double precision = 0, recall = 0;
  for (std::size_t i = 0; i < p.size(); ++i) precision += *std::max_element(sim[i].begin(), sim[i].end());
  for (std::size_t j = 0; j < g.size(); ++j) {
    double best = 0;
    for (std::size_t i = 0; i < p.size(); ++i) best = std::max(best, sim[i][j]);
    recall += best;
  }
  precision /= static_cast<double>(p.size());
  recall /= static_cast<double>(g.size());
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

}  // namespace lakeqa
