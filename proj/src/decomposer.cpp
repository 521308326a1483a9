#include "lakeqa/decomposer.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  bool space = false;
  for (char c : phrase) {
    if (c == '-' || c == '_' || std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

bool is_stop_phrase(std::string_view phrase) {
  static const std::set<std::string, std::less<>> extra = {
      "count", "number", "average", "total", "sum",   "mean",  "max",  "min",   "maximum", "minimum",
      "highest", "lowest", "largest", "smallest", "greatest", "many", "much", "amount", "value", "values"};
  for (const auto& tok : word_tokens(phrase))
    if (!is_stopword(tok) && !extra.contains(tok)) return false;
  return true;
}

std::vector<InformationNeed> extract_information_needs(std::string_view question, const Chunker& chunker) {
  if (trim(question).empty()) throw DecompositionError("undecomposable question: empty");
  std::vector<InformationNeed> needs;
  std::set<std::string> seen;
  for (const auto& p : chunker.chunk(question)) {
    if (is_stop_phrase(p.text)) continue;
    if (!seen.insert(normalize_phrase(p.text)).second) continue;
    needs.push_back({p.text, p.kind, p.begin, p.end, 0});
  }
  std::stable_sort(needs.begin(), needs.end(),
                   [](const InformationNeed& a, const InformationNeed& b) { return a.begin < b.begin; });
  if (needs.empty()) throw DecompositionError("undecomposable question: no information needs in \"" + std::string(question) + "\"");
  return needs;
}

bool candidate_before(const ColumnCandidate& a, const ColumnCandidate& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.table_id != b.table_id) return a.table_id < b.table_id;
  return a.column < b.column;
}

SnippetIndex SnippetIndex::build(const Corpus& corpus, const Embedder& embedder, std::size_t values) {
  SnippetIndex idx;
  std::vector<std::string> texts;
  for (const auto& t : corpus.tables())
    for (std::size_t c = 0; c < t.width(); ++c) {
      auto s = build_column_snippet(t, c, values);
      if (s.text.size() > kMaxEmbedChars) s.text.resize(kMaxEmbedChars);
      texts.push_back(s.text);
      idx.entries_.push_back({s.table_id, c, std::move(s.text), {}});
    }
  if (!texts.empty()) {
    auto embs = embedder.embed(texts);
    for (std::size_t i = 0; i < embs.size(); ++i) idx.entries_[i].embedding = std::move(embs[i]);
  }
  return idx;
}

std::vector<ColumnCandidate> SnippetIndex::top(const Embedding& query, std::size_t depth) const {
  std::vector<ColumnCandidate> all;
  all.reserve(entries_.size());
  for (const auto& e : entries_) all.push_back({e.table_id, e.column, similarity(query, e.embedding)});
  const std::size_t k = std::min(depth, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), candidate_before);
  all.resize(k);
  return all;
}

CandidateSet match_columns(const InformationNeed& need, std::size_t need_index, const SnippetIndex& index,
                           const Embedder& embedder, std::size_t depth) {
  if (index.empty()) throw DecompositionError("match_columns: empty snippet index");
  return {need_index, index.top(embedder.embed_one(need.phrase), depth)};
}

namespace {

std::vector<std::size_t> clusters_of(const NeedMapping& m, const RelationshipGraph& g) {
  std::vector<std::size_t> out;
  for (const auto& a : m.assignments) out.push_back(g.cluster_of(a.table_id));
  return out;
}

}  // namespace

double context_relevance(const NeedMapping& mapping, const RelationshipGraph& graph) {
  double total = 0;
  for (const auto& a : mapping.assignments) total += a.similarity;
  return connected(graph, clusters_of(mapping, graph)) ? total : 0.0;
}

NeedMapping disambiguate(const std::vector<InformationNeed>& needs, const std::vector<CandidateSet>& sets,
                         const RelationshipGraph& graph, std::size_t max_seed_retries) {
  if (sets.empty()) throw std::invalid_argument("disambiguate: no needs");
  for (const auto& s : sets) {
    if (s.candidates.empty()) throw std::invalid_argument("disambiguate: need without candidates");
    if (s.need >= needs.size()) throw std::invalid_argument("disambiguate: need index out of range");
  }
  // candidate lists in canonical order
  std::vector<std::vector<ColumnCandidate>> cands;
  for (const auto& s : sets) {
    auto c = s.candidates;
    std::stable_sort(c.begin(), c.end(), candidate_before);
    cands.push_back(std::move(c));
  }
  // Step 1: rank needs by their best similarity, ties by span order
  std::vector<std::size_t> order(sets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = cands[a].front().similarity, sb = cands[b].front().similarity;
    if (sa != sb) return sa > sb;
    return needs[sets[a].need].begin < needs[sets[b].need].begin;
  });

  auto finish = [&](std::vector<const ColumnCandidate*> pick, std::size_t seeds, bool exhausted) {
    NeedMapping m;
    for (std::size_t i = 0; i < sets.size(); ++i)
      m.assignments.push_back({sets[i].need, pick[i]->table_id, pick[i]->column, pick[i]->similarity});
    std::sort(m.assignments.begin(), m.assignments.end(),
              [](const Assignment& a, const Assignment& b) { return a.need < b.need; });
    m.score = context_relevance(m, graph);
    m.seeds_tried = seeds;
    m.seeds_exhausted = exhausted;
    m.disconnected = !connected(graph, clusters_of(m, graph));
    return m;
  };

  const std::size_t seed_need = order.front();
  const std::size_t seeds = std::min(max_seed_retries, cands[seed_need].size());
  for (std::size_t s = 0; s < seeds; ++s) {
    // Step 2: seed with the top-ranked need's s-th candidate
    std::vector<const ColumnCandidate*> pick(sets.size(), nullptr);
    pick[seed_need] = &cands[seed_need][s];
    std::vector<std::size_t> selected{graph.cluster_of(pick[seed_need]->table_id)};
    bool ok = true;
    // Step 3: each remaining need takes its best candidate that keeps the selection connected
    for (std::size_t r = 1; r < order.size() && ok; ++r) {
      const std::size_t need = order[r];
      const ColumnCandidate* chosen = nullptr;
      for (const auto& c : cands[need]) {
        auto trial = selected;
        trial.push_back(graph.cluster_of(c.table_id));
        if (connected(graph, trial)) {
          chosen = &c;
          selected = std::move(trial);
          break;
        }
      }
      if (!chosen) ok = false;
      pick[need] = chosen;
    }
    if (ok) return finish(pick, s + 1, false);
  }
  std::vector<const ColumnCandidate*> argmax(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) argmax[i] = &cands[i].front();
  return finish(argmax, seeds, true);
}

std::string decomposition_prompt(std::string_view question, const std::vector<std::vector<std::string>>& groups) {
  std::string p;
  p += "You split a complex question over tables into simpler sub-questions.\n";
  p += "Write one sub-question per entry of the information-need list, using the phrases of that entry.\n";
  p += "Together the sub-questions must keep every detail of the original question; keep them short, distinct and natural.\n";
  p += "A later sub-question may refer to the answer of an earlier one as #1, #2, ...\n";
  p += "Respond with JSON only: {\"Sub-questions\": [\"...\"]}\n\n";
  p += "[Question] " + std::string(question) + "\n";
  p += "[Information Needs] " + json(groups).dump() + "\n";
  return p;
}

namespace {

std::optional<std::vector<std::string>> parse_subquestions(const std::string& response) {
  auto b = response.find('{');
  auto e = response.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
  try {
    json j = json::parse(response.substr(b, e - b + 1));
    if (!j.contains("Sub-questions") || !j["Sub-questions"].is_array()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& s : j["Sub-questions"]) {
      if (!s.is_string() || trim(s.get<std::string>()).empty()) return std::nullopt;
      out.push_back(std::string(trim(s.get<std::string>())));
    }
    return out;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

SubQuestionResult generate_subquestions(std::string_view question, const std::vector<InformationNeed>& needs,
                                        const NeedMapping& mapping, const Corpus& corpus,
                                        const RelationshipGraph& graph, const ChatProvider* chat) {
  if (mapping.assignments.empty()) throw std::invalid_argument("generate_subquestions: empty mapping");
  struct Group {
    std::string table;
    std::vector<const Assignment*> members;
    double best = 0;
  };
  std::vector<Group> groups;
  for (const auto& a : mapping.assignments) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.table == a.table_id; });
    if (it == groups.end()) {
      groups.push_back({a.table_id, {}, 0});
      it = groups.end() - 1;
    }
    it->members.push_back(&a);
    it->best = std::max(it->best, a.similarity);
  }
  std::stable_sort(groups.begin(), groups.end(), [](const Group& x, const Group& y) {
    if (x.best != y.best) return x.best > y.best;
    return x.table < y.table;
  });
  for (auto& g : groups)
    std::sort(g.members.begin(), g.members.end(),
              [&](const Assignment* x, const Assignment* y) { return needs[x->need].begin < needs[y->need].begin; });

  std::vector<std::vector<std::string>> phrase_groups;
  for (const auto& g : groups) {
    std::vector<std::string> ps;
    for (const auto* a : g.members) ps.push_back(needs[a->need].phrase);
    phrase_groups.push_back(std::move(ps));
  }

  SubQuestionResult result;
  std::optional<std::vector<std::string>> texts;
  if (chat) {
    const std::string base = decomposition_prompt(question, phrase_groups);
    std::string prompt = base;
    for (int attempt = 0; attempt < 2 && !texts; ++attempt) {
      try {
        auto parsed = parse_subquestions(chat->complete(prompt));
        if (parsed && parsed->size() == groups.size()) {
          texts = std::move(parsed);
        } else {
          std::string got = parsed ? std::to_string(parsed->size()) + " sub-questions" : "an unparseable response";
          result.warnings.push_back("decomposition returned " + got);
          prompt = base + "\nYour previous answer had " + got + "; exactly " + std::to_string(groups.size()) +
                   " are required, one per information-need entry.\n";
        }
      } catch (const ProviderError& e) {
        result.warnings.push_back(std::string("decomposition provider error: ") + e.what());
        break;
      }
    }
  }
  if (!texts) {
    result.template_fallback = true;
    texts.emplace();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const Table& t = corpus.at(groups[i].table);
      std::vector<std::string> headers;
      for (const auto* a : groups[i].members) {
        const std::string& h = t.headers.at(a->column);
        if (std::find(headers.begin(), headers.end(), h) == headers.end()) headers.push_back(h);
      }
      texts->push_back("Which " + join(headers, ", ") + " satisfy " + join(phrase_groups[i], ", ") + "?");
    }
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    SubQuestion sq;
    sq.text = (*texts)[i];
    for (const auto* a : groups[i].members) sq.needs.push_back(a->need);
    sq.table_id = groups[i].table;
    sq.cluster = graph.cluster_of(groups[i].table);
    sq.order = i;
    result.subquestions.push_back(std::move(sq));
  }
  return result;
}

Decomposition decompose(std::string_view question, const Corpus& corpus, const SnippetIndex& index,
                        const RelationshipGraph& graph, const Providers& providers, const DecomposerOptions& options) {
  Decomposition d;
  d.question = std::string(question);
  d.needs = extract_information_needs(question, *providers.chunker);
  std::vector<CandidateSet> usable;
  for (std::size_t i = 0; i < d.needs.size(); ++i) {
    CandidateSet set = match_columns(d.needs[i], i, index, *providers.embedder, options.depth);
    std::erase_if(set.candidates, [&](const ColumnCandidate& c) { return c.similarity < options.min_similarity; });
    d.needs[i].rank_key = set.candidates.empty() ? 0.0 : set.candidates.front().similarity;
    if (set.candidates.empty()) {
      d.unmapped.push_back(i);
    } else {
      usable.push_back(set);
    }
    d.candidates.push_back(std::move(set));
  }
  if (usable.empty()) throw DecompositionError("no information need matches any column");
  d.mapping = disambiguate(d.needs, usable, graph, options.max_seed_retries);
  if (d.mapping.seeds_exhausted) d.warnings.push_back("no connected mapping found; using best-similarity mapping");
  auto sq = generate_subquestions(question, d.needs, d.mapping, corpus, graph, providers.chat.get());
  d.subquestions = std::move(sq.subquestions);
  d.template_fallback = sq.template_fallback;
  d.warnings.insert(d.warnings.end(), sq.warnings.begin(), sq.warnings.end());
  return d;
}

json to_json(const InformationNeed& n) {
  return {{"phrase", n.phrase}, {"kind", std::string(to_string(n.kind))}, {"span", {n.begin, n.end}}, {"rank_key", n.rank_key}};
}

json to_json(const NeedMapping& m) {
  json a = json::array();
  for (const auto& x : m.assignments)
    a.push_back({{"need", x.need}, {"table", x.table_id}, {"column", x.column}, {"similarity", x.similarity}});
  return {{"assignments", a},
          {"score", m.score},
          {"seeds_tried", m.seeds_tried},
          {"seeds_exhausted", m.seeds_exhausted},
          {"disconnected", m.disconnected}};
}

json to_json(const SubQuestion& s) {
  return {{"text", s.text}, {"needs", s.needs}, {"table", s.table_id}, {"cluster", s.cluster}, {"order", s.order}};
}

json to_json(const Decomposition& d) {
  json needs = json::array(), cands = json::array(), subs = json::array();
  for (const auto& n : d.needs) needs.push_back(to_json(n));
  for (const auto& c : d.candidates) {
    json list = json::array();
    for (const auto& x : c.candidates) list.push_back({{"table", x.table_id}, {"column", x.column}, {"similarity", x.similarity}});
    cands.push_back({{"need", c.need}, {"candidates", list}});
  }
  for (const auto& s : d.subquestions) subs.push_back(to_json(s));
  return {{"question", d.question},   {"needs", needs},
          {"candidates", cands},      {"unmapped", d.unmapped},
          {"mapping", to_json(d.mapping)}, {"subquestions", subs},
          {"template_fallback", d.template_fallback}, {"warnings", d.warnings}};
}

}  // namespace lakeqa
