#include "lakeqa/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

TableDocument TableDocument::of(const Table& t) { return {table_document(t), {t.title}, t.headers}; }

TableDocument TableDocument::concat(const std::vector<TableDocument>& parts) {
  TableDocument out;
  for (const auto& p : parts) {
    if (!out.text.empty() && !p.text.empty()) out.text.push_back(' ');
    out.text += p.text;
    out.titles.insert(out.titles.end(), p.titles.begin(), p.titles.end());
    out.headers.insert(out.headers.end(), p.headers.begin(), p.headers.end());
  }
  return out;
}

const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = {
      "semantic_token_coverage", "lexical_question_coverage", "header_coverage", "document_cosine",
      "log_shared_numbers"};
  return names;
}

namespace {

std::vector<std::string> key_set(std::string_view text) {
  std::set<std::string> keys;
  for (const auto& t : content_tokens(text)) keys.insert(lexical_key(t));
  return {keys.begin(), keys.end()};
}

}  // namespace

Features coverage_features(std::string_view question, const TableDocument& doc, const Embedder& embedder) {
  Features f{};
  const auto q = key_set(question);
  const auto d = key_set(doc.text);
  if (!q.empty() && !d.empty()) {
    auto qe = embedder.embed(q);
    auto de = embedder.embed(d);
    double semantic = 0;
    std::size_t lexical = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const bool hit = std::binary_search(d.begin(), d.end(), q[i]);
      lexical += hit ? 1 : 0;
      double best = hit ? 1.0 : 0.0;
      for (std::size_t j = 0; j < d.size() && best < 1.0; ++j) best = std::max(best, similarity(qe[i], de[j]));
      semantic += best;
    }
    f[0] = semantic / static_cast<double>(q.size());
    f[1] = static_cast<double>(lexical) / static_cast<double>(q.size());
  }
  std::size_t headers = 0, matched = 0;
  for (const auto& h : doc.headers) {
    if (h == kMask) continue;
    const auto hk = key_set(h);
    if (hk.empty()) continue;
    ++headers;
    if (std::any_of(hk.begin(), hk.end(), [&](const std::string& k) { return std::binary_search(q.begin(), q.end(), k); }))
      ++matched;
  }
  if (headers) f[2] = static_cast<double>(matched) / static_cast<double>(headers);
  if (!doc.text.empty()) f[3] = similarity(embedder.embed_one(std::string(question)), embedder.embed_one(doc.text));
  {
    auto qn = numeric_literals(question);
    auto dn = numeric_literals(doc.text);
    std::set<std::string> qs(qn.begin(), qn.end()), ds(dn.begin(), dn.end());
    std::size_t shared = 0;
    for (const auto& x : qs) shared += ds.count(x);
    f[4] = std::log1p(static_cast<double>(shared));
  }
  return f;
}

double CoverageScorer::score(const Features& f) const {
  double s = 0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) s += weights[i] * f[i];
  return s;
}

json CoverageScorer::to_json() const {
  return {{"format_version", 1},
          {"feature_names", feature_names()},
          {"weights", std::vector<double>(weights.begin(), weights.end())}};
}

CoverageScorer CoverageScorer::from_json(const json& j) {
  auto names = j.at("feature_names").get<std::vector<std::string>>();
  auto w = j.at("weights").get<std::vector<double>>();
  if (names.size() != kFeatureCount || w.size() != kFeatureCount)
    throw std::invalid_argument("scorer file must hold " + std::to_string(kFeatureCount) + " features");
  CoverageScorer s;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (names[i] != feature_names()[i]) throw std::invalid_argument("unexpected feature name " + names[i]);
    if (!std::isfinite(w[i])) throw std::invalid_argument("non-finite weight");
    s.weights[i] = w[i];
  }
  return s;
}

void CoverageScorer::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write scorer " + file.string());
  out << to_json().dump(1) << '\n';
}

CoverageScorer CoverageScorer::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open scorer " + file.string());
  return from_json(json::parse(in));
}

double score_coverage(const CoverageScorer& scorer, std::string_view question, const TableDocument& doc,
                      const Embedder& embedder) {
  return scorer.score(coverage_features(question, doc, embedder));
}

TripleBuildResult make_training_triples(const std::vector<QaRecord>& records, const Corpus& corpus) {
  TripleBuildResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const Table* t = corpus.find(r.table_id);
    if (!t) {
      out.errors.push_back("record " + std::to_string(i) + ": unknown table " + r.table_id);
      continue;
    }
    if (r.answer_column >= t->width()) {
      out.errors.push_back("record " + std::to_string(i) + ": column " + std::to_string(r.answer_column) +
                           " out of range for " + r.table_id);
      continue;
    }
    Table neg = *t;
    neg.headers.erase(neg.headers.begin() + static_cast<std::ptrdiff_t>(r.answer_column));
    neg.columns.erase(neg.columns.begin() + static_cast<std::ptrdiff_t>(r.answer_column));
    out.triples.push_back({r.question, TableDocument::of(*t), TableDocument::of(neg)});
  }
  return out;
}

double hinge(double positive_score, double negative_score) {
  return std::max(0.0, 1.0 - positive_score + negative_score);
}

CoverageScorer train_on_features(const std::vector<std::pair<Features, Features>>& pairs, std::size_t epochs,
                                 double step, CoverageScorer init, TrainingLog* log) {
  if (pairs.empty()) throw std::invalid_argument("train_scorer: no triples");
  if (!(step > 0)) throw std::invalid_argument("train_scorer: step size must be positive");
  CoverageScorer s = init;
  auto epoch_loss = [&](std::array<double, kFeatureCount>* grad) {
    double loss = 0;
    if (grad) grad->fill(0);
    for (const auto& [pos, neg] : pairs) {
      const double l = hinge(s.score(pos), s.score(neg));
      loss += l;
      if (grad && l > 0)
        for (std::size_t i = 0; i < kFeatureCount; ++i) (*grad)[i] += neg[i] - pos[i];
    }
    return loss;
  };
  auto check = [&](double loss, std::size_t epoch) {
    if (std::isfinite(loss)) return;
    std::string w;
    for (double x : s.weights) w += " " + format_number(x);
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + "; weights:" + w);
  };
  for (std::size_t e = 0; e < epochs; ++e) {
    std::array<double, kFeatureCount> grad{};
    const double loss = epoch_loss(&grad);
    check(loss, e);
    if (log) log->loss.push_back(loss);
    for (std::size_t i = 0; i < kFeatureCount; ++i)
      s.weights[i] -= step * grad[i] / static_cast<double>(pairs.size());
  }
  const double final_loss = epoch_loss(nullptr);
  check(final_loss, epochs);
  if (log) log->loss.push_back(final_loss);
  return s;
}

CoverageScorer train_scorer(const std::vector<TrainingTriple>& triples, const Embedder& embedder, std::size_t epochs,
                            double step, CoverageScorer init, TrainingLog* log) {
  std::vector<std::pair<Features, Features>> pairs;
  pairs.reserve(triples.size());
  for (const auto& t : triples)
    pairs.emplace_back(coverage_features(t.question, t.positive, embedder),
                       coverage_features(t.question, t.negative, embedder));
  return train_on_features(pairs, epochs, step, init, log);
}

ClusterIndex ClusterIndex::build(const Corpus& corpus, const RelationshipGraph& graph, const Embedder& embedder) {
  ClusterIndex idx;
  for (const auto& members : graph.clusters()) {
    std::vector<const Table*> ts;
    for (const auto& id : members) ts.push_back(&corpus.at(id));
    std::string doc = build_cluster_document(ts);
    if (doc.size() > kMaxEmbedChars) doc.resize(kMaxEmbedChars);
    idx.docs_.push_back(std::move(doc));
  }
  if (!idx.docs_.empty()) idx.embeddings_ = embedder.embed(idx.docs_);
  return idx;
}

std::vector<std::pair<std::size_t, double>> ClusterIndex::top(const Embedding& query, std::size_t depth) const {
  std::vector<std::pair<std::size_t, double>> all;
  for (std::size_t c = 0; c < embeddings_.size(); ++c) all.emplace_back(c, similarity(query, embeddings_[c]));
  const std::size_t k = std::min(depth, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  all.resize(k);
  return all;
}

std::vector<std::pair<std::size_t, double>> coarse_retrieve(std::string_view subquestion, const ClusterIndex& index,
                                                            const Embedder& embedder, std::size_t depth) {
  if (index.size() == 0) throw std::invalid_argument("coarse_retrieve: empty cluster index");
  return index.top(embedder.embed_one(std::string(subquestion)), depth);
}

namespace {

TableDocument group_document(const std::vector<std::string>& members, const Corpus& corpus) {
  std::vector<TableDocument> parts;
  std::set<std::string> seen;
  for (const auto& id : members)
    if (seen.insert(id).second) parts.push_back(TableDocument::of(corpus.at(id)));
  return TableDocument::concat(parts);
}

bool group_before(const TableGroup& a, const TableGroup& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.individual_sum != b.individual_sum) return a.individual_sum > b.individual_sum;
  return a.members < b.members;
}

}  // namespace

std::vector<TableGroup> build_groups(std::string_view question,
                                     const std::vector<std::vector<ScoredTable>>& candidates, const Corpus& corpus,
                                     const RelationshipGraph& graph, const CoverageScorer& scorer,
                                     const Embedder& embedder, const GroupCaps& caps) {
  const std::size_t m = candidates.size();
  if (m == 0) return {};
  std::vector<std::vector<ScoredTable>> lists;
  for (const auto& c : candidates) {
    if (c.empty()) throw std::invalid_argument("build_groups: sub-question without candidates");
    auto l = c;
    std::stable_sort(l.begin(), l.end(), [](const ScoredTable& a, const ScoredTable& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.table_id < b.table_id;
    });
    if (l.size() > caps.candidates) l.resize(caps.candidates);
    lists.push_back(std::move(l));
  }

  using Tuple = std::vector<std::size_t>;
  auto sum_of = [&](const Tuple& t) {
    double s = 0;
    for (std::size_t i = 0; i < m; ++i) s += lists[i][t[i]].score;
    return s;
  };
  struct Item {
    double sum;
    Tuple idx;
  };
  auto worse = [](const Item& a, const Item& b) {  // max-heap on (sum desc, tuple asc)
    if (a.sum != b.sum) return a.sum < b.sum;
    return a.idx > b.idx;
  };
  std::priority_queue<Item, std::vector<Item>, decltype(worse)> heap(worse);
  std::set<Tuple> pushed;
  Tuple start(m, 0);
  heap.push({sum_of(start), start});
  pushed.insert(start);

  std::vector<TableGroup> groups;
  std::size_t probes = 0;
  while (!heap.empty() && probes < caps.probes && groups.size() < caps.groups) {
    Item it = heap.top();
    heap.pop();
    ++probes;
    TableGroup g;
    for (std::size_t i = 0; i < m; ++i) {
      g.members.push_back(lists[i][it.idx[i]].table_id);
      g.clusters.push_back(graph.cluster_of(g.members.back()));
    }
    g.individual_sum = it.sum;
    g.connected = connected(graph, g.clusters);
    if (g.connected) groups.push_back(std::move(g));
    for (std::size_t i = 0; i < m; ++i) {
      if (it.idx[i] + 1 >= lists[i].size()) continue;
      Tuple next = it.idx;
      ++next[i];
      if (pushed.insert(next).second) heap.push({sum_of(next), next});
    }
  }
  for (auto& g : groups) g.score = score_coverage(scorer, question, group_document(g.members, corpus), embedder);
  std::stable_sort(groups.begin(), groups.end(), group_before);
  return groups;
}

std::string residual_prompt(std::string_view question, const std::vector<const Table*>& tables) {
  std::string p;
  p += "You check whether a set of tables is enough to answer a question.\n";
  p += "If some needed information is missing from the provided tables, state it as one residual sub-question.\n";
  p += "If nothing is missing, answer None.\n";
  p += "Respond with JSON only: {\"Residual Sub-question\": \"...\"} or {\"Residual Sub-question\": None}\n\n";
  p += "[Question] " + std::string(question) + "\n";
  p += "[Provided Tables]\n";
  for (const Table* t : tables) p += t->id + "(" + join(t->headers, ", ") + ")\n";
  return p;
}

std::optional<std::string> parse_residual(const std::string& response) {
  auto b = response.find('{');
  auto e = response.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b) {
    if (trim(response) == "None") return std::nullopt;
    throw std::invalid_argument("residual response is not a JSON object");
  }
  std::string body = response.substr(b, e - b + 1);
  // the bare None used by some models is not JSON
  for (std::size_t pos = body.find("None"); pos != std::string::npos; pos = body.find("None", pos + 4)) {
    std::size_t before = body.find_last_not_of(" \t\r\n", pos == 0 ? 0 : pos - 1);
    if (pos > 0 && before != std::string::npos && body[before] == ':') body.replace(pos, 4, "null");
  }
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("residual response: ") + ex.what());
  }
  if (!j.is_object() || !j.contains("Residual Sub-question")) throw std::invalid_argument("missing \"Residual Sub-question\"");
  const auto& r = j["Residual Sub-question"];
  if (r.is_null()) return std::nullopt;
  if (!r.is_string()) throw std::invalid_argument("residual must be a string or None");
  std::string s(trim(r.get<std::string>()));
  if (s.empty() || s == "None" || s == "none") return std::nullopt;
  return s;
}

double gap_threshold(const CoverageScorer& scorer, double gap_fraction) {
  double max_score = 0;
  for (std::size_t i = 0; i < 4; ++i) max_score += std::max(0.0, scorer.weights[i]);
  return gap_fraction * max_score;
}

RefinementResult detect_gap_and_refine(std::string_view question, std::vector<TableGroup> groups,
                                       const std::vector<std::vector<ScoredTable>>& candidates,
                                       const Corpus& corpus, const RelationshipGraph& graph,
                                       const CoverageScorer& scorer, const Embedder& embedder,
                                       const ChatProvider* chat, double threshold, const RefinementContext& ctx) {
  RefinementResult out;
  if (!groups.empty() && groups.front().score >= threshold) {
    out.groups = std::move(groups);
    return out;
  }
  out.triggered = true;

  // The group to complete: the best connected one, or else the best raw combination.
  TableGroup current;
  if (!groups.empty()) {
    current = groups.front();
  } else {
    for (const auto& c : candidates) {
      if (c.empty()) continue;
      auto best = std::min_element(c.begin(), c.end(), [](const ScoredTable& a, const ScoredTable& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.table_id < b.table_id;
      });
      current.members.push_back(best->table_id);
      current.clusters.push_back(graph.cluster_of(best->table_id));
      current.individual_sum += best->score;
    }
    current.connected = connected(graph, current.clusters);
  }
  if (current.members.empty()) {
    out.groups = std::move(groups);
    return out;
  }

  std::vector<const Table*> present;
  std::set<std::string> present_ids;
  for (const auto& id : current.members)
    if (present_ids.insert(id).second) present.push_back(&corpus.at(id));

  std::optional<std::string> residual;
  bool need_fallback = chat == nullptr;
  if (chat) {
    try {
      residual = parse_residual(chat->complete(residual_prompt(question, present)));
    } catch (const std::exception& e) {
      out.warnings.push_back(std::string("residual generation failed: ") + e.what());
      need_fallback = true;
    }
  }
  if (need_fallback) {
    out.provider_fallback = true;
    if (ctx.decomposition) {
      std::vector<std::string> phrases;
      for (const auto& a : ctx.decomposition->mapping.assignments)
        if (!present_ids.contains(a.table_id)) phrases.push_back(ctx.decomposition->needs[a.need].phrase);
      for (std::size_t u : ctx.decomposition->unmapped) phrases.push_back(ctx.decomposition->needs[u].phrase);
      if (!phrases.empty()) residual = join(phrases, ", ");
    }
  }
  out.residual = residual;
  if (!residual || !ctx.clusters) {
    out.groups = std::move(groups);
    return out;
  }

  std::vector<ScoredTable> pool;
  for (const auto& [cluster, sim] : coarse_retrieve(*residual, *ctx.clusters, embedder, ctx.depth)) {
    (void)sim;
    for (const auto& id : graph.members(cluster)) {
      if (present_ids.contains(id)) continue;
      pool.push_back({id, score_coverage(scorer, *residual, TableDocument::of(corpus.at(id)), embedder)});
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const ScoredTable& a, const ScoredTable& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.table_id < b.table_id;
  });
  if (pool.size() > ctx.candidates) pool.resize(ctx.candidates);

  std::optional<TableGroup> best;
  for (const auto& cand : pool) {
    auto clusters = current.clusters;
    clusters.push_back(graph.cluster_of(cand.table_id));
    if (!connected(graph, clusters)) continue;
    TableGroup g = current;
    g.members.push_back(cand.table_id);
    g.clusters = std::move(clusters);
    g.connected = true;
    g.refined = true;
    g.individual_sum += cand.score;
    g.score = score_coverage(scorer, question, group_document(g.members, corpus), embedder);
    if (!best || g.score > best->score) best = std::move(g);
  }
  if (best) {
    groups.push_back(std::move(*best));
    std::stable_sort(groups.begin(), groups.end(), group_before);
  }
  out.groups = std::move(groups);
  return out;
}

std::vector<ScoredTable> select_topk(const std::vector<TableGroup>& groups, std::size_t k,
                                     const std::map<std::string, double>& individual) {
  if (k == 0) throw std::invalid_argument("select_topk: k must be >= 1");
  std::map<std::string, double> best;
  for (const auto& g : groups)
    for (const auto& id : g.members) {
      auto [it, fresh] = best.emplace(id, g.score);
      if (!fresh) it->second = std::max(it->second, g.score);
    }
  std::vector<ScoredTable> out;
  for (const auto& [id, s] : best) out.push_back({id, s});
  auto indiv = [&](const std::string& id) {
    auto it = individual.find(id);
    return it == individual.end() ? 0.0 : it->second;
  };
  std::stable_sort(out.begin(), out.end(), [&](const ScoredTable& a, const ScoredTable& b) {
    if (a.score != b.score) return a.score > b.score;
    const double ia = indiv(a.table_id), ib = indiv(b.table_id);
    if (ia != ib) return ia > ib;
    return a.table_id < b.table_id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

RetrievalResult retrieve(const Decomposition& d, const Corpus& corpus, const RelationshipGraph& graph,
                         const ClusterIndex& clusters, const CoverageScorer& scorer, const Providers& providers,
                         const RetrievalOptions& options) {
  const Embedder& embedder = *providers.embedder;
  RetrievalResult out;
  std::map<std::string, double> individual;
  for (const auto& sq : d.subquestions) {
    std::vector<std::size_t> cluster_ids;
    for (const auto& [c, sim] : coarse_retrieve(sq.text, clusters, embedder, options.depth)) cluster_ids.push_back(c);
    // the sub-question was written for this cluster; keep it in play
    if (std::find(cluster_ids.begin(), cluster_ids.end(), sq.cluster) == cluster_ids.end())
      cluster_ids.push_back(sq.cluster);
    std::vector<ScoredTable> scored;
    for (std::size_t c : cluster_ids)
      for (const auto& id : graph.members(c)) {
        const double s = score_coverage(scorer, sq.text, TableDocument::of(corpus.at(id)), embedder);
        scored.push_back({id, s});
        auto [it, fresh] = individual.emplace(id, s);
        if (!fresh) it->second = std::max(it->second, s);
      }
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredTable& a, const ScoredTable& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.table_id < b.table_id;
    });
    if (scored.size() > options.caps.candidates) scored.resize(options.caps.candidates);
    out.candidates.push_back(std::move(scored));
  }

  auto groups = build_groups(d.question, out.candidates, corpus, graph, scorer, embedder, options.caps);
  if (options.refine) {
    RefinementContext ctx{&d, &clusters, options.depth, options.caps.candidates};
    auto r = detect_gap_and_refine(d.question, std::move(groups), out.candidates, corpus, graph, scorer, embedder,
                                   providers.chat.get(), gap_threshold(scorer, options.gap_fraction), ctx);
    groups = std::move(r.groups);
    out.residual = r.residual;
    out.refined = std::any_of(groups.begin(), groups.end(), [](const TableGroup& g) { return g.refined; });
    out.warnings = std::move(r.warnings);
  }
  if (groups.empty()) {
    // nothing connected even after refinement: every candidate stands alone
    for (const auto& list : out.candidates)
      for (const auto& c : list) {
        TableGroup g;
        g.members = {c.table_id};
        g.clusters = {graph.cluster_of(c.table_id)};
        g.connected = true;
        g.individual_sum = c.score;
        g.score = score_coverage(scorer, d.question, TableDocument::of(corpus.at(c.table_id)), embedder);
        groups.push_back(std::move(g));
      }
    std::stable_sort(groups.begin(), groups.end(), group_before);
    out.warnings.push_back("no connected table group; ranking single tables");
  }
  out.groups = groups;
  out.ranked = select_topk(groups, options.k, individual);

  // pad with the best remaining individual candidates when groups cover fewer than k tables
  if (out.ranked.size() < options.k) {
    std::set<std::string> have;
    for (const auto& r : out.ranked) have.insert(r.table_id);
    std::vector<ScoredTable> rest;
    for (const auto& [id, s] : individual)
      if (!have.contains(id)) rest.push_back({id, s});
    std::stable_sort(rest.begin(), rest.end(), [](const ScoredTable& a, const ScoredTable& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.table_id < b.table_id;
    });
    for (const auto& r : rest) {
      if (out.ranked.size() >= options.k) break;
      out.ranked.push_back(r);
    }
  }
  return out;
}

json to_json(const TableGroup& g) {
  return {{"members", g.members}, {"clusters", g.clusters}, {"connected", g.connected},
          {"score", g.score},     {"individual_sum", g.individual_sum}, {"refined", g.refined}};
}

json to_json(const RetrievalResult& r) {
  json ranked = json::array(), groups = json::array(), cands = json::array();
  for (const auto& t : r.ranked) ranked.push_back({{"table", t.table_id}, {"score", t.score}});
  for (const auto& g : r.groups) groups.push_back(to_json(g));
  for (const auto& list : r.candidates) {
    json l = json::array();
    for (const auto& t : list) l.push_back({{"table", t.table_id}, {"score", t.score}});
    cands.push_back(l);
  }
  return {{"ranked", ranked},
          {"groups", groups},
          {"candidates", cands},
          {"residual", r.residual ? json(*r.residual) : json(nullptr)},
          {"refined", r.refined},
          {"warnings", r.warnings}};
}

}  // namespace lakeqa
