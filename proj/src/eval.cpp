#include "lakeqa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

Prf prf_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (relevant.empty()) throw std::invalid_argument("empty relevant set");
  std::set<std::string> top;
  for (std::size_t i = 0; i < retrieved.size() && i < k; ++i) top.insert(retrieved[i]);
  std::size_t hits = 0;
  for (const auto& id : top) hits += relevant.count(id);
  Prf out;
  out.precision = static_cast<double>(hits) / static_cast<double>(k);
  out.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  const double sum = out.precision + out.recall;
  out.f1 = sum > 0 ? 2.0 * out.precision * out.recall / sum : 0.0;
  return out;
}

bool em_match(const std::optional<Value>& answer, const Value& gold, double rel_tol) {
  if (!answer || is_null(*answer) || is_null(gold)) return answer && is_null(*answer) && is_null(gold);
  auto as_number = [](const Value& v) -> std::optional<double> {
    if (is_number(v)) return std::get<double>(v);
    return parse_number(trim(std::get<std::string>(v)));
  };
  const auto a = as_number(*answer), g = as_number(gold);
  if (a && g) return std::fabs(*a - *g) <= rel_tol * std::max(1.0, std::fabs(*g));
  if (is_number(*answer) || is_number(gold)) return false;
  return casefold_trim(std::get<std::string>(*answer)) == casefold_trim(std::get<std::string>(gold));
}

bool em_match(const ExecResult& result, const Value& gold, double rel_tol) {
  if (!result.ok()) return false;
  return em_match(result.scalar, gold, rel_tol);
}

bool fuzzy_contains(std::string_view text, std::string_view phrase, double delta) {
  const auto needle = word_tokens(to_lower(phrase));
  const auto hay = word_tokens(to_lower(text));
  if (needle.empty()) return true;
  const std::string target = join(needle, " ");
  const std::size_t n = needle.size();
  for (std::size_t width = n > 1 ? n - 1 : 1; width <= n + 1; ++width) {
    if (width > hay.size()) break;
    for (std::size_t i = 0; i + width <= hay.size(); ++i) {
      std::vector<std::string> window(hay.begin() + static_cast<std::ptrdiff_t>(i),
                                      hay.begin() + static_cast<std::ptrdiff_t>(i + width));
      if (fuzzy_match(join(window, " "), target, delta)) return true;
    }
  }
  return false;
}

bool information_retained(const std::vector<std::string>& needs, const std::vector<std::string>& subquestions,
                          double delta) {
  return std::all_of(needs.begin(), needs.end(), [&](const std::string& need) {
    return std::any_of(subquestions.begin(), subquestions.end(),
                       [&](const std::string& sq) { return fuzzy_contains(sq, need, delta); });
  });
}

std::optional<double> subquestion_redundancy(const std::vector<std::string>& subquestions, const Embedder& embedder) {
  if (subquestions.size() < 2) return std::nullopt;
  const auto emb = embedder.embed(subquestions);
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      total += cosine(emb[i], emb[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

json RunRecord::to_json() const {
  json j = {{"id", id}, {"question", question}, {"k", k}, {"retrieved", retrieved}, {"needs", needs},
            {"subquestions", subquestions}};
  if (error) {
    j["error"] = *error;
  } else {
    j["answer"] = answer ? value_to_json(*answer) : json(nullptr);
  }
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.id = j.at("id").get<std::string>();
  r.question = j.value("question", std::string());
  r.k = j.at("k").get<std::size_t>();
  r.retrieved = j.value("retrieved", std::vector<std::string>{});
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  if (j.contains("answer")) r.answer = value_from_json(j["answer"]);
  r.needs = j.value("needs", std::vector<std::string>{});
  r.subquestions = j.value("subquestions", std::vector<std::string>{});
  return r;
}

GoldRecord GoldRecord::from_json(const json& j) {
  GoldRecord g;
  g.id = j.at("id").get<std::string>();
  g.question = j.value("question", std::string());
  g.answer = j.contains("answer") ? value_from_json(j["answer"]) : Value{};
  g.relevant = j.value("relevant", std::vector<std::string>{});
  g.complexity = j.value("complexity", std::string("unknown"));
  return g;
}

namespace {

json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  return json::parse(in);
}

const json& list_in(const json& doc, const char* key) {
  if (doc.is_object() && doc.contains(key)) return doc[key];
  return doc;
}

}  // namespace

std::vector<RunRecord> load_runs(const std::filesystem::path& file) {
  const json doc = read_json(file);
  std::vector<RunRecord> out;
  for (const auto& r : list_in(doc, "runs")) out.push_back(RunRecord::from_json(r));
  return out;
}

void save_runs(const std::vector<RunRecord>& runs, const std::filesystem::path& file) {
  json list = json::array();
  for (const auto& r : runs) list.push_back(r.to_json());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << json{{"format_version", 1}, {"runs", list}}.dump(2) << "\n";
}

std::vector<GoldRecord> load_gold(const std::filesystem::path& file) {
  const json doc = read_json(file);
  std::vector<GoldRecord> out;
  for (const auto& g : list_in(doc, "questions")) out.push_back(GoldRecord::from_json(g));
  return out;
}

namespace {

struct Sums {
  std::size_t questions = 0;
  double p = 0, r = 0, f = 0;
  std::size_t answered = 0;
  std::size_t correct = 0;

  Aggregate finish() const {
    Aggregate a;
    a.questions = questions;
    a.answered = answered;
    if (questions) {
      a.precision = p / static_cast<double>(questions);
      a.recall = r / static_cast<double>(questions);
      a.f1 = f / static_cast<double>(questions);
    }
    if (answered) a.em = static_cast<double>(correct) / static_cast<double>(answered);
    return a;
  }
};

json aggregate_json(const Aggregate& a) {
  return {{"questions", a.questions}, {"P", a.precision}, {"R", a.recall}, {"F1", a.f1},
          {"answered", a.answered},   {"EM", a.em}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

MetricReport evaluate(const std::vector<RunRecord>& runs, const std::vector<GoldRecord>& gold,
                      const std::vector<std::size_t>& ks, const RelationshipGraph* graph, const Embedder* embedder) {
  MetricReport report;
  report.ks = ks;
  std::map<std::string, std::map<std::size_t, const RunRecord*>> by_question;
  for (const auto& r : runs) by_question[r.id][r.k] = &r;

  std::map<std::size_t, Sums> overall;
  std::map<std::string, std::map<std::size_t, Sums>> by_complexity;
  std::size_t irr_n = 0, irr_hits = 0, sar_n = 0, sar_c = 0, sar_t = 0, sr_n = 0;
  double sr_total = 0;

  std::set<std::string> gold_ids;
  for (const auto& g : gold) {
    gold_ids.insert(g.id);
    json rec = {{"id", g.id}, {"complexity", g.complexity}};
    auto it = by_question.find(g.id);
    if (it == by_question.end()) {
      report.errors.push_back(g.id + ": no run record");
      report.records.push_back(rec);
      continue;
    }
    const std::set<std::string> relevant(g.relevant.begin(), g.relevant.end());
    if (relevant.empty()) report.errors.push_back(g.id + ": empty relevant set");
    for (std::size_t k : ks) {
      const RunRecord* run = nullptr;
      if (auto at = it->second.find(k); at != it->second.end()) {
        run = at->second;
      } else if (auto up = it->second.lower_bound(k); up != it->second.end()) {
        run = up->second;  // a deeper run still gives its top-k retrieval
      }
      if (!run) continue;
      json m;
      if (!relevant.empty()) {
        const Prf prf = prf_at_k(run->retrieved, relevant, k);
        for (auto* s : {&overall[k], &by_complexity[g.complexity][k]}) {
          ++s->questions;
          s->p += prf.precision;
          s->r += prf.recall;
          s->f += prf.f1;
        }
        m["P"] = prf.precision;
        m["R"] = prf.recall;
        m["F1"] = prf.f1;
      }
      if (run->k == k) {
        const bool em = !run->error && em_match(run->answer, g.answer);
        for (auto* s : {&overall[k], &by_complexity[g.complexity][k]}) {
          ++s->answered;
          s->correct += em;
        }
        m["EM"] = em;
      }
      rec["at"][std::to_string(k)] = m;
    }
    // Decomposition quality from the shallowest run that carries one.
    const RunRecord* first = it->second.begin()->second;
    if (!first->subquestions.empty() || !first->needs.empty()) {
      const bool retained = information_retained(first->needs, first->subquestions);
      ++irr_n;
      irr_hits += retained;
      rec["IRR"] = retained;
      if (embedder) {
        if (auto sr = subquestion_redundancy(first->subquestions, *embedder)) {
          sr_total += *sr;
          ++sr_n;
          rec["SR"] = *sr;
        }
      }
      ++sar_n;
      sar_t += first->subquestions.size() == relevant.size();
      if (graph) {
        std::set<std::size_t> clusters;
        for (const auto& id : relevant)
          if (graph->has_table(id)) clusters.insert(graph->cluster_of(id));
        const bool aligned = first->subquestions.size() == clusters.size();
        sar_c += aligned;
        rec["SAR"] = aligned;
      }
    }
    report.records.push_back(rec);
  }
  for (const auto& [id, _] : by_question)
    if (!gold_ids.count(id)) report.errors.push_back(id + ": run without gold record");

  for (const auto& [k, s] : overall) report.overall[k] = s.finish();
  for (const auto& [c, m] : by_complexity)
    for (const auto& [k, s] : m) report.by_complexity[c][k] = s.finish();
  if (irr_n) report.irr = static_cast<double>(irr_hits) / static_cast<double>(irr_n);
  if (sr_n) report.sr = sr_total / static_cast<double>(sr_n);
  if (sar_n) {
    report.sar_tables = static_cast<double>(sar_t) / static_cast<double>(sar_n);
    if (graph) report.sar_clusters = static_cast<double>(sar_c) / static_cast<double>(sar_n);
  }
  return report;
}

json MetricReport::to_json() const {
  json overall_j = json::object(), by_c = json::object();
  for (const auto& [k, a] : overall) overall_j[std::to_string(k)] = aggregate_json(a);
  for (const auto& [c, m] : by_complexity)
    for (const auto& [k, a] : m) by_c[c][std::to_string(k)] = aggregate_json(a);
  return {{"format_version", 1},       {"ks", ks},
          {"overall", overall_j},      {"by_complexity", by_c},
          {"IRR", optional_json(irr)}, {"SR", optional_json(sr)},
          {"SAR", optional_json(sar_clusters)}, {"SAR_tables", optional_json(sar_tables)},
          {"errors", errors},          {"records", records}};
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  auto pct = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << 100.0 * v;
    return s.str();
  };
  out << "k    n    P@k    R@k    F1@k   EM@k\n";
  for (const auto& [k, a] : overall) {
    out << k << std::string(5 - std::min<std::size_t>(4, std::to_string(k).size()), ' ') << a.questions << "    "
        << pct(a.precision) << "   " << pct(a.recall) << "   " << pct(a.f1) << "   " << pct(a.em) << "\n";
  }
  for (const auto& [c, m] : by_complexity)
    for (const auto& [k, a] : m)
      out << c << " @" << k << ": R " << pct(a.recall) << ", EM " << pct(a.em) << " (" << a.answered << ")\n";
  if (irr) out << "IRR " << pct(*irr) << "\n";
  if (sr) out << "SR  " << pct(*sr) << "\n";
  if (sar_clusters) out << "SAR " << pct(*sar_clusters) << "\n";
  if (sar_tables) out << "SAR (tables) " << pct(*sar_tables) << "\n";
  for (const auto& e : errors) out << "warning: " << e << "\n";
  return out.str();
}

}  // namespace lakeqa
