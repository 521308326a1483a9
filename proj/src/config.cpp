#include "lakeqa/config.hpp"

#include <fstream>
#include <set>

namespace lakeqa {

using nlohmann::json;

namespace {

// Reads the fields of one JSON object, rejecting anything it does not know.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key " + where_ + "." + key);
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  void path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_provider(const json& j, const std::string& where, ProviderConfig& p) {
  Reader r(j, where);
  std::string mode = p.mode == ProviderConfig::Mode::http ? "http" : "deterministic";
  r.get("mode", mode);
  if (mode == "http")
    p.mode = ProviderConfig::Mode::http;
  else if (mode == "deterministic")
    p.mode = ProviderConfig::Mode::deterministic;
  else
    throw ConfigError(where + ".mode must be deterministic or http");
  r.get("endpoint", p.endpoint);
  r.get("model", p.model);
  r.get("api_key", p.api_key);
  r.get("timeout_seconds", p.timeout_seconds);
  r.get("max_retries", p.max_retries);
  r.get("dimension", p.dimension);
  r.path("fixture_file", p.fixture_file);
}

json provider_json(const ProviderConfig& p) {
  return {{"mode", p.mode == ProviderConfig::Mode::http ? "http" : "deterministic"},
          {"endpoint", p.endpoint},
          {"model", p.model},
          {"timeout_seconds", p.timeout_seconds},
          {"max_retries", p.max_retries},
          {"dimension", p.dimension},
          {"fixture_file", p.fixture_file.string()}};
}

}  // namespace

AppConfig AppConfig::from_json(const json& j) {
  AppConfig c;
  {
    Reader r(j, "config");
    int version = kFormatVersion;
    r.get("format_version", version);
    if (version != kFormatVersion) throw ConfigError("unsupported config format_version " + std::to_string(version));
    r.path("corpus_dir", c.corpus_dir);
    r.path("graph_file", c.graph_file);
    r.path("scorer_file", c.scorer_file);
    r.path("gold_plans", c.gold_plans);
    r.get("seed", c.seed);
    r.get("workers", c.workers);
    if (const json* t = r.child("thresholds")) {
      Reader s(*t, "thresholds");
      s.get("tau_u", c.thresholds.tau_u);
      s.get("tau_j", c.thresholds.tau_j);
    }
    if (const json* d = r.child("decomposer")) {
      Reader s(*d, "decomposer");
      s.get("depth", c.decomposer.depth);
      s.get("min_similarity", c.decomposer.min_similarity);
      s.get("max_seed_retries", c.decomposer.max_seed_retries);
    }
    if (const json* d = r.child("retrieval")) {
      Reader s(*d, "retrieval");
      s.get("k", c.retrieval.k);
      s.get("depth", c.retrieval.depth);
      s.get("candidates", c.retrieval.caps.candidates);
      s.get("probes", c.retrieval.caps.probes);
      s.get("groups", c.retrieval.caps.groups);
      s.get("gap_fraction", c.retrieval.gap_fraction);
      s.get("refine", c.retrieval.refine);
    }
    if (const json* d = r.child("reasoner")) {
      Reader s(*d, "reasoner");
      s.get("delta", c.fuzzy_delta);
      s.get("max_retries", c.max_retries);
    }
    if (const json* d = r.child("training")) {
      Reader s(*d, "training");
      s.get("epochs", c.train_epochs);
      s.get("step", c.train_step);
    }
    if (const json* d = r.child("benchgen")) {
      Reader s(*d, "benchgen");
      s.get("mask_table_fraction", c.benchgen.mask_table_fraction);
      s.get("mask_header_fraction", c.benchgen.mask_header_fraction);
      s.get("perturb_cell_fraction", c.benchgen.perturb_cell_fraction);
      s.get("external_top_n", c.benchgen.external_top_n);
    }
    if (const json* d = r.child("providers")) {
      Reader s(*d, "providers");
      if (const json* e = s.child("embedder")) read_provider(*e, "providers.embedder", c.embedder);
      if (const json* e = s.child("chat")) read_provider(*e, "providers.chat", c.chat);
      s.get("use_chat", c.use_chat);
    }
  }
  c.benchgen.seed = c.seed;
  c.validate();
  return c;
}

AppConfig AppConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void AppConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  unit(thresholds.tau_u, "thresholds.tau_u");
  unit(thresholds.tau_j, "thresholds.tau_j");
  unit(fuzzy_delta, "reasoner.delta");
  unit(retrieval.gap_fraction, "retrieval.gap_fraction");
  unit(decomposer.min_similarity, "decomposer.min_similarity");
  if (retrieval.k == 0) throw ConfigError("retrieval.k must be >= 1");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (!(train_step > 0)) throw ConfigError("training.step must be positive");
  try {
    benchgen.validate();
    embedder.validate();
    chat.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json AppConfig::to_json() const {
  return {{"format_version", kFormatVersion},
          {"corpus_dir", corpus_dir.string()},
          {"graph_file", graph_file.string()},
          {"scorer_file", scorer_file.string()},
          {"gold_plans", gold_plans.string()},
          {"seed", seed},
          {"workers", workers},
          {"thresholds", {{"tau_u", thresholds.tau_u}, {"tau_j", thresholds.tau_j}}},
          {"decomposer",
           {{"depth", decomposer.depth},
            {"min_similarity", decomposer.min_similarity},
            {"max_seed_retries", decomposer.max_seed_retries}}},
          {"retrieval",
           {{"k", retrieval.k},
            {"depth", retrieval.depth},
            {"candidates", retrieval.caps.candidates},
            {"probes", retrieval.caps.probes},
            {"groups", retrieval.caps.groups},
            {"gap_fraction", retrieval.gap_fraction},
            {"refine", retrieval.refine}}},
          {"reasoner", {{"delta", fuzzy_delta}, {"max_retries", max_retries}}},
          {"training", {{"epochs", train_epochs}, {"step", train_step}}},
          {"benchgen",
           {{"mask_table_fraction", benchgen.mask_table_fraction},
            {"mask_header_fraction", benchgen.mask_header_fraction},
            {"perturb_cell_fraction", benchgen.perturb_cell_fraction},
            {"external_top_n", benchgen.external_top_n}}},
          {"providers", {{"embedder", provider_json(embedder)}, {"chat", provider_json(chat)}, {"use_chat", use_chat}}}};
}

Providers AppConfig::make_providers() const {
  Providers p = Providers::deterministic(embedder.dimension);
  if (embedder.mode == ProviderConfig::Mode::http) {
    ProviderConfig e = embedder;
    e.apply_environment("EMBEDDER");
    p.embedder = std::make_shared<CachingEmbedder>(make_embedder(e));
  }
  if (use_chat) {
    ProviderConfig c = chat;
    if (c.mode == ProviderConfig::Mode::http) c.apply_environment("CHAT");
    p.chat = make_chat(c);
  }
  return p;
}

}  // namespace lakeqa
