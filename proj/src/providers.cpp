#include "lakeqa/providers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lakeqa/text.hpp"

namespace lakeqa {

using nlohmann::json;

double dot(const Embedding& a, const Embedding& b) {
  double s = 0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const Embedding& v) { return std::sqrt(dot(v, v)); }

double cosine(const Embedding& a, const Embedding& b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0 || nb == 0) return 0;
  return dot(a, b) / (na * nb);
}

double similarity(const Embedding& a, const Embedding& b) {
  return std::clamp(cosine(a, b), 0.0, 1.0);
}

void ProviderConfig::validate() const {
  if (mode == Mode::http && endpoint.empty())
    throw std::invalid_argument("http provider requires a non-empty endpoint");
  if (!(timeout_seconds > 0)) throw std::invalid_argument("provider timeout must be positive");
  if (max_retries < 0) throw std::invalid_argument("provider max_retries must be >= 0");
  if (dimension < 64) throw std::invalid_argument("embedding dimension must be >= 64");
}

void ProviderConfig::apply_environment(std::string_view prefix) {
  std::string var = "LAKEQA_" + std::string(prefix) + "_ENDPOINT";
  if (endpoint.empty()) {
    if (const char* v = std::getenv(var.c_str())) endpoint = v;
  }
  if (api_key.empty()) {
    if (const char* v = std::getenv("LAKEQA_API_KEY")) api_key = v;
  }
}

Embedding Embedder::embed_one(const std::string& text) const {
  std::vector<std::string> one{text};
  auto out = embed(one);
  if (out.size() != 1) throw ContractError("embedder returned wrong batch size");
  return std::move(out.front());
}

// ---- hashing embedder -------------------------------------------------------

namespace {

constexpr double kWordWeight = 1.0;
constexpr double kNumberWeight = 0.5;
constexpr double kGramWeight = 0.35;
constexpr double kNumberGramWeight = 0.15;

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ < 64) throw std::invalid_argument("embedding dimension must be >= 64");
}

Embedding HashingEmbedder::embed_text(std::string_view text) const {
  // feature key -> (type weight, count)
  std::unordered_map<std::uint64_t, std::pair<double, int>> features;
  auto add = [&](std::string_view kind, std::string_view key, double weight) {
    std::string k;
    k.reserve(kind.size() + key.size() + 1);
    k.append(kind).push_back('\x1f');
    k.append(key);
    auto& f = features[fnv1a64(k)];
    f.first = weight;
    ++f.second;
  };
  for (const auto& tok : word_tokens(text)) {
    const bool numeric = all_digits(tok);
    add("w", tok, numeric ? kNumberWeight : kWordWeight);
    const std::string marked = "<" + tok + ">";
    for (std::size_t i = 0; i + 3 <= marked.size(); ++i)
      add("g", std::string_view(marked).substr(i, 3), numeric ? kNumberGramWeight : kGramWeight);
  }
  Embedding v(dimension_, 0.0);
  if (features.empty()) return v;
  // iterate in key order so the floating-point accumulation is reproducible
  std::vector<std::pair<std::uint64_t, std::pair<double, int>>> ordered(features.begin(), features.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [h, f] : ordered) {
    const std::uint64_t m = mix64(h);
    const std::size_t idx = m % dimension_;
    const double sign = (m >> 63) ? -1.0 : 1.0;
    v[idx] += sign * f.first * (1.0 + std::log(static_cast<double>(f.second)));
  }
  const double n = l2_norm(v);
  if (n > 0)
    for (auto& x : v) x /= n;
  return v;
}

std::vector<Embedding> HashingEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_text(t));
  return out;
}

std::vector<Embedding> CachingEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<Embedding> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_idx;
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto it = cache_.find(texts[i]); it != cache_.end())
        out[i] = it->second;
      else {
        missing.push_back(texts[i]);
        missing_idx.push_back(i);
      }
    }
  }
  if (missing.empty()) return out;
  auto fresh = inner_->embed(missing);
  if (fresh.size() != missing.size()) throw ContractError("embedder returned wrong batch size");
  std::lock_guard lock(mutex_);
  for (std::size_t j = 0; j < fresh.size(); ++j) {
    cache_.emplace(missing[j], fresh[j]);
    out[missing_idx[j]] = std::move(fresh[j]);
  }
  return out;
}

// ---- http plumbing ----------------------------------------------------------

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = endpoint.find('/', host_start);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

std::string post_with_retries(const ProviderConfig& cfg, const std::string& body) {
  const Url url = split_url(cfg.endpoint);
  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(cfg.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
    } else if (res->status < 200 || res->status >= 300) {
      last_error = "http status " + std::to_string(res->status);
    } else {
      return res->body;
    }
    if (attempt < cfg.max_retries)
      std::this_thread::sleep_for(std::chrono::milliseconds(10 * (attempt + 1)));
  }
  throw ProviderError(cfg.endpoint + ": " + last_error, true);
}

}  // namespace

HttpEmbedder::HttpEmbedder(ProviderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::vector<Embedding> HttpEmbedder::embed(std::span<const std::string> texts) const {
  json req;
  req["texts"] = json::array();
  for (const auto& t : texts) req["texts"].push_back(t.substr(0, kMaxEmbedChars));
  if (!cfg_.model.empty()) req["model"] = cfg_.model;
  json res;
  try {
    res = json::parse(post_with_retries(cfg_, req.dump()));
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed embedding response: ") + e.what(), true);
  }
  if (!res.contains("vectors") || !res["vectors"].is_array())
    throw ProviderError("embedding response lacks \"vectors\"", true);
  std::vector<Embedding> out;
  for (const auto& v : res["vectors"]) out.push_back(v.get<Embedding>());
  if (out.size() != texts.size()) throw ContractError("embedding response has wrong batch size");
  for (const auto& v : out)
    if (v.size() != out.front().size()) throw ContractError("embedding dimension mismatch within a batch");
  return out;
}

std::shared_ptr<const Embedder> make_embedder(const ProviderConfig& cfg) {
  cfg.validate();
  if (cfg.mode == ProviderConfig::Mode::http)
    return std::make_shared<CachingEmbedder>(std::make_shared<HttpEmbedder>(cfg));
  return std::make_shared<CachingEmbedder>(std::make_shared<HashingEmbedder>(cfg.dimension));
}

std::vector<Embedding> embed_texts(const std::vector<std::string>& texts, const Embedder& embedder) {
  if (texts.empty()) throw std::invalid_argument("embed_texts: empty batch");
  std::vector<std::string> clipped;
  clipped.reserve(texts.size());
  for (const auto& t : texts) clipped.push_back(t.size() > kMaxEmbedChars ? t.substr(0, kMaxEmbedChars) : t);
  auto out = embedder.embed(clipped);
  if (out.size() != texts.size()) throw ContractError("embedder returned wrong batch size");
  for (const auto& v : out)
    if (v.size() != out.front().size()) throw ContractError("embedding dimension mismatch within a batch");
  return out;
}

// ---- chat ---------------------------------------------------------------------

std::string normalize_prompt(std::string_view prompt) {
  std::string out;
  bool space = false;
  for (char c : trim(prompt)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

std::string prompt_hash(std::string_view prompt) { return hex64(fnv1a64(normalize_prompt(prompt))); }

void ScriptedChat::add_fixture(std::string_view prompt, std::string response) {
  fixtures_[prompt_hash(prompt)] = std::move(response);
}

void ScriptedChat::add_fixture_hash(std::string hash, std::string response) {
  fixtures_[std::move(hash)] = std::move(response);
}

void ScriptedChat::add_responder(Responder responder) { responders_.push_back(std::move(responder)); }

void ScriptedChat::load_fixtures(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open fixture file " + file.string());
  json doc = json::parse(in);
  if (!doc.is_array()) throw std::runtime_error("fixture file must hold a JSON array");
  for (const auto& entry : doc)
    add_fixture_hash(entry.at("prompt_hash").get<std::string>(), entry.at("response").get<std::string>());
}

std::string ScriptedChat::complete(const std::string& prompt) const {
  if (trim(prompt).empty()) throw std::invalid_argument("chat prompt must be non-empty");
  if (auto it = fixtures_.find(prompt_hash(prompt)); it != fixtures_.end()) return it->second;
  for (const auto& r : responders_)
    if (auto reply = r(prompt)) return *reply;
  throw ProviderError("unscripted prompt (hash " + prompt_hash(prompt) + ")", false);
}

HttpChat::HttpChat(ProviderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::string HttpChat::complete(const std::string& prompt) const {
  if (trim(prompt).empty()) throw std::invalid_argument("chat prompt must be non-empty");
  json req = {{"model", cfg_.model},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};
  const std::string body = post_with_retries(cfg_, req.dump());
  try {
    auto res = json::parse(body);
    if (res.contains("content") && res["content"].is_string()) return res["content"].get<std::string>();
  } catch (const json::exception&) {
  }
  throw ProviderError("chat response lacks a string \"content\" field", true);
}

std::shared_ptr<const ChatProvider> make_chat(const ProviderConfig& cfg) {
  cfg.validate();
  if (cfg.mode == ProviderConfig::Mode::http) return std::make_shared<HttpChat>(cfg);
  auto chat = std::make_shared<ScriptedChat>();
  if (!cfg.fixture_file.empty()) chat->load_fixtures(cfg.fixture_file);
  return chat;
}

std::string chat_complete(const std::string& prompt, const ChatProvider& chat) {
  if (trim(prompt).empty()) throw std::invalid_argument("chat prompt must be non-empty");
  return chat.complete(prompt);
}

std::string_view to_string(PhraseKind kind) {
  switch (kind) {
    case PhraseKind::noun: return "noun";
    case PhraseKind::adjective: return "adjective";
    case PhraseKind::verb: return "verb";
  }
  return "noun";
}

std::vector<Phrase> chunk_phrases(std::string_view sentence, const Chunker& chunker) {
  if (trim(sentence).empty()) throw std::invalid_argument("chunk_phrases: empty sentence");
  return chunker.chunk(sentence);
}

Providers Providers::deterministic(std::size_t dimension) {
  Providers p;
  p.embedder = std::make_shared<CachingEmbedder>(std::make_shared<HashingEmbedder>(dimension));
  p.chunker = std::make_shared<RuleChunker>();
  return p;
}

}  // namespace lakeqa
