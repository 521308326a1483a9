#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lakeqa {

using Embedding = std::vector<double>;

double dot(const Embedding& a, const Embedding& b);
double l2_norm(const Embedding& v);

/// Cosine similarity; 0 when either side is the zero vector.
double cosine(const Embedding& a, const Embedding& b);

/// Cosine clamped into [0, 1], the similarity scale used throughout the pipeline.
double similarity(const Embedding& a, const Embedding& b);

struct ProviderConfig {
  enum class Mode { deterministic, http };

  Mode mode = Mode::deterministic;
  std::string endpoint;
  std::string model;
  std::string api_key;
  double timeout_seconds = 30.0;
  int max_retries = 3;
  std::size_t dimension = 256;
  std::filesystem::path fixture_file;

  /// Throws std::invalid_argument on an http config without endpoint or a
  /// non-positive timeout.
  void validate() const;

  /// Fills endpoint and api key from LAKEQA_<PREFIX>_ENDPOINT / LAKEQA_API_KEY when unset.
  void apply_environment(std::string_view prefix);
};

class ProviderError : public std::runtime_error {
 public:
  ProviderError(const std::string& what, bool retryable)
      : std::runtime_error(what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

/// Raised when a provider breaks its own output contract (e.g. ragged dimensions).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr std::size_t kMaxEmbedChars = 8192;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<Embedding> embed(std::span<const std::string> texts) const = 0;
  virtual std::size_t dimension() const = 0;

  Embedding embed_one(const std::string& text) const;
};

/// Offline embedder: signed feature hashing of word tokens and boundary-marked
/// character 3-grams, sublinear term frequency, L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256);
  std::vector<Embedding> embed(std::span<const std::string> texts) const override;
  std::size_t dimension() const override { return dimension_; }

  Embedding embed_text(std::string_view text) const;

 private:
  std::size_t dimension_;
};

/// Memoizing decorator; safe for concurrent use.
class CachingEmbedder final : public Embedder {
 public:
  explicit CachingEmbedder(std::shared_ptr<const Embedder> inner) : inner_(std::move(inner)) {}
  std::vector<Embedding> embed(std::span<const std::string> texts) const override;
  std::size_t dimension() const override { return inner_->dimension(); }

 private:
  std::shared_ptr<const Embedder> inner_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, Embedding> cache_;
};

/// POST {"texts":[...]} -> {"vectors":[[...]]}.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(ProviderConfig cfg);
  std::vector<Embedding> embed(std::span<const std::string> texts) const override;
  std::size_t dimension() const override { return cfg_.dimension; }

 private:
  ProviderConfig cfg_;
};

std::shared_ptr<const Embedder> make_embedder(const ProviderConfig& cfg);

/// embed_texts contract: non-empty batch, one vector per text, texts truncated to
/// kMaxEmbedChars by the caller.
std::vector<Embedding> embed_texts(const std::vector<std::string>& texts, const Embedder& embedder);

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string complete(const std::string& prompt) const = 0;
};

/// Whitespace-collapsed, trimmed prompt; fixtures are keyed by its hash.
std::string normalize_prompt(std::string_view prompt);
std::string prompt_hash(std::string_view prompt);

/// Deterministic chat: replays recorded responses, then consults registered
/// rule-based responders. Anything else is an "unscripted prompt" error.
class ScriptedChat final : public ChatProvider {
 public:
  using Responder = std::function<std::optional<std::string>(const std::string& prompt)>;

  ScriptedChat() = default;

  void add_fixture(std::string_view prompt, std::string response);
  void add_fixture_hash(std::string hash, std::string response);
  void add_responder(Responder responder);

  /// JSON array of {prompt_hash, response}.
  void load_fixtures(const std::filesystem::path& file);

  std::string complete(const std::string& prompt) const override;

 private:
  std::map<std::string, std::string> fixtures_;
  std::vector<Responder> responders_;
};

/// POST {"model","messages":[{"role","content"}]} -> {"content"}; retries
/// non-2xx and transport failures up to max_retries.
class HttpChat final : public ChatProvider {
 public:
  explicit HttpChat(ProviderConfig cfg);
  std::string complete(const std::string& prompt) const override;

 private:
  ProviderConfig cfg_;
};

std::shared_ptr<const ChatProvider> make_chat(const ProviderConfig& cfg);

std::string chat_complete(const std::string& prompt, const ChatProvider& chat);

enum class PhraseKind { noun, adjective, verb };

std::string_view to_string(PhraseKind kind);

struct Phrase {
  std::string text;
  PhraseKind kind = PhraseKind::noun;
  std::size_t begin = 0;  // byte offset, inclusive
  std::size_t end = 0;    // byte offset, exclusive

  bool operator==(const Phrase&) const = default;
};

class Chunker {
 public:
  virtual ~Chunker() = default;
  virtual std::vector<Phrase> chunk(std::string_view sentence) const = 0;
};

/// Lexicon-driven shallow chunker for interrogative English.
class RuleChunker final : public Chunker {
 public:
  std::vector<Phrase> chunk(std::string_view sentence) const override;
};

std::vector<Phrase> chunk_phrases(std::string_view sentence, const Chunker& chunker);

struct Providers {
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<const ChatProvider> chat;  // may be null: stages use their deterministic fallback
  std::shared_ptr<const Chunker> chunker;

  static Providers deterministic(std::size_t dimension = 256);
};

}  // namespace lakeqa
