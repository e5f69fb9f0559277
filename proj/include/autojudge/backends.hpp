#pragma once

#include <chrono>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "autojudge/collection.hpp"
#include "autojudge/prompting.hpp"

namespace autojudge::backends {

enum class BackendKind { kChatGenerative, kEmbedding, kReplay };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_backoff{1000};
};

struct BackendConfig {
  BackendKind kind = BackendKind::kChatGenerative;
  std::string endpoint;  // scheme://host[:port][/prefix]
  std::string model_id;
  int max_concurrency = 4;
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
  std::string api_key_env;  // name of the variable holding the key; empty for no auth
  std::string chat_path = "/v1/chat/completions";
  std::string embeddings_path = "/v1/embeddings";
  double temperature = 0.0;
  int max_tokens = 0;  // 0 leaves it to the server

  // Replay backends serve recorded responses from `replay_path` and behave
  // like a backend of `replay_kind`.
  std::filesystem::path replay_path;
  BackendKind replay_kind = BackendKind::kChatGenerative;

  /// Kind of scoring this backend supports: generative or embedding.
  BackendKind scoring_kind() const noexcept {
    return kind == BackendKind::kReplay ? replay_kind : kind;
  }

  /// Throws ConfigError on an invalid combination of fields.
  void validate() const;

  /// Reads the "backends" entry layout used in pipeline configs. Relative
  /// replay paths resolve against `base_dir`.
  static BackendConfig from_json(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir = {});
};

struct BackendResponse {
  std::optional<std::string> raw_text;
  std::optional<std::vector<double>> embedding;
  // Set only by embedding-kind batch judgments, alongside the text embedding.
  std::optional<std::vector<double>> image_embedding;
  std::chrono::milliseconds latency{0};
  int attempt_count = 0;
  bool from_cache = false;
  std::optional<std::string> error;  // error placeholder for a failed pair

  bool ok() const noexcept { return !error.has_value(); }
};

struct CacheKey {
  std::string model_id;
  std::string qid;
  std::string docid;
  std::string prompt_hash;

  auto operator<=>(const CacheKey&) const = default;
};

/// Append-only JSON-lines store of successful backend responses. All
/// appends go through one mutex, so a cache may be shared by worker threads.
class JudgmentCache {
 public:
  /// In-memory only.
  JudgmentCache() = default;
  /// Loads `path` if it exists and appends new entries to it. A truncated
  /// final line left by an interrupted writer is ignored.
  explicit JudgmentCache(std::filesystem::path path);

  JudgmentCache(const JudgmentCache&) = delete;
  JudgmentCache& operator=(const JudgmentCache&) = delete;

  std::optional<BackendResponse> find(const CacheKey& key) const;
  /// Stores and persists `response`. No-op if the key is already present.
  void put(const CacheKey& key, const BackendResponse& response, double temperature = 0.0);

  std::size_t size() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  mutable std::mutex mu_;
  std::map<CacheKey, BackendResponse> entries_;
  std::filesystem::path path_;
  std::ofstream out_;
};

/// One unit of backend work.
struct Request {
  enum class Kind { kCompletion, kEmbedText, kEmbedImage };
  Kind kind = Kind::kCompletion;
  CacheKey key;
  std::string text;       // prompt or text to embed
  std::string image_ref;  // attached or embedded image
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendConfig& config() const noexcept = 0;
  /// Blocking call. Throws BackendError subclasses on failure.
  virtual BackendResponse send(const Request& request) = 0;
};

/// Client for chat-completions and embeddings HTTP endpoints.
class HttpBackend final : public Backend {
 public:
  /// Throws ConfigError if the configured API key variable is unset.
  explicit HttpBackend(BackendConfig cfg);

  const BackendConfig& config() const noexcept override { return cfg_; }
  BackendResponse send(const Request& request) override;

  BackendResponse complete(const prompting::RenderedPrompt& prompt);
  std::vector<double> embed_text(std::string_view text);
  std::vector<double> embed_image(std::string_view image_ref);

  std::optional<std::size_t> dimension() const;

 private:
  std::string post_json(const std::string& path, const std::string& body, int& attempts);
  std::vector<double> embed_request(const nlohmann::json& input, int& attempts);

  BackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string api_key_;
  mutable std::mutex dim_mu_;
  std::optional<std::size_t> dimension_;
};

/// Serves responses recorded in a cache-format JSON-lines file. An entry
/// whose prompt_hash is "*" (or absent) matches any prompt for its
/// (model_id, qid, docid).
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(BackendConfig cfg);

  const BackendConfig& config() const noexcept override { return cfg_; }
  BackendResponse send(const Request& request) override;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  BackendConfig cfg_;
  std::map<CacheKey, BackendResponse> entries_;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

/// Single chat completion: prompt text plus the image as a content part.
BackendResponse complete(const prompting::RenderedPrompt& prompt, const BackendConfig& cfg);

struct EmbedInput {
  enum class Kind { kText, kImage };
  Kind kind = Kind::kText;
  std::string value;  // text, or an image locator
};

std::vector<double> embed(const EmbedInput& input, const BackendConfig& cfg);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Runs requests with at most `max_concurrency` in flight. Cache hits are
/// answered without calling the backend and duplicate keys are sent once.
/// Results are in input order; a failed request yields an error
/// placeholder. Successful responses are persisted before returning.
std::vector<BackendResponse> execute(std::span<const Request> requests, Backend& backend,
                                     JudgmentCache* cache, int max_concurrency,
                                     const ProgressFn& progress = {});

using JudgePair = std::pair<Topic, ImageDoc>;

struct JudgeOptions {
  const prompting::PromptTemplate* prompt_template = nullptr;  // standard when null
  std::size_t context_token_budget = 77;                       // embedding backends
  const prompting::Tokenizer* tokenizer = nullptr;             // whitespace when null
  ProgressFn progress;  // called from worker threads after each request
};

/// Judges (topic, image) pairs. Generative backends get one completion per
/// pair; embedding backends get the truncated context and the image
/// embedded (each distinct text and image once) and the response carries
/// both vectors.
std::vector<BackendResponse> judge_batch(std::span<const JudgePair> pairs, Backend& backend,
                                         JudgmentCache* cache, const JudgeOptions& options = {});

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);

/// Data URL for a local image, or the locator itself for http(s)/data URLs.
/// Throws RequestError if a local file cannot be read.
std::string image_url(std::string_view image_ref);

}  // namespace autojudge::backends
