#include "autojudge/backends.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <regex>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge::backends {

using json = nlohmann::json;

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::kChatGenerative: return "chat_generative";
    case BackendKind::kEmbedding: return "embedding";
    case BackendKind::kReplay: return "replay";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "chat_generative") return BackendKind::kChatGenerative;
  if (s == "embedding") return BackendKind::kEmbedding;
  if (s == "replay") return BackendKind::kReplay;
  throw ConfigError("unknown backend kind \"" + std::string(s) + "\"");
}

void BackendConfig::validate() const {
  if (model_id.empty()) throw ConfigError("backend model_id must not be empty");
  if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1 for " + model_id);
  if (retry.max_attempts < 1) throw ConfigError("retry max_attempts must be >= 1 for " + model_id);
  if (retry.base_backoff.count() < 0) throw ConfigError("negative base_backoff for " + model_id);
  if (kind == BackendKind::kReplay) {
    if (replay_kind == BackendKind::kReplay)
      throw ConfigError("replay_kind must be chat_generative or embedding for " + model_id);
    if (replay_path.empty()) throw ConfigError("replay backend " + model_id + " needs replay_path");
  } else if (endpoint.empty()) {
    throw ConfigError("backend " + model_id + " needs an endpoint");
  }
}

BackendConfig BackendConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  BackendConfig cfg;
  try {
    cfg.model_id = j.at("model_id").get<std::string>();
    cfg.kind = backend_kind_from_string(j.at("kind").get<std::string>());
    cfg.endpoint = j.value("endpoint", "");
    cfg.max_concurrency = j.value("max_concurrency", cfg.max_concurrency);
    if (j.contains("timeout_ms")) cfg.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<long>());
    cfg.retry.max_attempts = j.value("max_attempts", cfg.retry.max_attempts);
    if (j.contains("base_backoff_ms"))
      cfg.retry.base_backoff = std::chrono::milliseconds(j.at("base_backoff_ms").get<long>());
    cfg.api_key_env = j.value("api_key_env", "");
    cfg.chat_path = j.value("chat_path", cfg.chat_path);
    cfg.embeddings_path = j.value("embeddings_path", cfg.embeddings_path);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
    if (j.contains("replay_path")) {
      std::filesystem::path p = j.at("replay_path").get<std::string>();
      cfg.replay_path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
    if (j.contains("replay_kind"))
      cfg.replay_kind = backend_kind_from_string(j.at("replay_kind").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backend config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Hashing and encoding

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw ComputationError("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string base64_encode(std::string_view data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(data.data()),
                          static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

namespace {

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  return true;
}

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

}  // namespace

std::string image_url(std::string_view image_ref) {
  if (image_ref.empty()) throw RequestError("empty image reference");
  if (starts_with_ci(image_ref, "http://") || starts_with_ci(image_ref, "https://") ||
      starts_with_ci(image_ref, "data:"))
    return std::string(image_ref);
  std::filesystem::path p{std::string(image_ref)};
  std::string bytes;
  try {
    bytes = text::read_file(p);
  } catch (const ConfigError&) {
    throw RequestError("cannot read image \"" + p.string() + "\"");
  }
  return "data:" + mime_for(p) + ";base64," + base64_encode(bytes);
}

// ---------------------------------------------------------------------------
// Cache

namespace {

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::pair<CacheKey, BackendResponse> entry_from_json(const json& j) {
  CacheKey key;
  const auto& k = j.at("key");
  key.model_id = j.at("model_id").get<std::string>();
  key.qid = k.value("qid", "");
  key.docid = k.value("docid", "");
  key.prompt_hash = k.value("prompt_hash", "*");
  BackendResponse r;
  if (auto t = j.find("raw_text"); t != j.end() && !t->is_null())
    r.raw_text = t->get<std::string>();
  if (auto e = j.find("embedding"); e != j.end() && !e->is_null())
    r.embedding = e->get<std::vector<double>>();
  if (r.raw_text.has_value() == r.embedding.has_value())
    throw ProtocolError("cache entry must hold exactly one of raw_text and embedding");
  r.attempt_count = j.value("attempt_count", 1);
  return {std::move(key), std::move(r)};
}

}  // namespace

JudgmentCache::JudgmentCache(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    std::string contents = text::read_file(path_);
    bool last_complete = contents.empty() || contents.back() == '\n';
    std::size_t total_lines = 0;
    text::for_each_line(contents, [&](std::size_t n, std::string_view) { total_lines = n; });
    text::for_each_line(contents, [&](std::size_t lineno, std::string_view line) {
      if (text::is_blank(line)) return;
      try {
        auto [key, resp] = entry_from_json(json::parse(line));
        entries_.emplace(std::move(key), std::move(resp));
      } catch (const std::exception& e) {
        if (lineno == total_lines && !last_complete) return;  // interrupted write
        throw ParseError(lineno, "corrupt cache file " + path_.string() + ": " + e.what());
      }
    });
    if (!last_complete) {
      // Drop the partial tail so appends start on a fresh line.
      contents.resize(contents.rfind('\n') == std::string::npos ? 0 : contents.rfind('\n') + 1);
      text::write_file_atomic(path_, contents);
    }
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw ConfigError("cannot open cache file " + path_.string());
}

std::optional<BackendResponse> JudgmentCache::find(const CacheKey& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  BackendResponse r = it->second;
  r.from_cache = true;
  r.latency = std::chrono::milliseconds{0};
  return r;
}

void JudgmentCache::put(const CacheKey& key, const BackendResponse& response, double temperature) {
  std::lock_guard lock(mu_);
  if (entries_.count(key)) return;
  BackendResponse stored = response;
  stored.from_cache = false;
  stored.error.reset();
  stored.image_embedding.reset();
  if (out_.is_open()) {
    json j;
    j["key"] = {{"qid", key.qid}, {"docid", key.docid}, {"prompt_hash", key.prompt_hash}};
    j["model_id"] = key.model_id;
    if (stored.raw_text) j["raw_text"] = *stored.raw_text;
    if (stored.embedding) j["embedding"] = *stored.embedding;
    j["attempt_count"] = stored.attempt_count;
    j["temperature"] = temperature;
    j["timestamp"] = utc_timestamp();
    out_ << j.dump() << '\n';
    out_.flush();
  }
  entries_.emplace(key, std::move(stored));
}

std::size_t JudgmentCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url_re))
    throw ConfigError("endpoint must be an http(s) URL: " + cfg_.endpoint);
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].str();
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw ConfigError("environment variable " + cfg_.api_key_env + " is not set");
    api_key_ = key;
  }
}

std::string HttpBackend::post_json(const std::string& path, const std::string& body,
                                   int& attempts) {
  httplib::Client client(scheme_host_port_);
  auto secs = cfg_.timeout.count() / 1000;
  auto usecs = (cfg_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  for (attempts = 1;; ++attempts) {
    auto res = client.Post(path_prefix_ + path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      return res->body;
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      throw RequestError("HTTP " + std::to_string(res->status) + " from " + cfg_.model_id + ": " +
                             res->body.substr(0, 200),
                         res->status);
    }
    if (attempts >= cfg_.retry.max_attempts) break;
    std::this_thread::sleep_for(cfg_.retry.base_backoff * (1L << std::min(attempts - 1, 20)));
  }
  throw TransportError(cfg_.model_id + ": giving up after " + std::to_string(attempts) +
                       " attempts (" + last_error + ")");
}

BackendResponse HttpBackend::complete(const prompting::RenderedPrompt& prompt) {
  if (cfg_.scoring_kind() != BackendKind::kChatGenerative)
    throw ConfigError("backend " + cfg_.model_id + " is not a chat_generative backend");
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", prompt.text}});
  content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url(prompt.image_ref)}}}});
  json body = {{"model", cfg_.model_id},
               {"temperature", cfg_.temperature},
               {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
  if (cfg_.max_tokens > 0) body["max_tokens"] = cfg_.max_tokens;

  auto start = std::chrono::steady_clock::now();
  BackendResponse r;
  std::string raw = post_json(cfg_.chat_path, body.dump(), r.attempt_count);
  r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  try {
    auto j = json::parse(raw);
    const auto& msg = j.at("choices").at(0).at("message").at("content");
    if (msg.is_string()) {
      r.raw_text = msg.get<std::string>();
    } else {
      // Content-part arrays: concatenate the text parts.
      std::string joined;
      for (const auto& part : msg)
        if (part.value("type", "") == "text") joined += part.at("text").get<std::string>();
      r.raw_text = std::move(joined);
    }
  } catch (const json::exception& e) {
    throw ProtocolError("malformed chat completion from " + cfg_.model_id + ": " + e.what());
  }
  return r;
}

std::vector<double> HttpBackend::embed_request(const json& input, int& attempts) {
  if (cfg_.scoring_kind() != BackendKind::kEmbedding)
    throw ConfigError("backend " + cfg_.model_id + " is not an embedding backend");
  json body = {{"model", cfg_.model_id}, {"input", input}};
  std::string raw = post_json(cfg_.embeddings_path, body.dump(), attempts);
  std::vector<double> v;
  try {
    v = json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ProtocolError("malformed embedding response from " + cfg_.model_id + ": " + e.what());
  }
  if (v.empty()) throw ProtocolError("empty embedding from " + cfg_.model_id);
  std::lock_guard lock(dim_mu_);
  if (!dimension_) dimension_ = v.size();
  else if (*dimension_ != v.size())
    throw ProtocolError(cfg_.model_id + ": embedding dimension " + std::to_string(v.size()) +
                        " differs from " + std::to_string(*dimension_));
  return v;
}

std::vector<double> HttpBackend::embed_text(std::string_view text) {
  if (text.empty()) throw RequestError("cannot embed empty text");
  int attempts = 0;
  return embed_request(json(std::string(text)), attempts);
}

std::vector<double> HttpBackend::embed_image(std::string_view image_ref) {
  int attempts = 0;
  json input = json::array({{{"type", "image_url"}, {"image_url", {{"url", image_url(image_ref)}}}}});
  return embed_request(input, attempts);
}

std::optional<std::size_t> HttpBackend::dimension() const {
  std::lock_guard lock(dim_mu_);
  return dimension_;
}

BackendResponse HttpBackend::send(const Request& request) {
  switch (request.kind) {
    case Request::Kind::kCompletion:
      return complete({request.text, request.image_ref});
    case Request::Kind::kEmbedText:
    case Request::Kind::kEmbedImage: {
      if (request.kind == Request::Kind::kEmbedText && request.text.empty())
        throw RequestError("cannot embed empty text");
      BackendResponse r;
      auto start = std::chrono::steady_clock::now();
      json input = request.kind == Request::Kind::kEmbedText
                       ? json(request.text)
                       : json::array({{{"type", "image_url"},
                                       {"image_url", {{"url", image_url(request.image_ref)}}}}});
      r.embedding = embed_request(input, r.attempt_count);
      r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - start);
      return r;
    }
  }
  throw ConfigError("unknown request kind");
}

// ---------------------------------------------------------------------------
// Replay backend

ReplayBackend::ReplayBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::string contents = text::read_file(cfg_.replay_path);
  text::for_each_line(contents, [&](std::size_t lineno, std::string_view line) {
    if (text::is_blank(line)) return;
    try {
      auto [key, resp] = entry_from_json(json::parse(line));
      if (key.model_id != cfg_.model_id) return;
      entries_.emplace(std::move(key), std::move(resp));
    } catch (const std::exception& e) {
      throw ParseError(lineno, "bad replay entry in " + cfg_.replay_path.string() + ": " + e.what());
    }
  });
}

BackendResponse ReplayBackend::send(const Request& request) {
  const bool wants_text = request.kind == Request::Kind::kCompletion;
  if (wants_text != (cfg_.replay_kind == BackendKind::kChatGenerative))
    throw ConfigError("replay backend " + cfg_.model_id + " cannot serve this request kind");
  if (request.kind == Request::Kind::kEmbedText && request.text.empty())
    throw RequestError("cannot embed empty text");
  auto it = entries_.find(request.key);
  if (it == entries_.end()) {
    CacheKey wildcard = request.key;
    wildcard.prompt_hash = "*";
    it = entries_.find(wildcard);
  }
  if (it == entries_.end())
    throw RequestError("no recorded response for (" + request.key.qid + ", " + request.key.docid +
                       ")");
  if (it->second.raw_text.has_value() != wants_text)
    throw ProtocolError("recorded response for (" + request.key.qid + ", " + request.key.docid +
                        ") has the wrong kind");
  BackendResponse r = it->second;
  r.attempt_count = 1;
  r.latency = std::chrono::milliseconds{0};
  return r;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  if (cfg.kind == BackendKind::kReplay) return std::make_unique<ReplayBackend>(cfg);
  return std::make_unique<HttpBackend>(cfg);
}

BackendResponse complete(const prompting::RenderedPrompt& prompt, const BackendConfig& cfg) {
  if (cfg.scoring_kind() != BackendKind::kChatGenerative)
    throw ConfigError("backend " + cfg.model_id + " is not a chat_generative backend");
  auto backend = make_backend(cfg);
  Request req{Request::Kind::kCompletion, {cfg.model_id, "", "", "*"}, prompt.text,
              prompt.image_ref};
  return backend->send(req);
}

std::vector<double> embed(const EmbedInput& input, const BackendConfig& cfg) {
  if (cfg.scoring_kind() != BackendKind::kEmbedding)
    throw ConfigError("backend " + cfg.model_id + " is not an embedding backend");
  auto backend = make_backend(cfg);
  Request req;
  req.key = {cfg.model_id, "", "", sha256_hex(input.value)};
  if (input.kind == EmbedInput::Kind::kText) {
    req.kind = Request::Kind::kEmbedText;
    req.text = input.value;
  } else {
    req.kind = Request::Kind::kEmbedImage;
    req.image_ref = input.value;
  }
  return *backend->send(req).embedding;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<BackendResponse> execute(std::span<const Request> requests, Backend& backend,
                                     JudgmentCache* cache, int max_concurrency,
                                     const ProgressFn& progress) {
  if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
  std::vector<BackendResponse> results(requests.size());

  // Unique cache misses; `owner` maps each request to the index that is sent.
  std::vector<std::size_t> owner(requests.size());
  std::vector<std::size_t> todo;
  std::map<CacheKey, std::size_t> first_seen;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    owner[i] = i;
    if (cache) {
      if (auto hit = cache->find(requests[i].key)) {
        results[i] = std::move(*hit);
        continue;
      }
    }
    auto [it, inserted] = first_seen.emplace(requests[i].key, i);
    owner[i] = it->second;
    if (inserted) todo.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  const double temperature = backend.config().temperature;

  auto worker = [&] {
    while (!abort.load()) {
      std::size_t slot = next.fetch_add(1);
      if (slot >= todo.size()) return;
      const std::size_t i = todo[slot];
      try {
        BackendResponse r = backend.send(requests[i]);
        if (cache) cache->put(requests[i].key, r, temperature);
        results[i] = std::move(r);
      } catch (const BackendError& e) {
        results[i].error = e.what();
      } catch (...) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      }
      if (progress) progress(done.fetch_add(1) + 1, todo.size());
    }
  };

  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(max_concurrency), todo.size());
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (fatal) std::rethrow_exception(fatal);

  for (std::size_t i = 0; i < requests.size(); ++i)
    if (owner[i] != i) results[i] = results[owner[i]];
  return results;
}

std::vector<BackendResponse> judge_batch(std::span<const JudgePair> pairs, Backend& backend,
                                         JudgmentCache* cache, const JudgeOptions& options) {
  const auto& cfg = backend.config();
  const auto& tmpl =
      options.prompt_template ? *options.prompt_template : prompting::PromptTemplate::standard();
  std::vector<Request> requests;

  if (cfg.scoring_kind() == BackendKind::kChatGenerative) {
    requests.reserve(pairs.size());
    for (const auto& [topic, doc] : pairs) {
      auto prompt = prompting::render_full(topic, doc, tmpl);
      Request r;
      r.kind = Request::Kind::kCompletion;
      r.key = {cfg.model_id, topic.qid, doc.docid, sha256_hex(prompt.text + '\n' + prompt.image_ref)};
      r.text = std::move(prompt.text);
      r.image_ref = std::move(prompt.image_ref);
      requests.push_back(std::move(r));
    }
    return execute(requests, backend, cache, cfg.max_concurrency, options.progress);
  }

  // Embedding: one text request per topic and one image request per document.
  const prompting::WhitespaceTokenizer whitespace;
  const prompting::Tokenizer& tok = options.tokenizer ? *options.tokenizer : whitespace;
  std::map<std::string, std::size_t> text_slot, image_slot;
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (const auto& [topic, doc] : pairs) {
    auto [t, t_new] = text_slot.emplace(topic.qid, requests.size());
    if (t_new) {
      Request r;
      r.kind = Request::Kind::kEmbedText;
      r.text = prompting::render_context_only(topic, options.context_token_budget, tok);
      r.key = {cfg.model_id, topic.qid, "", sha256_hex(r.text)};
      requests.push_back(std::move(r));
    }
    auto [d, d_new] = image_slot.emplace(doc.docid, requests.size());
    if (d_new) {
      Request r;
      r.kind = Request::Kind::kEmbedImage;
      r.image_ref = doc.image_ref;
      r.key = {cfg.model_id, "", doc.docid, sha256_hex(doc.image_ref)};
      requests.push_back(std::move(r));
    }
    slots.emplace_back(t->second, d->second);
  }
  auto responses = execute(requests, backend, cache, cfg.max_concurrency, options.progress);

  std::vector<BackendResponse> out;
  out.reserve(pairs.size());
  for (const auto& [ti, di] : slots) {
    const auto& t = responses[ti];
    const auto& d = responses[di];
    BackendResponse r;
    if (!t.ok()) r.error = "text embedding: " + *t.error;
    else if (!d.ok()) r.error = "image embedding: " + *d.error;
    else {
      r.embedding = t.embedding;
      r.image_embedding = d.embedding;
    }
    r.latency = t.latency + d.latency;
    r.attempt_count = t.attempt_count + d.attempt_count;
    r.from_cache = t.from_cache && d.from_cache;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace autojudge::backends
