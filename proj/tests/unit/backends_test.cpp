#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "autojudge/backends.hpp"
#include "autojudge/error.hpp"
#include "autojudge/text.hpp"
#include "stub_server.hpp"

using namespace autojudge;
using namespace autojudge::backends;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("autojudge_backends_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

BackendConfig chat_config(const stub::Server& s, int concurrency = 4) {
  BackendConfig c;
  c.kind = BackendKind::kChatGenerative;
  c.endpoint = s.endpoint();
  c.model_id = "stub-vlm";
  c.max_concurrency = concurrency;
  c.timeout = std::chrono::milliseconds(5000);
  c.retry.max_attempts = 3;
  c.retry.base_backoff = std::chrono::milliseconds(1);
  return c;
}

BackendConfig embed_config(const stub::Server& s) {
  BackendConfig c = chat_config(s);
  c.kind = BackendKind::kEmbedding;
  c.model_id = "stub-clip";
  return c;
}

std::vector<JudgePair> make_pairs(int n, int topics = 5) {
  std::vector<JudgePair> pairs;
  for (int i = 0; i < n; ++i) {
    Topic t{"q" + std::to_string(i % topics), "Title " + std::to_string(i % topics), "ctx", "sec",
            "section text"};
    pairs.push_back({t, ImageDoc{"img" + std::to_string(i), "https://img.test/" + std::to_string(i),
                                 std::nullopt}});
  }
  return pairs;
}

}  // namespace

TEST(Encoding, Sha256AndBase64) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
  EXPECT_EQ(base64_encode(""), "");
}

TEST(Encoding, ImageUrl) {
  EXPECT_EQ(image_url("https://x.org/a.jpg"), "https://x.org/a.jpg");
  TempDir dir;
  const auto png = dir.path() / "a.png";
  text::write_file_atomic(png, std::string("\x89PNG", 4));
  EXPECT_EQ(image_url(png.string()), "data:image/png;base64,iVBORw==");
  EXPECT_THROW(image_url((dir.path() / "missing.jpg").string()), RequestError);
}

TEST(BackendConfig, FromJson) {
  auto c = BackendConfig::from_json(
      nlohmann::json::parse(R"({"model_id":"m","kind":"chat_generative","endpoint":"http://h:1",
                                "max_concurrency":3,"timeout_ms":500,"api_key_env":"K"})"));
  EXPECT_EQ(c.max_concurrency, 3);
  EXPECT_EQ(c.timeout.count(), 500);
  EXPECT_EQ(c.api_key_env, "K");
  EXPECT_THROW(BackendConfig::from_json(nlohmann::json::parse(R"({"kind":"embedding"})")),
               ConfigError);
  EXPECT_THROW(BackendConfig::from_json(
                   nlohmann::json::parse(R"({"model_id":"m","kind":"embedding"})")),
               ConfigError);
  EXPECT_THROW(BackendConfig::from_json(nlohmann::json::parse(
                   R"({"model_id":"m","kind":"replay","replay_kind":"replay","replay_path":"x"})")),
               ConfigError);
}

TEST(HttpBackend, MissingApiKeyVariableIsConfigError) {
  stub::Server s;
  auto c = chat_config(s);
  c.api_key_env = "AUTOJUDGE_TEST_SURELY_UNSET_KEY";
  ::unsetenv(c.api_key_env.c_str());
  EXPECT_THROW(HttpBackend{c}, ConfigError);
  EXPECT_EQ(s.requests(), 0);
}

TEST(HttpBackend, SendsBearerKeyFromEnvironment) {
  stub::Server s;
  auto c = chat_config(s);
  c.api_key_env = "AUTOJUDGE_TEST_KEY";
  ::setenv("AUTOJUDGE_TEST_KEY", "sk-test", 1);
  HttpBackend b(c);
  b.complete({"prompt", "https://img.test/1"});
  ::unsetenv("AUTOJUDGE_TEST_KEY");
  ASSERT_EQ(s.auth_headers().size(), 1u);
  EXPECT_EQ(s.auth_headers()[0], "Bearer sk-test");
}

TEST(HttpBackend, ChatRequestShape) {
  stub::Server s;
  s.on_chat([](const nlohmann::json&, int) { return std::pair{200, stub::Server::chat_body("Relevance: 85")}; });
  HttpBackend b(chat_config(s));
  auto r = b.complete({"the prompt", "https://img.test/9.jpg"});
  EXPECT_EQ(r.raw_text, "Relevance: 85");
  EXPECT_EQ(r.attempt_count, 1);
  auto body = s.bodies().at(0);
  EXPECT_EQ(body["model"], "stub-vlm");
  EXPECT_EQ(body["temperature"], 0.0);
  const auto& content = body["messages"][0]["content"];
  EXPECT_EQ(content[0]["type"], "text");
  EXPECT_EQ(content[0]["text"], "the prompt");
  EXPECT_EQ(content[1]["type"], "image_url");
  EXPECT_EQ(content[1]["image_url"]["url"], "https://img.test/9.jpg");
}

TEST(HttpBackend, RetriesOn429ThenSucceeds) {
  stub::Server s;
  s.on_chat([](const nlohmann::json&, int call) {
    if (call == 1) return std::pair{429, std::string(R"({"error":"slow down"})")};
    return std::pair{200, stub::Server::chat_body("Relevance: 40")};
  });
  HttpBackend b(chat_config(s));
  auto r = b.complete({"p", "https://img.test/1"});
  EXPECT_EQ(r.attempt_count, 2);
  EXPECT_EQ(r.raw_text, "Relevance: 40");
}

TEST(HttpBackend, ExhaustedRetriesAreTransportErrors) {
  stub::Server s;
  s.on_chat([](const nlohmann::json&, int) { return std::pair{503, std::string("{}")}; });
  HttpBackend b(chat_config(s));
  EXPECT_THROW(b.complete({"p", "https://img.test/1"}), TransportError);
  EXPECT_EQ(s.requests(), 3);
}

TEST(HttpBackend, ClientErrorIsNotRetried) {
  stub::Server s;
  s.on_chat([](const nlohmann::json&, int) { return std::pair{400, std::string("{}")}; });
  HttpBackend b(chat_config(s));
  try {
    b.complete({"p", "https://img.test/1"});
    FAIL();
  } catch (const RequestError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(s.requests(), 1);
}

TEST(HttpBackend, MalformedBodyIsProtocolError) {
  stub::Server s;
  s.on_chat([](const nlohmann::json&, int) { return std::pair{200, std::string("{\"choices\":[]}")}; });
  HttpBackend b(chat_config(s));
  EXPECT_THROW(b.complete({"p", "https://img.test/1"}), ProtocolError);
}

TEST(HttpBackend, UnreachableServerIsTransportError) {
  BackendConfig c;
  c.endpoint = "http://127.0.0.1:1";
  c.model_id = "nobody";
  c.retry.max_attempts = 2;
  c.retry.base_backoff = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(500);
  HttpBackend b(c);
  EXPECT_THROW(b.complete({"p", "https://img.test/1"}), TransportError);
}

TEST(Embed, StubVector) {
  stub::Server s;
  auto v = embed({EmbedInput::Kind::kText, "a bridge"}, embed_config(s));
  EXPECT_EQ(v, (std::vector<double>{3, 4}));
  EXPECT_DOUBLE_EQ(std::hypot(v[0], v[1]), 5.0);
  EXPECT_EQ(s.bodies().at(0)["input"], "a bridge");
  embed({EmbedInput::Kind::kImage, "https://img.test/1"}, embed_config(s));
  EXPECT_EQ(s.bodies().at(1)["input"][0]["image_url"]["url"], "https://img.test/1");
}

TEST(Embed, EmptyTextIsRequestError) {
  stub::Server s;
  EXPECT_THROW(embed({EmbedInput::Kind::kText, ""}, embed_config(s)), RequestError);
  EXPECT_EQ(s.requests(), 0);
}

TEST(Embed, DimensionMismatchIsProtocolError) {
  stub::Server s;
  s.on_embed([](const nlohmann::json&, int call) {
    return std::pair{200, stub::Server::embed_body(call == 1 ? std::vector<double>{1, 2}
                                                             : std::vector<double>{1, 2, 3})};
  });
  HttpBackend b(embed_config(s));
  EXPECT_EQ(b.embed_text("a").size(), 2u);
  EXPECT_EQ(b.dimension(), 2u);
  EXPECT_THROW(b.embed_text("b"), ProtocolError);
}

TEST(Embed, CachedInputIsRequestedOnce) {
  stub::Server s;
  HttpBackend b(embed_config(s));
  JudgmentCache cache;
  Request r{Request::Kind::kEmbedText, {"stub-clip", "q1", "", sha256_hex("a bridge")}, "a bridge", ""};
  auto first = execute(std::span(&r, 1), b, &cache, 2);
  auto second = execute(std::span(&r, 1), b, &cache, 2);
  EXPECT_EQ(first[0].embedding, second[0].embedding);
  EXPECT_TRUE(second[0].from_cache);
  EXPECT_EQ(s.requests(), 1);
}

TEST(JudgmentCache, PersistsAndReloads) {
  TempDir dir;
  const auto path = dir.path() / "cache.jsonl";
  CacheKey k1{"m", "q1", "d1", "h1"}, k2{"m", "", "d2", "h2"};
  {
    JudgmentCache c(path);
    BackendResponse a;
    a.raw_text = "Relevance: 3";
    a.attempt_count = 2;
    c.put(k1, a);
    BackendResponse b;
    b.embedding = std::vector<double>{0.5, -1.25};
    c.put(k2, b);
    c.put(k1, b);  // existing key: ignored
    EXPECT_EQ(c.size(), 2u);
  }
  JudgmentCache again(path);
  EXPECT_EQ(again.size(), 2u);
  EXPECT_EQ(again.find(k1)->raw_text, "Relevance: 3");
  EXPECT_EQ(again.find(k1)->attempt_count, 2);
  EXPECT_EQ(again.find(k2)->embedding, (std::vector<double>{0.5, -1.25}));
  EXPECT_FALSE(again.find({"m", "q1", "d1", "other"}).has_value());

  auto line = nlohmann::json::parse(text::read_file(path).substr(0, text::read_file(path).find('\n')));
  EXPECT_EQ(line["key"]["qid"], "q1");
  EXPECT_EQ(line["model_id"], "m");
  EXPECT_TRUE(line.contains("timestamp"));
  EXPECT_TRUE(line.contains("temperature"));
}

TEST(JudgmentCache, TruncatedTailIsDropped) {
  TempDir dir;
  const auto path = dir.path() / "cache.jsonl";
  {
    JudgmentCache c(path);
    BackendResponse a;
    a.raw_text = "Relevance: 9";
    c.put({"m", "q1", "d1", "h"}, a);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"key":{"qid":"q1","docid":"d2","prompt_h)";
  }
  JudgmentCache c(path);
  EXPECT_EQ(c.size(), 1u);
  BackendResponse b;
  b.raw_text = "Relevance: 10";
  c.put({"m", "q1", "d2", "h"}, b);
  JudgmentCache reread(path);
  EXPECT_EQ(reread.size(), 2u);
}

TEST(JudgmentCache, CorruptMiddleLineIsError) {
  TempDir dir;
  const auto path = dir.path() / "cache.jsonl";
  text::write_file_atomic(path, "garbage\n{}\n");
  EXPECT_THROW(JudgmentCache{path}, ParseError);
}

TEST(JudgeBatch, ConcurrencyCeilingAndOrder) {
  stub::Server s;
  s.set_delay(std::chrono::milliseconds(15));
  s.on_chat([](const nlohmann::json& body, int) {
    // Echo the image number so order can be checked.
    std::string url = body["messages"][0]["content"][1]["image_url"]["url"];
    return std::pair{200, stub::Server::chat_body("Relevance: " + url.substr(url.rfind('/') + 1))};
  });
  HttpBackend b(chat_config(s, 3));
  auto pairs = make_pairs(10);
  JudgmentCache cache;
  auto out = judge_batch(pairs, b, &cache);
  ASSERT_EQ(out.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(out[i].raw_text, "Relevance: " + std::to_string(i));
  EXPECT_LE(s.peak_in_flight(), 3);
  EXPECT_GE(s.peak_in_flight(), 2);
  EXPECT_EQ(cache.size(), 10u);

  s.reset_counters();
  auto again = judge_batch(pairs, b, &cache);
  EXPECT_EQ(s.requests(), 0);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(again[i].raw_text, out[i].raw_text);
}

TEST(JudgeBatch, EmptyInput) {
  stub::Server s;
  HttpBackend b(chat_config(s));
  EXPECT_TRUE(judge_batch({}, b, nullptr).empty());
  EXPECT_EQ(s.requests(), 0);
}

TEST(JudgeBatch, FailuresBecomePlaceholdersAndResume) {
  TempDir dir;
  stub::Server s;
  s.on_chat([](const nlohmann::json& body, int) {
    std::string url = body["messages"][0]["content"][1]["image_url"]["url"];
    const int n = std::stoi(url.substr(url.rfind('/') + 1));
    if (n % 4 == 0) return std::pair{400, std::string("{}")};
    return std::pair{200, stub::Server::chat_body("Relevance: 7")};
  });
  auto pairs = make_pairs(12);
  {
    HttpBackend b(chat_config(s, 2));
    JudgmentCache cache(dir.path() / "c.jsonl");
    auto out = judge_batch(pairs, b, &cache);
    for (int i = 0; i < 12; ++i) EXPECT_EQ(out[i].ok(), i % 4 != 0) << i;
    EXPECT_EQ(cache.size(), 9u);
  }
  EXPECT_EQ(s.requests(), 12);
  s.reset_counters();
  s.on_chat([](const nlohmann::json&, int) {
    return std::pair{200, stub::Server::chat_body("Relevance: 8")};
  });
  HttpBackend b(chat_config(s, 2));
  JudgmentCache cache(dir.path() / "c.jsonl");
  auto out = judge_batch(pairs, b, &cache);
  EXPECT_EQ(s.requests(), 3);  // only the failed pairs
  for (int i = 0; i < 12; ++i) EXPECT_EQ(out[i].raw_text, i % 4 == 0 ? "Relevance: 8" : "Relevance: 7");
}

TEST(JudgeBatch, EmbeddingSharesTextAndImageRequests) {
  stub::Server s;
  HttpBackend b(embed_config(s));
  auto pairs = make_pairs(6, 2);  // 2 topics, 6 images
  JudgmentCache cache;
  auto out = judge_batch(pairs, b, &cache);
  ASSERT_EQ(out.size(), 6u);
  for (const auto& r : out) {
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(*r.embedding, (std::vector<double>{3, 4}));
    EXPECT_EQ(*r.image_embedding, (std::vector<double>{3, 4}));
  }
  EXPECT_EQ(s.requests(), 8);
}

TEST(ReplayBackend, ServesRecordedResponses) {
  TempDir dir;
  const auto path = dir.path() / "replay.jsonl";
  text::write_file_atomic(
      path,
      R"({"key":{"qid":"q1","docid":"d1","prompt_hash":"*"},"model_id":"vlm","raw_text":"Relevance: 85"})"
      "\n"
      R"({"key":{"qid":"q1","docid":"d2","prompt_hash":"*"},"model_id":"other","raw_text":"Relevance: 1"})"
      "\n");
  BackendConfig c;
  c.kind = BackendKind::kReplay;
  c.model_id = "vlm";
  c.replay_path = path;
  ReplayBackend b(c);
  EXPECT_EQ(b.size(), 1u);
  Request r{Request::Kind::kCompletion, {"vlm", "q1", "d1", "abc"}, "prompt", "x"};
  EXPECT_EQ(b.send(r).raw_text, "Relevance: 85");
  r.key.docid = "d2";
  EXPECT_THROW(b.send(r), RequestError);
  // Through the batch path a miss is a placeholder, not an exception.
  auto out = execute(std::span(&r, 1), b, nullptr, 1);
  EXPECT_FALSE(out[0].ok());
}
