#include "suri/llm_gateway.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

namespace fs = std::filesystem;
using suri::ErrorCode;
using suri::Gateway;
using suri::LlmRequest;
using suri::MockProvider;
using Status = suri::ProviderReply::Status;

namespace {

LlmRequest req(std::string prompt) { return {"m", std::move(prompt), 0.0, 1.0, 64}; }

Gateway::Options no_sleep(std::vector<std::chrono::milliseconds>* delays = nullptr) {
  Gateway::Options o;
  o.sleep = [delays](std::chrono::milliseconds d) {
    if (delays) delays->push_back(d);
  };
  return o;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("suri_gw_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const suri::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kDomain;
}

}  // namespace

TEST(LlmRequest, ValidationRejectsBadFields) {
  EXPECT_EQ(code_of([] { req("").validate(); }), ErrorCode::kInvalidArgument);
  auto r = req("x");
  r.temperature = -0.1;
  EXPECT_EQ(code_of([&] { r.validate(); }), ErrorCode::kInvalidArgument);
  r = req("x");
  r.top_p = 1.5;
  EXPECT_EQ(code_of([&] { r.validate(); }), ErrorCode::kInvalidArgument);
  r = req("x");
  r.max_tokens = 0;
  EXPECT_EQ(code_of([&] { r.validate(); }), ErrorCode::kInvalidArgument);
  r = req("x");
  r.top_p = 0.0;  // deterministic corruption settings
  EXPECT_NO_THROW(r.validate());
}

TEST(LlmRequest, CacheKeyChangesWithEveryField) {
  const auto base = LlmRequest{"model-a", "prompt", 0.6, 0.9, 100};
  std::set<std::string> keys{base.cache_key()};
  auto r = base;
  r.model = "model-b";
  keys.insert(r.cache_key());
  r = base;
  r.prompt = "prompt ";
  keys.insert(r.cache_key());
  r = base;
  r.temperature = 0.7;
  keys.insert(r.cache_key());
  r = base;
  r.top_p = 0.95;
  keys.insert(r.cache_key());
  r = base;
  r.max_tokens = 101;
  keys.insert(r.cache_key());
  EXPECT_EQ(keys.size(), 6u);
  EXPECT_EQ(base.cache_key(), (LlmRequest{"model-a", "prompt", 0.6, 0.9, 100}).cache_key());
  EXPECT_EQ(base.cache_key().size(), 32u);
}

TEST(LlmRequest, CacheKeyPropertyOverRandomPerturbations) {
  std::mt19937_64 rng(7);
  std::set<std::string> keys;
  std::set<std::string> canon;
  for (int i = 0; i < 2000; ++i) {
    LlmRequest r{"m" + std::to_string(rng() % 5), "p" + std::to_string(rng() % 50), (rng() % 3) * 0.3,
                 (rng() % 4 + 1) * 0.25, static_cast<int>(rng() % 4 + 1)};
    canon.insert(r.to_json().dump());
    keys.insert(r.cache_key());
  }
  EXPECT_EQ(keys.size(), canon.size());
}

TEST(Gateway, MockReturnsCannedText) {
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{{"hello", "world"}, {"", "fallthrough"}});
  Gateway gw(mock, no_sleep());
  auto r = gw.complete(req("say hello"));
  EXPECT_EQ(r.text, "world");
  EXPECT_EQ(r.provider, "mock");
  EXPECT_FALSE(r.cached);
  EXPECT_EQ(gw.complete(req("other")).text, "fallthrough");
}

TEST(Gateway, SecondIdenticalRequestIsCachedWithoutProviderCall) {
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "answer");
  Gateway gw(mock, no_sleep());
  auto a = gw.complete(req("q"));
  auto b = gw.complete(req("q"));
  EXPECT_FALSE(a.cached);
  EXPECT_TRUE(b.cached);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(mock->calls(), 1);
  auto c = req("q");
  c.temperature = 0.5;
  gw.complete(c);
  EXPECT_EQ(mock->calls(), 2);
}

TEST(Gateway, DiskCacheSurvivesNewClient) {
  const auto dir = fresh_dir("disk");
  auto opts = no_sleep();
  opts.cache_dir = dir;
  {
    auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "persisted \xe2\x86\x92 text");
    Gateway gw(mock, opts);
    gw.complete(req("q"));
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    EXPECT_EQ(e.path().filename().string(), req("q").cache_key() + ".json");
    std::ifstream in(e.path());
    auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j["request"]["prompt"], "q");
    EXPECT_EQ(j["response"]["text"], "persisted \xe2\x86\x92 text");
  }
  EXPECT_EQ(files, 1u);

  auto mock2 = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "different");
  Gateway gw2(mock2, opts);
  auto r = gw2.complete(req("q"));
  EXPECT_TRUE(r.cached);
  EXPECT_EQ(r.text, "persisted \xe2\x86\x92 text");
  EXPECT_EQ(mock2->calls(), 0);
  fs::remove_all(dir);
}

TEST(Gateway, CorruptCacheEntryIsRefetched) {
  const auto dir = fresh_dir("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / (req("q").cache_key() + ".json")) << "{not json";
  auto opts = no_sleep();
  opts.cache_dir = dir;
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "fresh");
  Gateway gw(mock, opts);
  EXPECT_EQ(gw.complete(req("q")).text, "fresh");
  EXPECT_EQ(mock->calls(), 1);
  fs::remove_all(dir);
}

TEST(Gateway, RefusalSentinelRaisesRefusalAndIsNotCached) {
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{{"bad", MockProvider::kRefusalSentinel}});
  Gateway gw(mock, no_sleep());
  EXPECT_EQ(code_of([&] { gw.complete(req("bad thing")); }), ErrorCode::kRefusal);
  EXPECT_EQ(code_of([&] { gw.complete(req("bad thing")); }), ErrorCode::kRefusal);
  EXPECT_EQ(mock->calls(), 2);
}

TEST(Gateway, TransientFailuresRetriedWithExponentialBackoff) {
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "ok");
  mock->script_failures({Status::kRateLimited, Status::kServerError, Status::kNetworkError});
  std::vector<std::chrono::milliseconds> delays;
  auto opts = no_sleep(&delays);
  opts.retry.base_delay = std::chrono::milliseconds(100);
  Gateway gw(mock, opts);
  EXPECT_EQ(gw.complete(req("q")).text, "ok");
  EXPECT_EQ(mock->calls(), 4);
  ASSERT_EQ(delays.size(), 3u);
  EXPECT_EQ(delays[0].count(), 100);
  EXPECT_EQ(delays[1].count(), 200);
  EXPECT_EQ(delays[2].count(), 400);
}

TEST(Gateway, RetriesExhaustedMapToRateLimitedOrTransport) {
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "ok");
  auto opts = no_sleep();
  opts.retry.max_attempts = 3;
  Gateway gw(mock, opts);
  mock->script_failures({Status::kRateLimited, Status::kRateLimited, Status::kRateLimited});
  EXPECT_EQ(code_of([&] { gw.complete(req("a")); }), ErrorCode::kRateLimited);
  EXPECT_EQ(mock->calls(), 3);
  mock->script_failures({Status::kServerError, Status::kServerError, Status::kServerError});
  EXPECT_EQ(code_of([&] { gw.complete(req("b")); }), ErrorCode::kTransport);
  mock->script_failures({Status::kAuth});
  EXPECT_EQ(code_of([&] { gw.complete(req("c")); }), ErrorCode::kAuth);
  EXPECT_EQ(mock->calls(), 7);  // auth is not retried
}

TEST(RetryPolicy, DelayCapped) {
  suri::RetryPolicy p;
  p.base_delay = std::chrono::milliseconds(1000);
  p.max_delay = std::chrono::milliseconds(3000);
  EXPECT_EQ(p.delay_before(1).count(), 1000);
  EXPECT_EQ(p.delay_before(2).count(), 2000);
  EXPECT_EQ(p.delay_before(3).count(), 3000);
  EXPECT_EQ(p.delay_before(10).count(), 3000);
}

TEST(Batch, SequentialWhenOneInFlight) {
  auto mock = std::make_shared<MockProvider>(
      std::vector<MockProvider::Rule>{{"one", "1"}, {"two", "2"}, {"three", "3"}});
  mock->set_latency(std::chrono::milliseconds(5));
  Gateway gw(mock, no_sleep());
  auto out = gw.batch_complete({req("one"), req("two"), req("three")}, 1);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].response->text, "1");
  EXPECT_EQ(out[1].response->text, "2");
  EXPECT_EQ(out[2].response->text, "3");
  EXPECT_EQ(mock->peak_in_flight(), 1);
}

TEST(Batch, FailureRecordedAtItsIndex) {
  auto mock = std::make_shared<MockProvider>(
      std::vector<MockProvider::Rule>{{"refuse", MockProvider::kRefusalSentinel}, {"", "fine"}});
  Gateway gw(mock, no_sleep());
  auto out = gw.batch_complete({req("a"), req("refuse me"), req("c")}, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_TRUE(out[0].ok());
  EXPECT_FALSE(out[1].ok());
  EXPECT_EQ(out[1].error, ErrorCode::kRefusal);
  EXPECT_TRUE(out[2].ok());
}

TEST(Batch, EmptyListGivesEmptyResult) {
  Gateway gw(std::make_shared<MockProvider>(), no_sleep());
  EXPECT_TRUE(gw.batch_complete({}, 4).empty());
  EXPECT_EQ(code_of([&] { gw.batch_complete({}, 0); }), ErrorCode::kInvalidArgument);
}

TEST(Batch, OrderAndConcurrencyBoundProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto mock = std::make_shared<MockProvider>();
    const int n = static_cast<int>(rng() % 30);
    std::vector<LlmRequest> reqs;
    for (int i = 0; i < n; ++i) {
      mock->add_rule("item-" + std::to_string(i) + "|", "out-" + std::to_string(i));
      reqs.push_back(req("item-" + std::to_string(i) + "|"));
    }
    mock->set_latency(std::chrono::milliseconds(rng() % 3));
    const std::size_t cap = rng() % 6 + 1;
    Gateway gw(mock, no_sleep());
    auto out = gw.batch_complete(reqs, cap);
    ASSERT_EQ(out.size(), reqs.size());
    for (int i = 0; i < n; ++i) EXPECT_EQ(out[i].response->text, "out-" + std::to_string(i));
    EXPECT_LE(mock->peak_in_flight(), static_cast<int>(cap));
  }
}

TEST(Batch, ConcurrentDuplicateRequestsShareDiskCache) {
  const auto dir = fresh_dir("dupes");
  auto opts = no_sleep();
  opts.cache_dir = dir;
  auto mock = std::make_shared<MockProvider>(std::vector<MockProvider::Rule>{}, "same");
  Gateway gw(mock, opts);
  std::vector<LlmRequest> reqs(16, req("dup"));
  auto out = gw.batch_complete(reqs, 8);
  for (const auto& o : out) EXPECT_EQ(o.response->text, "same");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);  // no leftover temp files
  fs::remove_all(dir);
}

TEST(MockProvider, LoadsRulesFromFile) {
  const auto dir = fresh_dir("mockfile");
  fs::create_directories(dir);
  std::ofstream(dir / "rules.json") << R"({"rules":[{"contains":"x","response":"X"}],"default":"D"})";
  Gateway gw(MockProvider::from_file(dir / "rules.json"), no_sleep());
  EXPECT_EQ(gw.complete(req("has x")).text, "X");
  EXPECT_EQ(gw.complete(req("nothing")).text, "D");
  fs::remove_all(dir);
}

// --- HTTP adapters against a local server ---------------------------------

namespace {

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  nlohmann::json last_body;
  httplib::Headers last_headers;
  std::mutex mu;

  LocalServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  void record(const httplib::Request& r) {
    std::lock_guard lock(mu);
    last_body = nlohmann::json::parse(r.body);
    last_headers = r.headers;
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

suri::HttpProvider::Config http_cfg(const std::string& url, suri::HttpProvider::Style style) {
  suri::HttpProvider::Config c;
  c.base_url = url;
  c.style = style;
  c.api_key_env = "SURI_TEST_KEY";
  c.timeout = std::chrono::seconds(5);
  return c;
}

}  // namespace

TEST(HttpProvider, OpenAiShapeRoundTrip) {
  ::setenv("SURI_TEST_KEY", "sk-test", 1);
  LocalServer s;
  s.server.Post("/prefix/v1/chat/completions", [&](const httplib::Request& r, httplib::Response& res) {
    s.record(r);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"hi there"},"finish_reason":"stop"}]})",
                    "application/json");
  });
  s.start();
  auto p = std::make_shared<suri::HttpProvider>(http_cfg(s.url() + "/prefix/", suri::HttpProvider::Style::kOpenAI));
  Gateway gw(p, no_sleep());
  LlmRequest r{"gpt-x", "hello", 0.6, 0.9, 32};
  auto out = gw.complete(r);
  EXPECT_EQ(out.text, "hi there");
  EXPECT_EQ(out.provider, "openai");
  EXPECT_EQ(s.last_body["model"], "gpt-x");
  EXPECT_EQ(s.last_body["messages"][0]["content"], "hello");
  EXPECT_DOUBLE_EQ(s.last_body["top_p"].get<double>(), 0.9);
  EXPECT_EQ(s.last_body["max_tokens"], 32);
  auto auth = s.last_headers.find("Authorization");
  ASSERT_NE(auth, s.last_headers.end());
  EXPECT_EQ(auth->second, "Bearer sk-test");
}

TEST(HttpProvider, AnthropicShapeRoundTrip) {
  ::setenv("SURI_TEST_KEY", "ak-test", 1);
  LocalServer s;
  s.server.Post("/v1/messages", [&](const httplib::Request& r, httplib::Response& res) {
    s.record(r);
    res.set_content(R"({"content":[{"type":"text","text":"part one "},{"type":"text","text":"part two"}],
                        "stop_reason":"end_turn"})",
                    "application/json");
  });
  s.start();
  auto p = std::make_shared<suri::HttpProvider>(http_cfg(s.url(), suri::HttpProvider::Style::kAnthropic));
  Gateway gw(p, no_sleep());
  EXPECT_EQ(gw.complete(req("q")).text, "part one part two");
  EXPECT_EQ(s.last_headers.find("x-api-key")->second, "ak-test");
  EXPECT_NE(s.last_headers.find("anthropic-version"), s.last_headers.end());
}

TEST(HttpProvider, StatusCodesMapToErrors) {
  ::setenv("SURI_TEST_KEY", "k", 1);
  LocalServer s;
  std::atomic<int> hits{0};
  s.server.Post("/v1/chat/completions", [&](const httplib::Request& r, httplib::Response& res) {
    ++hits;
    const auto prompt = nlohmann::json::parse(r.body)["messages"][0]["content"].get<std::string>();
    if (prompt == "auth") res.status = 401;
    else if (prompt == "slow") res.status = 429;
    else if (prompt == "boom") res.status = 503;
    else if (prompt == "bad") res.status = 400;
    else if (prompt == "refuse")
      res.set_content(R"({"choices":[{"message":{"content":null,"refusal":"no"},"finish_reason":"stop"}]})",
                      "application/json");
    else if (prompt == "filtered")
      res.set_content(R"({"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]})",
                      "application/json");
    else res.set_content("not json", "text/plain");
  });
  s.start();
  auto opts = no_sleep();
  opts.retry.max_attempts = 2;
  Gateway gw(std::make_shared<suri::HttpProvider>(http_cfg(s.url(), suri::HttpProvider::Style::kOpenAI)), opts);
  EXPECT_EQ(code_of([&] { gw.complete(req("auth")); }), ErrorCode::kAuth);
  EXPECT_EQ(hits.load(), 1);
  EXPECT_EQ(code_of([&] { gw.complete(req("slow")); }), ErrorCode::kRateLimited);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(code_of([&] { gw.complete(req("boom")); }), ErrorCode::kTransport);
  EXPECT_EQ(code_of([&] { gw.complete(req("bad")); }), ErrorCode::kTransport);
  EXPECT_EQ(code_of([&] { gw.complete(req("refuse")); }), ErrorCode::kRefusal);
  EXPECT_EQ(code_of([&] { gw.complete(req("filtered")); }), ErrorCode::kRefusal);
  EXPECT_EQ(code_of([&] { gw.complete(req("garbage")); }), ErrorCode::kTransport);
}

TEST(HttpProvider, MissingKeyIsAuthErrorWithoutNetwork) {
  ::unsetenv("SURI_TEST_MISSING_KEY");
  auto cfg = http_cfg("http://127.0.0.1:1", suri::HttpProvider::Style::kOpenAI);
  cfg.api_key_env = "SURI_TEST_MISSING_KEY";
  Gateway gw(std::make_shared<suri::HttpProvider>(cfg), no_sleep());
  EXPECT_EQ(code_of([&] { gw.complete(req("q")); }), ErrorCode::kAuth);
}

TEST(HttpProvider, UnreachableHostIsTransportError) {
  ::setenv("SURI_TEST_KEY", "k", 1);
  auto cfg = http_cfg("http://127.0.0.1:1", suri::HttpProvider::Style::kOpenAI);
  auto opts = no_sleep();
  opts.retry.max_attempts = 2;
  Gateway gw(std::make_shared<suri::HttpProvider>(cfg), opts);
  EXPECT_EQ(code_of([&] { gw.complete(req("q")); }), ErrorCode::kTransport);
}
