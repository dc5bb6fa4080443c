#pragma once

// Client for external completion APIs: request validation, content-addressed
// response cache (memory + optional on-disk directory), retries with
// exponential backoff, bounded concurrent batches, and an offline mock.
//
// Credentials are read from environment variables only.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "suri/error.hpp"

namespace suri {

struct LlmRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 4096;

  void validate() const {
    if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "empty prompt");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
    // top_p = 0 is accepted: the corruption step runs with top_p=0.0.
    if (!(top_p >= 0.0 && top_p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "top_p must be in [0, 1]");
    if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"model", model},
            {"prompt", prompt},
            {"temperature", temperature},
            {"top_p", top_p},
            {"max_tokens", max_tokens}};
  }

  static LlmRequest from_json(const nlohmann::json& j) {
    LlmRequest r;
    r.model = j.at("model").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.top_p = j.at("top_p").get<double>();
    r.max_tokens = j.at("max_tokens").get<int>();
    return r;
  }

  friend bool operator==(const LlmRequest&, const LlmRequest&) = default;

  /// 128-bit FNV-1a over the canonical JSON form (keys sorted), as 32 hex
  /// characters. Every field participates.
  [[nodiscard]] std::string cache_key() const {
    const std::string canon = to_json().dump();
    auto fnv = [&](std::uint64_t h) {
      for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001B3ULL;
      }
      return h;
    };
    const std::uint64_t a = fnv(0xCBF29CE484222325ULL);
    const std::uint64_t b = fnv(0x84222325CBF29CE4ULL ^ canon.size());
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(a),
                  static_cast<unsigned long long>(b));
    return buf;
  }
};

struct LlmResponse {
  std::string text;
  std::string provider;
  bool cached = false;
};

/// Outcome of one provider attempt, before retry policy is applied.
struct ProviderReply {
  enum class Status { kOk, kRefusal, kAuth, kRateLimited, kServerError, kNetworkError, kBadRequest };
  Status status = Status::kOk;
  std::string text;
  std::string detail;
};

class Provider {
 public:
  virtual ~Provider() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  virtual ProviderReply send(const LlmRequest& req) = 0;
};

/// Offline provider. Rules are checked in order; the first whose `contains`
/// substring occurs in the prompt supplies the response. A response equal to
/// kRefusalSentinel is reported as a refusal.
class MockProvider : public Provider {
 public:
  static constexpr const char* kRefusalSentinel = "<<REFUSAL>>";

  struct Rule {
    std::string contains;
    std::string response;
  };

  MockProvider() = default;
  explicit MockProvider(std::vector<Rule> rules, std::optional<std::string> fallback = std::nullopt)
      : rules_(std::move(rules)), fallback_(std::move(fallback)) {}

  /// {"rules": [{"contains": ..., "response": ...}], "default": ...}
  static std::shared_ptr<MockProvider> from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open mock responses " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
    }
    std::vector<Rule> rules;
    for (const auto& r : j.value("rules", nlohmann::json::array())) {
      rules.push_back({r.at("contains").get<std::string>(), r.at("response").get<std::string>()});
    }
    std::optional<std::string> fallback;
    if (j.contains("default") && !j["default"].is_null()) fallback = j["default"].get<std::string>();
    return std::make_shared<MockProvider>(std::move(rules), std::move(fallback));
  }

  void add_rule(std::string contains, std::string response) {
    std::lock_guard lock(mu_);
    rules_.push_back({std::move(contains), std::move(response)});
  }

  /// Statuses returned (in order) by the next calls, before normal replies.
  void script_failures(std::vector<ProviderReply::Status> statuses) {
    std::lock_guard lock(mu_);
    for (auto s : statuses) scripted_.push_back(s);
  }

  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

  [[nodiscard]] std::string name() const override { return "mock"; }

  ProviderReply send(const LlmRequest& req) override {
    ++calls_;
    const int now = ++in_flight_;
    for (int peak = peak_in_flight_.load(); now > peak && !peak_in_flight_.compare_exchange_weak(peak, now);) {
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    ProviderReply reply = respond(req);
    --in_flight_;
    return reply;
  }

  [[nodiscard]] int calls() const { return calls_.load(); }
  [[nodiscard]] int peak_in_flight() const { return peak_in_flight_.load(); }

 private:
  ProviderReply respond(const LlmRequest& req) {
    std::lock_guard lock(mu_);
    if (!scripted_.empty()) {
      const auto s = scripted_.front();
      scripted_.erase(scripted_.begin());
      if (s != ProviderReply::Status::kOk) return {s, "", "scripted failure"};
    }
    for (const auto& r : rules_) {
      if (req.prompt.find(r.contains) != std::string::npos) return make(r.response);
    }
    if (fallback_) return make(*fallback_);
    return {ProviderReply::Status::kBadRequest, "", "no mock rule matches prompt"};
  }

  static ProviderReply make(const std::string& text) {
    if (text == kRefusalSentinel || text.empty()) return {ProviderReply::Status::kRefusal, "", "refused"};
    return {ProviderReply::Status::kOk, text, ""};
  }

  std::mutex mu_;
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::vector<ProviderReply::Status> scripted_;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
};

/// JSON-over-HTTP provider. Two request shapes are supported:
///   openai    POST {base}/v1/chat/completions, bearer token
///   anthropic POST {base}/v1/messages, x-api-key header
class HttpProvider : public Provider {
 public:
  enum class Style { kOpenAI, kAnthropic };

  struct Config {
    std::string base_url = "https://api.openai.com";
    Style style = Style::kOpenAI;
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{600};
  };

  explicit HttpProvider(Config cfg) : cfg_(std::move(cfg)) {
    // Split "scheme://host[:port]/prefix" into client origin and path prefix.
    const auto scheme_end = cfg_.base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto slash = cfg_.base_url.find('/', host_start);
    origin_ = cfg_.base_url.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : cfg_.base_url.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  static Style parse_style(const std::string& s) {
    if (s == "openai") return Style::kOpenAI;
    if (s == "anthropic") return Style::kAnthropic;
    throw Error(ErrorCode::kInvalidArgument, "unknown provider style: " + s);
  }

  [[nodiscard]] std::string name() const override {
    return cfg_.style == Style::kOpenAI ? "openai" : "anthropic";
  }

  /// Request body for `req` in this provider's shape.
  [[nodiscard]] nlohmann::json request_body(const LlmRequest& req) const {
    nlohmann::json body = {{"model", req.model},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
                           {"temperature", req.temperature},
                           {"top_p", req.top_p},
                           {"max_tokens", req.max_tokens}};
    return body;
  }

  ProviderReply send(const LlmRequest& req) override {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      return {ProviderReply::Status::kAuth, "", "environment variable " + cfg_.api_key_env + " is not set"};
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    httplib::Headers headers;
    std::string path;
    if (cfg_.style == Style::kOpenAI) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
      path = prefix_ + "/v1/chat/completions";
    } else {
      headers.emplace("x-api-key", key);
      headers.emplace("anthropic-version", "2023-06-01");
      path = prefix_ + "/v1/messages";
    }
    auto res = client.Post(path, headers, request_body(req).dump(), "application/json");
    if (!res) return {ProviderReply::Status::kNetworkError, "", httplib::to_string(res.error())};
    const int code = res->status;
    if (code == 401 || code == 403) return {ProviderReply::Status::kAuth, "", res->body};
    if (code == 429) return {ProviderReply::Status::kRateLimited, "", res->body};
    if (code >= 500) return {ProviderReply::Status::kServerError, "", res->body};
    if (code != 200) return {ProviderReply::Status::kBadRequest, "", "HTTP " + std::to_string(code) + ": " + res->body};
    return parse_body(res->body);
  }

  [[nodiscard]] ProviderReply parse_body(const std::string& body) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return {ProviderReply::Status::kBadRequest, "", std::string("unparseable body: ") + e.what()};
    }
    std::string text;
    bool refused = false;
    try {
      if (cfg_.style == Style::kOpenAI) {
        const auto& choice = j.at("choices").at(0);
        const auto& msg = choice.at("message");
        if (msg.contains("refusal") && !msg["refusal"].is_null()) refused = true;
        if (choice.value("finish_reason", std::string{}) == "content_filter") refused = true;
        if (msg.contains("content") && msg["content"].is_string()) text = msg["content"].get<std::string>();
      } else {
        if (j.value("stop_reason", std::string{}) == "refusal") refused = true;
        for (const auto& block : j.at("content")) {
          if (block.value("type", std::string{}) == "text") text += block.at("text").get<std::string>();
        }
      }
    } catch (const nlohmann::json::exception& e) {
      return {ProviderReply::Status::kBadRequest, "", std::string("unexpected body shape: ") + e.what()};
    }
    if (refused || text.empty()) return {ProviderReply::Status::kRefusal, "", "provider refused"};
    return {ProviderReply::Status::kOk, std::move(text), ""};
  }

 private:
  Config cfg_;
  std::string origin_;
  std::string prefix_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{30000};

  [[nodiscard]] std::chrono::milliseconds delay_before(int attempt) const {
    // attempt is the 1-based attempt that just failed.
    double d = static_cast<double>(base_delay.count());
    for (int i = 1; i < attempt; ++i) d *= multiplier;
    return std::chrono::milliseconds(static_cast<long long>(std::min(d, static_cast<double>(max_delay.count()))));
  }
};

struct BatchItem {
  std::optional<LlmResponse> response;
  std::optional<ErrorCode> error;
  std::string message;

  [[nodiscard]] bool ok() const { return response.has_value(); }
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  struct Options {
    std::optional<std::filesystem::path> cache_dir;
    RetryPolicy retry;
    Sleeper sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  };

  explicit Gateway(std::shared_ptr<Provider> provider) : Gateway(std::move(provider), Options{}) {}

  Gateway(std::shared_ptr<Provider> provider, Options opts) : provider_(std::move(provider)), opts_(std::move(opts)) {
    if (opts_.cache_dir) std::filesystem::create_directories(*opts_.cache_dir);
  }

  LlmResponse complete(const LlmRequest& req) {
    req.validate();
    const std::string key = req.cache_key();
    if (auto hit = lookup(key, req)) return *hit;

    for (int attempt = 1;; ++attempt) {
      ProviderReply r = provider_->send(req);
      using S = ProviderReply::Status;
      switch (r.status) {
        case S::kOk: {
          LlmResponse resp{std::move(r.text), provider_->name(), false};
          store(key, req, resp);
          return resp;
        }
        case S::kRefusal: throw Error(ErrorCode::kRefusal, r.detail);
        case S::kAuth: throw Error(ErrorCode::kAuth, r.detail);
        case S::kBadRequest: throw Error(ErrorCode::kTransport, r.detail);
        case S::kRateLimited:
        case S::kServerError:
        case S::kNetworkError:
          if (attempt >= opts_.retry.max_attempts) {
            throw Error(r.status == S::kRateLimited ? ErrorCode::kRateLimited : ErrorCode::kTransport,
                        "giving up after " + std::to_string(attempt) + " attempts: " + r.detail);
          }
          opts_.sleep(opts_.retry.delay_before(attempt));
          break;
      }
    }
  }

  /// Results are index-aligned with `reqs`; per-item failures are recorded,
  /// never thrown. At most `max_in_flight` requests run at once.
  std::vector<BatchItem> batch_complete(const std::vector<LlmRequest>& reqs, std::size_t max_in_flight) {
    if (max_in_flight == 0) throw Error(ErrorCode::kInvalidArgument, "max_in_flight must be positive");
    std::vector<BatchItem> out(reqs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < reqs.size(); i = next++) {
        try {
          out[i].response = complete(reqs[i]);
        } catch (const Error& e) {
          out[i].error = e.code();
          out[i].message = e.what();
        }
      }
    };
    const std::size_t workers = std::min(max_in_flight, reqs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    if (workers > 0) worker();
    for (auto& th : pool) th.join();
    return out;
  }

  [[nodiscard]] const Provider& provider() const { return *provider_; }

 private:
  std::optional<LlmResponse> lookup(const std::string& key, const LlmRequest& req) {
    {
      std::lock_guard lock(mu_);
      if (auto it = memory_.find(key); it != memory_.end()) return LlmResponse{it->second.text, it->second.provider, true};
    }
    if (!opts_.cache_dir) return std::nullopt;
    const auto path = *opts_.cache_dir / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
      nlohmann::json j;
      in >> j;
      if (!(LlmRequest::from_json(j.at("request")) == req)) return std::nullopt;
      LlmResponse r{j.at("response").at("text").get<std::string>(), j.at("response").at("provider").get<std::string>(),
                    true};
      std::lock_guard lock(mu_);
      memory_[key] = r;
      return r;
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // corrupt entry: refetch and overwrite
    }
  }

  void store(const std::string& key, const LlmRequest& req, const LlmResponse& resp) {
    {
      std::lock_guard lock(mu_);
      memory_[key] = resp;
    }
    if (!opts_.cache_dir) return;
    const nlohmann::json j = {{"request", req.to_json()},
                              {"response", {{"text", resp.text}, {"provider", resp.provider}}}};
    const auto final_path = *opts_.cache_dir / (key + ".json");
    std::ostringstream tmp_name;
    tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
             << tmp_counter_++;
    const auto tmp_path = *opts_.cache_dir / tmp_name.str();
    {
      std::ofstream out(tmp_path, std::ios::binary);
      if (!out) throw Error(ErrorCode::kIo, "cannot write cache entry " + tmp_path.string());
      out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp_path, final_path);
  }

  std::shared_ptr<Provider> provider_;
  Options opts_;
  std::mutex mu_;
  std::map<std::string, LlmResponse> memory_;
  std::atomic<std::uint64_t> tmp_counter_{0};
};

}  // namespace suri
