#pragma once

#include <atomic>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmas/cache.hpp"
#include "cmas/http_client.hpp"
#include "cmas/sha256.hpp"
#include "cmas/types.hpp"

namespace cmas {

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

inline ChatMessage user_message(std::string content) { return {"user", std::move(content)}; }
inline ChatMessage assistant_message(std::string content) {
    return {"assistant", std::move(content)};
}

struct SamplingParams {
    double temperature = 0.0;
    int n_samples = 1;
    int max_tokens = 1024;
    std::string model_id;
};

struct CompletionBatch {
    std::string prompt_digest;
    std::vector<std::string> samples;  // ordered, length = n_samples
    std::string backend_id;
};

/// Canonical request serialization. nlohmann::json (non-ordered) sorts object
/// keys, so the dump is byte-stable for a fixed request. max_tokens and
/// n_samples are intentionally excluded: samples are addressed individually
/// through the sample index.
inline std::string canonical_request(const std::string& backend_id,
                                     const std::vector<ChatMessage>& messages,
                                     const SamplingParams& params) {
    nlohmann::json req;
    req["backend"] = backend_id;
    req["model"] = params.model_id;
    req["temperature"] = params.temperature;
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"content", m.content}, {"role", m.role}});
    }
    req["messages"] = std::move(msgs);
    return req.dump();
}

inline std::string prompt_digest(const std::string& backend_id,
                                 const std::vector<ChatMessage>& messages,
                                 const SamplingParams& params) {
    return sha256_hex(canonical_request(backend_id, messages, params));
}

/// Cache entry key: canonical request serialization plus the sample index, so
/// n samples are n distinct cache entries.
inline std::string completion_cache_key(const std::string& canonical, int sample_index) {
    return sha256_hex(canonical + "#" + std::to_string(sample_index));
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual const std::string& id() const = 0;
    /// Produces one response per entry of sample_indices, aligned with it.
    virtual std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                              const SamplingParams& params,
                                              const std::vector<int>& sample_indices,
                                              const std::string& digest) = 0;
    virtual bool is_mock() const { return false; }
};

/// Deterministic scripted backend. Lookup order per request:
///   1. by_digest: prompt digest -> response (string, or array indexed by sample)
///   2. rules: first rule whose "contains" substrings all occur in the
///      concatenated message contents
///   3. queue: ordered entries consumed one per complete() call
///   4. default_response
/// No match anywhere -> ScriptingError naming the digest.
class MockBackend : public ChatBackend {
public:
    MockBackend() = default;

    void load_script_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open mock script " + path.string());
        nlohmann::json script;
        try {
            script = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("mock script " + path.string() + ": " + e.what());
        }
        const nlohmann::json by_digest = script.value("by_digest", nlohmann::json::object());
        for (const auto& [digest, entry] : by_digest.items()) {
            script_response(digest, to_samples(entry));
        }
        const nlohmann::json rules = script.value("rules", nlohmann::json::array());
        for (const auto& rule : rules) {
            std::vector<std::string> needles;
            if (rule.at("contains").is_string()) {
                needles.push_back(rule.at("contains").get<std::string>());
            } else {
                needles = rule.at("contains").get<std::vector<std::string>>();
            }
            add_rule(needles, to_samples(rule.at("respond")));
        }
        const nlohmann::json queue = script.value("queue", nlohmann::json::array());
        for (const auto& entry : queue) {
            push_queue(to_samples(entry));
        }
        if (script.contains("default_response")) {
            set_default(script.at("default_response").get<std::string>());
        }
    }

    static std::shared_ptr<MockBackend> from_script_file(const std::filesystem::path& path) {
        auto mock = std::make_shared<MockBackend>();
        mock->load_script_file(path);
        return mock;
    }

    const std::string& id() const override { return id_; }
    bool is_mock() const override { return true; }

    void script_response(const std::string& digest, std::vector<std::string> samples) {
        std::lock_guard lock(mutex_);
        by_digest_[digest] = std::move(samples);
    }
    void add_rule(std::vector<std::string> contains, std::vector<std::string> samples) {
        std::lock_guard lock(mutex_);
        rules_.push_back({std::move(contains), std::move(samples)});
    }
    void push_queue(std::vector<std::string> samples) {
        std::lock_guard lock(mutex_);
        queue_.push_back(std::move(samples));
    }
    void set_default(std::string response) {
        std::lock_guard lock(mutex_);
        default_response_ = std::move(response);
    }

    std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                      const SamplingParams& params,
                                      const std::vector<int>& sample_indices,
                                      const std::string& digest) override {
        std::lock_guard lock(mutex_);
        ++call_count_;
        const std::vector<std::string>* samples = nullptr;
        if (auto it = by_digest_.find(digest); it != by_digest_.end()) {
            samples = &it->second;
        }
        if (!samples) {
            std::string haystack;
            for (const auto& m : messages) {
                haystack += m.content;
                haystack.push_back('\n');
            }
            for (const auto& rule : rules_) {
                bool all = true;
                for (const auto& needle : rule.contains) {
                    if (haystack.find(needle) == std::string::npos) {
                        all = false;
                        break;
                    }
                }
                if (all) {
                    samples = &rule.samples;
                    break;
                }
            }
        }
        std::vector<std::string> popped;
        if (!samples && !queue_.empty()) {
            popped = std::move(queue_.front());
            queue_.pop_front();
            samples = &popped;
        }
        std::vector<std::string> out;
        out.reserve(sample_indices.size());
        for (int idx : sample_indices) {
            if (samples) {
                if (samples->size() == 1) {
                    out.push_back(samples->front());
                } else if (idx < static_cast<int>(samples->size())) {
                    out.push_back((*samples)[static_cast<std::size_t>(idx)]);
                } else {
                    throw ScriptingError("mock script entry for digest " + digest + " has " +
                                         std::to_string(samples->size()) +
                                         " samples, sample index " + std::to_string(idx) +
                                         " requested");
                }
            } else if (default_response_) {
                out.push_back(*default_response_);
            } else {
                throw ScriptingError("mock backend: no script entry for digest " + digest);
            }
        }
        return out;
    }

    int call_count() const {
        std::lock_guard lock(mutex_);
        return call_count_;
    }

private:
    static std::vector<std::string> to_samples(const nlohmann::json& entry) {
        if (entry.is_string()) return {entry.get<std::string>()};
        return entry.get<std::vector<std::string>>();
    }

    struct Rule {
        std::vector<std::string> contains;
        std::vector<std::string> samples;
    };

    std::string id_ = "mock";
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::vector<std::string>> by_digest_;
    std::vector<Rule> rules_;
    std::deque<std::vector<std::string>> queue_;
    std::optional<std::string> default_response_;
    int call_count_ = 0;
};

/// OpenAI-compatible chat-completions backend. API key comes from the
/// CMAS_API_KEY environment variable unless set explicitly.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(std::string base_url, std::string api_key = "")
        : base_url_(std::move(base_url)), api_key_(std::move(api_key)), id_("live:" + base_url_) {
        if (api_key_.empty()) {
            if (const char* env = std::getenv("CMAS_API_KEY")) api_key_ = env;
        }
    }

    const std::string& id() const override { return id_; }

    std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                      const SamplingParams& params,
                                      const std::vector<int>& sample_indices,
                                      const std::string& /*digest*/) override {
        nlohmann::json body;
        body["model"] = params.model_id;
        body["temperature"] = params.temperature;
        body["n"] = static_cast<int>(sample_indices.size());
        if (params.max_tokens > 0) body["max_tokens"] = params.max_tokens;
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        body["messages"] = std::move(msgs);

        nlohmann::json res =
            detail::post_json_with_retries(base_url_, "/chat/completions", body, api_key_);
        if (!res.contains("choices") || !res.at("choices").is_array()) {
            throw BackendError("chat completion response has no choices array");
        }
        const auto& choices = res.at("choices");
        std::vector<std::string> out;
        out.reserve(sample_indices.size());
        // Requesting n samples in one call: choices are split across the
        // missing sample indices in order.
        for (std::size_t i = 0; i < sample_indices.size(); ++i) {
            if (i >= choices.size()) {
                throw BackendError("backend returned " + std::to_string(choices.size()) +
                                   " choices, expected " + std::to_string(sample_indices.size()));
            }
            out.push_back(choices[i].at("message").at("content").get<std::string>());
        }
        return out;
    }

private:
    std::string base_url_;
    std::string api_key_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct GatewayStats {
    std::uint64_t samples_requested = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t backend_calls = 0;
};

/// Uniform sampling interface over a chat backend with a persistent response
/// cache. For a fixed cache state, complete_n is a pure function of its
/// arguments; repeated calls replay the cache bit-exactly.
class LlmGateway {
public:
    LlmGateway(std::shared_ptr<ChatBackend> backend, std::filesystem::path cache_dir)
        : backend_(std::move(backend)), cache_(std::move(cache_dir)) {}

    CompletionBatch complete_n(const std::vector<ChatMessage>& messages,
                               const SamplingParams& params) {
        if (messages.empty()) throw Error("complete_n: no messages");
        if (params.n_samples < 1) throw Error("complete_n: n_samples must be >= 1");
        for (const auto& m : messages) {
            if (m.content.empty() && m.role != "system") {
                throw Error("complete_n: empty " + m.role + " message");
            }
        }

        std::string canonical = canonical_request(backend_->id(), messages, params);
        CompletionBatch batch;
        batch.prompt_digest = sha256_hex(canonical);
        batch.backend_id = backend_->id();

        // At temperature 0 the mock backend produces identical samples, so a
        // single distinct sample is fetched and replicated.
        int distinct = params.n_samples;
        if (backend_->is_mock() && params.temperature == 0.0) distinct = 1;

        std::vector<std::string> samples(static_cast<std::size_t>(distinct));
        std::vector<int> missing;
        for (int i = 0; i < distinct; ++i) {
            samples_requested_.fetch_add(1);
            if (auto hit = cache_.get(completion_cache_key(canonical, i))) {
                samples[static_cast<std::size_t>(i)] = *hit;
                cache_hits_.fetch_add(1);
            } else {
                missing.push_back(i);
            }
        }
        if (!missing.empty()) {
            backend_calls_.fetch_add(1);
            auto fresh = backend_->complete(messages, params, missing, batch.prompt_digest);
            for (std::size_t j = 0; j < missing.size(); ++j) {
                int idx = missing[j];
                samples[static_cast<std::size_t>(idx)] = fresh[j];
                cache_.put(completion_cache_key(canonical, idx), fresh[j],
                           {{"prompt_digest", batch.prompt_digest},
                            {"sample_index", idx},
                            {"backend_id", backend_->id()},
                            {"model_id", params.model_id},
                            {"temperature", params.temperature}});
            }
        }
        batch.samples.reserve(static_cast<std::size_t>(params.n_samples));
        for (int i = 0; i < params.n_samples; ++i) {
            batch.samples.push_back(samples[static_cast<std::size_t>(std::min(i, distinct - 1))]);
        }
        return batch;
    }

    GatewayStats stats() const {
        return {samples_requested_.load(), cache_hits_.load(), backend_calls_.load()};
    }

    std::string digest_for(const std::vector<ChatMessage>& messages,
                           const SamplingParams& params) const {
        return sha256_hex(canonical_request(backend_->id(), messages, params));
    }

    ChatBackend& backend() { return *backend_; }
    const FileCache& cache() const { return cache_; }

private:
    std::shared_ptr<ChatBackend> backend_;
    FileCache cache_;
    std::atomic<std::uint64_t> samples_requested_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::uint64_t> backend_calls_{0};
};

}  // namespace cmas
