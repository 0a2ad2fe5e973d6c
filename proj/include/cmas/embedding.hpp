#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmas/cache.hpp"
#include "cmas/http_client.hpp"
#include "cmas/sha256.hpp"
#include "cmas/types.hpp"

namespace cmas {

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw Error("cosine: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double euclidean(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw Error("euclidean: dimension mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double d = a.values[i] - b.values[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

/// Top-min(K, |pool|) ids by descending cosine similarity to the query.
/// Ties break by ascending id so results are reproducible.
inline std::vector<std::string> knn(const EmbeddingVector& query,
                                    const std::vector<std::pair<std::string, EmbeddingVector>>& pool,
                                    int k) {
    if (pool.empty()) throw Error("knn: empty pool");
    if (k < 1) throw Error("knn: K must be positive");
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(pool.size());
    for (const auto& [id, vec] : pool) scored.emplace_back(cosine(query, vec), &id);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::vector<std::string> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(*scored[i].second);
    return out;
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual const std::string& id() const = 0;
    virtual EmbeddingVector embed(const std::string& text) = 0;
};

/// Offline provider: a seeded hash of the text expanded to a fixed-dim unit
/// vector. Deterministic, and distinct texts get distinct vectors.
class MockEmbeddingProvider : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dim = 64, std::uint64_t seed = 0)
        : dim_(dim), seed_(seed),
          id_("mock-embed:d" + std::to_string(dim) + ":s" + std::to_string(seed)) {
        if (dim_ == 0) throw Error("mock embedder: dim must be positive");
    }

    const std::string& id() const override { return id_; }

    EmbeddingVector embed(const std::string& text) override {
        EmbeddingVector v;
        v.values.reserve(dim_);
        // 64 hex chars per digest -> 8 values of 8 hex chars each.
        for (std::size_t block = 0; v.values.size() < dim_; ++block) {
            std::string digest = sha256_hex(std::to_string(seed_) + "\x1f" + text + "\x1f" +
                                            std::to_string(block));
            for (std::size_t i = 0; i + 8 <= digest.size() && v.values.size() < dim_; i += 8) {
                std::uint32_t bits = static_cast<std::uint32_t>(
                    std::stoul(digest.substr(i, 8), nullptr, 16));
                v.values.push_back(static_cast<double>(bits) / 4294967295.0 * 2.0 - 1.0);
            }
        }
        double norm = 0;
        for (double x : v.values) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) v.values[0] = 1.0;
        else for (double& x : v.values) x /= norm;
        return v;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    std::string id_;
};

/// OpenAI-compatible embeddings endpoint: {model, input: [text]} ->
/// data[i].embedding.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model, std::string api_key = "")
        : base_url_(std::move(base_url)), model_(std::move(model)),
          api_key_(std::move(api_key)), id_("embed:" + base_url_ + ":" + model_) {
        if (api_key_.empty()) {
            if (const char* env = std::getenv("CMAS_API_KEY")) api_key_ = env;
        }
    }

    const std::string& id() const override { return id_; }

    EmbeddingVector embed(const std::string& text) override {
        nlohmann::json body = {{"model", model_}, {"input", nlohmann::json::array({text})}};
        nlohmann::json res = detail::post_json_with_retries(base_url_, "/embeddings", body, api_key_);
        if (!res.contains("data") || res.at("data").empty()) {
            throw BackendError("embedding response has no data");
        }
        EmbeddingVector v;
        v.values = res.at("data")[0].at("embedding").get<std::vector<double>>();
        if (v.values.empty()) throw BackendError("embedding response is empty");
        return v;
    }

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Caching service
// ---------------------------------------------------------------------------

struct EmbeddingStats {
    std::uint64_t requested = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t computed = 0;
};

/// Embedding provision with the same persistent-cache contract as chat
/// completions: one JSON file per entry keyed by a digest of the request.
class EmbeddingService {
public:
    EmbeddingService(std::shared_ptr<EmbeddingProvider> provider, std::filesystem::path cache_dir)
        : provider_(std::move(provider)), cache_(std::move(cache_dir)) {}

    EmbeddingVector embed_text(const std::string& text) {
        if (text.empty()) throw Error("embed_text: empty text");
        requested_.fetch_add(1);
        std::string key = sha256_hex("embedding\x1f" + provider_->id() + "\x1f" + text);
        if (auto hit = cache_.get(key)) {
            cache_hits_.fetch_add(1);
            nlohmann::json values = nlohmann::json::parse(*hit);
            return EmbeddingVector{values.get<std::vector<double>>()};
        }
        EmbeddingVector v = provider_->embed(text);
        computed_.fetch_add(1);
        cache_.put(key, nlohmann::json(v.values).dump(), {{"provider", provider_->id()}});
        return v;
    }

    EmbeddingStats stats() const { return {requested_.load(), cache_hits_.load(), computed_.load()}; }
    const std::string& provider_id() const { return provider_->id(); }

private:
    std::shared_ptr<EmbeddingProvider> provider_;
    FileCache cache_;
    std::atomic<std::uint64_t> requested_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::uint64_t> computed_{0};
};

}  // namespace cmas
