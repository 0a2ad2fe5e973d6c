#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace cmas {

/// Persistent response cache: one JSON file per entry, filename = entry key
/// (a hex digest) + ".json". Writes are serialized; reads are concurrent.
/// An in-memory overlay avoids re-reading files inside one process.
class FileCache {
public:
    explicit FileCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::optional<std::string> get(const std::string& key) const {
        {
            std::shared_lock lock(mutex_);
            auto it = memory_.find(key);
            if (it != memory_.end()) return it->second;
        }
        auto path = dir_ / (key + ".json");
        std::ifstream in(path);
        if (!in) return std::nullopt;
        nlohmann::json entry = nlohmann::json::parse(in, nullptr, false);
        if (entry.is_discarded() || !entry.contains("response")) return std::nullopt;
        std::string response = entry.at("response").get<std::string>();
        {
            std::unique_lock lock(mutex_);
            memory_.emplace(key, response);
        }
        return response;
    }

    void put(const std::string& key, const std::string& response,
             const nlohmann::json& metadata = {}) {
        nlohmann::json entry = metadata.is_object() ? metadata : nlohmann::json::object();
        entry["response"] = response;
        std::unique_lock lock(mutex_);
        std::ofstream out(dir_ / (key + ".json"), std::ios::trunc);
        out << entry.dump(2) << "\n";
        memory_[key] = response;
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<std::string, std::string> memory_;
};

}  // namespace cmas
