#pragma once

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmas/types.hpp"

namespace cmas::detail {

struct SplitUrl {
    std::string host;  // scheme://host[:port], what httplib::Client expects
    std::string path_prefix;
};

inline SplitUrl split_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = base_url.find('/', host_start);
    if (path_start == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, path_start), prefix};
}

/// POST a JSON body, retrying transient failures a bounded number of times.
inline nlohmann::json post_json_with_retries(const std::string& base_url,
                                             const std::string& endpoint,
                                             const nlohmann::json& body,
                                             const std::string& api_key, int max_attempts = 3) {
    auto [host, prefix] = split_url(base_url);
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        httplib::Client client(host);
        client.set_connection_timeout(15);
        client.set_read_timeout(120);
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(prefix + endpoint, headers, body.dump(), "application/json");
        if (res && res->status >= 200 && res->status < 300) {
            nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (!parsed.is_discarded()) return parsed;
            last_error = "unparseable response body";
        } else if (res) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 400);
            // 4xx other than rate limiting will not get better on retry
            if (res->status >= 400 && res->status < 500 && res->status != 429) break;
        } else {
            last_error = "transport error: " + httplib::to_string(res.error());
        }
        if (attempt < max_attempts) {
            std::this_thread::sleep_for(std::chrono::milliseconds(250 * attempt));
        }
    }
    throw BackendError(base_url + endpoint + " failed after retries: " + last_error);
}

}  // namespace cmas::detail
