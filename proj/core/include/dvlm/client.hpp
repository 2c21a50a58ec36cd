#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

namespace dvlm {

// Single request/response text interface shared by the answer expander and the
// external judge. Implementations must be deterministic given a cache.
class TextCompletionClient {
public:
    virtual ~TextCompletionClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

// Hex FNV-1a key used by both the disk cache and fixture files.
std::string request_cache_key(const std::string& prompt);

// POSTs {"prompt": ...} to the configured endpoint and expects {"text": ...}.
// Endpoint and key come from environment variables; replies are cached on disk
// keyed by request hash so reruns never touch the network.
class HttpTextClient : public TextCompletionClient {
public:
    struct Options {
        std::string url_env;    // e.g. "JUDGE_URL"
        std::string key_env;    // e.g. "JUDGE_KEY"
        std::string cache_dir;  // empty disables caching
        int max_retries = 2;
    };

    explicit HttpTextClient(Options opts);
    std::string complete(const std::string& prompt) override;

    // Throws ConfigError when the URL env var is missing.
    void require_configured() const;

private:
    Options opts_;
    std::string url_;
    std::string key_;
};

// Replays recorded responses from a JSONL fixture ({"key": ..., "text": ...});
// unknown prompts raise TransportError. Used by tests; never touches the
// network.
class FixtureTextClient : public TextCompletionClient {
public:
    explicit FixtureTextClient(const std::string& fixture_path);
    explicit FixtureTextClient(std::map<std::string, std::string> replies);
    std::string complete(const std::string& prompt) override;

    size_t size() const { return replies_.size(); }

private:
    std::map<std::string, std::string> replies_;  // cache key -> reply text
};

}  // namespace dvlm
