#include "dvlm/client.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string request_cache_key(const std::string& prompt) {
    uint64_t h = fnv1a64(prompt);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

HttpTextClient::HttpTextClient(Options opts) : opts_(std::move(opts)) {
    if (const char* u = std::getenv(opts_.url_env.c_str())) url_ = u;
    if (const char* k = std::getenv(opts_.key_env.c_str())) key_ = k;
}

void HttpTextClient::require_configured() const {
    if (url_.empty()) {
        throw ConfigError("external client not configured: set " + opts_.url_env +
                          " (and optionally " + opts_.key_env + ")");
    }
}

std::string HttpTextClient::complete(const std::string& prompt) {
    std::string key = request_cache_key(prompt);
    fs::path cache_file;
    if (!opts_.cache_dir.empty()) {
        cache_file = fs::path(opts_.cache_dir) / (key + ".txt");
        if (fs::exists(cache_file)) {
            std::ifstream in(cache_file, std::ios::binary);
            std::ostringstream os;
            os << in.rdbuf();
            return os.str();
        }
    }
    require_configured();

    // Split "http://host:port/path" into host:port and path.
    std::string rest = url_;
    std::string scheme = "http://";
    if (rest.rfind("http://", 0) == 0) {
        rest = rest.substr(7);
    } else if (rest.rfind("https://", 0) == 0) {
        throw ConfigError("external client: https endpoints are not supported in this build");
    }
    std::string host = rest, path = "/";
    if (auto slash = rest.find('/'); slash != std::string::npos) {
        host = rest.substr(0, slash);
        path = rest.substr(slash);
    }

    json body = {{"prompt", prompt}};
    std::string reply;
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
        httplib::Client cli(scheme + host);
        cli.set_read_timeout(30, 0);
        httplib::Headers headers;
        if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);
        auto res = cli.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "connection failed";
            continue;
        }
        if (res->status != 200) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        try {
            json j = json::parse(res->body);
            reply = j.at("text").get<std::string>();
        } catch (const std::exception& e) {
            throw TransportError(std::string("external client: malformed reply: ") + e.what());
        }
        if (!cache_file.empty()) {
            fs::create_directories(cache_file.parent_path());
            std::ofstream out(cache_file, std::ios::binary);
            out << reply;
        }
        return reply;
    }
    throw TransportError("external client: request failed after " +
                         std::to_string(opts_.max_retries + 1) + " attempts (" + last_error + ")");
}

FixtureTextClient::FixtureTextClient(const std::string& fixture_path) {
    std::ifstream in(fixture_path);
    if (!in) throw IoError("cannot open fixture '" + fixture_path + "'");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        replies_[j.at("key").get<std::string>()] = j.at("text").get<std::string>();
    }
}

FixtureTextClient::FixtureTextClient(std::map<std::string, std::string> replies)
    : replies_(std::move(replies)) {}

std::string FixtureTextClient::complete(const std::string& prompt) {
    auto it = replies_.find(request_cache_key(prompt));
    if (it == replies_.end()) {
        throw TransportError("fixture client: no recorded reply for prompt hash " +
                             request_cache_key(prompt));
    }
    return it->second;
}

}  // namespace dvlm
