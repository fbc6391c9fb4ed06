#pragma once

// Live provider speaking the OpenAI-compatible chat-completions protocol.
// Needs CPPHTTPLIB_OPENSSL_SUPPORT and OpenSSL::SSL at link time.

#include <httplib.h>

#include "echomimic/provider.hpp"

namespace echomimic {

struct HttpProviderConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    std::string api_key;
    double temperature = 1.0;
    std::optional<int> max_tokens;
    double timeout_s = 300.0;

    /// ECHOMIMIC_API_KEY, ECHOMIMIC_ENDPOINT, ECHOMIMIC_MODEL, ECHOMIMIC_TEMPERATURE.
    void apply_env() {
        auto env = [](const char* k) -> std::optional<std::string> {
            const char* v = std::getenv(k);
            return v && *v ? std::optional<std::string>(v) : std::nullopt;
        };
        if (auto v = env("ECHOMIMIC_API_KEY")) api_key = *v;
        if (auto v = env("ECHOMIMIC_ENDPOINT")) endpoint = *v;
        if (auto v = env("ECHOMIMIC_MODEL")) model = *v;
        if (auto v = env("ECHOMIMIC_TEMPERATURE")) temperature = std::stod(*v);
    }
};

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.api_key.empty()) throw InputError("http provider: ECHOMIMIC_API_KEY is not set");
        const auto scheme = cfg_.endpoint.find("://");
        if (scheme == std::string::npos) throw InputError("http provider: endpoint needs a scheme: " + cfg_.endpoint);
        const auto path = cfg_.endpoint.find('/', scheme + 3);
        base_ = cfg_.endpoint.substr(0, path);
        path_ = path == std::string::npos ? "/" : cfg_.endpoint.substr(path);
    }

    std::string name() const override { return "http"; }
    std::string model() const override { return cfg_.model; }

    RawCompletion call(const PromptBundle& b) override {
        httplib::Client cli(base_);
        const auto secs = static_cast<time_t>(cfg_.timeout_s);
        cli.set_read_timeout(secs, 0);
        cli.set_write_timeout(60, 0);
        cli.set_connection_timeout(30, 0);
        cli.set_bearer_token_auth(cfg_.api_key);
        nlohmann::json body{{"model", cfg_.model},
                            {"temperature", cfg_.temperature},
                            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", b.text}}})}};
        if (cfg_.max_tokens) body["max_tokens"] = *cfg_.max_tokens;
        auto res = cli.Post(path_, body.dump(), "application/json");
        if (!res) throw ProviderError("http: " + httplib::to_string(res.error()), true);
        if (res->status == 429 || res->status >= 500)
            throw ProviderError("http status " + std::to_string(res->status) + ": " + res->body.substr(0, 500), true);
        if (res->status != 200)
            throw ProviderError("http status " + std::to_string(res->status) + ": " + res->body.substr(0, 500), false);
        try {
            const auto doc = nlohmann::json::parse(res->body);
            RawCompletion out;
            const auto& content = doc.at("choices").at(0).at("message").at("content");
            out.text = content.is_string() ? content.get<std::string>() : std::string();
            if (doc.contains("usage")) {
                out.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0L);
                out.usage.completion_tokens = doc["usage"].value("completion_tokens", 0L);
            } else {
                out.usage = {estimate_tokens(b.text), estimate_tokens(out.text)};
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("http: malformed response: ") + e.what(), true);
        }
    }

private:
    HttpProviderConfig cfg_;
    std::string base_;
    std::string path_;
};

}  // namespace echomimic
