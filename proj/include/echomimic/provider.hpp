#pragma once

// Language-model providers: the abstract interface, the retrying/rate-limited
// gateway with its JSONL audit log, and the offline mock (cassettes plus an
// optional scripted strategy).

#include <chrono>
#include <condition_variable>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "echomimic/prompt.hpp"

namespace echomimic {

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct RawCompletion {
    std::string text;
    Usage usage;
};

struct ProviderResponse {
    std::string raw;
    std::optional<std::string> parsed;  // present iff extraction succeeded
    Usage usage;
    double latency = 0.0;
    int attempts = 0;
};

struct ProviderError : std::runtime_error {
    ProviderError(const std::string& what, bool transient_) : std::runtime_error(what), transient(transient_) {}
    bool transient;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string name() const = 0;
    virtual std::string model() const { return ""; }
    /// Throws ProviderError; transient errors are retried by the gateway.
    virtual RawCompletion call(const PromptBundle& bundle) = 0;
};

/// Roughly four characters per token; used where the backend reports nothing.
inline long estimate_tokens(std::string_view s) { return static_cast<long>((s.size() + 3) / 4); }

enum class ResponseFormat { code, message, text };

inline ResponseFormat expected_format(Role r) {
    switch (r) {
        case Role::policy_generator:
        case Role::policy_modifier: return ResponseFormat::message;
        case Role::explainer:
        case Role::merger: return ResponseFormat::text;
        default: return ResponseFormat::code;
    }
}

inline std::optional<std::string> parse_response(Role role, std::string_view raw) {
    switch (expected_format(role)) {
        case ResponseFormat::code: return extract_code(raw);
        case ResponseFormat::message: return extract_message(raw);
        case ResponseFormat::text: {
            const auto t = detail::trim_view(raw);
            if (t.find_first_not_of(" \n\t") == std::string_view::npos) return std::nullopt;
            return std::string(raw);
        }
    }
    return std::nullopt;
}

struct RetryPolicy {
    int max_attempts = 3;
    double base_delay_s = 1.0;
    double multiplier = 2.0;
    double max_delay_s = 30.0;

    double delay_before(int attempt) const {  // attempt is 1-based; first retry is attempt 2
        return std::min(max_delay_s, base_delay_s * std::pow(multiplier, attempt - 2));
    }
};

/// Token bucket. rate_per_s <= 0 disables limiting.
class RateLimiter {
public:
    explicit RateLimiter(double rate_per_s = 0.0, double burst = 1.0)
        : rate_(rate_per_s), burst_(std::max(1.0, burst)), tokens_(burst_), last_(clock::now()) {}

    void acquire() {
        if (rate_ <= 0) return;
        std::unique_lock lock(mu_);
        while (true) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const double wait = (1.0 - tokens_) / rate_;
            lock.unlock();
            std::this_thread::sleep_for(std::chrono::duration<double>(wait));
            lock.lock();
        }
    }

private:
    using clock = std::chrono::steady_clock;
    void refill() {
        const auto now = clock::now();
        tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
    }
    double rate_, burst_, tokens_;
    clock::time_point last_;
    std::mutex mu_;
};

class AuditLog {
public:
    explicit AuditLog(fs::path path) : path_(std::move(path)) {
        if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    }
    void append(const json& record) {
        std::lock_guard lock(mu_);
        std::ofstream out(path_, std::ios::app);
        out << record.dump() << '\n';
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
    std::mutex mu_;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Sends `bundle` with retries on transient failures. Every attempt is logged.
inline ProviderResponse complete(Provider& provider, const PromptBundle& bundle, const RetryPolicy& retry = {},
                                 RateLimiter* limiter = nullptr, AuditLog* audit = nullptr,
                                 const std::function<void(double)>& sleeper = {}) {
    ProviderResponse resp;
    const int attempts = std::max(1, retry.max_attempts);
    for (int attempt = 1;; ++attempt) {
        if (attempt > 1) {
            const double d = retry.delay_before(attempt);
            if (sleeper) sleeper(d);
            else std::this_thread::sleep_for(std::chrono::duration<double>(d));
        }
        if (limiter) limiter->acquire();
        const auto t0 = std::chrono::steady_clock::now();
        json rec{{"ts", utc_timestamp()},
                 {"provider", provider.name()},
                 {"model", provider.model()},
                 {"role", to_string(bundle.role)},
                 {"stage", to_string(bundle.stage)},
                 {"digest", bundle.context_digest},
                 {"attempt", attempt}};
        try {
            RawCompletion raw = provider.call(bundle);
            resp.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            resp.raw = std::move(raw.text);
            resp.usage = raw.usage;
            resp.parsed = parse_response(bundle.role, resp.raw);
            resp.attempts = attempt;
            rec["status"] = "ok";
            rec["parsed"] = resp.parsed.has_value();
            rec["latency_s"] = resp.latency;
            rec["prompt_tokens"] = resp.usage.prompt_tokens;
            rec["completion_tokens"] = resp.usage.completion_tokens;
            if (audit) audit->append(rec);
            return resp;
        } catch (const ProviderError& e) {
            rec["status"] = e.transient ? "transient_error" : "error";
            rec["error"] = e.what();
            rec["latency_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (audit) audit->append(rec);
            if (!e.transient) throw;
            if (attempt >= attempts)
                throw ProviderError("gave up after " + std::to_string(attempt) + " attempts: " + e.what(), false);
        }
    }
}

struct GatewayConfig {
    RetryPolicy retry;
    double rate_per_s = 0.0;
    double burst = 1.0;
    std::optional<fs::path> audit_log;
};

/// Shareable handle bundling a provider with its retry, rate and audit state.
class Gateway {
public:
    Gateway(std::shared_ptr<Provider> provider, GatewayConfig cfg = {})
        : provider_(std::move(provider)), cfg_(cfg), limiter_(cfg.rate_per_s, cfg.burst) {
        if (!provider_) throw InputError("gateway needs a provider");
        if (cfg.audit_log) audit_ = std::make_unique<AuditLog>(*cfg.audit_log);
    }

    ProviderResponse complete(const PromptBundle& bundle) {
        return echomimic::complete(*provider_, bundle, cfg_.retry, &limiter_, audit_.get());
    }

    ProviderResponse complete(Role role, PromptStage stage, const PromptContext& ctx) {
        return complete(compose_prompt(role, stage, ctx));
    }

    Provider& provider() { return *provider_; }
    const GatewayConfig& config() const { return cfg_; }

private:
    std::shared_ptr<Provider> provider_;
    GatewayConfig cfg_;
    RateLimiter limiter_;
    std::unique_ptr<AuditLog> audit_;
};

// ---------------------------------------------------------------------------
// Offline providers

/// Recorded responses keyed by context digest, one JSON file each.
class CassetteStore {
public:
    explicit CassetteStore(fs::path dir) : dir_(std::move(dir)) {}

    std::optional<std::string> get(const std::string& digest) const {
        const fs::path p = dir_ / (digest + ".json");
        if (!fs::exists(p)) return std::nullopt;
        return read_json(p).at("response").get<std::string>();
    }

    void put(const PromptBundle& b, const std::string& response) {
        std::lock_guard lock(mu_);
        fs::create_directories(dir_);
        write_json(dir_ / (b.context_digest + ".json"), json{{"role", to_string(b.role)},
                                                               {"stage", to_string(b.stage)},
                                                               {"digest", b.context_digest},
                                                               {"prompt", b.text},
                                                               {"response", response}});
    }

    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::mutex mu_;
};

using ScriptedStrategy = std::function<std::string(const PromptBundle&)>;

/// Cassette lookup first, then the scripted strategy; a miss on both is a
/// permanent error naming the digest.
class MockProvider : public Provider {
public:
    MockProvider() = default;
    explicit MockProvider(ScriptedStrategy strategy) : strategy_(std::move(strategy)) {}
    MockProvider(std::shared_ptr<CassetteStore> cassettes, ScriptedStrategy strategy = {})
        : cassettes_(std::move(cassettes)), strategy_(std::move(strategy)) {}

    std::string name() const override { return "mock"; }

    RawCompletion call(const PromptBundle& b) override {
        {
            std::lock_guard lock(mu_);
            ++calls_;
        }
        if (cassettes_)
            if (auto r = cassettes_->get(b.context_digest)) return {*r, {estimate_tokens(b.text), estimate_tokens(*r)}};
        if (strategy_) {
            std::string r = strategy_(b);
            return {r, {estimate_tokens(b.text), estimate_tokens(r)}};
        }
        throw ProviderError("mock: no recorded response for " + std::string(to_string(b.role)) + "/" +
                                std::string(to_string(b.stage)) + " digest " + b.context_digest,
                            false);
    }

    long calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

private:
    std::shared_ptr<CassetteStore> cassettes_;
    ScriptedStrategy strategy_;
    mutable std::mutex mu_;
    long calls_ = 0;
};

/// Passes calls through to `inner` and stores each response as a cassette.
class RecordingProvider : public Provider {
public:
    RecordingProvider(std::shared_ptr<Provider> inner, std::shared_ptr<CassetteStore> store)
        : inner_(std::move(inner)), store_(std::move(store)) {}
    std::string name() const override { return inner_->name() + "+record"; }
    std::string model() const override { return inner_->model(); }
    RawCompletion call(const PromptBundle& b) override {
        auto r = inner_->call(b);
        store_->put(b, r.text);
        return r;
    }

private:
    std::shared_ptr<Provider> inner_;
    std::shared_ptr<CassetteStore> store_;
};

}  // namespace echomimic
