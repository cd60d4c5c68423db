#pragma once

// Client layer for the external expert models. Every call goes through
// Gateway, which owns per-endpoint rate limiting, in-flight limits, retries
// with exponential backoff and the response cache. The wire is abstracted by
// Transport so that deterministic stubs and live HTTP share one code path.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fullanno/enrichment.hpp"
#include "fullanno/errors.hpp"
#include "fullanno/model.hpp"

namespace fullanno {

class Tokenizer;

enum class Role { Detector, Ocr, Captioner, Verifier, Integrator };
enum class Protocol { Chat, Predict };

std::string to_string(Role role);
Role role_from_string(const std::string& s);
std::string to_string(Protocol protocol);
Protocol protocol_from_string(const std::string& s);

struct EndpointConfig {
    std::string endpoint_id;
    Role role = Role::Detector;
    Protocol protocol = Protocol::Chat;
    std::string base_url;
    std::string auth_env_var = "FULLANNO_API_KEY";
    std::string model;
    int max_in_flight = 4;
    int requests_per_minute = 600;
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{500};
    std::chrono::milliseconds timeout{60000};
    double temperature = 0.2;
    std::int64_t max_output_tokens = 512;
    /// Detector ranking for NMS tie-breaks; lower wins.
    int priority = 100;

    /// Throws ConfigError when an invariant does not hold.
    void check() const;
};

/// Decoding defaults per role: region descriptions and OCR verification use
/// temperature 0.2 / 512 tokens, integration 0.7 / 1024 tokens.
EndpointConfig default_endpoint(std::string endpoint_id, Role role);

/// Image identity as far as the engine knows it; pixels are never loaded.
struct ImageRef {
    ImageId image_id = 0;
    std::string file_name;
    double width = 0;
    double height = 0;
};

// --- time ------------------------------------------------------------------

class Clock {
public:
    using Duration = std::chrono::milliseconds;
    virtual ~Clock() = default;
    virtual Duration now() const = 0;
    virtual void sleep_until(Duration t) = 0;
    void sleep_for(Duration d) { sleep_until(now() + d); }
};

class SteadyClock final : public Clock {
public:
    Duration now() const override;
    void sleep_until(Duration t) override;
};

/// Time only moves when someone sleeps; sleeping jumps straight to the
/// target. Safe to share between threads.
class SimulatedClock final : public Clock {
public:
    explicit SimulatedClock(Duration start = Duration{0}) : now_(start) {}
    Duration now() const override;
    void sleep_until(Duration t) override;
    void advance(Duration d);

private:
    mutable std::mutex mu_;
    Duration now_;
};

// --- wire ------------------------------------------------------------------

struct HttpRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Raised by a Transport when no HTTP status was obtained.
class TransportFailure : public Error {
public:
    TransportFailure(bool timeout, const std::string& message)
        : Error("TransportFailure", message), timeout_(timeout) {}
    bool timeout() const noexcept { return timeout_; }

private:
    bool timeout_;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const EndpointConfig& endpoint, const HttpRequest& request) = 0;
};

/// Live transport over cpp-httplib (http and https).
class HttpTransport final : public Transport {
public:
    HttpResponse post(const EndpointConfig& endpoint, const HttpRequest& request) override;
};

bool is_retryable_status(int status);

// --- cache -----------------------------------------------------------------

struct CacheEntry {
    std::string request_hash;
    std::string response;
    std::int64_t timestamp = 0;
};

class ResponseCache {
public:
    virtual ~ResponseCache() = default;
    virtual std::optional<CacheEntry> get(const std::string& request_hash) = 0;
    /// Called only after a complete successful response.
    virtual void put(const CacheEntry& entry) = 0;
};

class MemoryCache final : public ResponseCache {
public:
    std::optional<CacheEntry> get(const std::string& request_hash) override;
    void put(const CacheEntry& entry) override;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, CacheEntry> entries_;
};

/// Content-addressed files: `<root>/<hash[0:2]>/<hash>.json`, written via
/// temp file + rename so an interrupted write never leaves a partial entry.
class DirectoryCache final : public ResponseCache {
public:
    explicit DirectoryCache(std::filesystem::path root);
    std::optional<CacheEntry> get(const std::string& request_hash) override;
    void put(const CacheEntry& entry) override;

private:
    std::filesystem::path path_for(const std::string& hash) const;
    std::filesystem::path root_;
};

/// endpoint id + template version + canonical request body.
std::string request_hash(const std::string& endpoint_id, const std::string& template_version,
                         const std::string& body);

// --- gateway ---------------------------------------------------------------

struct EndpointStats {
    std::int64_t requests = 0;      // logical calls made through the gateway
    std::int64_t cache_hits = 0;
    std::int64_t attempts = 0;      // transport calls, including retries
    std::int64_t retries = 0;
    std::int64_t clamped_boxes = 0;
    std::int64_t dropped_boxes = 0;
    int peak_in_flight = 0;
    std::vector<Clock::Duration> issue_times;
    std::vector<Clock::Duration> backoff_delays;
};

struct Completion {
    std::string text;
    GeneratorInfo generator;
};

class Gateway {
public:
    Gateway(std::vector<EndpointConfig> endpoints, std::shared_ptr<Transport> transport,
            std::shared_ptr<Clock> clock, std::shared_ptr<ResponseCache> cache = nullptr);
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    const EndpointConfig& endpoint(const std::string& endpoint_id) const;
    bool has_endpoint(const std::string& endpoint_id) const;

    /// Detections tagged with the endpoint id, clipped to the image. Boxes
    /// with no area left after clipping are dropped; both are counted.
    std::vector<Detection> detect(const ImageRef& image, const std::string& endpoint_id);

    /// OCR entries (unverified, ids left at 0 for the caller to assign).
    std::vector<OcrEntry> recognize_text(const ImageRef& image, const std::string& endpoint_id);

    /// Throws EmptyResponse when the endpoint answers with blank text.
    Completion describe_region(const ImageRef& image, const BBox& crop, const std::string& prompt,
                               const std::string& endpoint_id);

    /// Raw verifier answer; may be empty.
    std::string verify_text(const ImageRef& image, const BBox& crop, const std::string& prompt,
                            const std::string& endpoint_id);

    DenseCaption integrate_caption(const IntegrationMessage& message,
                                   const std::string& endpoint_id, const Tokenizer& tokenizer);

    EndpointStats stats(const std::string& endpoint_id) const;
    std::int64_t total_attempts() const;

private:
    struct EndpointState;

    /// Runs `parse` on the response for `body`, taken from the cache or the
    /// transport. A fresh response is cached only once `parse` accepted it.
    using Parser = std::function<void(const std::string&)>;
    void call(const std::string& endpoint_id, const std::string& path, const std::string& body,
              const Parser& parse);
    std::string send_with_retries(EndpointState& state, const HttpRequest& request);
    EndpointState& state_for(const std::string& endpoint_id) const;

    std::map<std::string, std::unique_ptr<EndpointState>> endpoints_;
    std::shared_ptr<Transport> transport_;
    std::shared_ptr<Clock> clock_;
    std::shared_ptr<ResponseCache> cache_;
};

/// Adapts a Gateway verifier endpoint to the TextVerifier interface used by
/// verify_ocr.
class GatewayVerifier final : public TextVerifier {
public:
    GatewayVerifier(Gateway& gateway, ImageRef image, std::string endpoint_id)
        : gateway_(gateway), image_(std::move(image)), endpoint_id_(std::move(endpoint_id)) {}

    std::string verify(const BBox& crop, const std::string& prompt) override {
        return gateway_.verify_text(image_, crop, prompt, endpoint_id_);
    }

private:
    Gateway& gateway_;
    ImageRef image_;
    std::string endpoint_id_;
};

// --- wire format helpers (also used by stubs and tests) --------------------

/// First choice's message content of a chat-completion response.
std::string chat_response_content(const std::string& body);
std::int64_t chat_response_created(const std::string& body);
std::string make_chat_response(const std::string& content, std::int64_t created);

}  // namespace fullanno
