#include "fullanno/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "fullanno/geometry.hpp"
#include "fullanno/hashing.hpp"
#include "fullanno/ingestion.hpp"
#include "fullanno/tokenizer.hpp"
#include "json.hpp"

namespace fullanno {

using ojson = nlohmann::ordered_json;
using namespace std::chrono_literals;

std::string to_string(Role role) {
    switch (role) {
        case Role::Detector: return "detector";
        case Role::Ocr: return "ocr";
        case Role::Captioner: return "captioner";
        case Role::Verifier: return "verifier";
        case Role::Integrator: return "integrator";
    }
    return "unknown";
}

Role role_from_string(const std::string& s) {
    for (Role r : {Role::Detector, Role::Ocr, Role::Captioner, Role::Verifier, Role::Integrator}) {
        if (to_string(r) == s) return r;
    }
    throw ConfigError("unknown endpoint role: " + s);
}

std::string to_string(Protocol protocol) { return protocol == Protocol::Chat ? "chat" : "predict"; }

Protocol protocol_from_string(const std::string& s) {
    if (s == "chat") return Protocol::Chat;
    if (s == "predict") return Protocol::Predict;
    throw ConfigError("unknown endpoint protocol: " + s);
}

void EndpointConfig::check() const {
    const std::string at = "endpoint " + endpoint_id + ": ";
    if (endpoint_id.empty()) throw ConfigError("endpoint_id must not be empty");
    if (max_in_flight < 1) throw ConfigError(at + "max_in_flight must be >= 1");
    if (requests_per_minute < 1) throw ConfigError(at + "requests_per_minute must be >= 1");
    if (max_retries < 0) throw ConfigError(at + "max_retries must be >= 0");
    if (backoff_base.count() < 0) throw ConfigError(at + "backoff_base_ms must be >= 0");
    if (max_output_tokens < 1) throw ConfigError(at + "max_output_tokens must be >= 1");
    if (protocol == Protocol::Predict && role != Role::Detector && role != Role::Ocr) {
        throw ConfigError(at + "the predict protocol is only available to detector and ocr endpoints");
    }
}

EndpointConfig default_endpoint(std::string endpoint_id, Role role) {
    EndpointConfig e;
    e.endpoint_id = std::move(endpoint_id);
    e.role = role;
    e.model = to_string(role);
    if (role == Role::Integrator) {
        e.temperature = 0.7;
        e.max_output_tokens = 1024;
    } else {
        e.temperature = 0.2;
        e.max_output_tokens = 512;
    }
    if (role == Role::Detector || role == Role::Ocr) e.protocol = Protocol::Predict;
    return e;
}

// --- clocks ----------------------------------------------------------------

Clock::Duration SteadyClock::now() const {
    return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
}

void SteadyClock::sleep_until(Duration t) {
    const auto d = t - now();
    if (d > Duration::zero()) std::this_thread::sleep_for(d);
}

Clock::Duration SimulatedClock::now() const {
    std::lock_guard lk(mu_);
    return now_;
}

void SimulatedClock::sleep_until(Duration t) {
    std::lock_guard lk(mu_);
    now_ = std::max(now_, t);
}

void SimulatedClock::advance(Duration d) {
    std::lock_guard lk(mu_);
    now_ += d;
}

bool is_retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

// --- caches ----------------------------------------------------------------

std::optional<CacheEntry> MemoryCache::get(const std::string& request_hash) {
    std::lock_guard lk(mu_);
    auto it = entries_.find(request_hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void MemoryCache::put(const CacheEntry& entry) {
    std::lock_guard lk(mu_);
    entries_.emplace(entry.request_hash, entry);
}

std::size_t MemoryCache::size() const {
    std::lock_guard lk(mu_);
    return entries_.size();
}

DirectoryCache::DirectoryCache(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw IoError("cannot create cache directory " + root_.string() + ": " + ec.message());
}

std::filesystem::path DirectoryCache::path_for(const std::string& hash) const {
    return root_ / hash.substr(0, 2) / (hash + ".json");
}

std::optional<CacheEntry> DirectoryCache::get(const std::string& request_hash) {
    const auto path = path_for(request_hash);
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        CacheEntry e;
        e.request_hash = j.at("request_hash").get<std::string>();
        e.response = j.at("response").get<std::string>();
        e.timestamp = j.at("timestamp").get<std::int64_t>();
        if (e.request_hash != request_hash) return std::nullopt;
        return e;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;  // unreadable entries are treated as misses and rewritten
    }
}

void DirectoryCache::put(const CacheEntry& entry) {
    ojson j;
    j["request_hash"] = entry.request_hash;
    j["timestamp"] = entry.timestamp;
    j["response"] = entry.response;
    const auto path = path_for(entry.request_hash);
    // Unique temp name per writer; rename is atomic so concurrent writers of
    // the same key leave one complete entry.
    auto tmp = path;
    tmp += "." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + ".tmp";
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write cache entry " + tmp.string());
        out << j.dump();
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot commit cache entry " + path.string() + ": " + ec.message());
}

std::string request_hash(const std::string& endpoint_id, const std::string& template_version,
                         const std::string& body) {
    return sha256_hex(endpoint_id + "\n" + template_version + "\n" + body);
}

// --- wire helpers ----------------------------------------------------------

std::string chat_response_content(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_null()) return "";
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw MalformedResponse(std::string("not a chat completion: ") + e.what());
    }
}

std::int64_t chat_response_created(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        auto it = j.find("created");
        if (it == j.end() || !it->is_number_integer()) return 0;
        return it->get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw MalformedResponse(std::string("not a chat completion: ") + e.what());
    }
}

std::string make_chat_response(const std::string& content, std::int64_t created) {
    ojson j;
    j["id"] = "chatcmpl-local";
    j["object"] = "chat.completion";
    j["created"] = created;
    ojson choice;
    choice["index"] = 0;
    choice["message"] = ojson{{"role", "assistant"}, {"content", content}};
    choice["finish_reason"] = "stop";
    j["choices"] = ojson::array({choice});
    return j.dump();
}

// --- gateway ---------------------------------------------------------------

struct Gateway::EndpointState {
    EndpointConfig config;
    std::mutex mu;
    std::condition_variable cv;
    int in_flight = 0;
    std::deque<Clock::Duration> window;
    EndpointStats stats;
};

Gateway::Gateway(std::vector<EndpointConfig> endpoints, std::shared_ptr<Transport> transport,
                 std::shared_ptr<Clock> clock, std::shared_ptr<ResponseCache> cache)
    : transport_(std::move(transport)), clock_(std::move(clock)), cache_(std::move(cache)) {
    if (!transport_) throw ConfigError("gateway needs a transport");
    if (!clock_) clock_ = std::make_shared<SteadyClock>();
    for (auto& e : endpoints) {
        e.check();
        auto state = std::make_unique<EndpointState>();
        state->config = e;
        if (!endpoints_.emplace(e.endpoint_id, std::move(state)).second) {
            throw ConfigError("duplicate endpoint id: " + e.endpoint_id);
        }
    }
}

Gateway::~Gateway() = default;

Gateway::EndpointState& Gateway::state_for(const std::string& endpoint_id) const {
    auto it = endpoints_.find(endpoint_id);
    if (it == endpoints_.end()) throw UnknownSource("unconfigured endpoint: " + endpoint_id);
    return *it->second;
}

const EndpointConfig& Gateway::endpoint(const std::string& endpoint_id) const {
    return state_for(endpoint_id).config;
}

bool Gateway::has_endpoint(const std::string& endpoint_id) const { return endpoints_.count(endpoint_id) > 0; }

EndpointStats Gateway::stats(const std::string& endpoint_id) const {
    auto& s = state_for(endpoint_id);
    std::lock_guard lk(s.mu);
    return s.stats;
}

std::int64_t Gateway::total_attempts() const {
    std::int64_t n = 0;
    for (const auto& [id, s] : endpoints_) {
        std::lock_guard lk(s->mu);
        n += s->stats.attempts;
    }
    return n;
}

std::string Gateway::send_with_retries(EndpointState& s, const HttpRequest& request) {
    const auto& cfg = s.config;
    for (int attempt = 0;; ++attempt) {
        {
            std::unique_lock lk(s.mu);
            for (;;) {
                s.cv.wait(lk, [&] { return s.in_flight < cfg.max_in_flight; });
                const auto now = clock_->now();
                while (!s.window.empty() && s.window.front() <= now - 60s) s.window.pop_front();
                if (static_cast<int>(s.window.size()) < cfg.requests_per_minute) {
                    s.window.push_back(now);
                    s.stats.issue_times.push_back(now);
                    break;
                }
                const auto resume_at = s.window.front() + 60s;
                lk.unlock();
                clock_->sleep_until(resume_at);
                lk.lock();
            }
            ++s.in_flight;
            s.stats.peak_in_flight = std::max(s.stats.peak_in_flight, s.in_flight);
            ++s.stats.attempts;
            if (attempt > 0) ++s.stats.retries;
        }

        HttpResponse response;
        std::optional<TransportFailure> failure;
        try {
            response = transport_->post(cfg, request);
        } catch (const TransportFailure& f) {
            failure = f;
        }
        {
            std::lock_guard lk(s.mu);
            --s.in_flight;
        }
        s.cv.notify_all();

        if (!failure && response.status >= 200 && response.status < 300) return response.body;

        const bool retryable = failure ? failure->timeout() : is_retryable_status(response.status);
        const std::string what = failure ? std::string(failure->what())
                                         : "HTTP " + std::to_string(response.status);
        if (!retryable) {
            throw ClientError(ClientError::Reason::Fatal, failure ? 0 : response.status,
                              cfg.endpoint_id + ": " + what);
        }
        if (attempt >= cfg.max_retries) {
            throw ClientError(ClientError::Reason::RetriesExhausted, failure ? 0 : response.status,
                              cfg.endpoint_id + ": " + what + " after " + std::to_string(attempt + 1) +
                                  " attempts");
        }
        const auto delay = cfg.backoff_base * (std::int64_t{1} << std::min(attempt, 20));
        {
            std::lock_guard lk(s.mu);
            s.stats.backoff_delays.push_back(delay);
        }
        clock_->sleep_for(delay);
    }
}

void Gateway::call(const std::string& endpoint_id, const std::string& path, const std::string& body,
                   const Parser& parse) {
    auto& s = state_for(endpoint_id);
    const std::string key = request_hash(endpoint_id, templates::kVersion, body);
    {
        std::lock_guard lk(s.mu);
        ++s.stats.requests;
    }
    if (cache_) {
        if (auto hit = cache_->get(key)) {
            std::lock_guard lk(s.mu);
            ++s.stats.cache_hits;
            parse(hit->response);
            return;
        }
    }

    HttpRequest request;
    request.url = s.config.base_url + path;
    request.headers.emplace_back("Content-Type", "application/json");
    if (!s.config.auth_env_var.empty()) {
        if (const char* token = std::getenv(s.config.auth_env_var.c_str()); token && *token) {
            request.headers.emplace_back("Authorization", std::string("Bearer ") + token);
        }
    }
    request.body = body;

    std::string response = send_with_retries(s, request);
    parse(response);  // malformed or empty answers throw here and stay out of the cache
    if (cache_) {
        const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(clock_->now()).count();
        cache_->put(CacheEntry{key, response, seconds});
    }
}

namespace {

ojson image_part(const ImageRef& image, const std::optional<BBox>& crop) {
    ojson img;
    img["file_name"] = image.file_name;
    img["image_id"] = image.image_id;
    img["width"] = image.width;
    img["height"] = image.height;
    if (crop) img["crop"] = ojson::array({crop->x, crop->y, crop->w, crop->h});
    ojson part;
    part["type"] = "image_ref";
    part["image"] = std::move(img);
    return part;
}

ojson text_part(const std::string& text) {
    ojson part;
    part["type"] = "text";
    part["text"] = text;
    return part;
}

std::string chat_body(const EndpointConfig& cfg, const std::optional<std::string>& system, ojson user_content) {
    ojson body;
    body["model"] = cfg.model;
    ojson messages = ojson::array();
    if (system) messages.push_back(ojson{{"role", "system"}, {"content", *system}});
    messages.push_back(ojson{{"role", "user"}, {"content", std::move(user_content)}});
    body["messages"] = std::move(messages);
    body["temperature"] = cfg.temperature;
    body["max_tokens"] = cfg.max_output_tokens;
    return body.dump();
}

std::string predict_body(const EndpointConfig& cfg, const char* task, const ImageRef& image) {
    ojson body;
    body["model"] = cfg.model;
    body["task"] = task;
    body["image"] = image_part(image, std::nullopt)["image"];
    return body.dump();
}

constexpr const char* kDetectInstruction =
    "List every object in the image as JSON: {\"detections\": [{\"bbox\": [x, y, w, h], "
    "\"category\": string, \"score\": number}]} with pixel xywh boxes.";
constexpr const char* kOcrInstruction =
    "Read every piece of text in the image as JSON: {\"text_regions\": [{\"bbox\": [x, y, w, h], "
    "\"text\": string, \"confidence\": number}]} with pixel xywh boxes.";

nlohmann::json parse_payload(const std::string& text, const std::string& endpoint_id) {
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_object()) throw MalformedResponse(endpoint_id + ": payload is not an object");
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedResponse(endpoint_id + ": payload is not JSON: " + e.what());
    }
}

BBox payload_box(const nlohmann::json& item, const std::string& at) {
    auto it = item.find("bbox");
    if (it == item.end() || !it->is_array() || it->size() != 4 ||
        !std::all_of(it->begin(), it->end(), [](const auto& v) { return v.is_number(); })) {
        throw MalformedResponse(at + ".bbox: expected [x, y, w, h]");
    }
    return BBox{(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>(), (*it)[3].get<double>()};
}

double payload_unit(const nlohmann::json& item, const char* key, const std::string& at) {
    auto it = item.find(key);
    if (it == item.end() || !it->is_number()) throw MalformedResponse(at + "." + key + ": expected a number");
    const double v = it->get<double>();
    if (!(v >= 0 && v <= 1)) throw MalformedResponse(at + "." + key + ": outside [0,1]");
    return v;
}

std::string payload_string(const nlohmann::json& item, const char* key, const std::string& at) {
    auto it = item.find(key);
    if (it == item.end() || !it->is_string()) throw MalformedResponse(at + "." + key + ": expected a string");
    return it->get<std::string>();
}

std::string trimmed(const std::string& s) {
    auto b = std::find_if(s.begin(), s.end(), [](unsigned char c) { return !std::isspace(c); });
    auto e = std::find_if(s.rbegin(), s.rend(), [](unsigned char c) { return !std::isspace(c); }).base();
    return b < e ? std::string(b, e) : std::string();
}

}  // namespace

std::vector<Detection> Gateway::detect(const ImageRef& image, const std::string& endpoint_id) {
    auto& s = state_for(endpoint_id);
    const auto& cfg = s.config;
    std::vector<Detection> out;
    std::int64_t clamped = 0;
    std::int64_t dropped = 0;
    auto parse = [&](const std::string& response) {
        const std::string payload = cfg.protocol == Protocol::Predict ? response : chat_response_content(response);
        const auto j = parse_payload(payload, endpoint_id);
        auto list = j.find("detections");
        if (list == j.end() || !list->is_array()) throw MalformedResponse(endpoint_id + ": missing detections array");
        for (std::size_t i = 0; i < list->size(); ++i) {
            const auto& item = (*list)[i];
            const std::string at = endpoint_id + ": detections[" + std::to_string(i) + "]";
            if (!item.is_object()) throw MalformedResponse(at + ": expected an object");
            const BBox raw = payload_box(item, at);
            Detection d;
            d.category = payload_string(item, "category", at);
            if (trimmed(d.category).empty()) throw MalformedResponse(at + ".category: empty");
            d.score = payload_unit(item, "score", at);
            d.source_id = endpoint_id;
            std::optional<BBox> box;
            if (raw.w > 0 && raw.h > 0) box = geometry::clamp_to_image(raw, image.width, image.height);
            if (!box) {
                ++dropped;
                continue;
            }
            if (!(*box == raw)) ++clamped;
            d.bbox = *box;
            out.push_back(std::move(d));
        }
    };
    if (cfg.protocol == Protocol::Predict) {
        call(endpoint_id, "/predict", predict_body(cfg, "detect", image), parse);
    } else {
        ojson content = ojson::array({text_part(kDetectInstruction), image_part(image, std::nullopt)});
        call(endpoint_id, "/chat/completions", chat_body(cfg, std::nullopt, content), parse);
    }
    std::lock_guard lk(s.mu);
    s.stats.clamped_boxes += clamped;
    s.stats.dropped_boxes += dropped;
    return out;
}

std::vector<OcrEntry> Gateway::recognize_text(const ImageRef& image, const std::string& endpoint_id) {
    auto& s = state_for(endpoint_id);
    const auto& cfg = s.config;
    std::vector<OcrEntry> out;
    std::int64_t clamped = 0;
    std::int64_t dropped = 0;
    auto parse = [&](const std::string& response) {
        const std::string payload = cfg.protocol == Protocol::Predict ? response : chat_response_content(response);
        const auto j = parse_payload(payload, endpoint_id);
        auto list = j.find("text_regions");
        if (list == j.end() || !list->is_array()) throw MalformedResponse(endpoint_id + ": missing text_regions array");
        for (std::size_t i = 0; i < list->size(); ++i) {
            const auto& item = (*list)[i];
            const std::string at = endpoint_id + ": text_regions[" + std::to_string(i) + "]";
            if (!item.is_object()) throw MalformedResponse(at + ": expected an object");
            const BBox raw = payload_box(item, at);
            OcrEntry e;
            e.text = payload_string(item, "text", at);
            e.confidence = payload_unit(item, "confidence", at);
            std::optional<BBox> box;
            if (raw.w > 0 && raw.h > 0) box = geometry::clamp_to_image(raw, image.width, image.height);
            if (!box) {
                ++dropped;
                continue;
            }
            if (!(*box == raw)) ++clamped;
            e.bbox = *box;
            out.push_back(std::move(e));
        }
    };
    if (cfg.protocol == Protocol::Predict) {
        call(endpoint_id, "/predict", predict_body(cfg, "ocr", image), parse);
    } else {
        ojson content = ojson::array({text_part(kOcrInstruction), image_part(image, std::nullopt)});
        call(endpoint_id, "/chat/completions", chat_body(cfg, std::nullopt, content), parse);
    }
    std::lock_guard lk(s.mu);
    s.stats.clamped_boxes += clamped;
    s.stats.dropped_boxes += dropped;
    return out;
}

Completion Gateway::describe_region(const ImageRef& image, const BBox& crop, const std::string& prompt,
                                    const std::string& endpoint_id) {
    const auto& cfg = endpoint(endpoint_id);
    ojson content = ojson::array({text_part(prompt), image_part(image, crop)});
    Completion c;
    call(endpoint_id, "/chat/completions", chat_body(cfg, std::nullopt, content), [&](const std::string& body) {
        c.text = trimmed(chat_response_content(body));
        if (c.text.empty()) throw EmptyResponse(endpoint_id + ": empty region description");
        c.generator = GeneratorInfo{cfg.endpoint_id, cfg.model, templates::kVersion, cfg.temperature,
                                    cfg.max_output_tokens, chat_response_created(body)};
    });
    return c;
}

std::string Gateway::verify_text(const ImageRef& image, const BBox& crop, const std::string& prompt,
                                 const std::string& endpoint_id) {
    const auto& cfg = endpoint(endpoint_id);
    ojson content = ojson::array({text_part(prompt), image_part(image, crop)});
    std::string answer;
    call(endpoint_id, "/chat/completions", chat_body(cfg, std::nullopt, content),
         [&](const std::string& body) { answer = chat_response_content(body); });
    return answer;
}

DenseCaption Gateway::integrate_caption(const IntegrationMessage& message, const std::string& endpoint_id,
                                        const Tokenizer& tokenizer) {
    const auto& cfg = endpoint(endpoint_id);
    if (message.content.empty()) throw EmptyBundle("integration message is empty");
    DenseCaption d;
    call(endpoint_id, "/chat/completions", chat_body(cfg, message.system_preamble, ojson(message.content)),
         [&](const std::string& body) {
             d.text = trimmed(chat_response_content(body));
             if (d.text.empty()) throw EmptyResponse(endpoint_id + ": empty dense caption");
             d.generator = GeneratorInfo{cfg.endpoint_id, cfg.model, message.template_version, cfg.temperature,
                                         cfg.max_output_tokens, chat_response_created(body)};
         });
    d.token_length = tokenizer.count(d.text);
    d.prompt_hash = message.hash;
    return d;
}

}  // namespace fullanno
