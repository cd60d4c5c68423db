#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fullanno/gateway.hpp"

namespace fullanno {

/// Canned data for the deterministic stubs, keyed by endpoint id and then
/// image file name.
struct StubFixtures {
    struct Box {
        BBox bbox;
        std::string category;
        double score = 1.0;
    };
    struct Text {
        BBox bbox;
        std::string text;
        double confidence = 1.0;
    };

    std::map<std::string, std::map<std::string, std::vector<Box>>> detections;
    std::map<std::string, std::map<std::string, std::vector<Text>>> ocr;
    /// Verifier corrections (read text -> corrected text). Anything not
    /// listed is echoed back.
    std::map<std::string, std::string> corrections;
    /// Value of the `created` field in every chat response.
    std::int64_t created = 0;

    static StubFixtures from_json_text(const std::string& text);
    static StubFixtures from_file(const std::filesystem::path& path);
    std::string to_json() const;
};

/// Offline stand-in for every model endpoint. It parses the same requests
/// the live endpoints receive and answers in the same wire format:
///   detector / OCR  - canned boxes or text from the fixtures (else none)
///   captioner       - a sentence naming the category from the region prompt
///   verifier        - the corrected text from the fixtures, else an echo
///   integrator      - concatenates every fact in the message into sentences
/// No network access is ever attempted.
class StubTransport final : public Transport {
public:
    explicit StubTransport(StubFixtures fixtures = {}) : fixtures_(std::move(fixtures)) {}

    HttpResponse post(const EndpointConfig& endpoint, const HttpRequest& request) override;

    /// The responder logic without HTTP framing; used to serve the same
    /// behaviour from a local HTTP server in tests.
    static HttpResponse respond(const StubFixtures& fixtures, const EndpointConfig& endpoint,
                                const std::string& body);

private:
    StubFixtures fixtures_;
};

/// The concatenating integrator's caption for a given user message content.
std::string concatenate_facts(const std::string& content);

}  // namespace fullanno
