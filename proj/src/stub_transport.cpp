#include "fullanno/stub_transport.hpp"

#include <cstdio>
#include <sstream>

#include "fullanno/enrichment.hpp"
#include "fullanno/ingestion.hpp"
#include "json.hpp"

namespace fullanno {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

BBox box_from(const json& j) {
    if (!j.is_array() || j.size() != 4) throw SchemaError("bbox", "expected [x, y, w, h]");
    return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

ojson box_to(const BBox& b) { return ojson::array({b.x, b.y, b.w, b.h}); }

}  // namespace

StubFixtures StubFixtures::from_json_text(const std::string& text) {
    StubFixtures f;
    json j;
    try {
        j = json::parse(text);
        f.created = j.value("created", std::int64_t{0});
        if (j.contains("corrections")) {
            for (const auto& [k, v] : j["corrections"].items()) f.corrections[k] = v.get<std::string>();
        }
        if (j.contains("detections")) {
            for (const auto& [endpoint, files] : j["detections"].items()) {
                for (const auto& [file, list] : files.items()) {
                    auto& out = f.detections[endpoint][file];
                    for (const auto& d : list) {
                        out.push_back(Box{box_from(d.at("bbox")), d.at("category").get<std::string>(),
                                          d.value("score", 1.0)});
                    }
                }
            }
        }
        if (j.contains("ocr")) {
            for (const auto& [endpoint, files] : j["ocr"].items()) {
                for (const auto& [file, list] : files.items()) {
                    auto& out = f.ocr[endpoint][file];
                    for (const auto& t : list) {
                        out.push_back(Text{box_from(t.at("bbox")), t.at("text").get<std::string>(),
                                           t.value("confidence", 1.0)});
                    }
                }
            }
        }
    } catch (const json::exception& e) {
        throw SchemaError("$", std::string("invalid stub fixtures: ") + e.what());
    }
    return f;
}

StubFixtures StubFixtures::from_file(const std::filesystem::path& path) {
    return from_json_text(read_file(path));
}

std::string StubFixtures::to_json() const {
    ojson j;
    j["created"] = created;
    j["corrections"] = corrections;
    ojson dets = ojson::object();
    for (const auto& [endpoint, files] : detections) {
        for (const auto& [file, list] : files) {
            ojson arr = ojson::array();
            for (const auto& b : list) {
                arr.push_back(ojson{{"bbox", box_to(b.bbox)}, {"category", b.category}, {"score", b.score}});
            }
            dets[endpoint][file] = std::move(arr);
        }
    }
    j["detections"] = std::move(dets);
    ojson ocr_json = ojson::object();
    for (const auto& [endpoint, files] : ocr) {
        for (const auto& [file, list] : files) {
            ojson arr = ojson::array();
            for (const auto& t : list) {
                arr.push_back(ojson{{"bbox", box_to(t.bbox)}, {"text", t.text}, {"confidence", t.confidence}});
            }
            ocr_json[endpoint][file] = std::move(arr);
        }
    }
    j["ocr"] = std::move(ocr_json);
    return j.dump(2);
}

namespace {

struct ParsedRequest {
    std::string system;
    std::string text;             // user text (or the whole user content for plain strings)
    std::optional<json> image;    // the image_ref object, if any
};

ParsedRequest parse_chat(const json& body) {
    ParsedRequest r;
    for (const auto& m : body.at("messages")) {
        const std::string role = m.at("role").get<std::string>();
        const json& content = m.at("content");
        if (role == "system") {
            r.system = content.get<std::string>();
            continue;
        }
        if (content.is_string()) {
            r.text = content.get<std::string>();
            continue;
        }
        for (const auto& part : content) {
            const std::string type = part.at("type").get<std::string>();
            if (type == "text") r.text = part.at("text").get<std::string>();
            if (type == "image_ref") r.image = part.at("image");
        }
    }
    return r;
}

// Value substituted for `placeholder` in `tpl`, if `filled` is an instance of it.
std::optional<std::string> unfill(std::string_view tpl, std::string_view placeholder, const std::string& filled) {
    const auto at = tpl.find(placeholder);
    if (at == std::string_view::npos) return std::nullopt;
    const auto prefix = tpl.substr(0, at);
    const auto suffix = tpl.substr(at + placeholder.size());
    if (filled.size() < prefix.size() + suffix.size()) return std::nullopt;
    if (filled.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    if (filled.compare(filled.size() - suffix.size(), suffix.size(), suffix) != 0) return std::nullopt;
    return filled.substr(prefix.size(), filled.size() - prefix.size() - suffix.size());
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

HttpResponse ok(std::string body) { return HttpResponse{200, std::move(body)}; }
HttpResponse bad_request(const std::string& why) {
    return HttpResponse{400, json{{"error", why}}.dump()};
}

std::string detections_payload(const StubFixtures& f, const std::string& endpoint, const std::string& file) {
    ojson arr = ojson::array();
    if (auto e = f.detections.find(endpoint); e != f.detections.end()) {
        if (auto it = e->second.find(file); it != e->second.end()) {
            for (const auto& b : it->second) {
                arr.push_back(ojson{{"bbox", box_to(b.bbox)}, {"category", b.category}, {"score", b.score}});
            }
        }
    }
    return ojson{{"detections", std::move(arr)}}.dump();
}

std::string ocr_payload(const StubFixtures& f, const std::string& endpoint, const std::string& file) {
    ojson arr = ojson::array();
    if (auto e = f.ocr.find(endpoint); e != f.ocr.end()) {
        if (auto it = e->second.find(file); it != e->second.end()) {
            for (const auto& t : it->second) {
                arr.push_back(ojson{{"bbox", box_to(t.bbox)}, {"text", t.text}, {"confidence", t.confidence}});
            }
        }
    }
    return ojson{{"text_regions", std::move(arr)}}.dump();
}

std::string describe(const ParsedRequest& req) {
    const auto category = unfill(templates::region_prompt(), "{category_name}", req.text);
    std::string out = "The cropped region shows a " + (category ? *category : std::string("scene"));
    if (req.image && req.image->contains("crop")) {
        const auto& c = (*req.image)["crop"];
        out += " within a " + num(c[2].get<double>()) + " by " + num(c[3].get<double>()) +
               " pixel window starting at (" + num(c[0].get<double>()) + ", " + num(c[1].get<double>()) + ")";
    }
    return out + ".";
}

}  // namespace

std::string concatenate_facts(const std::string& content) {
    enum class Section { None, Objects, Regions, Ocr, Captions } section = Section::None;
    std::vector<std::string> sentences;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
        if (line == "Objects:") { section = Section::Objects; continue; }
        if (line == "Region descriptions:") { section = Section::Regions; continue; }
        if (line == "Text in image (OCR):") { section = Section::Ocr; continue; }
        if (line == "Reference captions:") { section = Section::Captions; continue; }
        if (line.rfind("- ", 0) != 0 || line == "- none") continue;
        const std::string item = line.substr(2);
        switch (section) {
            case Section::Objects: {
                const auto at = item.find(" @ ");
                sentences.push_back("There is a " + item.substr(0, at) +
                                    (at == std::string::npos ? "" : " at " + item.substr(at + 3)) + ".");
                break;
            }
            case Section::Regions: {
                const auto colon = item.find("): ");
                sentences.push_back(colon == std::string::npos ? item : item.substr(colon + 3));
                break;
            }
            case Section::Ocr: {
                const auto first = item.find('"');
                const auto last = item.rfind('"');
                if (first == std::string::npos || last == first) break;
                const std::string text = item.substr(first, last - first + 1);
                const std::string rest = item.substr(last + 1);
                if (rest.rfind(" on ", 0) == 0) {
                    sentences.push_back("The text " + text + " appears on the " + rest.substr(4) + ".");
                } else {
                    sentences.push_back("The text " + text + " is visible in the image.");
                }
                break;
            }
            case Section::Captions: sentences.push_back(item); break;
            case Section::None: break;
        }
    }
    std::string out;
    for (const auto& s : sentences) {
        if (!out.empty()) out += ' ';
        out += s;
    }
    return out;
}

HttpResponse StubTransport::respond(const StubFixtures& fixtures, const EndpointConfig& endpoint,
                                    const std::string& body_text) {
    json body;
    try {
        body = json::parse(body_text);
    } catch (const json::parse_error& e) {
        return bad_request(std::string("invalid JSON: ") + e.what());
    }
    try {
        if (endpoint.protocol == Protocol::Predict) {
            const std::string file = body.at("image").at("file_name").get<std::string>();
            const std::string task = body.at("task").get<std::string>();
            if (task == "detect") return ok(detections_payload(fixtures, endpoint.endpoint_id, file));
            if (task == "ocr") return ok(ocr_payload(fixtures, endpoint.endpoint_id, file));
            return bad_request("unknown task " + task);
        }

        const ParsedRequest req = parse_chat(body);
        std::string answer;
        switch (endpoint.role) {
            case Role::Detector:
                if (!req.image) return bad_request("no image");
                answer = detections_payload(fixtures, endpoint.endpoint_id, req.image->at("file_name").get<std::string>());
                break;
            case Role::Ocr:
                if (!req.image) return bad_request("no image");
                answer = ocr_payload(fixtures, endpoint.endpoint_id, req.image->at("file_name").get<std::string>());
                break;
            case Role::Captioner:
                answer = describe(req);
                break;
            case Role::Verifier: {
                const auto read = unfill(templates::ocr_verify_prompt(), "{ocr_text}", req.text);
                if (!read) return bad_request("not an OCR verification prompt");
                auto it = fixtures.corrections.find(*read);
                answer = it == fixtures.corrections.end() ? *read : it->second;
                break;
            }
            case Role::Integrator:
                answer = concatenate_facts(req.text);
                break;
        }
        return ok(make_chat_response(answer, fixtures.created));
    } catch (const json::exception& e) {
        return bad_request(std::string("malformed request: ") + e.what());
    }
}

HttpResponse StubTransport::post(const EndpointConfig& endpoint, const HttpRequest& request) {
    return respond(fixtures_, endpoint, request.body);
}

}  // namespace fullanno
