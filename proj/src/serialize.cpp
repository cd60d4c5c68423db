#include "fullanno/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "fullanno/errors.hpp"
#include "fullanno/geometry.hpp"
#include "fullanno/tokenizer.hpp"
#include "json.hpp"

namespace fullanno {

using ojson = nlohmann::ordered_json;

namespace {

bool finite(const BBox& b) {
    return std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h);
}

void check_box(const BBox& b, const std::string& field, double width, double height,
               std::vector<Violation>& out) {
    if (!finite(b) || b.w <= 0 || b.h <= 0) {
        out.push_back({field, "degenerate-box", "width and height must be positive"});
        return;
    }
    const double tol_w = 1e-9 * std::max(1.0, width);
    const double tol_h = 1e-9 * std::max(1.0, height);
    if (b.x < 0 || b.y < 0 || b.right() > width + tol_w || b.bottom() > height + tol_h) {
        out.push_back({field, "out-of-bounds", "box leaves the image"});
    }
}

void check_unit(double v, const std::string& field, std::vector<Violation>& out) {
    if (!(v >= 0 && v <= 1)) out.push_back({field, "range", "must lie in [0,1]"});
}

}  // namespace

std::vector<Violation> validate(const EnrichedImageAnnotation& r, const Tokenizer* tokenizer) {
    std::vector<Violation> out;
    if (!(r.width > 0) || !(r.height > 0) || !std::isfinite(r.width) || !std::isfinite(r.height)) {
        out.push_back({"width/height", "image-dims", "image dimensions must be positive"});
    }

    std::unordered_map<ObjectId, const ObjectAnnotation*> objects;
    std::unordered_map<OcrId, const OcrEntry*> ocrs;
    for (std::size_t i = 0; i < r.objects.size(); ++i) {
        if (!objects.emplace(r.objects[i].object_id, &r.objects[i]).second) {
            out.push_back({"objects[" + std::to_string(i) + "].object_id", "duplicate-id",
                           std::to_string(r.objects[i].object_id)});
        }
    }
    for (std::size_t i = 0; i < r.ocr.size(); ++i) {
        if (!ocrs.emplace(r.ocr[i].ocr_id, &r.ocr[i]).second) {
            out.push_back({"ocr[" + std::to_string(i) + "].ocr_id", "duplicate-id",
                           std::to_string(r.ocr[i].ocr_id)});
        }
    }

    for (std::size_t i = 0; i < r.objects.size(); ++i) {
        const auto& o = r.objects[i];
        const std::string at = "objects[" + std::to_string(i) + "]";
        check_box(o.bbox, at + ".bbox", r.width, r.height, out);
        if (o.category.empty()) out.push_back({at + ".category", "empty-category", ""});
        check_unit(o.score, at + ".score", out);
        if (o.region_description.has_value() != o.region_token_length.has_value()) {
            out.push_back({at + ".region_token_length", "token-length-mismatch",
                           "description and token length must be present together"});
        } else if (tokenizer && o.region_description &&
                   tokenizer->count(*o.region_description) != *o.region_token_length) {
            out.push_back({at + ".region_token_length", "token-length-mismatch",
                           "stored length differs from tokenizer count"});
        }
        std::set<OcrId> seen;
        for (OcrId id : o.matched_ocr_ids) {
            if (!seen.insert(id).second) {
                out.push_back({at + ".matched_ocr_ids", "duplicate-id", std::to_string(id)});
                continue;
            }
            auto it = ocrs.find(id);
            if (it == ocrs.end()) {
                out.push_back({at + ".matched_ocr_ids", "dangling-reference",
                               "no ocr entry " + std::to_string(id)});
            } else if (it->second->matched_object_id != o.object_id) {
                out.push_back({at + ".matched_ocr_ids", "inconsistent-link",
                               "ocr " + std::to_string(id) + " does not point back"});
            }
        }
    }

    for (std::size_t i = 0; i < r.ocr.size(); ++i) {
        const auto& e = r.ocr[i];
        const std::string at = "ocr[" + std::to_string(i) + "]";
        check_box(e.bbox, at + ".bbox", r.width, r.height, out);
        check_unit(e.confidence, at + ".confidence", out);
        if (e.verified && !e.corrected_text) {
            out.push_back({at + ".corrected_text", "missing-correction",
                           "verified entries carry corrected_text"});
        }
        if (!e.matched_object_id) continue;
        auto it = objects.find(*e.matched_object_id);
        if (it == objects.end()) {
            out.push_back({at + ".matched_object_id", "dangling-reference",
                           "no object " + std::to_string(*e.matched_object_id)});
            continue;
        }
        const auto& owner = *it->second;
        const auto& ids = owner.matched_ocr_ids;
        if (std::find(ids.begin(), ids.end(), e.ocr_id) == ids.end()) {
            out.push_back({at + ".matched_object_id", "inconsistent-link",
                           "object does not list this ocr entry"});
        }
        if (finite(owner.bbox) && finite(e.bbox) && !geometry::contains(owner.bbox, e.bbox)) {
            out.push_back({at + ".matched_object_id", "containment",
                           "matched object does not contain the ocr box"});
        }
    }

    if (tokenizer) {
        for (std::size_t i = 0; i < r.simple_captions.size(); ++i) {
            const auto& c = r.simple_captions[i];
            if (tokenizer->count(c.text) != c.token_length) {
                out.push_back({"simple_captions[" + std::to_string(i) + "].token_length",
                               "token-length-mismatch", ""});
            }
        }
        if (r.dense_caption && tokenizer->count(r.dense_caption->text) != r.dense_caption->token_length) {
            out.push_back({"dense_caption.token_length", "token-length-mismatch", ""});
        }
    }

    if (!r.provenance.monotone()) {
        out.push_back({"provenance", "provenance-order", "a stage is complete before its predecessor"});
    }
    if (r.provenance.stage3 && !r.dense_caption) {
        out.push_back({"dense_caption", "missing-stage-output", "stage 3 complete without a caption"});
    }
    return out;
}

EnrichedImageAnnotation canonicalized(EnrichedImageAnnotation r) {
    std::stable_sort(r.objects.begin(), r.objects.end(),
                     [](const auto& a, const auto& b) { return a.object_id < b.object_id; });
    std::stable_sort(r.ocr.begin(), r.ocr.end(),
                     [](const auto& a, const auto& b) { return a.ocr_id < b.ocr_id; });
    for (auto& o : r.objects) std::sort(o.matched_ocr_ids.begin(), o.matched_ocr_ids.end());
    return r;
}

namespace {

ojson box_json(const BBox& b) { return ojson::array({b.x, b.y, b.w, b.h}); }

template <typename T>
ojson optional_json(const std::optional<T>& v) {
    return v ? ojson(*v) : ojson(nullptr);
}

}  // namespace

std::string canonical_serialize(const EnrichedImageAnnotation& input) {
    auto violations = validate(input);
    if (!violations.empty()) {
        const auto& v = violations.front();
        throw InvariantViolation("image " + std::to_string(input.image_id) + ": " + v.field + ": " +
                                 v.rule + (v.detail.empty() ? "" : " (" + v.detail + ")"));
    }
    const EnrichedImageAnnotation r = canonicalized(input);

    ojson j;
    j["image_id"] = r.image_id;
    j["file_name"] = r.file_name;
    j["width"] = r.width;
    j["height"] = r.height;

    ojson objects = ojson::array();
    for (const auto& o : r.objects) {
        ojson jo;
        jo["object_id"] = o.object_id;
        jo["category"] = o.category;
        jo["bbox"] = box_json(o.bbox);
        jo["score"] = o.score;
        jo["source_id"] = o.source_id;
        jo["region_description"] = optional_json(o.region_description);
        jo["region_token_length"] = optional_json(o.region_token_length);
        jo["matched_ocr_ids"] = o.matched_ocr_ids;
        if (o.segmentation) jo["segmentation"] = ojson::parse(*o.segmentation);
        objects.push_back(std::move(jo));
    }
    j["objects"] = std::move(objects);

    ojson ocr = ojson::array();
    for (const auto& e : r.ocr) {
        ojson je;
        je["ocr_id"] = e.ocr_id;
        je["text"] = e.text;
        je["bbox"] = box_json(e.bbox);
        je["confidence"] = e.confidence;
        je["verified"] = e.verified;
        je["corrected_text"] = optional_json(e.corrected_text);
        je["verification_failed"] = e.verification_failed;
        je["matched_object_id"] = optional_json(e.matched_object_id);
        ocr.push_back(std::move(je));
    }
    j["ocr"] = std::move(ocr);

    ojson captions = ojson::array();
    for (const auto& c : r.simple_captions) {
        ojson jc;
        jc["text"] = c.text;
        jc["token_length"] = c.token_length;
        captions.push_back(std::move(jc));
    }
    j["simple_captions"] = std::move(captions);

    if (r.dense_caption) {
        const auto& d = *r.dense_caption;
        ojson jd;
        jd["text"] = d.text;
        jd["token_length"] = d.token_length;
        jd["prompt_hash"] = d.prompt_hash;
        ojson g;
        g["endpoint_id"] = d.generator.endpoint_id;
        g["model"] = d.generator.model;
        g["template_version"] = d.generator.template_version;
        g["temperature"] = d.generator.temperature;
        g["max_output_tokens"] = d.generator.max_output_tokens;
        g["timestamp"] = d.generator.timestamp;
        jd["generator"] = std::move(g);
        j["dense_caption"] = std::move(jd);
    } else {
        j["dense_caption"] = nullptr;
    }

    ojson p;
    p["ingested"] = r.provenance.ingested;
    p["stage1"] = r.provenance.stage1;
    p["stage2"] = r.provenance.stage2;
    p["stage3"] = r.provenance.stage3;
    if (r.provenance.failure) {
        ojson f;
        f["stage"] = r.provenance.failure->stage;
        f["kind"] = r.provenance.failure->kind;
        f["message"] = r.provenance.failure->message;
        p["failure"] = std::move(f);
    } else {
        p["failure"] = nullptr;
    }
    j["provenance"] = std::move(p);

    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

namespace {

// Typed accessors that report the JSON path of whatever is wrong.
class Reader {
public:
    Reader(const ojson& node, std::string path) : node_(node), path_(std::move(path)) {}

    const ojson& node() const { return node_; }
    const std::string& path() const { return path_; }

    Reader at(const char* key) const {
        if (!node_.is_object()) throw SchemaError(path_, "expected an object");
        auto it = node_.find(key);
        if (it == node_.end()) throw SchemaError(path_ + "." + key, "missing key");
        return Reader(*it, path_ + "." + key);
    }
    bool has(const char* key) const { return node_.is_object() && node_.contains(key); }

    Reader operator[](std::size_t i) const {
        return Reader(node_.at(i), path_ + "[" + std::to_string(i) + "]");
    }

    std::size_t array_size() const {
        if (!node_.is_array()) throw SchemaError(path_, "expected an array");
        return node_.size();
    }
    bool is_null() const { return node_.is_null(); }

    std::string str() const {
        if (!node_.is_string()) throw SchemaError(path_, "expected a string");
        return node_.get<std::string>();
    }
    double num() const {
        if (!node_.is_number()) throw SchemaError(path_, "expected a number");
        return node_.get<double>();
    }
    std::int64_t integer() const {
        if (!node_.is_number_integer()) throw SchemaError(path_, "expected an integer");
        return node_.get<std::int64_t>();
    }
    bool boolean() const {
        if (!node_.is_boolean()) throw SchemaError(path_, "expected a boolean");
        return node_.get<bool>();
    }
    BBox box() const {
        if (array_size() != 4) throw SchemaError(path_, "expected [x, y, w, h]");
        return BBox{(*this)[0].num(), (*this)[1].num(), (*this)[2].num(), (*this)[3].num()};
    }

private:
    const ojson& node_;
    std::string path_;
};

}  // namespace

EnrichedImageAnnotation parse_record(std::string_view text) {
    ojson doc;
    try {
        doc = ojson::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("$", std::string("invalid JSON: ") + e.what());
    }
    const Reader root(doc, "$");
    EnrichedImageAnnotation r;
    r.image_id = root.at("image_id").integer();
    r.file_name = root.at("file_name").str();
    r.width = root.at("width").num();
    r.height = root.at("height").num();

    const Reader objects = root.at("objects");
    for (std::size_t i = 0; i < objects.array_size(); ++i) {
        const Reader jo = objects[i];
        ObjectAnnotation o;
        o.object_id = jo.at("object_id").integer();
        o.category = jo.at("category").str();
        o.bbox = jo.at("bbox").box();
        o.score = jo.at("score").num();
        o.source_id = jo.at("source_id").str();
        if (auto d = jo.at("region_description"); !d.is_null()) o.region_description = d.str();
        if (auto t = jo.at("region_token_length"); !t.is_null()) o.region_token_length = t.integer();
        const Reader ids = jo.at("matched_ocr_ids");
        for (std::size_t k = 0; k < ids.array_size(); ++k) o.matched_ocr_ids.push_back(ids[k].integer());
        if (jo.has("segmentation")) o.segmentation = jo.at("segmentation").node().dump();
        r.objects.push_back(std::move(o));
    }

    const Reader ocr = root.at("ocr");
    for (std::size_t i = 0; i < ocr.array_size(); ++i) {
        const Reader je = ocr[i];
        OcrEntry e;
        e.ocr_id = je.at("ocr_id").integer();
        e.text = je.at("text").str();
        e.bbox = je.at("bbox").box();
        e.confidence = je.at("confidence").num();
        e.verified = je.at("verified").boolean();
        if (auto c = je.at("corrected_text"); !c.is_null()) e.corrected_text = c.str();
        e.verification_failed = je.at("verification_failed").boolean();
        if (auto m = je.at("matched_object_id"); !m.is_null()) e.matched_object_id = m.integer();
        r.ocr.push_back(std::move(e));
    }

    const Reader captions = root.at("simple_captions");
    for (std::size_t i = 0; i < captions.array_size(); ++i) {
        r.simple_captions.push_back(
            SimpleCaption{captions[i].at("text").str(), captions[i].at("token_length").integer()});
    }

    if (const Reader jd = root.at("dense_caption"); !jd.is_null()) {
        DenseCaption d;
        d.text = jd.at("text").str();
        d.token_length = jd.at("token_length").integer();
        d.prompt_hash = jd.at("prompt_hash").str();
        const Reader g = jd.at("generator");
        d.generator.endpoint_id = g.at("endpoint_id").str();
        d.generator.model = g.at("model").str();
        d.generator.template_version = g.at("template_version").str();
        d.generator.temperature = g.at("temperature").num();
        d.generator.max_output_tokens = g.at("max_output_tokens").integer();
        d.generator.timestamp = g.at("timestamp").integer();
        r.dense_caption = std::move(d);
    }

    const Reader p = root.at("provenance");
    r.provenance.ingested = p.at("ingested").boolean();
    r.provenance.stage1 = p.at("stage1").boolean();
    r.provenance.stage2 = p.at("stage2").boolean();
    r.provenance.stage3 = p.at("stage3").boolean();
    if (const Reader f = p.at("failure"); !f.is_null()) {
        r.provenance.failure = StageFailure{static_cast<int>(f.at("stage").integer()),
                                            f.at("kind").str(), f.at("message").str()};
    }
    return r;
}

}  // namespace fullanno
