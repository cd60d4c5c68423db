#include "fullanno/enrichment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "fullanno/errors.hpp"
#include "fullanno/geometry.hpp"
#include "fullanno/hashing.hpp"

namespace fullanno {

std::vector<OcrMatch> match_ocr_to_objects(std::span<const OcrEntry> ocr,
                                           std::span<const ObjectAnnotation> objects) {
    std::vector<double> areas;
    areas.reserve(objects.size());
    for (const auto& o : objects) areas.push_back(geometry::area(o.bbox));

    std::vector<OcrMatch> out;
    out.reserve(ocr.size());
    for (const auto& entry : ocr) {
        OcrMatch m{entry.ocr_id, std::nullopt, 0};
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < objects.size(); ++i) {
            if (!geometry::contains(objects[i].bbox, entry.bbox)) continue;
            ++m.candidate_count;
            if (!best || areas[i] < areas[*best] ||
                (areas[i] == areas[*best] && objects[i].object_id < objects[*best].object_id)) {
                best = i;
            }
        }
        if (best) m.matched_object_id = objects[*best].object_id;
        out.push_back(m);
    }
    return out;
}

std::vector<OcrMatch> apply_ocr_matches(EnrichedImageAnnotation& record) {
    auto matches = match_ocr_to_objects(record.ocr, record.objects);
    std::unordered_map<ObjectId, ObjectAnnotation*> by_id;
    for (auto& o : record.objects) {
        o.matched_ocr_ids.clear();
        by_id.emplace(o.object_id, &o);
    }
    for (std::size_t i = 0; i < record.ocr.size(); ++i) {
        record.ocr[i].matched_object_id = matches[i].matched_object_id;
        if (matches[i].matched_object_id) {
            by_id.at(*matches[i].matched_object_id)->matched_ocr_ids.push_back(record.ocr[i].ocr_id);
        }
    }
    for (auto& o : record.objects) std::sort(o.matched_ocr_ids.begin(), o.matched_ocr_ids.end());
    return matches;
}

BBox crop_with_context(double image_width, double image_height, const BBox& box,
                       double context_ratio) {
    geometry::require_valid(box);
    if (!(context_ratio >= 0)) throw ConfigError("context_ratio must be >= 0");
    const double dx = context_ratio * box.w;
    const double dy = context_ratio * box.h;
    const BBox grown{box.x - dx, box.y - dy, box.w + 2 * dx, box.h + 2 * dy};
    auto clipped = geometry::clamp_to_image(grown, image_width, image_height);
    if (!clipped) throw DegenerateBox("crop lies outside the image");
    return *clipped;
}

namespace {

std::string trim(std::string_view s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    auto b = std::find_if(s.begin(), s.end(), not_space);
    auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
    return b < e ? std::string(b, e) : std::string();
}

std::string substitute(std::string_view tpl, std::string_view placeholder, std::string_view value) {
    std::string out(tpl);
    for (auto pos = out.find(placeholder); pos != std::string::npos;
         pos = out.find(placeholder, pos + value.size())) {
        out.replace(pos, placeholder.size(), value);
    }
    return out;
}

// Prompt lines are line-oriented; embedded newlines would break sections.
std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\r', ' ');
    return out;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

std::string build_region_prompt(std::string_view category_name) {
    const std::string category = trim(category_name);
    if (category.empty()) throw EmptyCategory("category name is empty");
    return substitute(templates::region_prompt(), "{category_name}", category);
}

std::string build_ocr_verify_prompt(std::string_view ocr_text) {
    return substitute(templates::ocr_verify_prompt(), "{ocr_text}", one_line(ocr_text));
}

OcrEntry verify_ocr(const OcrEntry& entry, const BBox& crop, TextVerifier& verifier) {
    if (entry.verified) return entry;
    const std::string answer = trim(verifier.verify(crop, build_ocr_verify_prompt(entry.text)));
    OcrEntry out = entry;
    out.verified = true;
    if (answer.empty()) {
        out.corrected_text = entry.text;
        out.verification_failed = true;
    } else {
        out.corrected_text = answer;
        out.verification_failed = false;
    }
    return out;
}

NormalizedBox normalize_box(const BBox& box, double width, double height) {
    return NormalizedBox{std::clamp(round3(box.x / width), 0.0, 1.0),
                         std::clamp(round3(box.y / height), 0.0, 1.0),
                         std::clamp(round3(box.w / width), 0.0, 1.0),
                         std::clamp(round3(box.h / height), 0.0, 1.0)};
}

AnnotationBundle canonical_bundle(AnnotationBundle bundle) {
    std::stable_sort(bundle.objects.begin(), bundle.objects.end(), [](const auto& a, const auto& b) {
        if (a.area != b.area) return a.area > b.area;
        return a.object_id < b.object_id;
    });
    std::stable_sort(bundle.ocr_items.begin(), bundle.ocr_items.end(),
                     [](const auto& a, const auto& b) { return a.ocr_id < b.ocr_id; });
    std::sort(bundle.sampled_simple_captions.begin(), bundle.sampled_simple_captions.end());
    return bundle;
}

AnnotationBundle build_bundle(const EnrichedImageAnnotation& record, std::size_t max_simple_captions) {
    if (!record.provenance.stage2) {
        throw StageViolation("image " + std::to_string(record.image_id) + " has not finished stage 2");
    }
    AnnotationBundle bundle;
    bundle.width = record.width;
    bundle.height = record.height;

    std::unordered_map<ObjectId, const ObjectAnnotation*> by_id;
    for (const auto& o : record.objects) {
        by_id.emplace(o.object_id, &o);
        bundle.objects.push_back(AnnotationBundle::Object{
            o.object_id, geometry::area(o.bbox), o.category,
            normalize_box(o.bbox, record.width, record.height), o.region_description.value_or("")});
    }
    for (const auto& e : record.ocr) {
        std::string owner = kUnattached;
        if (e.matched_object_id) {
            auto it = by_id.find(*e.matched_object_id);
            if (it != by_id.end()) owner = it->second->category;
        }
        bundle.ocr_items.push_back(AnnotationBundle::Ocr{e.ocr_id, e.best_text(), std::move(owner)});
    }
    const std::size_t k = std::min(max_simple_captions, record.simple_captions.size());
    for (std::size_t i = 0; i < k; ++i) bundle.sampled_simple_captions.push_back(record.simple_captions[i].text);
    return canonical_bundle(std::move(bundle));
}

std::string format_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

namespace {

std::string position(const NormalizedBox& b) {
    return "(" + format_coord(b.x) + ", " + format_coord(b.y) + ", " + format_coord(b.w) + ", " +
           format_coord(b.h) + ")";
}

}  // namespace

IntegrationMessage build_integration_prompt(const AnnotationBundle& input) {
    if (input.empty()) throw EmptyBundle("bundle has no objects and no captions");
    const AnnotationBundle bundle = canonical_bundle(input);

    std::string c;
    c += "Image size: " + format_number(bundle.width) + "x" + format_number(bundle.height) + "\n";

    c += "Objects:\n";
    if (bundle.objects.empty()) c += "- none\n";
    for (const auto& o : bundle.objects) {
        c += "- " + one_line(o.category) + " @ " + position(o.position) + "\n";
    }

    c += "Region descriptions:\n";
    bool any_region = false;
    for (const auto& o : bundle.objects) {
        if (o.region_description.empty()) continue;
        any_region = true;
        c += "- " + one_line(o.category) + " @ " + position(o.position) + ": " +
             one_line(o.region_description) + "\n";
    }
    if (!any_region) c += "- none\n";

    c += "Text in image (OCR):\n";
    if (bundle.ocr_items.empty()) c += "- none\n";
    for (const auto& t : bundle.ocr_items) {
        c += "- \"" + one_line(t.text) + "\"";
        c += t.owner == kUnattached ? " (unattached)" : " on " + one_line(t.owner);
        c += "\n";
    }

    c += "Reference captions:\n";
    if (bundle.sampled_simple_captions.empty()) c += "- none\n";
    for (const auto& cap : bundle.sampled_simple_captions) c += "- " + one_line(cap) + "\n";

    IntegrationMessage m;
    m.system_preamble = std::string(templates::integration_preamble());
    m.content = std::move(c);
    m.template_version = templates::kVersion;
    m.hash = sha256_hex(m.template_version + "\n" + m.system_preamble + "\n\n" + m.content);
    return m;
}

}  // namespace fullanno
