#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fullanno/model.hpp"

namespace fullanno {

/// Prompt templates compiled in from templates/*.txt.
namespace templates {

inline constexpr const char* kVersion = "v1";

std::string_view region_prompt();         // contains {category_name}
std::string_view integration_preamble();
std::string_view ocr_verify_prompt();     // contains {ocr_text}

/// SHA-256 over the version tag and every template body.
const std::string& templates_hash();

}  // namespace templates

inline constexpr double kDefaultContextRatio = 0.2;
inline constexpr std::size_t kDefaultMaxSimpleCaptions = 2;

struct OcrMatch {
    OcrId ocr_id = 0;
    std::optional<ObjectId> matched_object_id;
    std::size_t candidate_count = 0;

    friend bool operator==(const OcrMatch&, const OcrMatch&) = default;
};

/// Assigns each OCR entry to the smallest-area object whose box contains it
/// (edge-inclusive); equal areas go to the lowest object_id. Returned in the
/// order of `ocr`.
std::vector<OcrMatch> match_ocr_to_objects(std::span<const OcrEntry> ocr,
                                           std::span<const ObjectAnnotation> objects);

/// Runs the matcher and rewrites matched_object_id / matched_ocr_ids on the
/// record so both directions agree. Earlier links are discarded.
std::vector<OcrMatch> apply_ocr_matches(EnrichedImageAnnotation& record);

/// Grows `box` by ratio*w left and right and ratio*h top and bottom, then
/// clips to the image.
BBox crop_with_context(double image_width, double image_height, const BBox& box,
                       double context_ratio);

/// Region-description prompt for one object. Throws EmptyCategory.
std::string build_region_prompt(std::string_view category_name);

std::string build_ocr_verify_prompt(std::string_view ocr_text);

/// Answers an OCR verification question about one image crop.
class TextVerifier {
public:
    virtual ~TextVerifier() = default;
    virtual std::string verify(const BBox& crop, const std::string& prompt) = 0;
};

/// Asks the verifier to confirm or correct an entry. An empty (all
/// whitespace) answer keeps the original text and sets verification_failed.
/// ClientError from the verifier propagates unchanged.
OcrEntry verify_ocr(const OcrEntry& entry, const BBox& crop, TextVerifier& verifier);

/// Collects the integrator's prior knowledge from a stage-2 record.
/// Throws StageViolation if stage 2 is not complete.
AnnotationBundle build_bundle(const EnrichedImageAnnotation& record,
                              std::size_t max_simple_captions = kDefaultMaxSimpleCaptions);

/// Sorts bundle objects by (area desc, object_id asc), OCR items by ocr_id
/// and the sampled captions lexicographically.
AnnotationBundle canonical_bundle(AnnotationBundle bundle);

NormalizedBox normalize_box(const BBox& box, double width, double height);

struct IntegrationMessage {
    std::string system_preamble;
    std::string content;
    std::string hash;
    std::string template_version;

    friend bool operator==(const IntegrationMessage&, const IntegrationMessage&) = default;
};

/// Renders the integrator prompt. The bundle is canonicalized first, so the
/// result depends only on the bundle's contents. Throws EmptyBundle.
IntegrationMessage build_integration_prompt(const AnnotationBundle& bundle);

/// Fixed-point rendering with three decimals, e.g. 0.5 -> "0.500".
std::string format_coord(double v);

}  // namespace fullanno
